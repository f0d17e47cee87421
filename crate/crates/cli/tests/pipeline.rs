//! End-to-end runs of the hoprank binary against the bundled miniature
//! corpus: the full artifact pipeline, exit codes, manifest enforcement,
//! and byte-level determinism.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/mini_worldtree")
}

/// Run the binary with a scrubbed environment so an ambient data root
/// cannot leak into tests.
fn hoprank(work: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hoprank"))
        .env_remove("HOPRANK_DATA")
        .arg("--work-dir")
        .arg(work)
        .args(args)
        .output()
        .expect("spawn hoprank")
}

fn assert_ok(out: &Output, what: &str) {
    assert!(
        out.status.success(),
        "{what} failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn read_kv(path: &Path) -> Vec<(String, String)> {
    std::fs::read_to_string(path)
        .unwrap_or_else(|e| panic!("read {}: {e}", path.display()))
        .lines()
        .map(|line| {
            let (k, v) = line.split_once(" = ").expect("key = value line");
            (k.to_string(), v.to_string())
        })
        .collect()
}

fn kv_get<'a>(kv: &'a [(String, String)], key: &str) -> &'a str {
    kv.iter()
        .find(|(k, _)| k == key)
        .map(|(_, v)| v.as_str())
        .unwrap_or_else(|| panic!("missing key {key}"))
}

fn ingest(work: &Path) {
    let data = fixture_dir();
    let out = hoprank(work, &["--data-dir", data.to_str().unwrap(), "ingest"]);
    assert_ok(&out, "ingest");
}

#[test]
fn bm25_pipeline_scores_the_dev_split() {
    let work = TempDir::new().unwrap();
    ingest(work.path());

    let stats = read_kv(&work.path().join("ingest.stats.kv"));
    assert_eq!(kv_get(&stats, "facts"), "40");
    assert_eq!(kv_get(&stats, "questions.dev"), "6");
    // MW-T-08 cites zz-99 and MW-D-06 cites xx-00; neither uid exists.
    assert_eq!(kv_get(&stats, "gold_refs_dropped"), "2");

    let out = hoprank(work.path(), &["--method", "bm25", "retrieve"]);
    assert_ok(&out, "retrieve");
    let out = hoprank(work.path(), &["--method", "bm25", "evaluate"]);
    assert_ok(&out, "evaluate");

    let eval = read_kv(&work.path().join("evaluation.bm25.dev.kv"));
    assert_eq!(kv_get(&eval, "scored"), "5");
    assert_eq!(kv_get(&eval, "skipped"), "1");
    let map: f64 = kv_get(&eval, "map").parse().unwrap();
    assert!(map > 0.3, "fixture MAP suspiciously low: {map}");
    assert!(map <= 1.0);
}

#[test]
fn iterative_retrieval_stays_within_the_pass_bound() {
    let work = TempDir::new().unwrap();
    ingest(work.path());
    let out = hoprank(work.path(), &["--method", "ibm25", "retrieve"]);
    assert_ok(&out, "retrieve ibm25");

    let stats = read_kv(&work.path().join("retrieve.ibm25.dev.stats.kv"));
    let max: usize = kv_get(&stats, "max_scoring_passes").parse().unwrap();
    let bound: usize = kv_get(&stats, "pass_bound").parse().unwrap();
    assert!(max <= bound, "max {max} exceeds bound {bound}");
    // 40 facts: ceil(log2(41)) = 6.
    assert_eq!(bound, 6);
}

/// Model small enough that training on the fixture takes well under a
/// second; the point is artifact flow, not quality.
const TINY: &[&str] = &[
    "--layers", "1", "--hidden", "8", "--heads", "2", "--adapter-dim", "2",
    "--max-tokens", "8", "--docs-per-question", "4", "--epochs", "2",
    "--predict-depth", "8",
];

#[test]
fn train_then_rerank_produces_scoreable_predictions() {
    let work = TempDir::new().unwrap();
    ingest(work.path());

    let retrieve = |split: &str| {
        let mut args = TINY.to_vec();
        args.extend(["--rerank-k", "2", "--split", split, "retrieve"]);
        assert_ok(&hoprank(work.path(), &args), "retrieve");
    };
    retrieve("train");
    retrieve("dev");

    let mut args = TINY.to_vec();
    args.extend(["--rerank-k", "2", "train"]);
    assert_ok(&hoprank(work.path(), &args), "train");
    assert!(work.path().join("model.ckpt").exists());
    assert!(work.path().join("encoder.vocab").exists());

    let mut args = TINY.to_vec();
    args.extend(["--rerank-k", "2", "rerank"]);
    assert_ok(&hoprank(work.path(), &args), "rerank");

    let pred = work.path().join("predictions.rerank.dev.tsv");
    let mut args = TINY.to_vec();
    args.extend(["--rerank-k", "2", "evaluate", "--predictions"]);
    args.push(pred.to_str().unwrap());
    assert_ok(&hoprank(work.path(), &args), "evaluate rerank");

    let eval = read_kv(&work.path().join("evaluation.rerank.dev.kv"));
    assert_eq!(kv_get(&eval, "scored"), "5");
}

#[test]
fn rerank_k0_keeps_the_first_stage_order() {
    let work = TempDir::new().unwrap();
    ingest(work.path());

    fn with_k0<'a>(extra: &[&'a str]) -> Vec<&'a str> {
        let mut args = TINY.to_vec();
        args.extend(["--rerank-k", "0"]);
        args.extend(extra);
        args
    }
    assert_ok(
        &hoprank(work.path(), &with_k0(&["--split", "train", "retrieve"])),
        "retrieve train",
    );
    assert_ok(&hoprank(work.path(), &with_k0(&["retrieve"])), "retrieve dev");
    assert_ok(&hoprank(work.path(), &with_k0(&["train"])), "train");
    assert_ok(&hoprank(work.path(), &with_k0(&["rerank"])), "rerank");

    let base = std::fs::read(work.path().join("predictions.ibm25.dev.tsv")).unwrap();
    let reranked = std::fs::read(work.path().join("predictions.rerank.dev.tsv")).unwrap();
    assert_eq!(base, reranked, "k = 0 re-ranking must not reorder anything");
}

#[test]
fn identical_runs_are_byte_identical() {
    let run = || {
        let work = TempDir::new().unwrap();
        ingest(work.path());
        assert_ok(&hoprank(work.path(), &["retrieve"]), "retrieve");
        let pred = std::fs::read(work.path().join("predictions.ibm25.dev.tsv")).unwrap();
        let manifest =
            std::fs::read(work.path().join("predictions.ibm25.dev.tsv.manifest")).unwrap();
        let rankings = std::fs::read(work.path().join("rankings.ibm25.dev.tsv")).unwrap();
        (pred, manifest, rankings)
    };
    assert_eq!(run(), run());
}

#[test]
fn missing_inputs_exit_with_code_2() {
    let work = TempDir::new().unwrap();

    // No data root configured at all.
    let out = hoprank(work.path(), &["ingest"]);
    assert_eq!(out.status.code(), Some(2), "ingest without data root");

    // Retrieval before ingestion.
    let out = hoprank(work.path(), &["retrieve"]);
    assert_eq!(out.status.code(), Some(2), "retrieve without artifacts");

    // Evaluation before retrieval.
    ingest(work.path());
    let out = hoprank(work.path(), &["evaluate"]);
    assert_eq!(out.status.code(), Some(2), "evaluate without predictions");
}

#[test]
fn mismatched_or_tampered_artifacts_exit_with_code_3() {
    let work = TempDir::new().unwrap();
    ingest(work.path());
    assert_ok(&hoprank(work.path(), &["--method", "bm25", "retrieve"]), "retrieve");

    // Same file, different algebra: the k1 in force no longer matches the
    // one the predictions were produced under.
    let pred = work.path().join("predictions.bm25.dev.tsv");
    let out = hoprank(
        work.path(),
        &[
            "--method", "bm25", "--k1", "1.9",
            "evaluate", "--predictions", pred.to_str().unwrap(),
        ],
    );
    assert_eq!(out.status.code(), Some(3), "config mismatch accepted");

    // Tampered content under the original config.
    let mut bytes = std::fs::read(&pred).unwrap();
    bytes.extend_from_slice(b"MW-D-01\tan-01\n");
    std::fs::write(&pred, bytes).unwrap();
    let out = hoprank(work.path(), &["--method", "bm25", "evaluate"]);
    assert_eq!(out.status.code(), Some(3), "tampered predictions accepted");
}

#[test]
fn config_file_is_applied_and_flags_win() {
    let work = TempDir::new().unwrap();
    let cfg_path = work.path().join("exp.cfg");
    std::fs::write(&cfg_path, "k1 = 2.5\nmethod = bm25\n").unwrap();

    let data = fixture_dir();
    let out = hoprank(
        work.path(),
        &[
            "--config", cfg_path.to_str().unwrap(),
            "--data-dir", data.to_str().unwrap(),
            "--k1", "0.9",
            "ingest",
        ],
    );
    assert_ok(&out, "ingest with config file");

    let resolved = read_kv(&work.path().join("config.resolved.kv"));
    assert_eq!(kv_get(&resolved, "k1"), "0.9", "flag must beat config file");
    assert_eq!(kv_get(&resolved, "method"), "bm25");
}

#[test]
fn unknown_config_key_exits_with_code_3() {
    let work = TempDir::new().unwrap();
    let cfg_path = work.path().join("exp.cfg");
    std::fs::write(&cfg_path, "k2 = 1.0\n").unwrap();
    let out = hoprank(work.path(), &["--config", cfg_path.to_str().unwrap(), "ingest"]);
    assert_eq!(out.status.code(), Some(3));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("k2"), "error should name the bad key: {stderr}");
}

#[test]
fn data_root_env_var_works_and_flags_beat_it() {
    let work = TempDir::new().unwrap();
    let data = fixture_dir();

    let out = Command::new(env!("CARGO_BIN_EXE_hoprank"))
        .env("HOPRANK_DATA", data.as_os_str())
        .arg("--work-dir")
        .arg(work.path())
        .arg("ingest")
        .output()
        .expect("spawn hoprank");
    assert_ok(&out, "ingest via environment");

    // A bogus environment root must lose to an explicit flag.
    let work2 = TempDir::new().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_hoprank"))
        .env("HOPRANK_DATA", "/nonexistent/corpus")
        .arg("--work-dir")
        .arg(work2.path())
        .args(["--data-dir", data.to_str().unwrap(), "ingest"])
        .output()
        .expect("spawn hoprank");
    assert_ok(&out, "flag over environment");
}
