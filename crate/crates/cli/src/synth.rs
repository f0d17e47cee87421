//! Synthetic cross-document ranking task.
//!
//! Each query asks for one payload topic. Candidate documents carry a
//! payload token plus filler tokens; documents matching the query's
//! payload are relevant. With some probability a relevant document gets a
//! near-duplicate (same payload, one filler swapped) inserted into the
//! candidate list, and the duplicate may itself be duplicated again, so a
//! group can drift one filler at a time. After the list is shuffled only
//! the EARLIEST member of each duplicate group keeps the positive label.
//! Whether a document is gold therefore depends on the other candidates,
//! which no per-document scorer can see.
//!
//! The point of the construction: a scorer that reads one (query,
//! document) pair at a time gives every payload-matching document the
//! same score distribution, because group membership leaves no trace in
//! a single document's text. Its expected AP has a computable ceiling
//! below 1. A scorer that sees the candidate list in order can find the
//! duplicates and rank each group's first member on top, reaching MAP
//! 1.0 exactly.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;

use hoprank_neural::encoder::{encode_pair, EncoderVocab};
use hoprank_neural::rng::named_stream;
use hoprank_neural::train::TrainSample;

use crate::error::{CliError, Result};
use crate::manifest::sha256_bytes;

/// Relevant documents planted per query before duplication.
const RELEVANT_PER_QUERY: usize = 3;
/// Filler tokens per document.
const FILLERS_PER_DOC: usize = 4;
/// Hard cap on a duplicate group, originals included.
const MAX_GROUP_SIZE: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthSizes {
    pub queries: usize,
    pub docs_per_query: usize,
    pub payloads: usize,
    pub fillers: usize,
    pub dup_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthDoc {
    pub uid: String,
    pub tokens: Vec<String>,
    pub label: bool,
    /// Duplicate-group id for relevant documents, None for distractors.
    pub group: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthQuery {
    pub qid: String,
    pub question: Vec<String>,
    pub docs: Vec<SynthDoc>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntheticTask {
    pub queries: Vec<SynthQuery>,
}

fn payload_token(i: usize) -> String {
    format!("topic{i:02}")
}

fn filler_token(i: usize) -> String {
    format!("word{i:02}")
}

/// Generate the task. All randomness flows from per-query named streams
/// of `seed`, so the same seed reproduces the same dataset bit for bit.
pub fn gen_synthetic(seed: u64, sizes: &SynthSizes) -> SyntheticTask {
    assert!(
        sizes.docs_per_query >= MAX_GROUP_SIZE * RELEVANT_PER_QUERY,
        "docs_per_query must leave room for {RELEVANT_PER_QUERY} relevant docs and their duplicates"
    );
    assert!(sizes.payloads >= 2, "need at least two payload topics");
    assert!(sizes.fillers >= 2, "need at least two filler tokens");
    assert!((0.0..=1.0).contains(&sizes.dup_rate), "dup_rate outside [0, 1]");

    let mut queries = Vec::with_capacity(sizes.queries);
    for qi in 0..sizes.queries {
        let mut rng = named_stream(seed, &format!("synth.q{qi}"));
        let target = rng.gen_range(0..sizes.payloads);

        // (tokens, group): group Some(g) marks the g-th relevant plant
        // and its near-duplicates.
        let mut drafts: Vec<(Vec<String>, Option<usize>)> = Vec::new();
        for g in 0..RELEVANT_PER_QUERY {
            let fillers: Vec<usize> = (0..FILLERS_PER_DOC)
                .map(|_| rng.gen_range(0..sizes.fillers))
                .collect();
            let mut tokens = vec![payload_token(target)];
            tokens.extend(fillers.iter().map(|&f| filler_token(f)));
            drafts.push((tokens.clone(), Some(g)));

            let mut prev = tokens;
            for _ in 1..MAX_GROUP_SIZE {
                if !rng.gen_bool(sizes.dup_rate) {
                    break;
                }
                let slot = rng.gen_range(0..FILLERS_PER_DOC);
                let mut dup = prev.clone();
                dup[1 + slot] = filler_token(rng.gen_range(0..sizes.fillers));
                drafts.push((dup.clone(), Some(g)));
                prev = dup;
            }
        }
        while drafts.len() < sizes.docs_per_query {
            let mut payload = rng.gen_range(0..sizes.payloads);
            while payload == target {
                payload = rng.gen_range(0..sizes.payloads);
            }
            let mut tokens = vec![payload_token(payload)];
            for _ in 0..FILLERS_PER_DOC {
                tokens.push(filler_token(rng.gen_range(0..sizes.fillers)));
            }
            drafts.push((tokens, None));
        }

        // Fisher-Yates shuffle, then labels: the earliest member of each
        // duplicate group in the shuffled order is the gold one.
        for i in (1..drafts.len()).rev() {
            let j = rng.gen_range(0..=i);
            drafts.swap(i, j);
        }
        let mut group_seen = BTreeSet::new();
        let docs = drafts
            .into_iter()
            .enumerate()
            .map(|(di, (tokens, group))| {
                let label = match group {
                    Some(g) => group_seen.insert(g),
                    None => false,
                };
                SynthDoc {
                    uid: format!("q{qi}-d{di}"),
                    tokens,
                    label,
                    group,
                }
            })
            .collect();

        queries.push(SynthQuery {
            qid: format!("synth-q{qi}"),
            question: vec![payload_token(target)],
            docs,
        });
    }
    SyntheticTask { queries }
}

/// Seed for a companion evaluation split, derived so the two splits never
/// share query streams under any root seed.
pub fn eval_seed(seed: u64) -> u64 {
    named_stream(seed, "synth.eval-root").gen()
}

impl SyntheticTask {
    /// Canonical text form: one line per document, tab-separated
    /// qid, uid, label, question tokens, document tokens.
    pub fn to_tsv(&self) -> String {
        let mut s = String::new();
        for q in &self.queries {
            for d in &q.docs {
                let _ = writeln!(
                    s,
                    "{}\t{}\t{}\t{}\t{}",
                    q.qid,
                    d.uid,
                    d.label as u8,
                    q.question.join(" "),
                    d.tokens.join(" ")
                );
            }
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_tsv()).map_err(|e| CliError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<SyntheticTask> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut queries: Vec<SynthQuery> = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let fields: Vec<&str> = line.split('\t').collect();
            let [qid, uid, label, question, tokens] = fields[..] else {
                return Err(CliError::Invariant(format!(
                    "{}:{}: expected 5 tab-separated fields",
                    path.display(),
                    lineno + 1
                )));
            };
            let label = match label {
                "0" => false,
                "1" => true,
                other => {
                    return Err(CliError::Invariant(format!(
                        "{}:{}: bad label {other:?}",
                        path.display(),
                        lineno + 1
                    )))
                }
            };
            let doc = SynthDoc {
                uid: uid.to_string(),
                tokens: tokens.split_whitespace().map(str::to_string).collect(),
                label,
                group: None,
            };
            match queries.last_mut() {
                Some(q) if q.qid == qid => q.docs.push(doc),
                _ => queries.push(SynthQuery {
                    qid: qid.to_string(),
                    question: question.split_whitespace().map(str::to_string).collect(),
                    docs: vec![doc],
                }),
            }
        }
        Ok(SyntheticTask { queries })
    }

    pub fn dataset_hash(&self) -> String {
        sha256_bytes(self.to_tsv().as_bytes())
    }

    /// Vocabulary covering every token the task can emit.
    pub fn vocab(&self) -> EncoderVocab {
        let mut vocab = EncoderVocab::new();
        for q in &self.queries {
            vocab.extend(q.question.iter().map(String::as_str));
            for d in &q.docs {
                vocab.extend(d.tokens.iter().map(String::as_str));
            }
        }
        vocab
    }

    pub fn to_train_samples(&self, vocab: &EncoderVocab, max_tokens: usize) -> Vec<TrainSample> {
        self.queries
            .iter()
            .map(|q| TrainSample {
                qid: q.qid.clone(),
                uids: q.docs.iter().map(|d| d.uid.clone()).collect(),
                pairs: q
                    .docs
                    .iter()
                    .map(|d| encode_pair(vocab, &q.question, &d.tokens, max_tokens))
                    .collect(),
                labels: q
                    .docs
                    .iter()
                    .map(|d| if d.label { 1.0 } else { 0.0 })
                    .collect(),
            })
            .collect()
    }
}

/// One full benchmark cell: generate train and eval splits from the
/// given seed, train the configured model variant and loss from a fresh
/// initialization, and return MAP on the eval split. Each seed is a
/// complete replicate (data, initialization, and shuffling all move
/// together), so comparisons on the same seed are paired.
pub fn fit_and_eval(
    cfg: &crate::config::ExperimentConfig,
    variant: hoprank_neural::encoder::Variant,
    loss: hoprank_neural::train::LossKind,
    seed: u64,
) -> Result<f64> {
    let train_sizes = SynthSizes {
        queries: cfg.synth_queries,
        docs_per_query: cfg.synth_docs,
        payloads: cfg.synth_payloads,
        fillers: cfg.synth_fillers,
        dup_rate: cfg.synth_dup_rate,
    };
    let eval_sizes = SynthSizes {
        queries: cfg.synth_eval_queries,
        ..train_sizes
    };
    let train_task = gen_synthetic(seed, &train_sizes);
    let eval_task = gen_synthetic(eval_seed(seed), &eval_sizes);

    let mut vocab = train_task.vocab();
    for q in &eval_task.queries {
        vocab.extend(q.question.iter().map(String::as_str));
        for d in &q.docs {
            vocab.extend(d.tokens.iter().map(String::as_str));
        }
    }
    let train_samples = train_task.to_train_samples(&vocab, cfg.max_tokens);
    let eval_samples = eval_task.to_train_samples(&vocab, cfg.max_tokens);

    let mut model_cfg = cfg.model_config_with_vocab(vocab.len());
    model_cfg.variant = variant;
    model_cfg.validate()?;
    let mut tcfg = cfg.train_config();
    tcfg.loss = loss;
    tcfg.seed = seed;

    let mut params = hoprank_neural::encoder::init_params(&model_cfg, seed);
    hoprank_neural::train::train(&mut params, &model_cfg, &tcfg, &train_samples)?;
    hoprank_neural::train::training_map(&params, &model_cfg, &eval_samples).map_err(Into::into)
}

/// Expected MAP of the best per-document scorer, computed from the
/// generator's ground truth.
///
/// Such a scorer ranks payload-matching documents above the rest but
/// cannot tell group members apart (their texts are drawn from the same
/// distribution), so across the generator's randomness the positives
/// land uniformly among the matching documents. Exact ties are excluded:
/// a tie resolved by input order would leak exactly the cross-document
/// signal the task withholds. Per query this averages AP over all
/// placements of the k positives among the m matching documents;
/// distractors rank below everything and hold no positives.
pub fn isolated_ceiling(task: &SyntheticTask) -> f64 {
    assert!(!task.queries.is_empty(), "ceiling of an empty task");
    let total: f64 = task
        .queries
        .iter()
        .map(|q| {
            let payload = &q.question[0];
            let m = q.docs.iter().filter(|d| &d.tokens[0] == payload).count();
            let k = q.docs.iter().filter(|d| d.label).count();
            expected_ap_uniform(m, k)
        })
        .sum();
    total / task.queries.len() as f64
}

/// Mean AP over all k-subsets of positions 1..=m holding the positives.
fn expected_ap_uniform(m: usize, k: usize) -> f64 {
    assert!(k > 0 && k <= m, "need 0 < k <= m, got k={k} m={m}");
    let mut sum = 0.0;
    let mut count = 0usize;
    let mut positions: Vec<usize> = (1..=k).collect();
    loop {
        let ap: f64 = positions
            .iter()
            .enumerate()
            .map(|(j, &pos)| (j + 1) as f64 / pos as f64)
            .sum::<f64>()
            / k as f64;
        sum += ap;
        count += 1;

        // Next k-combination of 1..=m in lexicographic order.
        let mut i = k;
        while i > 0 && positions[i - 1] == m - (k - i) {
            i -= 1;
        }
        if i == 0 {
            break;
        }
        positions[i - 1] += 1;
        for j in i..k {
            positions[j] = positions[j - 1] + 1;
        }
    }
    sum / count as f64
}

/// MAP of a scorer that walks the candidate list in order and uses the
/// generator's group structure: the first member of each duplicate group
/// scores high, everything else low. Computed as a real ranking-then-AP
/// pass rather than asserted, so it exercises the same scoring path the
/// models are judged by; anything other than 1.0 means the labeling and
/// the construction fell out of step.
pub fn oracle_map(task: &SyntheticTask) -> f64 {
    assert!(!task.queries.is_empty(), "oracle of an empty task");
    let total: f64 = task
        .queries
        .iter()
        .map(|q| {
            let mut seen = BTreeSet::new();
            let mut ranked: Vec<(f64, bool)> = q
                .docs
                .iter()
                .map(|d| {
                    let first_of_group = match d.group {
                        Some(g) => seen.insert(g),
                        None => false,
                    };
                    (if first_of_group { 1.0 } else { 0.0 }, d.label)
                })
                .collect();
            ranked.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
            let gold = q.docs.iter().filter(|d| d.label).count();
            let mut hits = 0usize;
            let mut acc = 0.0;
            for (i, (_, label)) in ranked.iter().enumerate() {
                if *label {
                    hits += 1;
                    acc += hits as f64 / (i + 1) as f64;
                }
            }
            acc / gold as f64
        })
        .sum();
    total / task.queries.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sizes(dup_rate: f64) -> SynthSizes {
        SynthSizes {
            queries: 40,
            docs_per_query: 12,
            payloads: 8,
            fillers: 24,
            dup_rate,
        }
    }

    #[test]
    fn same_seed_same_hash() {
        let a = gen_synthetic(7, &sizes(0.5));
        let b = gen_synthetic(7, &sizes(0.5));
        assert_eq!(a, b);
        assert_eq!(a.dataset_hash(), b.dataset_hash());
        let c = gen_synthetic(8, &sizes(0.5));
        assert_ne!(a.dataset_hash(), c.dataset_hash());
    }

    #[test]
    fn eval_seed_departs_from_root() {
        assert_ne!(eval_seed(7), 7);
        assert_eq!(eval_seed(7), eval_seed(7));
        assert_ne!(eval_seed(7), eval_seed(8));
    }

    #[test]
    fn structure_is_sound() {
        let task = gen_synthetic(3, &sizes(0.5));
        let mut largest_group = 0;
        for q in &task.queries {
            assert_eq!(q.docs.len(), 12);
            let payload = &q.question[0];
            let positives = q.docs.iter().filter(|d| d.label).count();
            assert_eq!(positives, RELEVANT_PER_QUERY);
            for d in &q.docs {
                assert_eq!(d.tokens.len(), 1 + FILLERS_PER_DOC);
                if d.label {
                    assert_eq!(&d.tokens[0], payload);
                }
                if d.group.is_none() {
                    assert_ne!(&d.tokens[0], payload);
                }
            }
            // Within each group, exactly the earliest member is gold.
            for g in 0..RELEVANT_PER_QUERY {
                let members: Vec<&SynthDoc> =
                    q.docs.iter().filter(|d| d.group == Some(g)).collect();
                assert!(!members.is_empty());
                assert!(members.len() <= MAX_GROUP_SIZE);
                largest_group = largest_group.max(members.len());
                assert!(members[0].label);
                assert!(members[1..].iter().all(|d| !d.label));
            }
        }
        // At this duplicate rate some group should have chained twice.
        assert_eq!(largest_group, MAX_GROUP_SIZE);
    }

    #[test]
    fn duplicate_rate_zero_has_no_groups_of_two() {
        let task = gen_synthetic(11, &sizes(0.0));
        for q in &task.queries {
            for g in 0..RELEVANT_PER_QUERY {
                let members = q.docs.iter().filter(|d| d.group == Some(g)).count();
                assert_eq!(members, 1);
            }
        }
        // Without duplicates every matching document is gold, so even a
        // per-document scorer can reach a perfect ranking.
        assert_eq!(isolated_ceiling(&task), 1.0);
        assert_eq!(oracle_map(&task), 1.0);
    }

    #[test]
    fn duplicates_open_a_gap_below_the_order_aware_oracle() {
        let task = gen_synthetic(5, &sizes(0.5));
        let ceiling = isolated_ceiling(&task);
        assert!(ceiling < 1.0, "ceiling = {ceiling}");
        assert!(ceiling > 0.5, "ceiling = {ceiling}");
        assert_eq!(oracle_map(&task), 1.0);
    }

    #[test]
    fn expected_ap_matches_hand_enumeration() {
        // m=3, k=2: position sets {1,2}, {1,3}, {2,3} give AP 1, 5/6,
        // 7/12; mean 29/36.
        assert!((expected_ap_uniform(3, 2) - 29.0 / 36.0).abs() < 1e-12);
        // m=4, k=2: mean of 1, 5/6, 3/4, 7/12, 1/2, 5/12 = 49/72.
        assert!((expected_ap_uniform(4, 2) - 49.0 / 72.0).abs() < 1e-12);
        assert_eq!(expected_ap_uniform(5, 5), 1.0);
        assert_eq!(expected_ap_uniform(1, 1), 1.0);
    }

    #[test]
    fn tsv_round_trips() {
        let task = gen_synthetic(13, &sizes(0.5));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("synth.tsv");
        task.save(&path).unwrap();
        let back = SyntheticTask::load(&path).unwrap();
        assert_eq!(back.dataset_hash(), task.dataset_hash());
        assert_eq!(back.queries.len(), task.queries.len());
        for (a, b) in task.queries.iter().zip(&back.queries) {
            assert_eq!(a.qid, b.qid);
            assert_eq!(a.question, b.question);
            for (da, db) in a.docs.iter().zip(&b.docs) {
                assert_eq!(da.uid, db.uid);
                assert_eq!(da.tokens, db.tokens);
                assert_eq!(da.label, db.label);
            }
        }
    }

    #[test]
    fn train_samples_align_with_docs() {
        let task = gen_synthetic(2, &sizes(0.5));
        let vocab = task.vocab();
        let samples = task.to_train_samples(&vocab, 16);
        assert_eq!(samples.len(), task.queries.len());
        for (s, q) in samples.iter().zip(&task.queries) {
            assert_eq!(s.uids.len(), q.docs.len());
            assert_eq!(s.pairs.len(), q.docs.len());
            assert_eq!(s.labels.len(), q.docs.len());
            assert!(s.labels.iter().all(|&y| y == 0.0 || y == 1.0));
            assert!(s.labels.iter().sum::<f64>() as usize == RELEVANT_PER_QUERY);
            assert!(s.pairs.iter().all(|p| p.ids.len() <= 16));
        }
    }
}
