//! One module per subcommand plus the shared artifact workspace.
//!
//! Commands hand data to each other only through files under the work
//! directory, each paired with a manifest sidecar. The helpers here fix
//! the artifact names and do the verify-then-load dance so every command
//! trusts its inputs the same way.

pub mod compare;
pub mod evaluate;
pub mod gradcheck;
pub mod ingest;
pub mod rerank;
pub mod retrieve;
pub mod synth;
pub mod train;

use std::collections::BTreeSet;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use hoprank_core::corpus::{FactStore, Split};
use hoprank_core::text::TextResources;

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};
use crate::manifest;

/// Paths and verified loading for one work directory.
pub struct Workspace<'a> {
    pub cfg: &'a ExperimentConfig,
}

impl<'a> Workspace<'a> {
    pub fn new(cfg: &'a ExperimentConfig) -> Self {
        Workspace { cfg }
    }

    pub fn ensure_dir(&self) -> Result<()> {
        std::fs::create_dir_all(&self.cfg.work_dir)
            .map_err(|e| CliError::io(&self.cfg.work_dir, e))
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.cfg.work_dir.join(name)
    }

    pub fn facts_path(&self) -> PathBuf {
        self.path("corpus.facts.tsv")
    }

    pub fn questions_path(&self, split: Split) -> PathBuf {
        self.path(&format!("questions.{split}.tsv"))
    }

    pub fn index_path(&self) -> PathBuf {
        self.path("index.bin")
    }

    pub fn rankings_path(&self, tag: &str, split: Split) -> PathBuf {
        self.path(&format!("rankings.{tag}.{split}.tsv"))
    }

    pub fn predictions_path(&self, tag: &str, split: Split) -> PathBuf {
        self.path(&format!("predictions.{tag}.{split}.tsv"))
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.path("model.ckpt")
    }

    pub fn encoder_vocab_path(&self) -> PathBuf {
        self.path("encoder.vocab")
    }

    /// Record the fully resolved configuration (selectors included) as a
    /// loadable config file, for reproducing the run later.
    pub fn write_resolved_config(&self) -> Result<()> {
        let path = self.path("config.resolved.kv");
        let mut text = self.cfg.canonical_kv();
        text.push_str(&format!("work_dir = {}\n", self.cfg.work_dir.display()));
        text.push_str(&format!("split = {}\n", self.cfg.split));
        if let Some(dir) = &self.cfg.data_dir {
            text.push_str(&format!("data_dir = {}\n", dir.display()));
        }
        if let Some(f) = &self.cfg.lemma_file {
            text.push_str(&format!("lemma_file = {}\n", f.display()));
        }
        if let Some(f) = &self.cfg.stopword_file {
            text.push_str(&format!("stopword_file = {}\n", f.display()));
        }
        std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))
    }

    pub fn load_facts(&self) -> Result<FactStore> {
        let path = self.facts_path();
        manifest::verify(&path, self.cfg)?;
        let file = std::fs::File::open(&path).map_err(|e| CliError::io(&path, e))?;
        FactStore::from_canonical(BufReader::new(file), &path).map_err(Into::into)
    }

    pub fn load_questions(&self, split: Split) -> Result<Vec<CanonicalQuestion>> {
        let path = self.questions_path(split);
        manifest::verify(&path, self.cfg)?;
        read_canonical_questions(&path)
    }

    /// Lemma map and stopword list travel together; loading one without
    /// the other would silently change every retrieval number.
    pub fn text_resources(&self) -> Result<TextResources> {
        match (&self.cfg.lemma_file, &self.cfg.stopword_file) {
            (Some(lemma), Some(stop)) => TextResources::load(lemma, stop).map_err(Into::into),
            (None, None) => Ok(TextResources::empty()),
            _ => Err(CliError::Invariant(
                "lemma_file and stopword_file must be set together or not at all".into(),
            )),
        }
    }
}

/// Question as the pipeline sees it after ingestion: the retrieval query
/// text and the gold uids, detached from the raw exam format.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CanonicalQuestion {
    pub qid: String,
    pub query_text: String,
    pub gold: BTreeSet<String>,
}

pub fn write_canonical_questions(path: &Path, questions: &[CanonicalQuestion]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for q in questions {
        let gold: Vec<&str> = q.gold.iter().map(String::as_str).collect();
        writeln!(w, "{}\t{}\t{}", q.qid, q.query_text, gold.join(" "))
            .map_err(|e| CliError::io(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn read_canonical_questions(path: &Path) -> Result<Vec<CanonicalQuestion>> {
    let file = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut questions = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CliError::io(path, e))?;
        if line.is_empty() {
            continue;
        }
        let mut fields = line.splitn(3, '\t');
        let (Some(qid), Some(text), Some(gold)) = (fields.next(), fields.next(), fields.next())
        else {
            return Err(CliError::Invariant(format!(
                "{}:{}: expected qid, query text, gold uids",
                path.display(),
                lineno + 1
            )));
        };
        questions.push(CanonicalQuestion {
            qid: qid.to_string(),
            query_text: text.to_string(),
            gold: gold.split_whitespace().map(str::to_string).collect(),
        });
    }
    Ok(questions)
}

/// Stream a rankings file (`qid<TAB>uid<TAB>score` lines, grouped by
/// question) and hand each question's list to the callback in file
/// order.
pub fn for_each_ranking(
    path: &Path,
    mut f: impl FnMut(&str, Vec<(String, f64)>) -> Result<()>,
) -> Result<()> {
    let file = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut current_qid: Option<String> = None;
    let mut entries: Vec<(String, f64)> = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CliError::io(path, e))?;
        if line.is_empty() {
            continue;
        }
        let bad = || {
            CliError::Invariant(format!(
                "{}:{}: expected qid<TAB>uid<TAB>score",
                path.display(),
                lineno + 1
            ))
        };
        let mut fields = line.splitn(3, '\t');
        let (Some(qid), Some(uid), Some(score)) = (fields.next(), fields.next(), fields.next())
        else {
            return Err(bad());
        };
        let score: f64 = score.parse().map_err(|_| bad())?;
        match &current_qid {
            Some(cur) if cur == qid => entries.push((uid.to_string(), score)),
            Some(cur) => {
                let done = std::mem::take(&mut entries);
                let finished = cur.clone();
                current_qid = Some(qid.to_string());
                entries.push((uid.to_string(), score));
                f(&finished, done)?;
            }
            None => {
                current_qid = Some(qid.to_string());
                entries.push((uid.to_string(), score));
            }
        }
    }
    if let Some(qid) = current_qid {
        f(&qid, entries)?;
    }
    Ok(())
}

/// Write a flat key = value report file.
pub fn write_kv(path: &Path, pairs: &[(String, String)]) -> Result<()> {
    let mut text = String::new();
    for (k, v) in pairs {
        text.push_str(k);
        text.push_str(" = ");
        text.push_str(v);
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.6}")
}
