//! Experiment configuration: a flat key = value file, mirrored by command
//! line flags, resolved into one struct that every command shares.
//!
//! Precedence, lowest to highest: built-in defaults, config file, the
//! `HOPRANK_DATA` environment variable (data root only), command line
//! flags. The resolved configuration always serializes back to the same
//! canonical text, and its hash is stamped into every artifact manifest
//! so downstream commands can refuse inputs produced under different
//! settings.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use hoprank_core::retrieval::IterConfig;
use hoprank_neural::encoder::{ModelConfig, Variant};
use hoprank_neural::train::{LossKind, TrainConfig};
use hoprank_core::corpus::Split;

use crate::error::{CliError, Result};

pub const DATA_ENV: &str = "HOPRANK_DATA";

/// Which first-stage ranker to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Bm25,
    IterBm25,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Bm25 => "bm25",
            Method::IterBm25 => "ibm25",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "bm25" => Ok(Method::Bm25),
            "ibm25" => Ok(Method::IterBm25),
            other => Err(format!("unknown method {other:?} (expected bm25 or ibm25)")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    // Locations.
    pub data_dir: Option<PathBuf>,
    pub work_dir: PathBuf,
    pub lemma_file: Option<PathBuf>,
    pub stopword_file: Option<PathBuf>,

    // First-stage retrieval.
    pub method: Method,
    pub split: Split,
    pub k1: f64,
    pub b: f64,
    pub downscale: f64,
    pub start_exponent: u32,
    pub recall_ks: Vec<usize>,
    pub predict_depth: usize,

    // Re-ranker model.
    pub variant: Variant,
    pub layers: usize,
    pub hidden: usize,
    pub heads: usize,
    pub adapter_dim: usize,
    pub lstm_layers: usize,
    pub max_tokens: usize,
    pub docs_per_question: usize,
    pub rerank_k: usize,

    // Training.
    pub loss: LossKind,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub ap_bins: usize,
    pub compare_seeds: u64,

    // Synthetic cross-document task.
    pub synth_queries: usize,
    pub synth_eval_queries: usize,
    pub synth_docs: usize,
    pub synth_payloads: usize,
    pub synth_fillers: usize,
    pub synth_dup_rate: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            data_dir: None,
            work_dir: PathBuf::from("work"),
            lemma_file: None,
            stopword_file: None,
            method: Method::IterBm25,
            split: Split::Dev,
            k1: 1.2,
            b: 0.75,
            downscale: 0.5,
            start_exponent: 0,
            recall_ks: vec![64, 128],
            predict_depth: 0,
            variant: Variant::Lit,
            layers: 3,
            hidden: 64,
            heads: 4,
            adapter_dim: 16,
            lstm_layers: 2,
            max_tokens: 64,
            docs_per_question: 128,
            rerank_k: 128,
            loss: LossKind::Bce,
            epochs: 60,
            batch_size: 1,
            lr: 1e-3,
            seed: 7,
            ap_bins: 25,
            compare_seeds: 3,
            synth_queries: 48,
            synth_eval_queries: 400,
            synth_docs: 16,
            synth_payloads: 8,
            synth_fillers: 24,
            synth_dup_rate: 1.0,
        }
    }
}

/// Optional values collected from command line flags; `None` means the
/// flag was not given and the file or default value stands.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub data_dir: Option<PathBuf>,
    pub work_dir: Option<PathBuf>,
    pub lemma_file: Option<PathBuf>,
    pub stopword_file: Option<PathBuf>,
    pub method: Option<Method>,
    pub split: Option<Split>,
    pub k1: Option<f64>,
    pub b: Option<f64>,
    pub downscale: Option<f64>,
    pub start_exponent: Option<u32>,
    pub recall_ks: Option<Vec<usize>>,
    pub predict_depth: Option<usize>,
    pub variant: Option<Variant>,
    pub layers: Option<usize>,
    pub hidden: Option<usize>,
    pub heads: Option<usize>,
    pub adapter_dim: Option<usize>,
    pub lstm_layers: Option<usize>,
    pub max_tokens: Option<usize>,
    pub docs_per_question: Option<usize>,
    pub rerank_k: Option<usize>,
    pub loss: Option<LossKind>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr: Option<f64>,
    pub seed: Option<u64>,
    pub ap_bins: Option<usize>,
    pub compare_seeds: Option<u64>,
    pub synth_queries: Option<usize>,
    pub synth_eval_queries: Option<usize>,
    pub synth_docs: Option<usize>,
    pub synth_payloads: Option<usize>,
    pub synth_fillers: Option<usize>,
    pub synth_dup_rate: Option<f64>,
}

impl ExperimentConfig {
    /// Resolve the effective configuration from an optional file, the
    /// environment, and flag overrides.
    pub fn resolve(
        file: Option<&Path>,
        overrides: &Overrides,
        env_data: Option<PathBuf>,
    ) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::default();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            cfg.apply_file(&text, path)?;
        }
        if let Some(dir) = env_data {
            cfg.data_dir = Some(dir);
        }
        cfg.apply_overrides(overrides);
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply_file(&mut self, text: &str, path: &Path) -> Result<()> {
        let mut seen = BTreeSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::Invariant(format!(
                    "{}:{}: expected key = value, got {raw:?}",
                    path.display(),
                    lineno + 1
                ))
            })?;
            let key = key.trim();
            let value = value.trim();
            if !seen.insert(key.to_string()) {
                return Err(CliError::Invariant(format!(
                    "{}:{}: duplicate key {key:?}",
                    path.display(),
                    lineno + 1
                )));
            }
            self.set(key, value).map_err(|msg| {
                CliError::Invariant(format!("{}:{}: {msg}", path.display(), lineno + 1))
            })?;
        }
        Ok(())
    }

    fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> std::result::Result<T, String>
        where
            T::Err: std::fmt::Display,
        {
            value
                .parse()
                .map_err(|e| format!("bad value {value:?} for {key}: {e}"))
        }

        match key {
            "data_dir" => self.data_dir = Some(PathBuf::from(value)),
            "work_dir" => self.work_dir = PathBuf::from(value),
            "lemma_file" => self.lemma_file = Some(PathBuf::from(value)),
            "stopword_file" => self.stopword_file = Some(PathBuf::from(value)),
            "method" => self.method = parse(key, value)?,
            "split" => self.split = parse(key, value)?,
            "k1" => self.k1 = parse(key, value)?,
            "b" => self.b = parse(key, value)?,
            "downscale" => self.downscale = parse(key, value)?,
            "start_exponent" => self.start_exponent = parse(key, value)?,
            "recall_ks" => self.recall_ks = parse_usize_list(value)?,
            "predict_depth" => self.predict_depth = parse(key, value)?,
            "variant" => self.variant = parse(key, value)?,
            "layers" => self.layers = parse(key, value)?,
            "hidden" => self.hidden = parse(key, value)?,
            "heads" => self.heads = parse(key, value)?,
            "adapter_dim" => self.adapter_dim = parse(key, value)?,
            "lstm_layers" => self.lstm_layers = parse(key, value)?,
            "max_tokens" => self.max_tokens = parse(key, value)?,
            "docs_per_question" => self.docs_per_question = parse(key, value)?,
            "rerank_k" => self.rerank_k = parse(key, value)?,
            "loss" => self.loss = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "ap_bins" => self.ap_bins = parse(key, value)?,
            "compare_seeds" => self.compare_seeds = parse(key, value)?,
            "synth_queries" => self.synth_queries = parse(key, value)?,
            "synth_eval_queries" => self.synth_eval_queries = parse(key, value)?,
            "synth_docs" => self.synth_docs = parse(key, value)?,
            "synth_payloads" => self.synth_payloads = parse(key, value)?,
            "synth_fillers" => self.synth_fillers = parse(key, value)?,
            "synth_dup_rate" => self.synth_dup_rate = parse(key, value)?,
            other => return Err(format!("unknown config key {other:?}")),
        }
        Ok(())
    }

    fn apply_overrides(&mut self, o: &Overrides) {
        macro_rules! take {
            ($field:ident) => {
                if let Some(v) = o.$field.clone() {
                    self.$field = v;
                }
            };
        }
        if let Some(v) = &o.data_dir {
            self.data_dir = Some(v.clone());
        }
        if let Some(v) = &o.lemma_file {
            self.lemma_file = Some(v.clone());
        }
        if let Some(v) = &o.stopword_file {
            self.stopword_file = Some(v.clone());
        }
        take!(work_dir);
        take!(method);
        take!(split);
        take!(k1);
        take!(b);
        take!(downscale);
        take!(start_exponent);
        take!(recall_ks);
        take!(predict_depth);
        take!(variant);
        take!(layers);
        take!(hidden);
        take!(heads);
        take!(adapter_dim);
        take!(lstm_layers);
        take!(max_tokens);
        take!(docs_per_question);
        take!(rerank_k);
        take!(loss);
        take!(epochs);
        take!(batch_size);
        take!(lr);
        take!(seed);
        take!(ap_bins);
        take!(compare_seeds);
        take!(synth_queries);
        take!(synth_eval_queries);
        take!(synth_docs);
        take!(synth_payloads);
        take!(synth_fillers);
        take!(synth_dup_rate);
    }

    pub fn validate(&self) -> Result<()> {
        self.iter_config()?;
        if !(self.k1 > 0.0) || !(0.0..=1.0).contains(&self.b) {
            return Err(CliError::Invariant(format!(
                "bm25 parameters out of range: k1 = {}, b = {}",
                self.k1, self.b
            )));
        }
        // Vocabulary size is known only after ingestion; validate the
        // rest of the model shape with the smallest legal stand-in.
        self.model_config_with_vocab(hoprank_neural::encoder::UNK_ID + 1)
            .validate()?;
        self.train_config().validate()?;
        if self.recall_ks.is_empty() || self.recall_ks.iter().any(|&k| k == 0) {
            return Err(CliError::Invariant(
                "recall_ks must list positive cutoffs".into(),
            ));
        }
        if self.rerank_k > self.docs_per_question {
            return Err(CliError::Invariant(format!(
                "rerank_k = {} exceeds docs_per_question = {}",
                self.rerank_k, self.docs_per_question
            )));
        }
        if self.compare_seeds == 0 {
            return Err(CliError::Invariant("compare_seeds must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.synth_dup_rate) {
            return Err(CliError::Invariant(format!(
                "synth_dup_rate = {} outside [0, 1]",
                self.synth_dup_rate
            )));
        }
        if self.synth_docs < 4 || self.synth_payloads < 2 || self.synth_fillers < 2 {
            return Err(CliError::Invariant(
                "synthetic task needs synth_docs >= 4, synth_payloads >= 2, synth_fillers >= 2"
                    .into(),
            ));
        }
        Ok(())
    }

    pub fn iter_config(&self) -> Result<IterConfig> {
        IterConfig::new(self.downscale, self.start_exponent).map_err(Into::into)
    }

    pub fn model_config_with_vocab(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            variant: self.variant,
            layers: self.layers,
            hidden: self.hidden,
            heads: self.heads,
            adapter_dim: self.adapter_dim,
            lstm_layers: self.lstm_layers,
            max_tokens: self.max_tokens,
            docs_per_question: self.docs_per_question,
            vocab_size,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            loss: self.loss,
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            seed: self.seed,
            ap_bins: self.ap_bins,
            shuffle: true,
            map_target: None,
            check_every: 10,
        }
    }

    pub fn data_dir(&self) -> Result<&Path> {
        self.data_dir.as_deref().ok_or_else(|| {
            CliError::MissingInput(format!(
                "no data directory: set data_dir in the config file, pass --data-dir, \
                 or export {DATA_ENV}"
            ))
        })
    }

    /// Canonical flat text form. Field order is fixed so the output diffs
    /// cleanly and hashes stably. Selectors stay out: `work_dir` names
    /// where artifacts land, `split` picks which file to read or write
    /// (already recorded in artifact names), and the input paths
    /// (`data_dir`, `lemma_file`, `stopword_file`) are machine-local
    /// locations whose contents the manifests pin by sha256 anyway. The
    /// same corpus mounted somewhere else must reproduce identical
    /// artifacts and manifests.
    pub fn canonical_kv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "method = {}", self.method.as_str());
        let _ = writeln!(s, "k1 = {}", self.k1);
        let _ = writeln!(s, "b = {}", self.b);
        let _ = writeln!(s, "downscale = {}", self.downscale);
        let _ = writeln!(s, "start_exponent = {}", self.start_exponent);
        let ks: Vec<String> = self.recall_ks.iter().map(|k| k.to_string()).collect();
        let _ = writeln!(s, "recall_ks = {}", ks.join(","));
        let _ = writeln!(s, "predict_depth = {}", self.predict_depth);
        let _ = writeln!(s, "variant = {}", self.variant);
        let _ = writeln!(s, "layers = {}", self.layers);
        let _ = writeln!(s, "hidden = {}", self.hidden);
        let _ = writeln!(s, "heads = {}", self.heads);
        let _ = writeln!(s, "adapter_dim = {}", self.adapter_dim);
        let _ = writeln!(s, "lstm_layers = {}", self.lstm_layers);
        let _ = writeln!(s, "max_tokens = {}", self.max_tokens);
        let _ = writeln!(s, "docs_per_question = {}", self.docs_per_question);
        let _ = writeln!(s, "rerank_k = {}", self.rerank_k);
        let _ = writeln!(s, "loss = {}", self.loss);
        let _ = writeln!(s, "epochs = {}", self.epochs);
        let _ = writeln!(s, "batch_size = {}", self.batch_size);
        let _ = writeln!(s, "lr = {}", self.lr);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "ap_bins = {}", self.ap_bins);
        let _ = writeln!(s, "compare_seeds = {}", self.compare_seeds);
        let _ = writeln!(s, "synth_queries = {}", self.synth_queries);
        let _ = writeln!(s, "synth_eval_queries = {}", self.synth_eval_queries);
        let _ = writeln!(s, "synth_docs = {}", self.synth_docs);
        let _ = writeln!(s, "synth_payloads = {}", self.synth_payloads);
        let _ = writeln!(s, "synth_fillers = {}", self.synth_fillers);
        let _ = writeln!(s, "synth_dup_rate = {}", self.synth_dup_rate);
        s
    }

    /// The slice of the configuration that determines one command's
    /// outputs, as canonical text, or None for a command with no defined
    /// scope. Manifests hash this slice rather than the whole
    /// configuration, so changing a parameter only invalidates the
    /// artifacts it can actually affect: re-ranking with a new rerank_k
    /// does not force re-ingestion, and a downscale sweep reuses one set
    /// of canonical facts.
    pub fn scoped_kv(&self, command: &str) -> Option<String> {
        let keys: Vec<&str> = match command {
            // Ingestion is a pure function of the raw corpus, which the
            // content hashes pin.
            "ingest" => vec![],
            "retrieve" => FIRST_STAGE_KEYS.to_vec(),
            "train" => [FIRST_STAGE_KEYS, MODEL_KEYS, OPTIM_KEYS].concat(),
            "rerank" => {
                let mut keys = [FIRST_STAGE_KEYS, MODEL_KEYS, OPTIM_KEYS].concat();
                keys.push("rerank_k");
                keys
            }
            "evaluate" => vec!["recall_ks"],
            "synth" => [&["seed"][..], SYNTH_KEYS].concat(),
            // Loss is the iterated dimension, so it stays out.
            "compare-losses" => {
                let mut keys = [MODEL_KEYS, SYNTH_KEYS].concat();
                keys.extend(["epochs", "batch_size", "lr", "seed", "ap_bins", "compare_seeds"]);
                keys
            }
            "gradcheck" => vec!["seed"],
            _ => return None,
        };
        let mut s = format!("scope = {command}\n");
        for line in self.canonical_kv().lines() {
            let (key, _) = line.split_once(" = ").expect("canonical line");
            if keys.contains(&key) {
                s.push_str(line);
                s.push('\n');
            }
        }
        Some(s)
    }
}

const FIRST_STAGE_KEYS: &[&str] = &["method", "k1", "b", "downscale", "start_exponent"];

const MODEL_KEYS: &[&str] = &[
    "variant",
    "layers",
    "hidden",
    "heads",
    "adapter_dim",
    "lstm_layers",
    "max_tokens",
    "docs_per_question",
];

const OPTIM_KEYS: &[&str] = &["loss", "epochs", "batch_size", "lr", "seed", "ap_bins"];

const SYNTH_KEYS: &[&str] = &[
    "synth_queries",
    "synth_eval_queries",
    "synth_docs",
    "synth_payloads",
    "synth_fillers",
    "synth_dup_rate",
];

fn parse_usize_list(value: &str) -> std::result::Result<Vec<usize>, String> {
    value
        .split(',')
        .map(|part| {
            part.trim()
                .parse()
                .map_err(|e| format!("bad cutoff {part:?}: {e}"))
        })
        .collect()
}
