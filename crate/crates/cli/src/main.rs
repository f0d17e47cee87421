use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use hoprank_cli::commands;
use hoprank_cli::config::{ExperimentConfig, Overrides, DATA_ENV};
use hoprank_cli::error::{CliError, Result};

/// Multi-hop explanation ranking: iterative sparse retrieval with a
/// cross-document neural re-ranker.
#[derive(Parser)]
#[command(name = "hoprank", version)]
struct Cli {
    /// Flat key = value config file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(flatten)]
    flags: Flags,

    #[command(subcommand)]
    command: Command,
}

/// Every config field is also a flag. Precedence: defaults, then the
/// config file, then the data-root environment variable, then flags.
#[derive(Args)]
struct Flags {
    /// Corpus root containing tables/ and questions.{split}.tsv.
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,
    /// Directory for artifacts and manifests.
    #[arg(long, global = true)]
    work_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    lemma_file: Option<PathBuf>,
    #[arg(long, global = true)]
    stopword_file: Option<PathBuf>,
    /// First-stage ranker: bm25 or ibm25.
    #[arg(long, global = true)]
    method: Option<String>,
    /// Question split: train, dev, or test.
    #[arg(long, global = true)]
    split: Option<String>,
    #[arg(long, global = true)]
    k1: Option<f64>,
    #[arg(long, global = true)]
    b: Option<f64>,
    /// Per-iteration fold-in factor for the iterative ranker.
    #[arg(long, global = true)]
    downscale: Option<f64>,
    #[arg(long, global = true)]
    start_exponent: Option<u32>,
    /// Comma-separated recall cutoffs, e.g. 64,128.
    #[arg(long, global = true)]
    recall_ks: Option<String>,
    /// Ranking depth kept in prediction files; 0 keeps everything.
    #[arg(long, global = true)]
    predict_depth: Option<usize>,
    /// Encoder variant: isolated, lstm_after, or lit.
    #[arg(long, global = true)]
    variant: Option<String>,
    #[arg(long, global = true)]
    layers: Option<usize>,
    #[arg(long, global = true)]
    hidden: Option<usize>,
    #[arg(long, global = true)]
    heads: Option<usize>,
    #[arg(long, global = true)]
    adapter_dim: Option<usize>,
    #[arg(long, global = true)]
    lstm_layers: Option<usize>,
    #[arg(long, global = true)]
    max_tokens: Option<usize>,
    #[arg(long, global = true)]
    docs_per_question: Option<usize>,
    /// Candidates rescored per question; 0 disables re-ranking.
    #[arg(long, global = true)]
    rerank_k: Option<usize>,
    /// Training loss: bce, lambda, or ap.
    #[arg(long, global = true)]
    loss: Option<String>,
    #[arg(long, global = true)]
    epochs: Option<usize>,
    #[arg(long, global = true)]
    batch_size: Option<usize>,
    #[arg(long, global = true)]
    lr: Option<f64>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    ap_bins: Option<usize>,
    /// Seeds per loss in compare-losses.
    #[arg(long, global = true)]
    compare_seeds: Option<u64>,
    #[arg(long, global = true)]
    synth_queries: Option<usize>,
    #[arg(long, global = true)]
    synth_eval_queries: Option<usize>,
    #[arg(long, global = true)]
    synth_docs: Option<usize>,
    #[arg(long, global = true)]
    synth_payloads: Option<usize>,
    #[arg(long, global = true)]
    synth_fillers: Option<usize>,
    #[arg(long, global = true)]
    synth_dup_rate: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Read the raw corpus and write canonical facts and questions.
    Ingest,
    /// Build the sparse index and rank the chosen split.
    Retrieve,
    /// Train the re-ranker on train-split retrieval candidates.
    Train,
    /// Re-score the top K of each first-stage ranking.
    Rerank,
    /// Score a prediction file: MAP and recall at the configured cutoffs.
    Evaluate {
        /// Prediction file to score; defaults to the retrieve output for
        /// the configured method and split.
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
    /// Train once per loss and seed on the synthetic task and tabulate.
    CompareLosses,
    /// Audit analytic gradients against finite differences.
    Gradcheck,
    /// Generate the synthetic cross-document dataset.
    Synth,
}

fn parse_enum<T: std::str::FromStr>(what: &str, value: Option<String>) -> Result<Option<T>>
where
    T::Err: std::fmt::Display,
{
    match value {
        None => Ok(None),
        Some(v) => v
            .parse()
            .map(Some)
            .map_err(|e| CliError::Invariant(format!("bad value for --{what}: {e}"))),
    }
}

impl Flags {
    fn into_overrides(self) -> Result<Overrides> {
        Ok(Overrides {
            data_dir: self.data_dir,
            work_dir: self.work_dir,
            lemma_file: self.lemma_file,
            stopword_file: self.stopword_file,
            method: parse_enum("method", self.method)?,
            split: parse_enum("split", self.split)?,
            k1: self.k1,
            b: self.b,
            downscale: self.downscale,
            start_exponent: self.start_exponent,
            recall_ks: match self.recall_ks {
                None => None,
                Some(v) => Some(
                    v.split(',')
                        .map(|part| {
                            part.trim().parse().map_err(|e| {
                                CliError::Invariant(format!("bad value for --recall-ks: {e}"))
                            })
                        })
                        .collect::<Result<Vec<usize>>>()?,
                ),
            },
            predict_depth: self.predict_depth,
            variant: parse_enum("variant", self.variant)?,
            layers: self.layers,
            hidden: self.hidden,
            heads: self.heads,
            adapter_dim: self.adapter_dim,
            lstm_layers: self.lstm_layers,
            max_tokens: self.max_tokens,
            docs_per_question: self.docs_per_question,
            rerank_k: self.rerank_k,
            loss: parse_enum("loss", self.loss)?,
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            seed: self.seed,
            ap_bins: self.ap_bins,
            compare_seeds: self.compare_seeds,
            synth_queries: self.synth_queries,
            synth_eval_queries: self.synth_eval_queries,
            synth_docs: self.synth_docs,
            synth_payloads: self.synth_payloads,
            synth_fillers: self.synth_fillers,
            synth_dup_rate: self.synth_dup_rate,
        })
    }
}

fn run(cli: Cli) -> Result<()> {
    let overrides = cli.flags.into_overrides()?;
    let env_data = std::env::var_os(DATA_ENV).map(PathBuf::from);
    let cfg = ExperimentConfig::resolve(cli.config.as_deref(), &overrides, env_data)?;
    match cli.command {
        Command::Ingest => commands::ingest::run(&cfg),
        Command::Retrieve => commands::retrieve::run(&cfg),
        Command::Train => commands::train::run(&cfg),
        Command::Rerank => commands::rerank::run(&cfg),
        Command::Evaluate { predictions } => commands::evaluate::run(&cfg, predictions),
        Command::CompareLosses => commands::compare::run(&cfg),
        Command::Gradcheck => commands::gradcheck::run(&cfg),
        Command::Synth => commands::synth::run(&cfg),
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
