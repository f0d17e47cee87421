//! First-stage retrieval: build the sparse index over the canonical
//! facts, rank every fact for each question of the chosen split, and
//! write the ranked lists plus shared-format predictions.

use std::io::{BufWriter, Write};

use hoprank_core::retrieval::{
    build_index, rank_bm25, rank_iterative_with_stats, vectorize_query,
};

use crate::config::{ExperimentConfig, Method};
use crate::error::{CliError, Result};
use crate::manifest;

use super::{write_kv, Workspace};

/// Smallest number of scoring passes that can cover N facts when batch
/// sizes double each iteration: ceil(log2(N + 1)).
pub fn pass_bound(n_facts: usize) -> usize {
    (usize::BITS - n_facts.leading_zeros()) as usize
}

pub fn run(cfg: &ExperimentConfig) -> Result<()> {
    let ws = Workspace::new(cfg);
    ws.ensure_dir()?;
    ws.write_resolved_config()?;

    let facts = ws.load_facts()?;
    if facts.is_empty() {
        return Err(CliError::Invariant("fact store is empty".into()));
    }
    let resources = ws.text_resources()?;
    let index = build_index(&facts, &resources, cfg.k1, cfg.b);
    let index_path = ws.index_path();
    index.save(&index_path)?;
    manifest::stamp(&index_path, "retrieve", cfg)?;

    let questions = ws.load_questions(cfg.split)?;
    let iter_cfg = cfg.iter_config()?;
    let tag = cfg.method.as_str();

    let rankings_path = ws.rankings_path(tag, cfg.split);
    let predictions_path = ws.predictions_path(tag, cfg.split);
    let mut rankings = BufWriter::new(
        std::fs::File::create(&rankings_path).map_err(|e| CliError::io(&rankings_path, e))?,
    );
    let mut predictions = BufWriter::new(
        std::fs::File::create(&predictions_path)
            .map_err(|e| CliError::io(&predictions_path, e))?,
    );

    let bound = pass_bound(index.len());
    let mut max_passes = 0usize;
    let mut total_passes = 0usize;
    let start = std::time::Instant::now();
    for q in &questions {
        let tokens = resources.preprocess(&q.query_text);
        let query = vectorize_query(&tokens, &index);
        let ranked = match cfg.method {
            Method::Bm25 => rank_bm25(&q.qid, &query, &index),
            Method::IterBm25 => {
                let (ranked, stats) = rank_iterative_with_stats(&q.qid, &query, &index, &iter_cfg);
                max_passes = max_passes.max(stats.scoring_passes);
                total_passes += stats.scoring_passes;
                ranked
            }
        };
        let depth = if cfg.predict_depth == 0 {
            ranked.len()
        } else {
            cfg.predict_depth.min(ranked.len())
        };
        for (uid, score) in ranked.entries() {
            writeln!(rankings, "{}\t{}\t{}", q.qid, uid, score)
                .map_err(|e| CliError::io(&rankings_path, e))?;
        }
        for (uid, _) in &ranked.entries()[..depth] {
            writeln!(predictions, "{}\t{}", q.qid, uid)
                .map_err(|e| CliError::io(&predictions_path, e))?;
        }
    }
    rankings
        .flush()
        .map_err(|e| CliError::io(&rankings_path, e))?;
    predictions
        .flush()
        .map_err(|e| CliError::io(&predictions_path, e))?;
    manifest::stamp(&rankings_path, "retrieve", cfg)?;
    manifest::stamp(&predictions_path, "retrieve", cfg)?;
    let elapsed = start.elapsed();

    let mut stats: Vec<(String, String)> = vec![
        ("method".into(), tag.to_string()),
        ("split".into(), cfg.split.to_string()),
        ("facts".into(), index.len().to_string()),
        ("questions".into(), questions.len().to_string()),
    ];
    if cfg.method == Method::IterBm25 {
        if max_passes > bound {
            return Err(CliError::Invariant(format!(
                "iterative ranker used {max_passes} scoring passes, bound is {bound}"
            )));
        }
        let mean = if questions.is_empty() {
            0.0
        } else {
            total_passes as f64 / questions.len() as f64
        };
        stats.push(("max_scoring_passes".into(), max_passes.to_string()));
        stats.push(("pass_bound".into(), bound.to_string()));
        stats.push(("mean_scoring_passes".into(), format!("{mean:.2}")));
        println!(
            "scoring passes: max {max_passes} (bound {bound}), mean {mean:.2} over {} questions",
            questions.len()
        );
    }
    let stats_path = ws.path(&format!("retrieve.{tag}.{}.stats.kv", cfg.split));
    write_kv(&stats_path, &stats)?;
    manifest::stamp(&stats_path, "retrieve", cfg)?;

    println!(
        "ranked {} questions over {} facts with {tag} in {:.1}s",
        questions.len(),
        index.len(),
        elapsed.as_secs_f64()
    );
    Ok(())
}
