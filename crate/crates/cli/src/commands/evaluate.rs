//! Score a prediction file against the gold explanations of a split:
//! MAP plus recall at the configured cutoffs.
//!
//! The prediction file's manifest is checked first; predictions produced
//! under a different configuration are refused rather than silently
//! scored.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use hoprank_core::eval::{mean_average_precision, read_predictions, EvalItem, EvalReport};

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};
use crate::manifest;

use super::{fmt_f64, write_kv, Workspace};

pub fn run(cfg: &ExperimentConfig, predictions: Option<PathBuf>) -> Result<()> {
    let ws = Workspace::new(cfg);
    ws.ensure_dir()?;
    let pred_path =
        predictions.unwrap_or_else(|| ws.predictions_path(cfg.method.as_str(), cfg.split));
    manifest::verify(&pred_path, cfg)?;

    let questions = ws.load_questions(cfg.split)?;
    let report = score_predictions(&pred_path, &questions, &cfg.recall_ks)?;

    println!("predictions   {}", pred_path.display());
    println!("scored        {} (skipped {})", report.scored, report.skipped);
    println!("MAP           {:.4}", report.map);
    for (k, r) in &report.recall {
        println!("recall@{k:<6}{r:.4}");
    }

    let tag = eval_tag(&pred_path);
    let mut kv: Vec<(String, String)> = vec![
        (
            "predictions".into(),
            pred_path
                .file_name()
                .and_then(|n| n.to_str())
                .unwrap_or_default()
                .to_string(),
        ),
        ("scored".into(), report.scored.to_string()),
        ("skipped".into(), report.skipped.to_string()),
        ("map".into(), fmt_f64(report.map)),
    ];
    for (k, r) in &report.recall {
        kv.push((format!("recall@{k}"), fmt_f64(*r)));
    }
    let out = ws.path(&format!("evaluation.{tag}.kv"));
    write_kv(&out, &kv)?;
    manifest::stamp(&out, "evaluate", cfg)?;
    Ok(())
}

/// Score a prediction file against canonical questions. Every prediction
/// qid must belong to the question set, and every question with gold
/// must be predicted; anything else means the pair does not match.
pub fn score_predictions(
    pred_path: &Path,
    questions: &[super::CanonicalQuestion],
    recall_ks: &[usize],
) -> Result<EvalReport> {
    let preds = read_predictions(pred_path)?;
    let mut by_qid: BTreeMap<&str, Vec<String>> = BTreeMap::new();
    let known: BTreeSet<&str> = questions.iter().map(|q| q.qid.as_str()).collect();
    for (qid, ranking) in &preds {
        if !known.contains(qid.as_str()) {
            return Err(CliError::Invariant(format!(
                "prediction file ranks unknown question {qid:?}"
            )));
        }
        by_qid.insert(qid, ranking.clone());
    }

    let mut items = Vec::with_capacity(questions.len());
    for q in questions {
        match by_qid.get(q.qid.as_str()) {
            Some(ranking) => items.push(EvalItem {
                qid: q.qid.clone(),
                ranking: ranking.clone(),
                gold: q.gold.clone(),
            }),
            None if q.gold.is_empty() => items.push(EvalItem {
                qid: q.qid.clone(),
                ranking: Vec::new(),
                gold: BTreeSet::new(),
            }),
            None => {
                return Err(CliError::Invariant(format!(
                    "prediction file has no ranking for question {:?}",
                    q.qid
                )))
            }
        }
    }
    mean_average_precision(&items, recall_ks).map_err(Into::into)
}

fn eval_tag(pred_path: &Path) -> String {
    let name = pred_path
        .file_name()
        .and_then(|n| n.to_str())
        .unwrap_or("custom");
    name.strip_prefix("predictions.")
        .unwrap_or(name)
        .strip_suffix(".tsv")
        .unwrap_or(name)
        .to_string()
}
