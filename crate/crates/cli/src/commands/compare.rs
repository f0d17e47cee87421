//! Train the re-ranker on the synthetic task once per loss and seed,
//! score each run on the held-out eval split, and report the table.
//!
//! Seeds root, root+1, ... are complete replicates: dataset,
//! initialization, and shuffling all derive from the run's seed, and the
//! three losses see identical replicates, so per-seed comparisons are
//! paired. A run that fails is recorded and flagged instead of aborting
//! the table.

use hoprank_neural::train::LossKind;

use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::manifest;
use crate::synth::fit_and_eval;

use super::{fmt_f64, write_kv, Workspace};

pub const LOSSES: [LossKind; 3] = [LossKind::Bce, LossKind::Lambda, LossKind::Ap];

#[derive(Debug, Clone)]
pub struct LossRow {
    pub loss: LossKind,
    /// (seed, eval MAP or failure message) per run.
    pub runs: Vec<(u64, std::result::Result<f64, String>)>,
}

impl LossRow {
    pub fn completed(&self) -> Vec<f64> {
        self.runs
            .iter()
            .filter_map(|(_, r)| r.as_ref().ok().copied())
            .collect()
    }

    pub fn mean(&self) -> Option<f64> {
        let ok = self.completed();
        if ok.is_empty() {
            None
        } else {
            Some(ok.iter().sum::<f64>() / ok.len() as f64)
        }
    }

    /// Max minus min over completed runs.
    pub fn spread(&self) -> Option<f64> {
        let ok = self.completed();
        if ok.is_empty() {
            None
        } else {
            let max = ok.iter().cloned().fold(f64::MIN, f64::max);
            let min = ok.iter().cloned().fold(f64::MAX, f64::min);
            Some(max - min)
        }
    }

    pub fn partial(&self) -> bool {
        self.runs.iter().any(|(_, r)| r.is_err())
    }
}

/// Run the full comparison grid. Library entry point so tests can call
/// it without a subprocess.
pub fn run_grid(cfg: &ExperimentConfig) -> Result<Vec<LossRow>> {
    let mut rows = Vec::new();
    for loss in LOSSES {
        let mut runs = Vec::new();
        for s in 0..cfg.compare_seeds {
            let seed = cfg.seed + s;
            let outcome =
                fit_and_eval(cfg, cfg.variant, loss, seed).map_err(|e| e.to_string());
            if let Ok(map) = &outcome {
                println!("loss {loss:<8} seed {seed}: eval MAP {map:.4}");
            } else if let Err(msg) = &outcome {
                eprintln!("loss {loss} seed {seed} failed: {msg}");
            }
            runs.push((seed, outcome));
        }
        rows.push(LossRow { loss, runs });
    }
    Ok(rows)
}

pub fn format_table(rows: &[LossRow]) -> String {
    let mut s = String::new();
    s.push_str("loss      mean     spread   per-seed\n");
    for row in rows {
        let mean = row
            .mean()
            .map(|m| format!("{m:.4}"))
            .unwrap_or_else(|| "  -   ".into());
        let spread = row
            .spread()
            .map(|d| format!("{d:.4}"))
            .unwrap_or_else(|| "  -   ".into());
        let per_seed: Vec<String> = row
            .runs
            .iter()
            .map(|(seed, r)| match r {
                Ok(m) => format!("{seed}:{m:.4}"),
                Err(_) => format!("{seed}:failed"),
            })
            .collect();
        let flag = if row.partial() { "  PARTIAL" } else { "" };
        s.push_str(&format!(
            "{:<9} {mean}   {spread}   {}{flag}\n",
            row.loss.to_string(),
            per_seed.join(" ")
        ));
    }
    s
}

pub fn run(cfg: &ExperimentConfig) -> Result<()> {
    let ws = Workspace::new(cfg);
    ws.ensure_dir()?;
    ws.write_resolved_config()?;

    let rows = run_grid(cfg)?;
    let table = format_table(&rows);
    print!("{table}");
    let partial = rows.iter().any(LossRow::partial);
    if partial {
        println!("warning: table is partial; some runs failed");
    }

    let txt_path = ws.path("loss_comparison.txt");
    std::fs::write(&txt_path, &table).map_err(|e| crate::error::CliError::io(&txt_path, e))?;
    manifest::stamp(&txt_path, "compare-losses", cfg)?;

    let mut kv: Vec<(String, String)> = vec![
        (
            "losses".into(),
            LOSSES.map(|l| l.to_string()).join(","),
        ),
        ("partial".into(), partial.to_string()),
    ];
    for row in &rows {
        for (seed, outcome) in &row.runs {
            let value = match outcome {
                Ok(m) => fmt_f64(*m),
                Err(_) => "failed".into(),
            };
            kv.push((format!("map.{}.{seed}", row.loss), value));
        }
        if let Some(m) = row.mean() {
            kv.push((format!("mean.{}", row.loss), fmt_f64(m)));
        }
        if let Some(d) = row.spread() {
            kv.push((format!("spread.{}", row.loss), fmt_f64(d)));
        }
        kv.push((
            format!("status.{}", row.loss),
            if row.partial() { "partial" } else { "ok" }.into(),
        ));
    }
    let kv_path = ws.path("loss_comparison.kv");
    write_kv(&kv_path, &kv)?;
    manifest::stamp(&kv_path, "compare-losses", cfg)?;
    Ok(())
}
