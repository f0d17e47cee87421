//! Read the raw corpus layout (fact tables plus per-split question
//! files), resolve gold references against the fact store, and dump the
//! canonical artifacts the rest of the pipeline consumes.

use hoprank_core::corpus::{
    build_query_text, filter_gold_to_store, load_fact_tables, load_questions, IngestLog, Split,
};

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};
use crate::manifest;

use super::{write_canonical_questions, write_kv, CanonicalQuestion, Workspace};

pub fn run(cfg: &ExperimentConfig) -> Result<()> {
    let ws = Workspace::new(cfg);
    ws.ensure_dir()?;
    ws.write_resolved_config()?;
    let data = cfg.data_dir()?;

    let mut log = IngestLog::default();
    let tables_dir = data.join("tables");
    let facts = load_fact_tables(&tables_dir, &mut log)?;
    println!("facts: {} from {}", facts.len(), tables_dir.display());

    let facts_path = ws.facts_path();
    let file = std::fs::File::create(&facts_path).map_err(|e| CliError::io(&facts_path, e))?;
    facts
        .dump_canonical(std::io::BufWriter::new(file))
        .map_err(|e| CliError::io(&facts_path, e))?;
    manifest::stamp(&facts_path, "ingest", cfg)?;

    let mut stats: Vec<(String, String)> = vec![("facts".into(), facts.len().to_string())];
    let mut dropped_total = 0usize;
    for split in [Split::Train, Split::Dev, Split::Test] {
        let path = data.join(format!("questions.{split}.tsv"));
        let mut questions = load_questions(&path, split, &mut log)?;
        dropped_total += filter_gold_to_store(&mut questions, &facts, &mut log);

        let canonical: Vec<CanonicalQuestion> = questions
            .iter()
            .map(|q| CanonicalQuestion {
                qid: q.qid.clone(),
                query_text: build_query_text(q, &mut log),
                gold: q.gold.clone(),
            })
            .collect();
        let out = ws.questions_path(split);
        write_canonical_questions(&out, &canonical)?;
        manifest::stamp(&out, "ingest", cfg)?;

        println!("questions.{split}: {}", canonical.len());
        stats.push((format!("questions.{split}"), canonical.len().to_string()));
    }

    stats.push(("gold_refs_dropped".into(), dropped_total.to_string()));
    stats.push(("warnings".into(), log.warnings.len().to_string()));
    let stats_path = ws.path("ingest.stats.kv");
    write_kv(&stats_path, &stats)?;
    manifest::stamp(&stats_path, "ingest", cfg)?;

    for warning in &log.warnings {
        eprintln!("warning: {warning}");
    }
    Ok(())
}
