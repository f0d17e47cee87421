//! Re-rank each question's first-stage list with the trained encoder:
//! the top K candidates are rescored as one cross-document batch, the
//! tail keeps its retrieval order below them.

use std::collections::HashMap;
use std::io::{BufWriter, Write};

use hoprank_core::retrieval::RankedList;
use hoprank_neural::encoder::{encode_pair, rerank, score_batch, EncoderVocab, ScoreBatch};
use hoprank_neural::optim::load_checkpoint;

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};
use crate::manifest;

use super::{for_each_ranking, write_kv, Workspace};

pub fn run(cfg: &ExperimentConfig) -> Result<()> {
    let ws = Workspace::new(cfg);
    ws.ensure_dir()?;
    ws.write_resolved_config()?;

    let facts = ws.load_facts()?;
    let resources = ws.text_resources()?;
    let questions = ws.load_questions(cfg.split)?;
    let query_tokens: HashMap<&str, Vec<String>> = questions
        .iter()
        .map(|q| (q.qid.as_str(), resources.preprocess(&q.query_text)))
        .collect();

    let vocab_path = ws.encoder_vocab_path();
    manifest::verify(&vocab_path, cfg)?;
    let vocab = EncoderVocab::load(&vocab_path)?;
    let ckpt_path = ws.checkpoint_path();
    manifest::verify(&ckpt_path, cfg)?;
    let params = load_checkpoint(&ckpt_path)?;
    let model_cfg = cfg.model_config_with_vocab(vocab.len());
    model_cfg.validate()?;

    let rankings_path = ws.rankings_path(cfg.method.as_str(), cfg.split);
    manifest::verify(&rankings_path, cfg)?;

    let out_path = ws.predictions_path("rerank", cfg.split);
    let out_file = std::fs::File::create(&out_path).map_err(|e| CliError::io(&out_path, e))?;
    let mut out = BufWriter::new(out_file);

    let mut fact_tokens: HashMap<String, Vec<String>> = HashMap::new();
    let mut reranked_questions = 0usize;
    for_each_ranking(&rankings_path, |qid, entries| {
        let Some(qt) = query_tokens.get(qid) else {
            return Err(CliError::Invariant(format!(
                "ranking for unknown question {qid:?} in {}",
                rankings_path.display()
            )));
        };
        let ranked = RankedList::from_entries(qid, entries)?;
        let k = cfg.rerank_k.min(ranked.len());
        let scores = if k == 0 {
            ScoreBatch {
                qid: qid.to_string(),
                uids: Vec::new(),
                logits: Vec::new(),
            }
        } else {
            let uids: Vec<String> = ranked.uids().take(k).map(str::to_string).collect();
            let pairs = uids
                .iter()
                .map(|uid| {
                    if !fact_tokens.contains_key(uid) {
                        let fact = facts.by_uid(uid).ok_or_else(|| {
                            CliError::Invariant(format!(
                                "ranking references unknown fact {uid:?}"
                            ))
                        })?;
                        fact_tokens
                            .insert(uid.clone(), resources.preprocess(&fact.text));
                    }
                    Ok(encode_pair(&vocab, qt, &fact_tokens[uid], cfg.max_tokens))
                })
                .collect::<Result<Vec<_>>>()?;
            score_batch(&params, &model_cfg, qid, uids, &pairs)
        };
        let reranked = rerank(&ranked, &scores, k)?;
        let depth = if cfg.predict_depth == 0 {
            reranked.len()
        } else {
            cfg.predict_depth.min(reranked.len())
        };
        for uid in reranked.uids().take(depth) {
            writeln!(out, "{qid}\t{uid}").map_err(|e| CliError::io(&out_path, e))?;
        }
        reranked_questions += 1;
        Ok(())
    })?;
    out.flush().map_err(|e| CliError::io(&out_path, e))?;
    manifest::stamp(&out_path, "rerank", cfg)?;

    let stats_path = ws.path(&format!("rerank.{}.stats.kv", cfg.split));
    write_kv(
        &stats_path,
        &[
            ("split".into(), cfg.split.to_string()),
            ("questions".into(), reranked_questions.to_string()),
            ("rerank_k".into(), cfg.rerank_k.to_string()),
        ],
    )?;
    manifest::stamp(&stats_path, "rerank", cfg)?;

    println!(
        "reranked {} questions (K = {}) into {}",
        reranked_questions,
        cfg.rerank_k,
        out_path.display()
    );
    Ok(())
}
