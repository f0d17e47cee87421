//! Train the re-ranker on the train split's retrieval candidates: the
//! top documents of each question's first-stage ranking, labeled by the
//! gold explanation set.

use std::collections::HashMap;

use hoprank_core::corpus::Split;
use hoprank_neural::encoder::{encode_pair, init_params, EncoderVocab};
use hoprank_neural::optim::save_checkpoint;
use hoprank_neural::train::{train, TrainSample};

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};
use crate::manifest;

use super::{fmt_f64, for_each_ranking, write_kv, Workspace};

pub fn run(cfg: &ExperimentConfig) -> Result<()> {
    let ws = Workspace::new(cfg);
    ws.ensure_dir()?;
    ws.write_resolved_config()?;

    let facts = ws.load_facts()?;
    let resources = ws.text_resources()?;
    let questions = ws.load_questions(Split::Train)?;

    let rankings_path = ws.rankings_path(cfg.method.as_str(), Split::Train);
    manifest::verify(&rankings_path, cfg)?;
    let mut candidates: HashMap<String, Vec<String>> = HashMap::new();
    for_each_ranking(&rankings_path, |qid, entries| {
        let top: Vec<String> = entries
            .into_iter()
            .take(cfg.docs_per_question)
            .map(|(uid, _)| uid)
            .collect();
        candidates.insert(qid.to_string(), top);
        Ok(())
    })?;

    // Vocabulary over preprocessed fact and query tokens, facts first in
    // uid order so the mapping is a function of corpus content alone.
    let mut vocab = EncoderVocab::new();
    let mut fact_order: Vec<&hoprank_core::corpus::Fact> = facts.iter().collect();
    fact_order.sort_by(|a, b| a.uid.cmp(&b.uid));
    let mut fact_tokens: HashMap<&str, Vec<String>> = HashMap::new();
    for fact in &fact_order {
        let tokens = resources.preprocess(&fact.text);
        vocab.extend(tokens.iter().map(String::as_str));
        fact_tokens.insert(fact.uid.as_str(), tokens);
    }
    let query_tokens: HashMap<&str, Vec<String>> = questions
        .iter()
        .map(|q| (q.qid.as_str(), resources.preprocess(&q.query_text)))
        .collect();
    for q in &questions {
        vocab.extend(query_tokens[q.qid.as_str()].iter().map(String::as_str));
    }

    let mut samples = Vec::with_capacity(questions.len());
    for q in &questions {
        let Some(uids) = candidates.get(&q.qid) else {
            return Err(CliError::Invariant(format!(
                "no ranking for train question {:?} in {}",
                q.qid,
                rankings_path.display()
            )));
        };
        let qt = &query_tokens[q.qid.as_str()];
        let pairs = uids
            .iter()
            .map(|uid| {
                let ft = fact_tokens.get(uid.as_str()).ok_or_else(|| {
                    CliError::Invariant(format!("ranking references unknown fact {uid:?}"))
                })?;
                Ok(encode_pair(&vocab, qt, ft, cfg.max_tokens))
            })
            .collect::<Result<Vec<_>>>()?;
        let labels = uids
            .iter()
            .map(|uid| if q.gold.contains(uid) { 1.0 } else { 0.0 })
            .collect();
        samples.push(TrainSample {
            qid: q.qid.clone(),
            uids: uids.clone(),
            pairs,
            labels,
        });
    }

    let model_cfg = cfg.model_config_with_vocab(vocab.len());
    model_cfg.validate()?;
    let mut params = init_params(&model_cfg, cfg.seed);
    let tcfg = cfg.train_config();
    println!(
        "training {} on {} questions ({} candidates each, vocab {})",
        cfg.variant,
        samples.len(),
        cfg.docs_per_question,
        vocab.len()
    );
    let report = train(&mut params, &model_cfg, &tcfg, &samples)?;
    for (e, stats) in report.epochs.iter().enumerate() {
        println!(
            "epoch {:>3}  loss {:.5}  ({} questions, {} skipped)",
            e + 1,
            stats.mean_loss,
            stats.contributing,
            stats.skipped
        );
    }
    println!("train MAP {:.4}", report.final_map);

    let vocab_path = ws.encoder_vocab_path();
    vocab.save(&vocab_path)?;
    manifest::stamp(&vocab_path, "train", cfg)?;
    let ckpt_path = ws.checkpoint_path();
    save_checkpoint(&ckpt_path, &params)?;
    manifest::stamp(&ckpt_path, "train", cfg)?;

    let mut kv: Vec<(String, String)> = vec![
        ("variant".into(), cfg.variant.to_string()),
        ("loss".into(), cfg.loss.to_string()),
        ("questions".into(), samples.len().to_string()),
        ("vocab".into(), vocab.len().to_string()),
        ("train_map".into(), fmt_f64(report.final_map)),
    ];
    for (e, stats) in report.epochs.iter().enumerate() {
        kv.push((format!("loss.epoch{}", e + 1), fmt_f64(stats.mean_loss)));
    }
    let report_path = ws.path("train.report.kv");
    write_kv(&report_path, &kv)?;
    manifest::stamp(&report_path, "train", cfg)?;
    Ok(())
}
