//! Deterministic training loop: one graph per question, seeded
//! backprop from the chosen ranking loss, gradient accumulation over a
//! question batch, then an Adam step.
//!
//! All shuffling draws from named PRNG streams, so a (config, seed)
//! pair fixes the entire parameter trajectory bit for bit.

use std::collections::BTreeSet;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::encoder::{load_params, model_forward, EncodedPair, ModelConfig};
use crate::error::{NeuralError, Result};
use crate::losses::{ap_loss, bce_loss, lambda_loss, DEFAULT_AP_BINS};
use crate::optim::{adam_step, AdamState, ParamSet};
use crate::rng::named_stream;
use crate::tensor::{Graph, NodeId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Bce,
    Lambda,
    Ap,
}

impl FromStr for LossKind {
    type Err = NeuralError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bce" => Ok(LossKind::Bce),
            "lambda" => Ok(LossKind::Lambda),
            "ap" => Ok(LossKind::Ap),
            other => Err(NeuralError::InvalidConfig {
                what: format!("unknown loss {other:?} (expected bce, lambda, ap)"),
            }),
        }
    }
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LossKind::Bce => "bce",
            LossKind::Lambda => "lambda",
            LossKind::Ap => "ap",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub ap_bins: usize,
    pub shuffle: bool,
    /// Stop early once training MAP reaches this value; checked every
    /// `check_every` epochs when set.
    pub map_target: Option<f64>,
    pub check_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            loss: LossKind::Bce,
            epochs: 30,
            batch_size: 1,
            lr: 1e-3,
            seed: 7,
            ap_bins: DEFAULT_AP_BINS,
            shuffle: true,
            map_target: None,
            check_every: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |what: String| Err(NeuralError::InvalidConfig { what });
        if self.epochs == 0 {
            return fail("epochs must be >= 1".into());
        }
        if self.batch_size == 0 {
            return fail("batch_size must be >= 1".into());
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return fail(format!("learning rate must be positive, got {}", self.lr));
        }
        if self.ap_bins < 2 {
            return fail(format!("ap_bins must be >= 2, got {}", self.ap_bins));
        }
        if self.map_target.is_some() && self.check_every == 0 {
            return fail("check_every must be >= 1 when map_target is set".into());
        }
        Ok(())
    }
}

/// One question's encoded candidate list with binary relevance labels,
/// in retrieval-rank order.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub qid: String,
    pub uids: Vec<String>,
    pub pairs: Vec<EncodedPair>,
    pub labels: Vec<f64>,
}

impl TrainSample {
    fn validate(&self, cfg: &ModelConfig) -> Result<()> {
        let fail = |what: String| Err(NeuralError::InvalidInput { what });
        if self.pairs.is_empty() {
            return fail(format!("question {} has no candidates", self.qid));
        }
        if self.pairs.len() != self.labels.len() || self.pairs.len() != self.uids.len() {
            return fail(format!(
                "question {}: {} pairs, {} labels, {} uids",
                self.qid,
                self.pairs.len(),
                self.labels.len(),
                self.uids.len()
            ));
        }
        if self.pairs.len() > cfg.docs_per_question {
            return fail(format!(
                "question {} has {} candidates, config allows {}",
                self.qid,
                self.pairs.len(),
                cfg.docs_per_question
            ));
        }
        if !self.labels.iter().all(|&y| y == 0.0 || y == 1.0) {
            return fail(format!("question {} has non-binary labels", self.qid));
        }
        Ok(())
    }

    fn has_positive(&self) -> bool {
        self.labels.iter().any(|&y| y == 1.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub mean_loss: f64,
    pub contributing: usize,
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    pub final_map: f64,
    pub target_reached: bool,
}

// Questions the loss cannot score contribute nothing: APLoss is
// undefined without a positive, LambdaLoss is identically zero without
// a (positive, negative) pair.
fn sample_loss(kind: LossKind, bins: usize, logits: &[f64], labels: &[f64]) -> Option<(f64, Vec<f64>)> {
    match kind {
        LossKind::Bce => Some(bce_loss(logits, labels)),
        LossKind::Lambda => {
            let pos = labels.iter().any(|&y| y == 1.0);
            let neg = labels.iter().any(|&y| y == 0.0);
            (pos && neg).then(|| lambda_loss(logits, labels))
        }
        LossKind::Ap => labels
            .iter()
            .any(|&y| y == 1.0)
            .then(|| ap_loss(logits, labels, bins).expect("validated sample")),
    }
}

fn forward_logits(params: &ParamSet, cfg: &ModelConfig, pairs: &[EncodedPair]) -> Vec<f64> {
    let mut g = Graph::new();
    let nodes = load_params(&mut g, params);
    let ids = model_forward(&mut g, &nodes, cfg, pairs);
    ids.iter().map(|&n| g.value(n).data[0]).collect()
}

/// Rank each sample's candidates by descending logit (stable, so prior
/// rank breaks ties) and average AP against the labeled positives.
/// Samples without positives are skipped; an all-skipped set is an error.
pub fn training_map(params: &ParamSet, cfg: &ModelConfig, samples: &[TrainSample]) -> Result<f64> {
    let mut total = 0.0;
    let mut scored = 0usize;
    for sample in samples {
        if !sample.has_positive() {
            continue;
        }
        let logits = forward_logits(params, cfg, &sample.pairs);
        let mut order: Vec<usize> = (0..logits.len()).collect();
        order.sort_by(|&a, &b| logits[b].partial_cmp(&logits[a]).unwrap().then(a.cmp(&b)));
        let ranking: Vec<&str> = order.iter().map(|&i| sample.uids[i].as_str()).collect();
        let gold: BTreeSet<String> = sample
            .uids
            .iter()
            .zip(&sample.labels)
            .filter(|(_, &y)| y == 1.0)
            .map(|(uid, _)| uid.clone())
            .collect();
        total += hoprank_core::eval::average_precision(&ranking, &gold).map_err(|e| {
            NeuralError::InvalidInput {
                what: format!("AP failed for {}: {e}", sample.qid),
            }
        })?;
        scored += 1;
    }
    if scored == 0 {
        return Err(NeuralError::InvalidInput {
            what: "no sample has a positive label".into(),
        });
    }
    Ok(total / scored as f64)
}

/// Train in place. Returns per-epoch loss statistics and the final
/// training MAP.
pub fn train(
    params: &mut ParamSet,
    cfg: &ModelConfig,
    tcfg: &TrainConfig,
    samples: &[TrainSample],
) -> Result<TrainReport> {
    cfg.validate()?;
    tcfg.validate()?;
    if samples.is_empty() {
        return Err(NeuralError::InvalidInput {
            what: "no training samples".into(),
        });
    }
    for sample in samples {
        sample.validate(cfg)?;
    }

    let mut adam = AdamState::new();
    let mut epochs = Vec::with_capacity(tcfg.epochs);
    let mut target_reached = false;

    'epochs: for epoch in 0..tcfg.epochs {
        let mut order: Vec<usize> = (0..samples.len()).collect();
        if tcfg.shuffle {
            let mut rng = named_stream(tcfg.seed, &format!("train.epoch{epoch}"));
            order.shuffle(&mut rng);
        }

        let mut epoch_loss = 0.0;
        let mut contributing = 0usize;
        let mut skipped = 0usize;
        let mut grads = params.zero_grads();
        let mut in_batch = 0usize;

        for &idx in &order {
            let sample = &samples[idx];
            let mut g = Graph::new();
            let nodes = load_params(&mut g, params);
            let logit_nodes = model_forward(&mut g, &nodes, cfg, &sample.pairs);
            let logits: Vec<f64> = logit_nodes.iter().map(|&n| g.value(n).data[0]).collect();

            let Some((loss, dlogits)) = sample_loss(tcfg.loss, tcfg.ap_bins, &logits, &sample.labels)
            else {
                skipped += 1;
                continue;
            };
            epoch_loss += loss;
            contributing += 1;

            let seeds: Vec<(NodeId, Vec<f64>)> = logit_nodes
                .iter()
                .zip(dlogits)
                .map(|(&n, d)| (n, vec![d]))
                .collect();
            g.backward_seeded(&seeds);
            nodes.accumulate_grads(&g, &mut grads);
            in_batch += 1;

            if in_batch == tcfg.batch_size {
                apply_batch(params, &mut grads, &mut adam, tcfg.lr, in_batch);
                in_batch = 0;
            }
        }
        if in_batch > 0 {
            apply_batch(params, &mut grads, &mut adam, tcfg.lr, in_batch);
        }

        epochs.push(EpochStats {
            mean_loss: if contributing > 0 {
                epoch_loss / contributing as f64
            } else {
                0.0
            },
            contributing,
            skipped,
        });

        if let Some(target) = tcfg.map_target {
            if (epoch + 1) % tcfg.check_every == 0 && training_map(params, cfg, samples)? >= target {
                target_reached = true;
                break 'epochs;
            }
        }
    }

    let final_map = training_map(params, cfg, samples)?;
    if let Some(target) = tcfg.map_target {
        target_reached = target_reached || final_map >= target;
    }
    Ok(TrainReport {
        epochs,
        final_map,
        target_reached,
    })
}

fn apply_batch(
    params: &mut ParamSet,
    grads: &mut crate::optim::GradMap,
    adam: &mut AdamState,
    lr: f64,
    count: usize,
) {
    let scale = 1.0 / count as f64;
    for g in grads.values_mut() {
        for v in g.iter_mut() {
            *v *= scale;
        }
    }
    adam_step(params, grads, adam, lr, 0.9, 0.999, 1e-8);
    for g in grads.values_mut() {
        g.iter_mut().for_each(|v| *v = 0.0);
    }
}
