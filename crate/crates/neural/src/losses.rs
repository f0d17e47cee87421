//! The three training objectives: binary cross-entropy, LambdaLoss, and
//! soft-binned APLoss.
//!
//! Each loss is a pure function from (logits, labels) to a scalar and
//! the gradient with respect to the logits, so they compose with any
//! forward graph via seeded backprop.

use crate::error::{NeuralError, Result};
use crate::tensor::sigmoid;

pub const DEFAULT_AP_BINS: usize = 25;
const AP_EPS: f64 = 1e-8;

fn validate_labels(logits: &[f64], labels: &[f64]) {
    assert_eq!(
        logits.len(),
        labels.len(),
        "logits ({}) and labels ({}) differ in length",
        logits.len(),
        labels.len()
    );
    assert!(!logits.is_empty(), "empty score batch");
    assert!(
        labels.iter().all(|&y| y == 0.0 || y == 1.0),
        "labels must be binary"
    );
}

// ln(1 + e^x) without overflow on either tail.
fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// Mean binary cross-entropy in the log-sum-exp form. Gradient per
/// logit is (σ(s) − y) / D.
pub fn bce_loss(logits: &[f64], labels: &[f64]) -> (f64, Vec<f64>) {
    validate_labels(logits, labels);
    let d = logits.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(logits.len());
    for (&s, &y) in logits.iter().zip(labels) {
        loss += s.max(0.0) - s * y + softplus(-s.abs());
        grad.push((sigmoid(s) - y) / d);
    }
    (loss / d, grad)
}

/// NDCG-weighted pairwise logistic loss. Ranks come from the current
/// descending score order and are treated as constants in the gradient.
/// Without at least one positive and one negative the loss is zero.
pub fn lambda_loss(logits: &[f64], labels: &[f64]) -> (f64, Vec<f64>) {
    validate_labels(logits, labels);
    let n = logits.len();
    let mut grad = vec![0.0; n];

    let positives: Vec<usize> = (0..n).filter(|&i| labels[i] == 1.0).collect();
    let negatives: Vec<usize> = (0..n).filter(|&i| labels[i] == 0.0).collect();
    if positives.is_empty() || negatives.is_empty() {
        return (0.0, grad);
    }

    // rank[i] is 1-based position under descending score, ties by index.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| logits[b].partial_cmp(&logits[a]).unwrap().then(a.cmp(&b)));
    let mut rank = vec![0usize; n];
    for (pos, &i) in order.iter().enumerate() {
        rank[i] = pos + 1;
    }
    let discount = |r: usize| 1.0 / ((1 + r) as f64).log2();

    let idcg: f64 = (1..=positives.len()).map(discount).sum();

    let mut loss = 0.0;
    for &i in &positives {
        for &j in &negatives {
            // Gains are 2^y − 1, so |G_i − G_j| = 1 for every (pos, neg) pair.
            let weight = (discount(rank[i]) - discount(rank[j])).abs() / idcg;
            let margin = logits[i] - logits[j];
            loss += weight * softplus(-margin);
            let slope = weight * sigmoid(-margin);
            grad[i] -= slope;
            grad[j] += slope;
        }
    }
    (loss, grad)
}

/// Soft-binned average-precision loss with tanh pre-scaling.
pub fn ap_loss(logits: &[f64], labels: &[f64], bins: usize) -> Result<(f64, Vec<f64>)> {
    ap_loss_opts(logits, labels, bins, true)
}

/// APLoss with the pre-scaling step exposed. `prescale: false` bins the
/// raw logits on the [−1, 1] grid; scores outside the grid fall off the
/// histogram entirely, which is the fidelity failure the pre-scaling
/// exists to prevent.
pub fn ap_loss_opts(
    logits: &[f64],
    labels: &[f64],
    bins: usize,
    prescale: bool,
) -> Result<(f64, Vec<f64>)> {
    validate_labels(logits, labels);
    if bins < 2 {
        return Err(NeuralError::InvalidInput {
            what: format!("ap_loss needs at least 2 bins, got {bins}"),
        });
    }
    let total_pos = labels.iter().filter(|&&y| y == 1.0).count() as f64;
    if total_pos == 0.0 {
        return Err(NeuralError::UndefinedAp);
    }

    let n = logits.len();
    let m = bins;
    let delta = 2.0 / (m as f64 - 1.0);
    let center = |k: usize| -1.0 + k as f64 * delta;
    let t: Vec<f64> = if prescale {
        logits.iter().map(|&s| s.tanh()).collect()
    } else {
        logits.to_vec()
    };

    // Soft histogram: triangular assignment of each doc to its bins.
    let mut pos = vec![0.0; m];
    let mut all = vec![0.0; m];
    let mut weights = vec![0.0; n * m];
    for i in 0..n {
        for k in 0..m {
            let w = (1.0 - (t[i] - center(k)).abs() / delta).max(0.0);
            if w > 0.0 {
                weights[i * m + k] = w;
                all[k] += w;
                if labels[i] == 1.0 {
                    pos[k] += w;
                }
            }
        }
    }

    // Cumulative counts from the highest bin downward.
    let mut cum_pos = vec![0.0; m];
    let mut cum_all = vec![0.0; m];
    let mut p_acc = 0.0;
    let mut a_acc = 0.0;
    for k in (0..m).rev() {
        p_acc += pos[k];
        a_acc += all[k];
        cum_pos[k] = p_acc;
        cum_all[k] = a_acc;
    }

    let prec: Vec<f64> = (0..m)
        .map(|k| cum_pos[k] / cum_all[k].max(AP_EPS))
        .collect();
    let soft_ap: f64 = (0..m).map(|k| prec[k] * pos[k]).sum::<f64>() / total_pos;
    // Roundoff can push softAP a few ulps past 1; keep the loss in [0, 1].
    let loss = (1.0 - soft_ap).max(0.0);

    // d(softAP·T)/d pos[k] = prec[k] + Σ_{m≤k} pos[m]/amax[m]
    // d(softAP·T)/d all[k] = Σ_{m≤k} pos[m]·(−cum_pos[m]/amax[m]²)·[cum_all[m] > ε]
    // both via prefix sums over the bins at or below k.
    let mut s1 = vec![0.0; m];
    let mut s2 = vec![0.0; m];
    let mut acc1 = 0.0;
    let mut acc2 = 0.0;
    for k in 0..m {
        let amax = cum_all[k].max(AP_EPS);
        acc1 += pos[k] / amax;
        if cum_all[k] > AP_EPS {
            acc2 -= pos[k] * cum_pos[k] / (amax * amax);
        }
        s1[k] = acc1;
        s2[k] = acc2;
    }

    let mut grad = vec![0.0; n];
    for i in 0..n {
        let mut dt = 0.0;
        for k in 0..m {
            let w = weights[i * m + k];
            if w == 0.0 {
                continue;
            }
            let diff = t[i] - center(k);
            if diff.abs() >= delta {
                continue;
            }
            let dwdt = -diff.signum() / delta;
            let mut dsoft = s2[k];
            if labels[i] == 1.0 {
                dsoft += prec[k] + s1[k];
            }
            dt += dsoft / total_pos * dwdt;
        }
        let chain = if prescale { 1.0 - t[i] * t[i] } else { 1.0 };
        grad[i] = -dt * chain;
    }

    Ok((loss, grad))
}
