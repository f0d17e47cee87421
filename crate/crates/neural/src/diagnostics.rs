//! Self-contained gradient diagnostics over the full model and the
//! ranking losses, shared by the test suite and the command line tool.
//!
//! Finite differences carry a noise floor of roughly one ulp of the
//! evaluated loss per step, which the relative-error metric (guarded at
//! 1e-8) turns into garbage for coordinates whose true gradient is tiny,
//! such as the attention key bias whose gradient is exactly zero by
//! softmax shift invariance. The checks here condition their test points
//! so the loss itself is small: adapters get real up-projections, the
//! head is rescaled until every logit clears a margin, and labels agree
//! with logit signs. Gradients stay O(1e-3), large against the noise,
//! and a wrong derivative still shows up at full strength.

use rand::Rng;

use crate::encoder::{
    encode_pair, init_params, load_params, model_forward, EncodedPair, EncoderVocab, ModelConfig,
    Variant,
};
use crate::gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
use crate::losses::{ap_loss, bce_loss, lambda_loss, DEFAULT_AP_BINS};
use crate::optim::{GradMap, ParamSet};
use crate::rng::named_stream;
use crate::tensor::{Graph, NodeId, Tensor};

/// Give every adapter a nonzero up-projection so cross-document coupling
/// is active; at the zero-initialized identity point the adapter input
/// path would receive no gradient at all.
pub fn activate_adapters(params: &mut ParamSet, seed: u64) {
    let names: Vec<String> = params
        .names()
        .filter(|n| n.ends_with(".up.w"))
        .cloned()
        .collect();
    for name in names {
        let t = params.get_mut(&name);
        let mut rng = named_stream(seed, &format!("activate.{name}"));
        for v in t.data.iter_mut() {
            *v = rng.gen_range(-0.3..0.3);
        }
    }
}

fn words(ws: &[&str]) -> Vec<String> {
    ws.iter().map(|w| w.to_string()).collect()
}

fn diag_vocab() -> EncoderVocab {
    let mut v = EncoderVocab::new();
    v.extend([
        "sun", "hot", "moon", "cold", "rock", "dust", "ice", "gas", "big",
    ]);
    v
}

fn diag_config(variant: Variant) -> ModelConfig {
    ModelConfig {
        variant,
        layers: 2,
        hidden: 8,
        heads: 2,
        adapter_dim: 4,
        lstm_layers: 2,
        max_tokens: 10,
        docs_per_question: 4,
        vocab_size: 12,
    }
}

fn diag_pairs(vocab: &EncoderVocab, cfg: &ModelConfig, n: usize) -> Vec<EncodedPair> {
    let facts = [
        words(&["sun", "hot"]),
        words(&["moon", "cold", "rock"]),
        words(&["dust", "gas"]),
        words(&["ice", "big"]),
    ];
    (0..n)
        .map(|i| encode_pair(vocab, &words(&["sun", "big"]), &facts[i % 4], cfg.max_tokens))
        .collect()
}

fn forward_values(params: &ParamSet, cfg: &ModelConfig, pairs: &[EncodedPair]) -> Vec<f64> {
    let mut g = Graph::new();
    let nodes = load_params(&mut g, params);
    let ids = model_forward(&mut g, &nodes, cfg, pairs);
    ids.iter().map(|&n| g.value(n).data[0]).collect()
}

/// Finite-difference check of the whole pipeline (embedding, layers,
/// adapters, head, binary cross-entropy) on a 2-question micro-batch.
/// Passing means every parameter's analytic gradient agrees with central
/// differences to the reported relative error.
pub fn model_grad_check(variant: Variant, seed: u64) -> GradCheckReport {
    let cfg = diag_config(variant);
    let vocab = diag_vocab();
    let mut params = init_params(&cfg, seed);
    activate_adapters(&mut params, seed);

    let pair_sets = [diag_pairs(&vocab, &cfg, 3), diag_pairs(&vocab, &cfg, 2)];
    let raw_logits: Vec<Vec<f64>> = pair_sets
        .iter()
        .map(|pairs| forward_values(&params, &cfg, pairs))
        .collect();
    let min_abs = raw_logits
        .iter()
        .flatten()
        .map(|l| l.abs())
        .fold(f64::INFINITY, f64::min);
    assert!(min_abs > 0.0, "degenerate zero logit at init");
    let alpha = 6.5 / min_abs;
    for v in params.get_mut("head.w").data.iter_mut() {
        *v *= alpha;
    }
    let questions: Vec<(Vec<EncodedPair>, Vec<f64>)> = pair_sets
        .iter()
        .zip(&raw_logits)
        .map(|(pairs, logits)| {
            let labels = logits
                .iter()
                .map(|&l| if l > 0.0 { 1.0 } else { 0.0 })
                .collect();
            (pairs.clone(), labels)
        })
        .collect();

    let run = |p: &ParamSet| -> (f64, GradMap) {
        let mut total = 0.0;
        let mut grads = p.zero_grads();
        for (pairs, labels) in &questions {
            let mut g = Graph::new();
            let nodes = load_params(&mut g, p);
            let logit_nodes = model_forward(&mut g, &nodes, &cfg, pairs);
            let logits: Vec<f64> = logit_nodes.iter().map(|&n| g.value(n).data[0]).collect();
            let (loss, dlogits) = bce_loss(&logits, labels);
            total += loss;
            let seeds: Vec<(NodeId, Vec<f64>)> = logit_nodes
                .iter()
                .zip(dlogits)
                .map(|(&n, d)| (n, vec![d]))
                .collect();
            g.backward_seeded(&seeds);
            nodes.accumulate_grads(&g, &mut grads);
        }
        (total, grads)
    };

    let (_, analytic) = run(&params);
    grad_check(
        |p| run(p).0,
        &params,
        &analytic,
        &GradCheckOptions {
            max_coords_per_param: 6,
            ..Default::default()
        },
    )
}

#[derive(Debug, Clone)]
pub struct NamedCheck {
    pub name: &'static str,
    pub max_rel_err: f64,
}

/// Central-difference sweep of every graph op through the public API.
/// Each case differentiates loss = sum(probe ⊙ op(x)) with respect to x,
/// where the probe weights are fixed and non-uniform so a permuted or
/// mis-broadcast output gradient cannot cancel to the right total.
pub fn op_grad_checks() -> Vec<NamedCheck> {
    fn input(rows: usize, cols: usize, name: &str) -> Tensor {
        let mut rng = named_stream(17, name);
        Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.5..1.5)).collect())
    }

    fn probe(shape: &[usize], name: &str) -> Tensor {
        let n: usize = shape.iter().product();
        let mut rng = named_stream(19, &format!("{name}.probe"));
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(0.3..1.7)).collect())
    }

    fn sweep(name: &'static str, build: &dyn Fn(&mut Graph, NodeId) -> NodeId, x: Tensor) -> NamedCheck {
        let eval = |t: &Tensor| -> f64 {
            let mut g = Graph::new();
            let xn = g.leaf(t.clone());
            let out = build(&mut g, xn);
            let shape = g.value(out).shape.clone();
            let wn = g.leaf(probe(&shape, name));
            let prod = g.mul(out, wn);
            let loss = g.sum(prod);
            g.value(loss).data[0]
        };

        let mut g = Graph::new();
        let xn = g.leaf(x.clone());
        let out = build(&mut g, xn);
        let shape = g.value(out).shape.clone();
        let wn = g.leaf(probe(&shape, name));
        let prod = g.mul(out, wn);
        let loss = g.sum(prod);
        g.backward(loss);
        let analytic = g.grad(xn).to_vec();

        let h = 1e-5;
        let mut max_rel_err = 0.0f64;
        for i in 0..x.numel() {
            let mut plus = x.clone();
            plus.data[i] += h;
            let mut minus = x.clone();
            minus.data[i] -= h;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
            let a = analytic[i];
            assert!(
                a.is_finite() && numeric.is_finite(),
                "{name}: non-finite gradient at coordinate {i}"
            );
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
            max_rel_err = max_rel_err.max(rel);
        }
        NamedCheck { name, max_rel_err }
    }

    let mm_rhs = input(4, 5, "op.matmul.rhs");
    let mm_lhs = input(3, 4, "op.matmul.lhs");
    let other = input(3, 4, "op.binary.rhs");
    let wide = input(3, 4, "op.broadcast.lhs");
    let ln_gain = input(1, 4, "op.ln.gain");
    let ln_bias = input(1, 4, "op.ln.bias");
    let ln_x = input(3, 4, "op.ln.x");
    // Keep relu inputs away from the kink, where the two-sided difference
    // straddles the non-differentiable point.
    let mut relu_in = input(3, 4, "op.relu.in");
    for v in &mut relu_in.data {
        if v.abs() < 0.05 {
            *v += 0.1;
        }
    }

    vec![
        sweep("matmul.lhs", &{
            let rhs = mm_rhs.clone();
            move |g: &mut Graph, x: NodeId| {
                let r = g.leaf(rhs.clone());
                g.matmul(x, r)
            }
        }, mm_lhs.clone()),
        sweep("matmul.rhs", &{
            let lhs = mm_lhs;
            move |g: &mut Graph, x: NodeId| {
                let l = g.leaf(lhs.clone());
                g.matmul(l, x)
            }
        }, mm_rhs),
        sweep("add", &{
            let rhs = other.clone();
            move |g: &mut Graph, x: NodeId| {
                let r = g.leaf(rhs.clone());
                g.add(x, r)
            }
        }, input(3, 4, "op.add.lhs")),
        sweep("add.broadcast", &{
            let lhs = wide;
            move |g: &mut Graph, x: NodeId| {
                let l = g.leaf(lhs.clone());
                g.add(l, x)
            }
        }, input(1, 4, "op.broadcast.bias")),
        sweep("mul", &{
            let rhs = other;
            move |g: &mut Graph, x: NodeId| {
                let r = g.leaf(rhs.clone());
                g.mul(x, r)
            }
        }, input(3, 4, "op.mul.lhs")),
        sweep("scale", &|g, x| g.scale(x, -1.7), input(3, 4, "op.scale.in")),
        sweep("concat.rows", &|g, x| {
            let top = g.slice(x, 0, 0, 1);
            let rest = g.slice(x, 0, 1, 2);
            g.concat(&[rest, top], 0)
        }, input(3, 4, "op.cat0.in")),
        sweep("concat.cols", &|g, x| {
            let left = g.slice(x, 1, 0, 2);
            let right = g.slice(x, 1, 2, 2);
            g.concat(&[right, left], 1)
        }, input(3, 4, "op.cat1.in")),
        sweep("slice.rows", &|g, x| g.slice(x, 0, 1, 2), input(4, 3, "op.slice0.in")),
        sweep("slice.cols", &|g, x| g.slice(x, 1, 1, 2), input(3, 4, "op.slice1.in")),
        sweep("transpose", &|g, x| g.transpose(x), input(3, 4, "op.tr.in")),
        sweep("embedding", &|g, x| g.embedding_lookup(x, &[2, 0, 2, 1]), input(3, 4, "op.emb.table")),
        sweep("softmax", &|g, x| g.softmax_rows(x), input(3, 4, "op.sm.in")),
        sweep("layer_norm.x", &{
            let (gain, bias) = (ln_gain.clone(), ln_bias.clone());
            move |g: &mut Graph, x: NodeId| {
                let gn = g.leaf(gain.clone());
                let bn = g.leaf(bias.clone());
                g.layer_norm(x, gn, bn, 1e-12)
            }
        }, ln_x.clone()),
        sweep("layer_norm.gain", &{
            let (x, bias) = (ln_x.clone(), ln_bias.clone());
            move |g: &mut Graph, gain: NodeId| {
                let xn = g.leaf(x.clone());
                let bn = g.leaf(bias.clone());
                g.layer_norm(xn, gain, bn, 1e-12)
            }
        }, ln_gain.clone()),
        sweep("layer_norm.bias", &{
            let x = ln_x;
            move |g: &mut Graph, bias: NodeId| {
                let xn = g.leaf(x.clone());
                let gn = g.leaf(ln_gain.clone());
                g.layer_norm(xn, gn, bias, 1e-12)
            }
        }, ln_bias),
        sweep("gelu", &|g, x| g.gelu(x), input(3, 4, "op.gelu.in")),
        sweep("relu", &|g, x| g.relu(x), relu_in),
        sweep("sigmoid", &|g, x| g.sigmoid(x), input(3, 4, "op.sig.in")),
        sweep("tanh", &|g, x| g.tanh(x), input(3, 4, "op.tanh.in")),
        sweep("mean", &|g, x| g.mean(x), input(3, 4, "op.mean.in")),
        sweep("sum", &|g, x| g.sum(x), input(3, 4, "op.sum.in")),
    ]
}

/// Central-difference checks of the three loss gradients at a fixed
/// well-conditioned point: mixed labels for the pairwise loss, and no
/// coordinate whose true gradient sits so close to zero that the
/// one-ulp finite-difference noise would swamp the guarded metric.
pub fn loss_grad_checks() -> Vec<NamedCheck> {
    let logits = [0.8, -0.5, 1.4, 0.1, -1.2, 0.6, -0.2];
    let labels = [1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0];
    let h = 1e-5;

    let fd = |f: &dyn Fn(&[f64]) -> f64, grads: &[f64]| -> f64 {
        let mut worst = 0.0f64;
        for i in 0..logits.len() {
            let mut plus = logits.to_vec();
            plus[i] += h;
            let mut minus = logits.to_vec();
            minus[i] -= h;
            let numeric = (f(&plus) - f(&minus)) / (2.0 * h);
            let a = grads[i];
            assert!(a.is_finite() && numeric.is_finite(), "non-finite gradient");
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
            worst = worst.max(rel);
        }
        worst
    };

    let (_, bce_grad) = bce_loss(&logits, &labels);
    let (_, lambda_grad) = lambda_loss(&logits, &labels);
    let (_, ap_grad) = ap_loss(&logits, &labels, DEFAULT_AP_BINS).unwrap();

    vec![
        NamedCheck {
            name: "bce",
            max_rel_err: fd(&|s| bce_loss(s, &labels).0, &bce_grad),
        },
        NamedCheck {
            name: "lambda",
            max_rel_err: fd(&|s| lambda_loss(s, &labels).0, &lambda_grad),
        },
        NamedCheck {
            name: "ap",
            max_rel_err: fd(&|s| ap_loss(s, &labels, DEFAULT_AP_BINS).unwrap().0, &ap_grad),
        },
    ]
}
