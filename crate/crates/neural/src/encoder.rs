//! Desk-scale transformer encoder over (question, fact) pairs with three
//! cross-document wirings.
//!
//! ISOLATED scores each document on its own. LSTM_AFTER runs one LSTM
//! adapter over the D final [CLS] vectors in retrieval-rank order before
//! the scoring head. LIT interleaves an untied adapter after every
//! transformer layer, so rank-order information flows through the whole
//! stack. Adapters start as exact identities (zero up-projection), which
//! makes LIT's initial forward bit-equal to ISOLATED's.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use hoprank_core::retrieval::RankedList;

use crate::error::{NeuralError, Result};
use crate::optim::{GradMap, ParamSet};
use crate::rng::named_stream;
use crate::tensor::{sigmoid, Graph, NodeId, Tensor};

const LN_EPS: f64 = 1e-12;

pub const CLS_ID: usize = 0;
pub const SEP_ID: usize = 1;
pub const UNK_ID: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Isolated,
    LstmAfter,
    Lit,
}

impl FromStr for Variant {
    type Err = NeuralError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "isolated" => Ok(Variant::Isolated),
            "lstm_after" => Ok(Variant::LstmAfter),
            "lit" => Ok(Variant::Lit),
            other => Err(NeuralError::InvalidConfig {
                what: format!("unknown variant {other:?} (expected isolated, lstm_after, lit)"),
            }),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Variant::Isolated => "isolated",
            Variant::LstmAfter => "lstm_after",
            Variant::Lit => "lit",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    pub layers: usize,
    pub hidden: usize,
    pub heads: usize,
    pub adapter_dim: usize,
    pub lstm_layers: usize,
    pub max_tokens: usize,
    pub docs_per_question: usize,
    pub vocab_size: usize,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |what: String| Err(NeuralError::InvalidConfig { what });
        if self.layers == 0 {
            return fail("layers must be >= 1".into());
        }
        if self.heads == 0 || self.hidden % self.heads != 0 {
            return fail(format!(
                "hidden ({}) must divide evenly into heads ({})",
                self.hidden, self.heads
            ));
        }
        if self.adapter_dim >= self.hidden {
            return fail(format!(
                "adapter_dim ({}) must be smaller than hidden ({})",
                self.adapter_dim, self.hidden
            ));
        }
        if self.lstm_layers != 2 {
            return fail(format!("lstm_layers is fixed at 2, got {}", self.lstm_layers));
        }
        if self.max_tokens < 3 {
            return fail(format!(
                "max_tokens must fit [CLS] t [SEP] [SEP], got {}",
                self.max_tokens
            ));
        }
        if self.docs_per_question == 0 {
            return fail("docs_per_question must be >= 1".into());
        }
        if self.vocab_size <= UNK_ID {
            return fail(format!(
                "vocab_size must cover the special tokens, got {}",
                self.vocab_size
            ));
        }
        Ok(())
    }

    fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }

    fn ffn_dim(&self) -> usize {
        2 * self.hidden
    }

    /// Adapter name prefixes active for this variant, in forward order:
    /// one per layer for LIT, a single final one for LSTM_AFTER.
    fn adapter_prefixes(&self) -> Vec<String> {
        match self.variant {
            Variant::Isolated => Vec::new(),
            Variant::LstmAfter => vec!["adapter".to_string()],
            Variant::Lit => (0..self.layers).map(|l| format!("adapter{l}")).collect(),
        }
    }
}

/// Wordpiece-free token vocabulary: ids 0..3 are [CLS], [SEP], [UNK],
/// the rest are corpus tokens in first-seen order.
#[derive(Debug, Clone)]
pub struct EncoderVocab {
    token_to_id: HashMap<String, usize>,
    tokens: Vec<String>,
}

impl EncoderVocab {
    pub fn new() -> Self {
        let mut vocab = EncoderVocab {
            token_to_id: HashMap::new(),
            tokens: Vec::new(),
        };
        for special in ["[CLS]", "[SEP]", "[UNK]"] {
            vocab.push(special.to_string());
        }
        vocab
    }

    fn push(&mut self, token: String) {
        self.token_to_id.insert(token.clone(), self.tokens.len());
        self.tokens.push(token);
    }

    /// Extend from token streams; unseen tokens get the next id.
    pub fn extend<'a>(&mut self, tokens: impl IntoIterator<Item = &'a str>) {
        for token in tokens {
            if !self.token_to_id.contains_key(token) {
                self.push(token.to_string());
            }
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> usize {
        self.token_to_id.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for token in &self.tokens {
            out.push_str(token);
            out.push('\n');
        }
        std::fs::write(path, out).map_err(|e| NeuralError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| NeuralError::io(path, e))?;
        let mut vocab = EncoderVocab {
            token_to_id: HashMap::new(),
            tokens: Vec::new(),
        };
        for line in BufReader::new(file).lines() {
            let line = line.map_err(|e| NeuralError::io(path, e))?;
            vocab.push(line);
        }
        if vocab.len() <= UNK_ID || vocab.token(CLS_ID) != "[CLS]" {
            return Err(NeuralError::InvalidInput {
                what: format!("{} is not an encoder vocabulary", path.display()),
            });
        }
        Ok(vocab)
    }
}

impl Default for EncoderVocab {
    fn default() -> Self {
        EncoderVocab::new()
    }
}

/// Token and segment ids for one (question, fact) pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedPair {
    pub ids: Vec<usize>,
    pub segments: Vec<usize>,
}

/// Lay out [CLS] q [SEP] f [SEP] within `max_tokens`, dropping fact
/// tokens from the end first and question tokens only if that is not
/// enough.
pub fn encode_pair(
    vocab: &EncoderVocab,
    question: &[String],
    fact: &[String],
    max_tokens: usize,
) -> EncodedPair {
    assert!(max_tokens >= 3, "max_tokens must be at least 3");
    let keep_q = question.len().min(max_tokens - 3);
    let keep_f = fact.len().min(max_tokens - 3 - keep_q);

    let mut ids = Vec::with_capacity(3 + keep_q + keep_f);
    let mut segments = Vec::with_capacity(ids.capacity());
    ids.push(CLS_ID);
    segments.push(0);
    for token in &question[..keep_q] {
        ids.push(vocab.id(token));
        segments.push(0);
    }
    ids.push(SEP_ID);
    segments.push(0);
    for token in &fact[..keep_f] {
        ids.push(vocab.id(token));
        segments.push(1);
    }
    ids.push(SEP_ID);
    segments.push(1);
    EncodedPair { ids, segments }
}

/// Map ids back to token strings (unknowns come back as [UNK]).
pub fn decode_ids(vocab: &EncoderVocab, ids: &[usize]) -> Vec<String> {
    ids.iter().map(|&id| vocab.token(id).to_string()).collect()
}

/// Logits for one question's documents, aligned with the retrieval
/// order that produced them.
#[derive(Debug, Clone)]
pub struct ScoreBatch {
    pub qid: String,
    pub uids: Vec<String>,
    pub logits: Vec<f64>,
}

fn uniform_tensor(rows: usize, cols: usize, fan_in: usize, seed: u64, name: &str) -> Tensor {
    let limit = 1.0 / (fan_in as f64).sqrt();
    let mut rng = named_stream(seed, name);
    Tensor::matrix(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.gen_range(-limit..limit)).collect(),
    )
}

fn normal_tensor(rows: usize, cols: usize, std: f64, seed: u64, name: &str) -> Tensor {
    let dist = Normal::new(0.0, std).unwrap();
    let mut rng = named_stream(seed, name);
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| dist.sample(&mut rng)).collect())
}

fn ones(cols: usize) -> Tensor {
    Tensor::matrix(1, cols, vec![1.0; cols])
}

/// Build the full parameter set for a config. Every tensor draws from
/// its own named stream, so two variants sharing a parameter name get
/// bit-identical values for it.
pub fn init_params(cfg: &ModelConfig, seed: u64) -> ParamSet {
    cfg.validate().expect("invalid model config");
    let h = cfg.hidden;
    let mut p = ParamSet::new();

    p.insert(
        "embed.token",
        normal_tensor(cfg.vocab_size, h, 0.02, seed, "embed.token"),
    );
    p.insert(
        "embed.position",
        normal_tensor(cfg.max_tokens, h, 0.02, seed, "embed.position"),
    );
    p.insert("embed.segment", normal_tensor(2, h, 0.02, seed, "embed.segment"));
    p.insert("embed.ln.gain", ones(h));
    p.insert("embed.ln.bias", Tensor::zeros(1, h));

    for l in 0..cfg.layers {
        for w in ["wq", "wk", "wv", "wo"] {
            let name = format!("layer{l}.attn.{w}");
            p.insert(name.clone(), uniform_tensor(h, h, h, seed, &name));
        }
        for b in ["bq", "bk", "bv", "bo"] {
            p.insert(format!("layer{l}.attn.{b}"), Tensor::zeros(1, h));
        }
        p.insert(format!("layer{l}.ln1.gain"), ones(h));
        p.insert(format!("layer{l}.ln1.bias"), Tensor::zeros(1, h));
        let f = cfg.ffn_dim();
        let name = format!("layer{l}.ffn.w1");
        p.insert(name.clone(), uniform_tensor(h, f, h, seed, &name));
        p.insert(format!("layer{l}.ffn.b1"), Tensor::zeros(1, f));
        let name = format!("layer{l}.ffn.w2");
        p.insert(name.clone(), uniform_tensor(f, h, f, seed, &name));
        p.insert(format!("layer{l}.ffn.b2"), Tensor::zeros(1, h));
        p.insert(format!("layer{l}.ln2.gain"), ones(h));
        p.insert(format!("layer{l}.ln2.bias"), Tensor::zeros(1, h));
    }

    for prefix in cfg.adapter_prefixes() {
        let d = cfg.adapter_dim;
        let name = format!("{prefix}.down.w");
        p.insert(name.clone(), uniform_tensor(h, d, h, seed, &name));
        p.insert(format!("{prefix}.down.b"), Tensor::zeros(1, d));
        for k in 0..cfg.lstm_layers {
            let name = format!("{prefix}.lstm{k}.wx");
            p.insert(name.clone(), uniform_tensor(d, 4 * d, d, seed, &name));
            let name = format!("{prefix}.lstm{k}.wh");
            p.insert(name.clone(), uniform_tensor(d, 4 * d, d, seed, &name));
            p.insert(format!("{prefix}.lstm{k}.b"), Tensor::zeros(1, 4 * d));
        }
        // Zero up-projection: the adapter starts as the identity.
        p.insert(format!("{prefix}.up.w"), Tensor::zeros(d, h));
        p.insert(format!("{prefix}.up.b"), Tensor::zeros(1, h));
    }

    let name = "head.w";
    p.insert(name, uniform_tensor(h, 1, h, seed, name));
    p.insert("head.b", Tensor::zeros(1, 1));
    p
}

/// Graph handles for every parameter of one forward pass.
pub struct ParamNodes {
    map: BTreeMap<String, NodeId>,
}

impl ParamNodes {
    fn id(&self, name: &str) -> NodeId {
        *self
            .map
            .get(name)
            .unwrap_or_else(|| panic!("parameter {name:?} not loaded"))
    }

    /// Copy accumulated leaf gradients back out, keyed like the ParamSet.
    pub fn collect_grads(&self, g: &Graph) -> GradMap {
        self.map
            .iter()
            .map(|(name, &id)| (name.clone(), g.grad(id).to_vec()))
            .collect()
    }

    /// Sum leaf gradients into an existing accumulator.
    pub fn accumulate_grads(&self, g: &Graph, acc: &mut GradMap) {
        for (name, &id) in &self.map {
            let slot = acc
                .get_mut(name)
                .unwrap_or_else(|| panic!("gradient accumulator missing {name:?}"));
            for (s, v) in slot.iter_mut().zip(g.grad(id)) {
                *s += v;
            }
        }
    }
}

/// Insert every parameter tensor as a graph leaf.
pub fn load_params(g: &mut Graph, params: &ParamSet) -> ParamNodes {
    let map = params
        .iter()
        .map(|(name, tensor)| (name.clone(), g.leaf(tensor.clone())))
        .collect();
    ParamNodes { map }
}

fn linear(g: &mut Graph, x: NodeId, nodes: &ParamNodes, w: &str, b: &str) -> NodeId {
    let wn = nodes.id(w);
    let bn = nodes.id(b);
    let xw = g.matmul(x, wn);
    g.add(xw, bn)
}

fn embed_pair(g: &mut Graph, nodes: &ParamNodes, cfg: &ModelConfig, pair: &EncodedPair) -> NodeId {
    assert!(
        pair.ids.len() <= cfg.max_tokens,
        "encoded pair longer ({}) than max_tokens ({})",
        pair.ids.len(),
        cfg.max_tokens
    );
    let positions: Vec<usize> = (0..pair.ids.len()).collect();
    let tok = g.embedding_lookup(nodes.id("embed.token"), &pair.ids);
    let pos = g.embedding_lookup(nodes.id("embed.position"), &positions);
    let seg = g.embedding_lookup(nodes.id("embed.segment"), &pair.segments);
    let sum1 = g.add(tok, pos);
    let sum2 = g.add(sum1, seg);
    let gain = nodes.id("embed.ln.gain");
    let bias = nodes.id("embed.ln.bias");
    g.layer_norm(sum2, gain, bias, LN_EPS)
}

/// One post-norm encoder layer: multi-head attention with residual and
/// layer norm, then a gelu feed-forward with residual and layer norm.
pub fn transformer_layer(
    g: &mut Graph,
    nodes: &ParamNodes,
    cfg: &ModelConfig,
    layer: usize,
    hidden: NodeId,
) -> NodeId {
    let dk = cfg.head_dim();
    let q = linear(g, hidden, nodes, &format!("layer{layer}.attn.wq"), &format!("layer{layer}.attn.bq"));
    let k = linear(g, hidden, nodes, &format!("layer{layer}.attn.wk"), &format!("layer{layer}.attn.bk"));
    let v = linear(g, hidden, nodes, &format!("layer{layer}.attn.wv"), &format!("layer{layer}.attn.bv"));

    let mut heads = Vec::with_capacity(cfg.heads);
    for a in 0..cfg.heads {
        let qa = g.slice(q, 1, a * dk, dk);
        let ka = g.slice(k, 1, a * dk, dk);
        let va = g.slice(v, 1, a * dk, dk);
        let kt = g.transpose(ka);
        let raw = g.matmul(qa, kt);
        let scaled = g.scale(raw, 1.0 / (dk as f64).sqrt());
        let attn = g.softmax_rows(scaled);
        heads.push(g.matmul(attn, va));
    }
    let ctx = g.concat(&heads, 1);
    let proj = linear(g, ctx, nodes, &format!("layer{layer}.attn.wo"), &format!("layer{layer}.attn.bo"));
    let res1 = g.add(hidden, proj);
    let gain1 = nodes.id(&format!("layer{layer}.ln1.gain"));
    let bias1 = nodes.id(&format!("layer{layer}.ln1.bias"));
    let x1 = g.layer_norm(res1, gain1, bias1, LN_EPS);

    let f1 = linear(g, x1, nodes, &format!("layer{layer}.ffn.w1"), &format!("layer{layer}.ffn.b1"));
    let act = g.gelu(f1);
    let f2 = linear(g, act, nodes, &format!("layer{layer}.ffn.w2"), &format!("layer{layer}.ffn.b2"));
    let res2 = g.add(x1, f2);
    let gain2 = nodes.id(&format!("layer{layer}.ln2.gain"));
    let bias2 = nodes.id(&format!("layer{layer}.ln2.bias"));
    g.layer_norm(res2, gain2, bias2, LN_EPS)
}

/// Down-project the D rank-ordered [CLS] rows, run the 2-layer
/// unidirectional LSTM over them, up-project, and add back residually.
pub fn lstm_adapter(
    g: &mut Graph,
    nodes: &ParamNodes,
    cfg: &ModelConfig,
    prefix: &str,
    cls_rows: NodeId,
) -> NodeId {
    let d = cfg.adapter_dim;
    let docs = g.value(cls_rows).rows();
    let mut sequence = linear(g, cls_rows, nodes, &format!("{prefix}.down.w"), &format!("{prefix}.down.b"));

    for layer in 0..cfg.lstm_layers {
        let wx = nodes.id(&format!("{prefix}.lstm{layer}.wx"));
        let wh = nodes.id(&format!("{prefix}.lstm{layer}.wh"));
        let b = nodes.id(&format!("{prefix}.lstm{layer}.b"));
        let mut h_prev = g.leaf(Tensor::zeros(1, d));
        let mut c_prev = g.leaf(Tensor::zeros(1, d));
        let mut outputs = Vec::with_capacity(docs);
        for t in 0..docs {
            let xt = g.slice(sequence, 0, t, 1);
            let zx = g.matmul(xt, wx);
            let zh = g.matmul(h_prev, wh);
            let zsum = g.add(zx, zh);
            let z = g.add(zsum, b);
            let zi = g.slice(z, 1, 0, d);
            let zf = g.slice(z, 1, d, d);
            let zg = g.slice(z, 1, 2 * d, d);
            let zo = g.slice(z, 1, 3 * d, d);
            let gate_i = g.sigmoid(zi);
            let gate_f = g.sigmoid(zf);
            let gate_g = g.tanh(zg);
            let gate_o = g.sigmoid(zo);
            let keep = g.mul(gate_f, c_prev);
            let write = g.mul(gate_i, gate_g);
            let c = g.add(keep, write);
            let ct = g.tanh(c);
            let h = g.mul(gate_o, ct);
            outputs.push(h);
            h_prev = h;
            c_prev = c;
        }
        sequence = if docs == 1 {
            outputs[0]
        } else {
            g.concat(&outputs, 0)
        };
    }

    let up = linear(g, sequence, nodes, &format!("{prefix}.up.w"), &format!("{prefix}.up.b"));
    g.add(cls_rows, up)
}

// Swap each document's [CLS] row for the adapter output row.
fn replace_cls_rows(g: &mut Graph, hiddens: &mut [NodeId], adapted: NodeId) {
    for (d, h) in hiddens.iter_mut().enumerate() {
        let row = g.slice(adapted, 0, d, 1);
        let tokens = g.value(*h).rows();
        *h = if tokens > 1 {
            let rest = g.slice(*h, 0, 1, tokens - 1);
            g.concat(&[row, rest], 0)
        } else {
            row
        };
    }
}

fn gather_cls(g: &mut Graph, hiddens: &[NodeId]) -> NodeId {
    let rows: Vec<NodeId> = hiddens.iter().map(|&h| g.slice(h, 0, 0, 1)).collect();
    if rows.len() == 1 {
        rows[0]
    } else {
        g.concat(&rows, 0)
    }
}

/// Run one question's documents through the configured variant and
/// return a scalar logit node per document, in input order.
pub fn model_forward(
    g: &mut Graph,
    nodes: &ParamNodes,
    cfg: &ModelConfig,
    pairs: &[EncodedPair],
) -> Vec<NodeId> {
    if pairs.is_empty() {
        return Vec::new();
    }
    assert!(
        pairs.len() <= cfg.docs_per_question,
        "{} documents exceed docs_per_question ({})",
        pairs.len(),
        cfg.docs_per_question
    );

    let mut hiddens: Vec<NodeId> = pairs
        .iter()
        .map(|pair| embed_pair(g, nodes, cfg, pair))
        .collect();

    for layer in 0..cfg.layers {
        for h in hiddens.iter_mut() {
            *h = transformer_layer(g, nodes, cfg, layer, *h);
        }
        let prefix = match cfg.variant {
            Variant::Lit => Some(format!("adapter{layer}")),
            Variant::LstmAfter if layer == cfg.layers - 1 => Some("adapter".to_string()),
            _ => None,
        };
        if let Some(prefix) = prefix {
            let cls = gather_cls(g, &hiddens);
            let adapted = lstm_adapter(g, nodes, cfg, &prefix, cls);
            replace_cls_rows(g, &mut hiddens, adapted);
        }
    }

    hiddens
        .iter()
        .map(|&h| {
            let cls = g.slice(h, 0, 0, 1);
            linear(g, cls, nodes, "head.w", "head.b")
        })
        .collect()
}

/// Inference convenience: one fresh graph, values only.
pub fn score_batch(
    params: &ParamSet,
    cfg: &ModelConfig,
    qid: &str,
    uids: Vec<String>,
    pairs: &[EncodedPair],
) -> ScoreBatch {
    assert_eq!(uids.len(), pairs.len(), "uids and pairs must align");
    let mut g = Graph::new();
    let nodes = load_params(&mut g, params);
    let logit_nodes = model_forward(&mut g, &nodes, cfg, pairs);
    ScoreBatch {
        qid: qid.to_string(),
        uids,
        logits: logit_nodes.iter().map(|&n| g.value(n).data[0]).collect(),
    }
}

/// Reorder the top K of a retrieval ranking by model logits. The block
/// is scored into (K−i−1, K−i) bands via the logit's sigmoid; the tail
/// keeps its order on strictly lower scores. K = 0 returns the input
/// unchanged.
pub fn rerank(ibm25: &RankedList, scores: &ScoreBatch, k: usize) -> Result<RankedList> {
    if k == 0 {
        return Ok(ibm25.clone());
    }
    let entries = ibm25.entries();
    if k > entries.len() {
        return Err(NeuralError::InvalidInput {
            what: format!("K ({k}) exceeds ranking length ({})", entries.len()),
        });
    }
    if scores.uids.len() != k || scores.logits.len() != k {
        return Err(NeuralError::InvalidInput {
            what: format!(
                "expected {k} scored documents, got {} uids / {} logits",
                scores.uids.len(),
                scores.logits.len()
            ),
        });
    }
    for (i, (uid, _)) in entries[..k].iter().enumerate() {
        if scores.uids[i] != *uid {
            return Err(NeuralError::InvalidInput {
                what: format!(
                    "scored uid {:?} at position {i} does not match ranking uid {uid:?}",
                    scores.uids[i]
                ),
            });
        }
    }

    // Stable sort by descending logit keeps prior rank as the tie-break.
    let mut block: Vec<usize> = (0..k).collect();
    block.sort_by(|&a, &b| scores.logits[b].partial_cmp(&scores.logits[a]).unwrap());

    let mut out = Vec::with_capacity(entries.len());
    for (i, &idx) in block.iter().enumerate() {
        let score = (k - i - 1) as f64 + sigmoid(scores.logits[idx]);
        out.push((entries[idx].0.clone(), score));
    }
    for (j, (uid, _)) in entries[k..].iter().enumerate() {
        out.push((uid.clone(), -((j + 1) as f64)));
    }
    Ok(RankedList::from_entries(ibm25.qid.clone(), out)
        .expect("rerank scores are non-increasing by construction"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{grad_check, GradCheckOptions};
    use crate::losses::bce_loss;

    fn tiny_config(variant: Variant) -> ModelConfig {
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

    fn words(ws: &[&str]) -> Vec<String> {
        ws.iter().map(|w| w.to_string()).collect()
    }

    fn test_vocab() -> EncoderVocab {
        let mut v = EncoderVocab::new();
        v.extend(["sun", "hot", "moon", "cold", "rock", "dust", "ice", "gas", "big"]);
        v
    }

    fn sample_pairs(vocab: &EncoderVocab, cfg: &ModelConfig, n: usize) -> Vec<EncodedPair> {
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

    #[test]
    fn encode_pair_layout_and_segments() {
        let vocab = test_vocab();
        let pair = encode_pair(&vocab, &words(&["sun"]), &words(&["moon", "cold"]), 16);
        assert_eq!(pair.ids[0], CLS_ID);
        assert_eq!(
            decode_ids(&vocab, &pair.ids),
            ["[CLS]", "sun", "[SEP]", "moon", "cold", "[SEP]"]
        );
        assert_eq!(pair.segments, [0, 0, 0, 1, 1, 1]);
    }

    #[test]
    fn encode_pair_empty_fact() {
        let vocab = test_vocab();
        let pair = encode_pair(&vocab, &words(&["sun", "hot"]), &[], 16);
        assert_eq!(
            decode_ids(&vocab, &pair.ids),
            ["[CLS]", "sun", "hot", "[SEP]", "[SEP]"]
        );
    }

    #[test]
    fn encode_pair_truncates_fact_side_first() {
        let vocab = test_vocab();
        let q = words(&["sun", "hot", "moon"]);
        let f = words(&["rock", "dust", "ice", "gas"]);
        let pair = encode_pair(&vocab, &q, &f, 8);
        // 3 + 3 question tokens leave room for 2 fact tokens.
        assert_eq!(pair.ids.len(), 8);
        assert_eq!(
            decode_ids(&vocab, &pair.ids),
            ["[CLS]", "sun", "hot", "moon", "[SEP]", "rock", "dust", "[SEP]"]
        );

        // Question longer than the budget: fact vanishes, question clips.
        let pair = encode_pair(&vocab, &words(&["sun", "hot", "moon", "cold", "rock", "dust"]), &f, 6);
        assert_eq!(pair.ids.len(), 6);
        assert_eq!(
            decode_ids(&vocab, &pair.ids),
            ["[CLS]", "sun", "hot", "moon", "[SEP]", "[SEP]"]
        );
    }

    #[test]
    fn unknown_tokens_map_to_unk() {
        let vocab = test_vocab();
        let pair = encode_pair(&vocab, &words(&["quasar"]), &[], 8);
        assert_eq!(pair.ids[1], UNK_ID);
    }

    #[test]
    fn vocab_round_trips_through_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        let vocab = test_vocab();
        vocab.save(&path).unwrap();
        let loaded = EncoderVocab::load(&path).unwrap();
        assert_eq!(loaded.len(), vocab.len());
        assert_eq!(loaded.id("rock"), vocab.id("rock"));
    }

    #[test]
    fn config_validation_catches_bad_shapes() {
        let mut cfg = tiny_config(Variant::Isolated);
        cfg.heads = 3;
        assert!(cfg.validate().is_err());
        let mut cfg = tiny_config(Variant::Isolated);
        cfg.adapter_dim = 8;
        assert!(cfg.validate().is_err());
        let mut cfg = tiny_config(Variant::Isolated);
        cfg.lstm_layers = 1;
        assert!(cfg.validate().is_err());
        assert!(tiny_config(Variant::Lit).validate().is_ok());
    }

    #[test]
    fn init_is_deterministic_and_biases_zero() {
        let cfg = tiny_config(Variant::Lit);
        let a = init_params(&cfg, 11);
        let b = init_params(&cfg, 11);
        assert_eq!(a, b);
        let c = init_params(&cfg, 12);
        assert_ne!(a, c);

        for (name, tensor) in a.iter() {
            if name.ends_with(".b") || name.contains(".b") && name.ends_with("bias") {
                assert!(tensor.data.iter().all(|&v| v == 0.0), "{name} not zero");
            }
        }
        assert!(a.get("adapter0.up.w").data.iter().all(|&v| v == 0.0));
        assert!(a.get("layer0.attn.bq").data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn weight_variance_tracks_fan_in() {
        let cfg = ModelConfig {
            variant: Variant::Isolated,
            layers: 1,
            hidden: 100,
            heads: 4,
            adapter_dim: 16,
            lstm_layers: 2,
            max_tokens: 8,
            docs_per_question: 2,
            vocab_size: 10,
        };
        let params = init_params(&cfg, 3);
        let w = params.get("layer0.attn.wq");
        assert_eq!(w.numel(), 10_000);
        let mean: f64 = w.data.iter().sum::<f64>() / w.numel() as f64;
        let var: f64 = w.data.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
            / w.numel() as f64;
        let target = 1.0 / (3.0 * 100.0);
        assert!(
            (var - target).abs() < 0.2 * target,
            "variance {var} vs target {target}"
        );
    }

    #[test]
    fn logits_match_document_count_and_empty_is_empty() {
        let cfg = tiny_config(Variant::Lit);
        let vocab = test_vocab();
        let params = init_params(&cfg, 5);
        for n in [0usize, 1, 3, 4] {
            let pairs = sample_pairs(&vocab, &cfg, n);
            let uids = (0..n).map(|i| format!("u{i}")).collect();
            let batch = score_batch(&params, &cfg, "q", uids, &pairs);
            assert_eq!(batch.logits.len(), n);
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let cfg = tiny_config(Variant::Lit);
        let vocab = test_vocab();
        let params = init_params(&cfg, 5);
        let pairs = sample_pairs(&vocab, &cfg, 3);
        let uids: Vec<String> = (0..3).map(|i| format!("u{i}")).collect();
        let a = score_batch(&params, &cfg, "q", uids.clone(), &pairs);
        let b = score_batch(&params, &cfg, "q", uids, &pairs);
        assert_eq!(a.logits, b.logits);
    }

    #[test]
    fn isolated_is_permutation_equivariant() {
        let cfg = tiny_config(Variant::Isolated);
        let vocab = test_vocab();
        let params = init_params(&cfg, 9);
        let pairs = sample_pairs(&vocab, &cfg, 4);
        let uids: Vec<String> = (0..4).map(|i| format!("u{i}")).collect();
        let base = score_batch(&params, &cfg, "q", uids.clone(), &pairs);

        let perm = [2usize, 0, 3, 1];
        let ppairs: Vec<EncodedPair> = perm.iter().map(|&i| pairs[i].clone()).collect();
        let puids: Vec<String> = perm.iter().map(|&i| uids[i].clone()).collect();
        let permuted = score_batch(&params, &cfg, "q", puids, &ppairs);
        for (pos, &src) in perm.iter().enumerate() {
            assert_eq!(
                permuted.logits[pos].to_bits(),
                base.logits[src].to_bits(),
                "logit for doc {src} changed under permutation"
            );
        }
    }

    #[test]
    fn adapters_start_as_identity() {
        let vocab = test_vocab();
        let pairs = sample_pairs(&vocab, &tiny_config(Variant::Isolated), 4);
        let uids: Vec<String> = (0..4).map(|i| format!("u{i}")).collect();

        let seed = 21;
        let iso = score_batch(
            &init_params(&tiny_config(Variant::Isolated), seed),
            &tiny_config(Variant::Isolated),
            "q",
            uids.clone(),
            &pairs,
        );
        let lit = score_batch(
            &init_params(&tiny_config(Variant::Lit), seed),
            &tiny_config(Variant::Lit),
            "q",
            uids.clone(),
            &pairs,
        );
        let after = score_batch(
            &init_params(&tiny_config(Variant::LstmAfter), seed),
            &tiny_config(Variant::LstmAfter),
            "q",
            uids,
            &pairs,
        );
        for i in 0..4 {
            assert_eq!(lit.logits[i].to_bits(), iso.logits[i].to_bits());
            assert_eq!(after.logits[i].to_bits(), iso.logits[i].to_bits());
        }
    }

    use crate::diagnostics::activate_adapters;

    #[test]
    fn lit_order_sensitivity_witness() {
        let cfg = tiny_config(Variant::Lit);
        let vocab = test_vocab();
        let mut params = init_params(&cfg, 33);
        activate_adapters(&mut params, 33);

        let pairs = sample_pairs(&vocab, &cfg, 2);
        let uids = vec!["a".to_string(), "b".to_string()];
        let fwd = score_batch(&params, &cfg, "q", uids.clone(), &pairs);

        let swapped_pairs = vec![pairs[1].clone(), pairs[0].clone()];
        let swapped_uids = vec![uids[1].clone(), uids[0].clone()];
        let rev = score_batch(&params, &cfg, "q", swapped_uids, &swapped_pairs);

        // Same documents, opposite order: at least one logit must move.
        let changed = (fwd.logits[0] - rev.logits[1]).abs() > 1e-9
            || (fwd.logits[1] - rev.logits[0]).abs() > 1e-9;
        assert!(changed, "LIT produced order-independent logits");
    }

    /// Random probe weights, scaled small. The scale keeps the probe
    /// loss near zero so the finite-difference noise floor (about one
    /// ulp of the loss per step) stays below what the 1e-8-guarded
    /// relative metric can see even on zero-gradient coordinates such
    /// as the attention key bias.
    fn probe_loss(g: &mut Graph, out: NodeId, seed: u64) -> NodeId {
        let shape = g.value(out).shape.clone();
        let mut rng = named_stream(seed, "probe");
        let data = (0..shape[0] * shape[1])
            .map(|_| {
                let mag = rng.gen_range(0.5..1.5) * 2e-3;
                if rng.gen_bool(0.5) {
                    mag
                } else {
                    -mag
                }
            })
            .collect();
        let probe = g.leaf(Tensor::matrix(shape[0], shape[1], data));
        let weighted = g.mul(out, probe);
        g.sum(weighted)
    }

    #[test]
    fn transformer_layer_gradient_check() {
        let cfg = tiny_config(Variant::Isolated);
        let mut params = init_params(&cfg, 17);
        let mut rng = named_stream(99, "layer.input");
        params.insert(
            "test.input",
            Tensor::matrix(6, cfg.hidden, (0..6 * cfg.hidden).map(|_| rng.gen_range(-1.0..1.0)).collect()),
        );

        let run = |p: &ParamSet| -> (f64, GradMap) {
            let mut g = Graph::new();
            let nodes = load_params(&mut g, p);
            let x = nodes.id("test.input");
            let out = transformer_layer(&mut g, &nodes, &cfg, 0, x);
            let loss = probe_loss(&mut g, out, 7);
            g.backward(loss);
            (g.value(loss).data[0], nodes.collect_grads(&g))
        };
        let (_, analytic) = run(&params);
        let report = grad_check(
            |p| run(p).0,
            &params,
            &analytic,
            &GradCheckOptions {
                max_coords_per_param: 12,
                ..Default::default()
            },
        );
        assert!(report.max_rel_err < 1e-4, "{report:?}");
    }

    #[test]
    fn adapter_gradient_check_and_single_doc_shape() {
        let cfg = tiny_config(Variant::LstmAfter);
        let mut params = init_params(&cfg, 23);
        activate_adapters(&mut params, 23);
        let mut rng = named_stream(23, "adapter.input");
        params.insert(
            "test.cls",
            Tensor::matrix(3, cfg.hidden, (0..3 * cfg.hidden).map(|_| rng.gen_range(-1.0..1.0)).collect()),
        );

        let run = |p: &ParamSet| -> (f64, GradMap) {
            let mut g = Graph::new();
            let nodes = load_params(&mut g, p);
            let x = nodes.id("test.cls");
            let out = lstm_adapter(&mut g, &nodes, &cfg, "adapter", x);
            let loss = probe_loss(&mut g, out, 13);
            g.backward(loss);
            (g.value(loss).data[0], nodes.collect_grads(&g))
        };
        let (_, analytic) = run(&params);
        let report = grad_check(
            |p| run(p).0,
            &params,
            &analytic,
            &GradCheckOptions {
                max_coords_per_param: 12,
                ..Default::default()
            },
        );
        assert!(report.max_rel_err < 1e-4, "{report:?}");

        // D=1 degenerates to a per-vector transform.
        let mut g = Graph::new();
        let nodes = load_params(&mut g, &params);
        let single = g.leaf(Tensor::matrix(1, cfg.hidden, vec![0.3; cfg.hidden]));
        let out = lstm_adapter(&mut g, &nodes, &cfg, "adapter", single);
        assert_eq!(g.value(out).shape, vec![1, cfg.hidden]);
    }

    #[test]
    fn full_lit_micro_batch_gradient_check() {
        let report = crate::diagnostics::model_grad_check(Variant::Lit, 41);
        assert!(report.max_rel_err < 1e-4, "{report:?}");
    }

    #[test]
    fn isolated_and_lstm_after_micro_batch_gradient_checks() {
        for (variant, seed) in [(Variant::Isolated, 43), (Variant::LstmAfter, 47)] {
            let report = crate::diagnostics::model_grad_check(variant, seed);
            assert!(report.max_rel_err < 1e-4, "{variant:?}: {report:?}");
        }
    }

    fn fake_ranking(n: usize) -> RankedList {
        let entries = (0..n)
            .map(|i| (format!("u{i}"), (n - i) as f64))
            .collect();
        RankedList::from_entries("q", entries).unwrap()
    }

    #[test]
    fn rerank_zero_k_is_identity() {
        let ranking = fake_ranking(5);
        let scores = ScoreBatch {
            qid: "q".into(),
            uids: vec![],
            logits: vec![],
        };
        let out = rerank(&ranking, &scores, 0).unwrap();
        assert_eq!(out, ranking);
    }

    #[test]
    fn rerank_reorders_block_and_keeps_tail() {
        let ranking = fake_ranking(6);
        let scores = ScoreBatch {
            qid: "q".into(),
            uids: vec!["u0".into(), "u1".into(), "u2".into()],
            logits: vec![-1.0, 2.0, 0.5],
        };
        let out = rerank(&ranking, &scores, 3).unwrap();
        let uids: Vec<&str> = out.uids().collect();
        assert_eq!(uids, ["u1", "u2", "u0", "u3", "u4", "u5"]);
        for w in out.entries().windows(2) {
            assert!(w[0].1 >= w[1].1);
        }
        // Tail scores sit strictly below the block.
        assert!(out.entries()[2].1 > out.entries()[3].1);
    }

    #[test]
    fn rerank_tieboken_by_prior_rank_and_validates_uids() {
        let ranking = fake_ranking(4);
        let scores = ScoreBatch {
            qid: "q".into(),
            uids: vec!["u0".into(), "u1".into(), "u2".into()],
            logits: vec![0.7, 0.7, 0.7],
        };
        let out = rerank(&ranking, &scores, 3).unwrap();
        assert_eq!(out.uids().collect::<Vec<_>>(), ["u0", "u1", "u2", "u3"]);

        let bad = ScoreBatch {
            qid: "q".into(),
            uids: vec!["u0".into(), "u9".into(), "u2".into()],
            logits: vec![0.0, 0.0, 0.0],
        };
        assert!(matches!(
            rerank(&ranking, &bad, 3),
            Err(NeuralError::InvalidInput { .. })
        ));
    }
}
