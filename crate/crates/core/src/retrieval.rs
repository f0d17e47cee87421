//! BM25-weighted sparse vectors, cosine ranking, and the iterative
//! multi-hop retriever.
//!
//! The iterative ranker widens its selection geometrically: iteration k
//! scores every unselected fact against the current query vector, takes
//! the top `2^(n0+k)`, folds their vectors into the query by elementwise
//! max (down-scaled by lambda), and repeats until the candidate pool is
//! exhausted. One scoring pass per iteration keeps the pass count
//! logarithmic in the corpus size.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::corpus::FactStore;
use crate::error::{CoreError, Result};
use crate::text::{build_vocabulary, TextResources, Vocabulary};

const INDEX_MAGIC: &[u8; 4] = b"HRIX";
const INDEX_VERSION: u32 = 1;

/// Sorted (term_id, weight) pairs; no zero weights stored.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseVector {
    entries: Vec<(u32, f64)>,
}

impl SparseVector {
    /// Build from arbitrary pairs: sorts by id and drops zero weights.
    /// Duplicate ids are a caller bug.
    pub fn from_entries(mut entries: Vec<(u32, f64)>) -> Self {
        entries.retain(|&(_, w)| w != 0.0);
        entries.sort_by_key(|&(id, _)| id);
        debug_assert!(
            entries.windows(2).all(|w| w[0].0 < w[1].0),
            "duplicate term id in sparse vector"
        );
        SparseVector { entries }
    }

    pub fn entries(&self) -> &[(u32, f64)] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.entries
            .iter()
            .map(|&(_, w)| w * w)
            .sum::<f64>()
            .sqrt()
    }
}

/// Merge-join dot product over the sorted entry lists.
fn dot(a: &SparseVector, b: &SparseVector) -> f64 {
    let (mut i, mut j, mut acc) = (0, 0, 0.0);
    let (ae, be) = (&a.entries, &b.entries);
    while i < ae.len() && j < be.len() {
        match ae[i].0.cmp(&be[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                acc += ae[i].1 * be[j].1;
                i += 1;
                j += 1;
            }
        }
    }
    acc
}

/// Cosine similarity; 0 when either vector is empty or zero-norm.
pub fn cosine(a: &SparseVector, b: &SparseVector) -> f64 {
    let na = a.norm();
    let nb = b.norm();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot(a, b) / (na * nb)
}

/// BM25 weighting constants plus the corpus average document length.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
    pub avgdl: f64,
}

fn bm25_weight(tf: f64, df: u32, n_docs: usize, doc_len: f64, p: &Bm25Params) -> f64 {
    let idf = (1.0 + (n_docs as f64 - df as f64 + 0.5) / (df as f64 + 0.5)).ln();
    idf * tf * (p.k1 + 1.0) / (tf + p.k1 * (1.0 - p.b + p.b * doc_len / p.avgdl))
}

/// Pre-computed fact vectors with cached norms, keyed by ascending uid.
#[derive(Debug, Clone)]
pub struct SparseIndex {
    vocab: Vocabulary,
    uids: Vec<String>,
    vectors: Vec<SparseVector>,
    norms: Vec<f64>,
    params: Bm25Params,
}

impl SparseIndex {
    pub fn len(&self) -> usize {
        self.uids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.uids.is_empty()
    }

    pub fn uids(&self) -> &[String] {
        &self.uids
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn params(&self) -> &Bm25Params {
        &self.params
    }

    pub fn vector(&self, idx: usize) -> &SparseVector {
        &self.vectors[idx]
    }

    pub fn vector_for_uid(&self, uid: &str) -> Option<&SparseVector> {
        self.uids
            .binary_search_by(|u| u.as_str().cmp(uid))
            .ok()
            .map(|i| &self.vectors[i])
    }
}

/// Build the index over all facts. Document length is the token count
/// after preprocessing, so stopwords do not inflate the length norm.
pub fn build_index(
    facts: &FactStore,
    resources: &TextResources,
    k1: f64,
    b: f64,
) -> SparseIndex {
    let vocab = build_vocabulary(facts, resources);
    let n_docs = facts.len();

    let mut order: Vec<&crate::corpus::Fact> = facts.iter().collect();
    order.sort_by(|x, y| x.uid.cmp(&y.uid));

    let token_lists: Vec<Vec<String>> = order
        .iter()
        .map(|f| resources.preprocess(&f.text))
        .collect();
    let total_len: usize = token_lists.iter().map(Vec::len).sum();
    let avgdl = if n_docs == 0 || total_len == 0 {
        1.0
    } else {
        total_len as f64 / n_docs as f64
    };
    let params = Bm25Params { k1, b, avgdl };

    let mut uids = Vec::with_capacity(n_docs);
    let mut vectors = Vec::with_capacity(n_docs);
    let mut norms = Vec::with_capacity(n_docs);
    for (fact, tokens) in order.iter().zip(&token_lists) {
        let vector = weigh_tokens(tokens, &vocab, n_docs, &params);
        norms.push(vector.norm());
        vectors.push(vector);
        uids.push(fact.uid.clone());
    }

    SparseIndex {
        vocab,
        uids,
        vectors,
        norms,
        params,
    }
}

/// Apply the index's BM25 weighting to a query token list, treating the
/// query as a document of its own length. Out-of-vocabulary tokens are
/// dropped before the length is taken, so junk terms cannot dilute the
/// weights of known ones.
pub fn vectorize_query(tokens: &[String], index: &SparseIndex) -> SparseVector {
    let known: Vec<&String> = tokens
        .iter()
        .filter(|t| index.vocab.id(t).is_some())
        .collect();
    let mut counts: std::collections::HashMap<u32, f64> = std::collections::HashMap::new();
    for t in &known {
        *counts.entry(index.vocab.id(t).unwrap()).or_insert(0.0) += 1.0;
    }
    let doc_len = known.len() as f64;
    let entries = counts
        .into_iter()
        .map(|(id, tf)| {
            (
                id,
                bm25_weight(tf, index.vocab.doc_freq(id), index.len(), doc_len, &index.params),
            )
        })
        .collect();
    SparseVector::from_entries(entries)
}

fn weigh_tokens(
    tokens: &[String],
    vocab: &Vocabulary,
    n_docs: usize,
    params: &Bm25Params,
) -> SparseVector {
    let mut counts: std::collections::HashMap<u32, f64> = std::collections::HashMap::new();
    for t in tokens {
        if let Some(id) = vocab.id(t) {
            *counts.entry(id).or_insert(0.0) += 1.0;
        }
    }
    let doc_len = tokens.len() as f64;
    let entries = counts
        .into_iter()
        .map(|(id, tf)| (id, bm25_weight(tf, vocab.doc_freq(id), n_docs, doc_len, params)))
        .collect();
    SparseVector::from_entries(entries)
}

/// A full ordering of the candidate set with non-increasing scores.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    pub qid: String,
    entries: Vec<(String, f64)>,
}

impl RankedList {
    /// Construct after checking the score invariant.
    pub fn from_entries(qid: impl Into<String>, entries: Vec<(String, f64)>) -> Result<Self> {
        if let Some(w) = entries.windows(2).find(|w| w[0].1 < w[1].1) {
            return Err(CoreError::InvalidParam {
                what: format!(
                    "ranked list scores increase: {} ({}) before {} ({})",
                    w[0].0, w[0].1, w[1].0, w[1].1
                ),
            });
        }
        Ok(RankedList {
            qid: qid.into(),
            entries,
        })
    }

    pub fn entries(&self) -> &[(String, f64)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn uids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(u, _)| u.as_str())
    }

    pub fn into_entries(self) -> Vec<(String, f64)> {
        self.entries
    }
}

/// Prefix of length `min(k, len)`.
pub fn top_k(ranked: &RankedList, k: usize) -> RankedList {
    let cut = k.min(ranked.entries.len());
    RankedList {
        qid: ranked.qid.clone(),
        entries: ranked.entries[..cut].to_vec(),
    }
}

/// Rank all facts by cosine against the query, ties broken by ascending
/// uid. Scores are the raw cosines.
pub fn rank_bm25(qid: &str, query: &SparseVector, index: &SparseIndex) -> RankedList {
    let q_norm = query.norm();
    let mut scored: Vec<(f64, usize)> = (0..index.len())
        .map(|i| {
            let denom = q_norm * index.norms[i];
            let cos = if denom == 0.0 {
                0.0
            } else {
                dot(query, &index.vectors[i]) / denom
            };
            (cos, i)
        })
        .collect();
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then_with(|| a.1.cmp(&b.1)));
    RankedList {
        qid: qid.to_string(),
        entries: scored
            .into_iter()
            .map(|(s, i)| (index.uids[i].clone(), s))
            .collect(),
    }
}

/// Down-scale factor and starting exponent for the iterative ranker.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterConfig {
    downscale: f64,
    start_exponent: u32,
}

impl IterConfig {
    pub fn new(downscale: f64, start_exponent: u32) -> Result<Self> {
        if !(0.0..=1.0).contains(&downscale) {
            return Err(CoreError::InvalidParam {
                what: format!("downscale must be in [0, 1], got {downscale}"),
            });
        }
        Ok(IterConfig {
            downscale,
            start_exponent,
        })
    }

    pub fn downscale(&self) -> f64 {
        self.downscale
    }

    pub fn start_exponent(&self) -> u32 {
        self.start_exponent
    }
}

impl Default for IterConfig {
    fn default() -> Self {
        IterConfig {
            downscale: 0.5,
            start_exponent: 0,
        }
    }
}

/// Per-question counters for the logarithmic-pass contract.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IterStats {
    pub iterations: usize,
    /// Full scoring sweeps over the unselected pool; one per iteration.
    pub scoring_passes: usize,
}

/// Iteration-by-iteration trace for invariant tests.
#[derive(Debug, Clone, Default)]
pub struct IterTrace {
    pub batch_sizes: Vec<usize>,
    /// Dense query vector after each iteration's max-update.
    pub query_snapshots: Vec<Vec<f64>>,
}

pub fn rank_iterative(
    qid: &str,
    query: &SparseVector,
    index: &SparseIndex,
    cfg: &IterConfig,
) -> RankedList {
    rank_iterative_impl(qid, query, index, cfg, |_, _| {}).0
}

pub fn rank_iterative_with_stats(
    qid: &str,
    query: &SparseVector,
    index: &SparseIndex,
    cfg: &IterConfig,
) -> (RankedList, IterStats) {
    let mut iterations = 0;
    let ranked = rank_iterative_impl(qid, query, index, cfg, |_, _| iterations += 1).0;
    (
        ranked,
        IterStats {
            iterations,
            scoring_passes: iterations,
        },
    )
}

pub fn rank_iterative_traced(
    qid: &str,
    query: &SparseVector,
    index: &SparseIndex,
    cfg: &IterConfig,
) -> (RankedList, IterTrace) {
    let mut trace = IterTrace::default();
    let ranked = rank_iterative_impl(qid, query, index, cfg, |q, batch| {
        trace.batch_sizes.push(batch);
        trace.query_snapshots.push(q.to_vec());
    })
    .0;
    (ranked, trace)
}

/// Core loop. `on_iteration` sees the updated dense query and the batch
/// size after every iteration.
fn rank_iterative_impl(
    qid: &str,
    query: &SparseVector,
    index: &SparseIndex,
    cfg: &IterConfig,
    mut on_iteration: impl FnMut(&[f64], usize),
) -> (RankedList, usize) {
    let mut q = vec![0.0f64; index.vocab.len()];
    for &(id, w) in query.entries() {
        q[id as usize] = w;
    }
    let mut q_norm = query.norm();

    let mut remaining: Vec<usize> = (0..index.len()).collect();
    // (uid index, raw cosine, iteration the fact was selected in)
    let mut picks: Vec<(usize, f64, usize)> = Vec::with_capacity(index.len());
    let mut exponent = cfg.start_exponent;
    let mut iteration = 0usize;

    while !remaining.is_empty() {
        let width = 1usize
            .checked_shl(exponent)
            .unwrap_or(usize::MAX)
            .min(remaining.len());

        let mut scored: Vec<(f64, usize)> = remaining
            .iter()
            .map(|&i| {
                let denom = q_norm * index.norms[i];
                let cos = if denom == 0.0 {
                    0.0
                } else {
                    sparse_dot_dense(&index.vectors[i], &q) / denom
                };
                (cos, i)
            })
            .collect();
        scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then_with(|| a.1.cmp(&b.1)));

        for &(cos, i) in &scored[..width] {
            picks.push((i, cos, iteration));
            for &(id, w) in index.vectors[i].entries() {
                let scaled = cfg.downscale * w;
                if scaled > q[id as usize] {
                    q[id as usize] = scaled;
                }
            }
        }
        q_norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();

        let selected: std::collections::HashSet<usize> =
            scored[..width].iter().map(|&(_, i)| i).collect();
        remaining.retain(|i| !selected.contains(i));

        on_iteration(&q, width);
        iteration += 1;
        exponent = exponent.saturating_add(1);
    }

    // Later iterations must score strictly below earlier ones, so the
    // iteration rank supplies the integer part and the clamped cosine
    // the fractional part.
    let total = iteration;
    let entries = picks
        .into_iter()
        .map(|(i, cos, it)| {
            let score = (total - it) as f64 + cos.clamp(0.0, 1.0);
            (index.uids[i].clone(), score)
        })
        .collect();
    (
        RankedList {
            qid: qid.to_string(),
            entries,
        },
        total,
    )
}

fn sparse_dot_dense(sparse: &SparseVector, dense: &[f64]) -> f64 {
    sparse
        .entries
        .iter()
        .map(|&(id, w)| w * dense[id as usize])
        .sum()
}

impl SparseIndex {
    /// Write the versioned binary index file.
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| CoreError::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| CoreError::io(path, e);

        w.write_all(INDEX_MAGIC).map_err(io)?;
        w.write_all(&INDEX_VERSION.to_le_bytes()).map_err(io)?;
        w.write_all(&self.params.k1.to_le_bytes()).map_err(io)?;
        w.write_all(&self.params.b.to_le_bytes()).map_err(io)?;
        w.write_all(&self.params.avgdl.to_le_bytes()).map_err(io)?;

        w.write_all(&(self.vocab.len() as u64).to_le_bytes())
            .map_err(io)?;
        for id in 0..self.vocab.len() as u32 {
            let term = self.vocab.term(id).as_bytes();
            w.write_all(&(term.len() as u32).to_le_bytes()).map_err(io)?;
            w.write_all(term).map_err(io)?;
            w.write_all(&self.vocab.doc_freq(id).to_le_bytes())
                .map_err(io)?;
        }

        w.write_all(&(self.uids.len() as u64).to_le_bytes())
            .map_err(io)?;
        for i in 0..self.uids.len() {
            let uid = self.uids[i].as_bytes();
            w.write_all(&(uid.len() as u32).to_le_bytes()).map_err(io)?;
            w.write_all(uid).map_err(io)?;
            let entries = self.vectors[i].entries();
            w.write_all(&(entries.len() as u32).to_le_bytes())
                .map_err(io)?;
            for &(id, weight) in entries {
                w.write_all(&id.to_le_bytes()).map_err(io)?;
                w.write_all(&weight.to_le_bytes()).map_err(io)?;
            }
            w.write_all(&self.norms[i].to_le_bytes()).map_err(io)?;
        }
        w.flush().map_err(io)
    }

    /// Read an index file, validating the norm cache and entry ordering.
    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| CoreError::io(path, e))?;
        let mut rd = IndexReader {
            inner: BufReader::new(file),
            path,
        };

        let magic = rd.bytes(4)?;
        if magic != INDEX_MAGIC {
            return Err(rd.corrupt("bad magic"));
        }
        let version = rd.u32()?;
        if version != INDEX_VERSION {
            return Err(rd.corrupt(&format!("unsupported version {version}")));
        }
        let k1 = rd.f64()?;
        let b = rd.f64()?;
        let avgdl = rd.f64()?;
        if !(avgdl > 0.0) {
            return Err(rd.corrupt(&format!("avgdl must be positive, got {avgdl}")));
        }

        let n_terms = rd.u64()? as usize;
        let mut vocab = Vocabulary::default();
        for _ in 0..n_terms {
            let len = rd.u32()? as usize;
            let term = String::from_utf8(rd.bytes(len)?)
                .map_err(|_| rd.corrupt("term is not utf-8"))?;
            let df = rd.u32()?;
            if vocab.id(&term).is_some() {
                return Err(rd.corrupt(&format!("duplicate term {term:?}")));
            }
            vocab.insert_with_df(term, df);
        }

        let n_facts = rd.u64()? as usize;
        let mut uids = Vec::with_capacity(n_facts);
        let mut vectors = Vec::with_capacity(n_facts);
        let mut norms = Vec::with_capacity(n_facts);
        let mut prev_uid: Option<String> = None;
        for _ in 0..n_facts {
            let len = rd.u32()? as usize;
            let uid =
                String::from_utf8(rd.bytes(len)?).map_err(|_| rd.corrupt("uid is not utf-8"))?;
            if let Some(prev) = &prev_uid {
                if *prev >= uid {
                    return Err(rd.corrupt(&format!("uids out of order at {uid:?}")));
                }
            }
            let n_entries = rd.u32()? as usize;
            let mut entries = Vec::with_capacity(n_entries);
            let mut prev_id: Option<u32> = None;
            for _ in 0..n_entries {
                let id = rd.u32()?;
                let weight = rd.f64()?;
                if id as usize >= n_terms {
                    return Err(rd.corrupt(&format!("term id {id} out of range")));
                }
                if prev_id.is_some_and(|p| p >= id) {
                    return Err(rd.corrupt("term ids not strictly increasing"));
                }
                if !(weight > 0.0) || !weight.is_finite() {
                    return Err(rd.corrupt(&format!("non-positive weight {weight}")));
                }
                entries.push((id, weight));
                prev_id = Some(id);
            }
            let vector = SparseVector { entries };
            let stored_norm = rd.f64()?;
            let computed = vector.norm();
            if (stored_norm - computed).abs() > 1e-9 * computed.max(1.0) {
                return Err(rd.corrupt(&format!(
                    "norm cache mismatch for {uid:?}: stored {stored_norm}, computed {computed}"
                )));
            }
            prev_uid = Some(uid.clone());
            uids.push(uid);
            vectors.push(vector);
            norms.push(stored_norm);
        }

        Ok(SparseIndex {
            vocab,
            uids,
            vectors,
            norms,
            params: Bm25Params { k1, b, avgdl },
        })
    }
}

struct IndexReader<'a> {
    inner: BufReader<std::fs::File>,
    path: &'a Path,
}

impl IndexReader<'_> {
    fn corrupt(&self, reason: &str) -> CoreError {
        CoreError::CorruptIndex {
            path: self.path.to_path_buf(),
            reason: reason.to_string(),
        }
    }

    fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.inner.read_exact(&mut buf).map_err(|e| {
            if e.kind() == std::io::ErrorKind::UnexpectedEof {
                self.corrupt("truncated file")
            } else {
                CoreError::io(self.path, e)
            }
        })?;
        Ok(buf)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes(8)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Fact;
    use std::collections::HashMap;

    fn store_from(texts: &[&str]) -> FactStore {
        let mut store = FactStore::default();
        for (i, text) in texts.iter().enumerate() {
            store
                .insert(Fact {
                    uid: format!("u{i:03}"),
                    text: text.to_string(),
                    table_name: "test".into(),
                })
                .unwrap();
        }
        store
    }

    fn toy_index(texts: &[&str]) -> SparseIndex {
        build_index(&store_from(texts), &TextResources::empty(), 1.2, 0.75)
    }

    fn query(index: &SparseIndex, text: &str) -> SparseVector {
        vectorize_query(&TextResources::empty().preprocess(text), index)
    }

    /// Independent BM25 reference: same formula, written directly over
    /// string maps with no shared code.
    fn reference_weights(docs: &[&str], k1: f64, b: f64) -> Vec<HashMap<String, f64>> {
        let tokenized: Vec<Vec<String>> = docs
            .iter()
            .map(|d| d.split_whitespace().map(|t| t.to_lowercase()).collect())
            .collect();
        let n = tokenized.len() as f64;
        let avgdl = tokenized.iter().map(Vec::len).sum::<usize>() as f64 / n;
        let mut df: HashMap<String, f64> = HashMap::new();
        for doc in &tokenized {
            let distinct: std::collections::HashSet<&String> = doc.iter().collect();
            for t in distinct {
                *df.entry(t.clone()).or_insert(0.0) += 1.0;
            }
        }
        tokenized
            .iter()
            .map(|doc| {
                let mut tf: HashMap<String, f64> = HashMap::new();
                for t in doc {
                    *tf.entry(t.clone()).or_insert(0.0) += 1.0;
                }
                let dl = doc.len() as f64;
                tf.into_iter()
                    .map(|(t, f)| {
                        let idf = (1.0 + (n - df[&t] + 0.5) / (df[&t] + 0.5)).ln();
                        let w = idf * f * (k1 + 1.0) / (f + k1 * (1.0 - b + b * dl / avgdl));
                        (t, w)
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn weights_match_reference_oracle() {
        let docs = ["sun hot sun bright", "sun big planet", "moon cold rock dust"];
        let index = toy_index(&docs);
        let expected = reference_weights(&docs, 1.2, 0.75);
        for (i, exp) in expected.iter().enumerate() {
            let got = index.vector_for_uid(&format!("u{i:03}")).unwrap();
            assert_eq!(got.entries().len(), exp.len());
            for &(id, w) in got.entries() {
                let term = index.vocabulary().term(id);
                let reference = exp[term];
                assert!(
                    (w - reference).abs() <= 1e-9 * reference.abs().max(1.0),
                    "weight mismatch for {term}: {w} vs {reference}"
                );
            }
        }
    }

    #[test]
    fn query_weights_match_reference_oracle() {
        let docs = ["sun hot sun bright", "sun big planet", "moon cold rock dust"];
        let index = toy_index(&docs);
        let q = query(&index, "sun sun moon");
        // Reference treats the query as a fourth document scored with the
        // corpus statistics (N=3, corpus avgdl), length 3.
        let n = 3.0;
        let avgdl = (4.0 + 3.0 + 4.0) / 3.0;
        let expect = |tf: f64, df: f64| {
            let idf = (1.0f64 + (n - df + 0.5) / (df + 0.5)).ln();
            idf * tf * 2.2 / (tf + 1.2 * (1.0 - 0.75 + 0.75 * 3.0 / avgdl))
        };
        for &(id, w) in q.entries() {
            let (tf, df) = match index.vocabulary().term(id) {
                "sun" => (2.0, 2.0),
                "moon" => (1.0, 1.0),
                other => panic!("unexpected query term {other}"),
            };
            let reference = expect(tf, df);
            assert!((w - reference).abs() < 1e-9, "{w} vs {reference}");
        }
    }

    #[test]
    fn ubiquitous_term_keeps_positive_weight() {
        let index = toy_index(&["sun hot", "sun big", "sun far"]);
        let sun = index.vocabulary().id("sun").unwrap();
        for i in 0..index.len() {
            let w = index
                .vector(i)
                .entries()
                .iter()
                .find(|&&(id, _)| id == sun)
                .unwrap()
                .1;
            assert!(w > 0.0, "idf floor keeps weights positive");
        }
    }

    #[test]
    fn term_weight_saturates_below_idf_times_k1_plus_one() {
        let many = "sun ".repeat(500);
        let index = toy_index(&[many.trim(), "moon cold"]);
        let sun = index.vocabulary().id("sun").unwrap();
        let p = index.params();
        let idf = (1.0f64 + (2.0 - 1.0 + 0.5) / 1.5).ln();
        let w = index
            .vector(0)
            .entries()
            .iter()
            .find(|&&(id, _)| id == sun)
            .unwrap()
            .1;
        assert!(w < idf * (p.k1 + 1.0));
        assert!(w > idf * (p.k1 + 1.0) * 0.98, "tf=500 sits near the asymptote");
    }

    #[test]
    fn duplicate_query_term_saturates() {
        let index = toy_index(&["sun hot", "moon cold"]);
        let single = query(&index, "sun");
        let double = query(&index, "sun sun");
        let w1 = single.entries()[0].1;
        let w2 = double.entries()[0].1;
        assert!(w2 > w1, "tf is monotone");
        assert!(w2 < 2.0 * w1, "tf is concave");
    }

    #[test]
    fn unknown_terms_dropped() {
        let index = toy_index(&["sun hot", "moon cold"]);
        assert!(query(&index, "quasar jet").is_empty());
        let mixed = query(&index, "quasar sun");
        assert_eq!(mixed.entries().len(), 1);
        let alone = query(&index, "sun");
        assert_eq!(mixed.entries(), alone.entries());
    }

    #[test]
    fn cosine_identity_orthogonality_and_hand_case() {
        let v = SparseVector::from_entries(vec![(0, 2.0), (3, 1.0)]);
        assert!((cosine(&v, &v) - 1.0).abs() < 1e-12);

        let w = SparseVector::from_entries(vec![(1, 5.0), (2, 5.0)]);
        assert_eq!(cosine(&v, &w), 0.0);

        let a = SparseVector::from_entries(vec![(1, 3.0), (2, 4.0)]);
        let b = SparseVector::from_entries(vec![(2, 4.0)]);
        assert!((cosine(&a, &b) - 0.8).abs() < 1e-12);

        assert_eq!(cosine(&a, &SparseVector::default()), 0.0);
    }

    #[test]
    fn rank_bm25_permutation_and_zero_score_tail() {
        let index = toy_index(&["sun hot", "moon cold", "sun bright", "dust storm"]);
        let ranked = rank_bm25("q1", &query(&index, "sun"), &index);
        let mut uids: Vec<&str> = ranked.uids().collect();
        uids.sort();
        assert_eq!(uids, index.uids().iter().map(String::as_str).collect::<Vec<_>>());

        let entries = ranked.entries();
        assert!(entries[0].1 > 0.0 && entries[1].1 > 0.0);
        // Zero-scoring facts trail in ascending uid order.
        assert_eq!(entries[2].0, "u001");
        assert_eq!(entries[3].0, "u003");
        assert_eq!(entries[2].1, 0.0);
    }

    #[test]
    fn rank_bm25_ties_break_by_ascending_uid() {
        let index = toy_index(&["sun hot", "sun hot", "sun hot"]);
        let ranked = rank_bm25("q1", &query(&index, "sun hot"), &index);
        let uids: Vec<&str> = ranked.uids().collect();
        assert_eq!(uids, ["u000", "u001", "u002"]);
    }

    #[test]
    fn lambda_zero_reduces_to_plain_bm25() {
        let docs = [
            "sun hot bright star",
            "moon cold rock",
            "sun big fusion",
            "planet orbit sun",
            "dust cloud dark",
            "star far light",
            "rock iron core",
        ];
        let index = toy_index(&docs);
        let q = query(&index, "sun star light");
        let plain = rank_bm25("q", &q, &index);
        let cfg = IterConfig::new(0.0, 0).unwrap();
        let iterative = rank_iterative("q", &q, &index, &cfg);
        let a: Vec<&str> = plain.uids().collect();
        let b: Vec<&str> = iterative.uids().collect();
        assert_eq!(a, b);
    }

    #[test]
    fn seven_candidates_batch_one_two_four() {
        let index = toy_index(&["a1 b", "a2 b", "a3 b", "a4 b", "a5 b", "a6 b", "a7 b"]);
        let q = query(&index, "b");
        let cfg = IterConfig::default();
        let (ranked, trace) = rank_iterative_traced("q", &q, &index, &cfg);
        assert_eq!(trace.batch_sizes, vec![1, 2, 4]);
        assert_eq!(ranked.len(), 7);

        let (_, stats) = rank_iterative_with_stats("q", &q, &index, &cfg);
        assert_eq!(stats.iterations, 3);
        assert_eq!(stats.scoring_passes, 3);
    }

    #[test]
    fn query_vector_coordinates_never_decrease() {
        let docs = [
            "sun hot bright",
            "moon orbits planet",
            "planet orbits sun",
            "rock iron dust",
            "light travels fast",
        ];
        let index = toy_index(&docs);
        let q = query(&index, "sun light");
        let cfg = IterConfig::new(0.7, 0).unwrap();
        let (_, trace) = rank_iterative_traced("q", &q, &index, &cfg);
        let mut prev = vec![0.0; index.vocabulary().len()];
        for &(id, w) in q.entries() {
            prev[id as usize] = w;
        }
        for snapshot in &trace.query_snapshots {
            for (p, s) in prev.iter().zip(snapshot) {
                assert!(s >= p, "coordinate decreased: {s} < {p}");
            }
            prev = snapshot.clone();
        }
    }

    #[test]
    fn iterative_follows_bridge_terms() {
        // u000 matches the query; u001 shares a term with u000 only.
        // Plain BM25 leaves u001 tied at zero with u002 (uid order), the
        // iterative ranker pulls it forward once "bridge" enters the query.
        let index = toy_index(&["virus bridge", "bridge target", "aardvark zebra"]);
        let q = query(&index, "virus");
        let plain = rank_bm25("q", &q, &index);
        assert_eq!(plain.uids().collect::<Vec<_>>(), ["u000", "u001", "u002"]);
        assert_eq!(plain.entries()[1].1, 0.0);

        let cfg = IterConfig::new(0.9, 0).unwrap();
        let ranked = rank_iterative("q", &q, &index, &cfg);
        assert_eq!(ranked.uids().collect::<Vec<_>>(), ["u000", "u001", "u002"]);
        // The bridge fact scores strictly above the unrelated one, which
        // stays on the floor of the shared iteration band.
        let bridge_score = ranked.entries()[1].1;
        let junk_score = ranked.entries()[2].1;
        assert!(bridge_score > junk_score);
        assert!(bridge_score - bridge_score.floor() > 0.05);
        assert_eq!(junk_score, junk_score.floor());
    }

    #[test]
    fn scoring_passes_logarithmic_in_corpus_size() {
        for n in [1usize, 2, 3, 7, 8, 20, 63, 64, 100] {
            let texts: Vec<String> = (0..n).map(|i| format!("tok{i} shared")).collect();
            let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
            let index = toy_index(&refs);
            let q = query(&index, "shared");
            let (_, stats) =
                rank_iterative_with_stats("q", &q, &index, &IterConfig::default());
            let bound = (n as f64 + 1.0).log2().ceil() as usize;
            assert_eq!(stats.scoring_passes, bound, "n={n}");
        }
    }

    #[test]
    fn iterative_scores_non_increasing_and_iteration_banded() {
        let index = toy_index(&["sun hot", "moon cold", "sun big", "dust", "rock", "ice", "gas"]);
        let q = query(&index, "sun");
        let (ranked, trace) =
            rank_iterative_traced("q", &q, &index, &IterConfig::new(0.3, 0).unwrap());
        let entries = ranked.entries();
        for w in entries.windows(2) {
            assert!(w[0].1 >= w[1].1);
        }
        // Scores of iteration k live in [total-k, total-k+1].
        let total = trace.batch_sizes.len();
        let mut idx = 0;
        for (it, &size) in trace.batch_sizes.iter().enumerate() {
            for _ in 0..size {
                let s = entries[idx].1;
                let base = (total - it) as f64;
                assert!(s >= base && s <= base + 1.0, "score {s} outside band {base}");
                idx += 1;
            }
        }
    }

    #[test]
    fn top_k_prefix_and_overflow() {
        let index = toy_index(&["sun hot", "moon cold", "sun big"]);
        let ranked = rank_bm25("q", &query(&index, "sun"), &index);
        let t2 = top_k(&ranked, 2);
        assert_eq!(t2.len(), 2);
        assert_eq!(t2.entries(), &ranked.entries()[..2]);
        let t9 = top_k(&ranked, 9);
        assert_eq!(t9.entries(), ranked.entries());
        for a in 1..=3usize {
            for b in a..=3usize {
                let pa = top_k(&ranked, a);
                let pb = top_k(&ranked, b);
                assert_eq!(pa.entries(), &pb.entries()[..pa.len()]);
            }
        }
    }

    #[test]
    fn iter_config_rejects_out_of_range_downscale() {
        assert!(IterConfig::new(-0.1, 0).is_err());
        assert!(IterConfig::new(1.1, 0).is_err());
        assert!(IterConfig::new(0.0, 0).is_ok());
        assert!(IterConfig::new(1.0, 3).is_ok());
    }

    #[test]
    fn ranked_list_rejects_increasing_scores() {
        let bad = RankedList::from_entries(
            "q",
            vec![("a".into(), 0.1), ("b".into(), 0.5)],
        );
        assert!(matches!(bad, Err(CoreError::InvalidParam { .. })));
        let good = RankedList::from_entries(
            "q",
            vec![("a".into(), 0.5), ("b".into(), 0.5), ("c".into(), 0.1)],
        );
        assert!(good.is_ok());
    }

    #[test]
    fn index_round_trips_through_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("facts.idx");
        let index = toy_index(&["sun hot sun", "moon cold", "sun big planet"]);
        index.save(&path).unwrap();
        let loaded = SparseIndex::load(&path).unwrap();

        assert_eq!(loaded.uids(), index.uids());
        assert_eq!(loaded.params(), index.params());
        assert_eq!(loaded.vocabulary().terms(), index.vocabulary().terms());
        for i in 0..index.len() {
            assert_eq!(loaded.vector(i), index.vector(i));
            assert_eq!(loaded.norms[i], index.norms[i]);
        }

        let q = query(&index, "sun planet");
        let before = rank_iterative("q", &q, &index, &IterConfig::default());
        let after = rank_iterative("q", &q, &loaded, &IterConfig::default());
        assert_eq!(before, after);
    }

    #[test]
    fn load_rejects_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("facts.idx");
        let index = toy_index(&["sun hot", "moon cold"]);
        index.save(&path).unwrap();

        let original = std::fs::read(&path).unwrap();

        let mut bad_magic = original.clone();
        bad_magic[0] = b'X';
        std::fs::write(&path, &bad_magic).unwrap();
        assert!(matches!(
            SparseIndex::load(&path),
            Err(CoreError::CorruptIndex { .. })
        ));

        // Flip a byte inside the last stored weight so the cached norm no
        // longer matches.
        let mut bad_weight = original.clone();
        let n = bad_weight.len();
        bad_weight[n - 12] ^= 0x20;
        std::fs::write(&path, &bad_weight).unwrap();
        assert!(matches!(
            SparseIndex::load(&path),
            Err(CoreError::CorruptIndex { .. })
        ));

        let truncated = &original[..original.len() - 3];
        std::fs::write(&path, truncated).unwrap();
        assert!(matches!(
            SparseIndex::load(&path),
            Err(CoreError::CorruptIndex { .. })
        ));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_corpus() -> impl Strategy<Value = (Vec<String>, String)> {
            let word = prop_oneof![
                Just("sun"),
                Just("moon"),
                Just("rock"),
                Just("hot"),
                Just("cold"),
                Just("dust"),
                Just("light"),
            ];
            let doc = proptest::collection::vec(word.clone(), 1..6)
                .prop_map(|ws| ws.join(" "));
            let query = proptest::collection::vec(word, 1..4).prop_map(|ws| ws.join(" "));
            (proptest::collection::vec(doc, 1..12), query)
        }

        proptest! {
            #[test]
            fn iterative_output_is_permutation_with_non_increasing_scores(
                (docs, qtext) in arb_corpus(),
                lambda in 0.0f64..=1.0,
                n0 in 0u32..3,
            ) {
                let refs: Vec<&str> = docs.iter().map(String::as_str).collect();
                let index = toy_index(&refs);
                let q = query(&index, &qtext);
                let cfg = IterConfig::new(lambda, n0).unwrap();
                let ranked = rank_iterative("q", &q, &index, &cfg);

                let mut uids: Vec<&str> = ranked.uids().collect();
                uids.sort();
                let mut expected: Vec<&str> =
                    index.uids().iter().map(String::as_str).collect();
                expected.sort();
                prop_assert_eq!(uids, expected);

                for w in ranked.entries().windows(2) {
                    prop_assert!(w[0].1 >= w[1].1);
                }
            }

            #[test]
            fn top_k_is_always_a_prefix(
                (docs, qtext) in arb_corpus(),
                a in 1usize..6,
                b in 6usize..15,
            ) {
                let refs: Vec<&str> = docs.iter().map(String::as_str).collect();
                let index = toy_index(&refs);
                let ranked = rank_bm25("q", &query(&index, &qtext), &index);
                let pa = top_k(&ranked, a);
                let pb = top_k(&ranked, b);
                prop_assert_eq!(pa.entries(), &pb.entries()[..pa.len()]);
            }
        }
    }
}
