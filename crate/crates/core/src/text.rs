//! Deterministic text preprocessing feeding the sparse index.
//!
//! Tokenization, lemmatization, and stopword removal are table-driven:
//! the lemma map and stopword list are plain data files, so identical
//! inputs always produce identical token lists.

use std::collections::{HashMap, HashSet};
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::corpus::FactStore;
use crate::error::{CoreError, Result};

/// Lemma map and stopword set, loaded once and shared read-only.
#[derive(Debug, Clone)]
pub struct TextResources {
    lemma: HashMap<String, String>,
    stop: HashSet<String>,
    /// Tokens shorter than this are dropped after lemmatization.
    pub min_token_len: usize,
}

impl TextResources {
    /// Load from a `surface<TAB>lemma` map file and a one-word-per-line
    /// stopword file.
    pub fn load(lemma_path: &Path, stopword_path: &Path) -> Result<Self> {
        let mut lemma = HashMap::new();
        let reader =
            BufReader::new(std::fs::File::open(lemma_path).map_err(|e| CoreError::io(lemma_path, e))?);
        for (lineno, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| CoreError::io(lemma_path, e))?;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (surface, target) = line.split_once('\t').ok_or(CoreError::MalformedLine {
                path: lemma_path.to_path_buf(),
                line: lineno + 1,
                reason: "expected surface<TAB>lemma".into(),
            })?;
            lemma.insert(surface.trim().to_string(), target.trim().to_string());
        }

        let mut stop = HashSet::new();
        let reader = BufReader::new(
            std::fs::File::open(stopword_path).map_err(|e| CoreError::io(stopword_path, e))?,
        );
        for line in reader.lines() {
            let line = line.map_err(|e| CoreError::io(stopword_path, e))?;
            let word = line.trim();
            if !word.is_empty() && !word.starts_with('#') {
                stop.insert(word.to_string());
            }
        }

        Ok(TextResources {
            lemma,
            stop,
            min_token_len: 2,
        })
    }

    /// Empty resources: identity lemmatization, no stopwords. Used in tests.
    pub fn empty() -> Self {
        TextResources {
            lemma: HashMap::new(),
            stop: HashSet::new(),
            min_token_len: 2,
        }
    }

    pub fn with_lemmas<I: IntoIterator<Item = (String, String)>>(mut self, pairs: I) -> Self {
        self.lemma.extend(pairs);
        self
    }

    pub fn with_stopwords<I: IntoIterator<Item = String>>(mut self, words: I) -> Self {
        self.stop.extend(words);
        self
    }

    /// Lowercase, split on non-alphanumeric, lemmatize with identity
    /// fallback, then drop stopwords and short tokens. Numerals are kept.
    pub fn preprocess(&self, text: &str) -> Vec<String> {
        let lower = text.to_lowercase();
        lower
            .split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
            .map(|t| self.lemma.get(t).map(String::as_str).unwrap_or(t))
            .filter(|t| t.chars().count() >= self.min_token_len && !self.stop.contains(*t))
            .map(str::to_string)
            .collect()
    }
}

/// Lemma vocabulary over the fact store with document frequencies.
#[derive(Debug, Clone, Default)]
pub struct Vocabulary {
    term_to_id: HashMap<String, u32>,
    terms: Vec<String>,
    doc_freq: Vec<u32>,
}

impl Vocabulary {
    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn id(&self, term: &str) -> Option<u32> {
        self.term_to_id.get(term).copied()
    }

    pub fn term(&self, id: u32) -> &str {
        &self.terms[id as usize]
    }

    pub fn doc_freq(&self, id: u32) -> u32 {
        self.doc_freq[id as usize]
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub(crate) fn insert_with_df(&mut self, term: String, df: u32) -> u32 {
        let id = self.terms.len() as u32;
        self.term_to_id.insert(term.clone(), id);
        self.terms.push(term);
        self.doc_freq.push(df);
        id
    }
}

/// Build the vocabulary over all fact token lists. Term ids are assigned
/// in first-seen order, so the result is deterministic for a fixed store.
pub fn build_vocabulary(facts: &FactStore, resources: &TextResources) -> Vocabulary {
    let mut vocab = Vocabulary::default();
    let mut seen_in_doc: HashSet<u32> = HashSet::new();
    for fact in facts.iter() {
        seen_in_doc.clear();
        for token in resources.preprocess(&fact.text) {
            let id = match vocab.id(&token) {
                Some(id) => id,
                None => vocab.insert_with_df(token, 0),
            };
            if seen_in_doc.insert(id) {
                vocab.doc_freq[id as usize] += 1;
            }
        }
    }
    vocab
}
