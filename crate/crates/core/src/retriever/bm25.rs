use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::RetrieverError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

/// Okapi BM25 over pre-tokenized documents.
#[derive(Debug, Clone)]
pub struct Bm25Index {
    doc_term_freqs: HashMap<u64, HashMap<String, usize>>,
    doc_lengths: HashMap<u64, usize>,
    avg_doc_length: f64,
    doc_freqs: HashMap<String, usize>,
    params: Bm25Params,
}

impl Bm25Index {
    pub fn build(docs: &[(u64, Vec<String>)], params: Bm25Params) -> Self {
        let mut doc_term_freqs = HashMap::new();
        let mut doc_lengths = HashMap::new();
        let mut doc_freqs: HashMap<String, usize> = HashMap::new();
        for (id, tokens) in docs {
            let mut tf: HashMap<String, usize> = HashMap::new();
            for t in tokens {
                *tf.entry(t.clone()).or_default() += 1;
            }
            for t in tf.keys() {
                *doc_freqs.entry(t.clone()).or_default() += 1;
            }
            doc_term_freqs.insert(*id, tf);
            doc_lengths.insert(*id, tokens.len());
        }
        let total: usize = doc_lengths.values().sum();
        let avg_doc_length = if docs.is_empty() { 0.0 } else { total as f64 / docs.len() as f64 };
        Self {
            doc_term_freqs,
            doc_lengths,
            avg_doc_length,
            doc_freqs,
            params,
        }
    }

    pub fn len(&self) -> usize {
        self.doc_lengths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_lengths.is_empty()
    }

    pub fn avg_doc_length(&self) -> f64 {
        self.avg_doc_length
    }

    pub fn doc_freq(&self, term: &str) -> usize {
        self.doc_freqs.get(term).copied().unwrap_or(0)
    }

    pub fn idf(&self, term: &str) -> f64 {
        let n = self.len() as f64;
        let df = self.doc_freq(term) as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    /// Sum over query tokens (repeats count again); absent terms add 0.
    pub fn score(&self, query_tokens: &[String], doc_id: u64) -> Result<f64, RetrieverError> {
        let tf = self.doc_term_freqs.get(&doc_id).ok_or(RetrieverError::UnknownDoc(doc_id))?;
        let len = self.doc_lengths[&doc_id] as f64;
        let Bm25Params { k1, b } = self.params;
        let norm = if self.avg_doc_length > 0.0 { len / self.avg_doc_length } else { 0.0 };
        let mut score = 0.0;
        for t in query_tokens {
            let Some(&f) = tf.get(t) else { continue };
            let f = f as f64;
            score += self.idf(t) * f * (k1 + 1.0) / (f + k1 * (1.0 - b + b * norm));
        }
        Ok(score)
    }
}
