use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use super::{tokenize, RetrieverError};

pub const DEFAULT_DIMENSION: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
    pub norm: f64,
}

impl EmbeddingVector {
    /// Scales to unit length; a zero vector stays zero.
    pub fn normalized(mut values: Vec<f64>) -> Self {
        let n = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 0.0 {
            values.iter_mut().for_each(|v| *v /= n);
            Self { values, norm: 1.0 }
        } else {
            Self { values, norm: 0.0 }
        }
    }

    pub fn is_zero(&self) -> bool {
        self.norm == 0.0
    }
}

pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> f64 {
    if a.is_zero() || b.is_zero() {
        return 0.0;
    }
    let dot: f64 = a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum();
    dot / (a.norm * b.norm)
}

pub trait Embedder {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, RetrieverError>;
    fn dimension(&self) -> usize;
}

/// Offline fallback: signed feature hashing of tokens (FNV-1a, 64 bit),
/// then L2 normalization. Bag of tokens, so word order does not matter.
#[derive(Debug, Clone, Copy)]
pub struct HashingEmbedder {
    pub dimension: usize,
}

impl Default for HashingEmbedder {
    fn default() -> Self {
        Self {
            dimension: DEFAULT_DIMENSION,
        }
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

impl Embedder for HashingEmbedder {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, RetrieverError> {
        let mut values = vec![0.0; self.dimension];
        for t in tokenize(text) {
            let h = fnv1a(t.as_bytes());
            let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
            values[(h % self.dimension as u64) as usize] += sign;
        }
        Ok(EmbeddingVector::normalized(values))
    }

    fn dimension(&self) -> usize {
        self.dimension
    }
}

/// HTTP embedding endpoint: `{"input": [text]}` answered by
/// `{"vectors": [[...]]}`. Optionally falls back to hashing on failure.
#[derive(Debug)]
pub struct RemoteEmbedder {
    endpoint: String,
    dimension: usize,
    fallback: Option<HashingEmbedder>,
    http: reqwest::blocking::Client,
}

#[derive(Deserialize)]
struct RemoteResponse {
    vectors: Vec<Vec<f64>>,
}

impl RemoteEmbedder {
    pub fn new(endpoint: &str, dimension: usize, fallback: bool) -> Result<Self, RetrieverError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(60))
            .build()
            .map_err(|e| RetrieverError::Embedding(e.to_string()))?;
        Ok(Self {
            endpoint: endpoint.to_string(),
            dimension,
            fallback: fallback.then_some(HashingEmbedder { dimension }),
            http,
        })
    }

    fn request(&self, text: &str) -> Result<EmbeddingVector, RetrieverError> {
        let err = |e: String| RetrieverError::Embedding(format!("{}: {e}", self.endpoint));
        let resp: RemoteResponse = self
            .http
            .post(&self.endpoint)
            .json(&json!({ "input": [text] }))
            .send()
            .and_then(|r| r.error_for_status())
            .map_err(|e| err(e.to_string()))?
            .json()
            .map_err(|e| err(e.to_string()))?;
        let v = resp.vectors.into_iter().next().ok_or_else(|| err("no vectors returned".into()))?;
        if v.len() != self.dimension {
            return Err(err(format!("expected dimension {}, got {}", self.dimension, v.len())));
        }
        Ok(EmbeddingVector::normalized(v))
    }
}

impl Embedder for RemoteEmbedder {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, RetrieverError> {
        match (self.request(text), &self.fallback) {
            (Ok(v), _) => Ok(v),
            (Err(e), Some(f)) => {
                log::warn!("{e}; using hashing fallback");
                f.embed(text)
            }
            (Err(e), None) => Err(e),
        }
    }

    fn dimension(&self) -> usize {
        self.dimension
    }
}
