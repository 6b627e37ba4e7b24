//! Hybrid retrieval: Okapi BM25 and dense cosine similarity fused by weighted
//! reciprocal rank.

mod bm25;
mod embed;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kb::{KbDocument, KbError, KbStore};
use crate::layout::RlfType;

pub use bm25::{Bm25Index, Bm25Params};
pub use embed::{cosine, Embedder, EmbeddingVector, HashingEmbedder, RemoteEmbedder, DEFAULT_DIMENSION};

/// Rank-fusion constant.
pub const RRF_C: f64 = 60.0;
pub const DEFAULT_TOP_K: usize = 5;

#[derive(Debug, Error)]
pub enum RetrieverError {
    #[error("unknown document id {0}")]
    UnknownDoc(u64),
    #[error("no properties to query with")]
    EmptyProperties,
    #[error("invalid ensemble weights ({0}, {1})")]
    InvalidWeights(f64, f64),
    #[error("embedding provider failed: {0}")]
    Embedding(String),
    #[error(transparent)]
    Kb(#[from] KbError),
}

/// Lowercases and splits on anything that is neither alphanumeric nor `-`.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !(c.is_alphanumeric() || c == '-'))
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleWeights {
    pub bm25_weight: f64,
    pub dense_weight: f64,
}

impl Default for EnsembleWeights {
    fn default() -> Self {
        Self {
            bm25_weight: 0.8,
            dense_weight: 0.2,
        }
    }
}

impl EnsembleWeights {
    pub fn validate(&self) -> Result<(), RetrieverError> {
        let ok = self.bm25_weight >= 0.0
            && self.dense_weight >= 0.0
            && self.bm25_weight + self.dense_weight > 0.0
            && self.bm25_weight.is_finite()
            && self.dense_weight.is_finite();
        if ok {
            Ok(())
        } else {
            Err(RetrieverError::InvalidWeights(self.bm25_weight, self.dense_weight))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedResult {
    pub doc_id: u64,
    pub fused_score: f64,
    pub bm25_rank: Option<usize>,
    pub dense_rank: Option<usize>,
}

/// Weighted reciprocal-rank fusion of two rankings (best first, 1-based
/// ranks by position). A document missing from a ranking gets nothing from
/// it; documents whose fused score is zero are dropped. Ties go to the lower
/// doc id.
pub fn fuse(bm25: &[u64], dense: &[u64], weights: EnsembleWeights, k: usize) -> Vec<RankedResult> {
    let mut acc: BTreeMap<u64, RankedResult> = BTreeMap::new();
    for (pos, id) in bm25.iter().enumerate() {
        let r = acc.entry(*id).or_insert_with(|| RankedResult {
            doc_id: *id,
            fused_score: 0.0,
            bm25_rank: None,
            dense_rank: None,
        });
        r.bm25_rank = Some(pos + 1);
    }
    for (pos, id) in dense.iter().enumerate() {
        let r = acc.entry(*id).or_insert_with(|| RankedResult {
            doc_id: *id,
            fused_score: 0.0,
            bm25_rank: None,
            dense_rank: None,
        });
        r.dense_rank = Some(pos + 1);
    }
    let mut out: Vec<RankedResult> = acc
        .into_values()
        .map(|mut r| {
            let part = |w: f64, rank: Option<usize>| rank.map_or(0.0, |n| w / (RRF_C + n as f64));
            r.fused_score = part(weights.bm25_weight, r.bm25_rank) + part(weights.dense_weight, r.dense_rank);
            r
        })
        .filter(|r| r.fused_score > 0.0)
        .collect();
    out.sort_by(|a, b| b.fused_score.total_cmp(&a.fused_score).then(a.doc_id.cmp(&b.doc_id)));
    out.truncate(k);
    out
}

/// BM25 and dense indices over one set of documents, keyed by question id.
pub struct HybridIndex<'e> {
    ids: Vec<u64>,
    bm25: Bm25Index,
    vectors: Vec<EmbeddingVector>,
    embedder: &'e dyn Embedder,
}

impl<'e> HybridIndex<'e> {
    pub fn build(
        docs: &[(u64, String)],
        embedder: &'e dyn Embedder,
        params: Bm25Params,
    ) -> Result<Self, RetrieverError> {
        let tokens: Vec<(u64, Vec<String>)> = docs.iter().map(|(id, t)| (*id, tokenize(t))).collect();
        let vectors = docs
            .iter()
            .map(|(_, t)| embedder.embed(t))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            ids: docs.iter().map(|(id, _)| *id).collect(),
            bm25: Bm25Index::build(&tokens, params),
            vectors,
            embedder,
        })
    }

    pub fn from_documents(
        docs: &[KbDocument],
        embedder: &'e dyn Embedder,
        params: Bm25Params,
    ) -> Result<Self, RetrieverError> {
        let texts: Vec<(u64, String)> = docs.iter().map(|d| (d.metadata.id, d.full_text())).collect();
        Self::build(&texts, embedder, params)
    }

    pub fn bm25(&self) -> &Bm25Index {
        &self.bm25
    }

    /// Documents with a positive BM25 score, best first.
    pub fn bm25_ranking(&self, query: &str) -> Vec<u64> {
        let q = tokenize(query);
        let mut scored: Vec<(u64, f64)> = self
            .ids
            .iter()
            .map(|id| (*id, self.bm25.score(&q, *id).expect("indexed id")))
            .filter(|(_, s)| *s > 0.0)
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        scored.into_iter().map(|(id, _)| id).collect()
    }

    /// Documents with a non-zero vector, by descending cosine. Empty when the
    /// query embeds to zero.
    pub fn dense_ranking(&self, query: &str) -> Result<Vec<u64>, RetrieverError> {
        let q = self.embedder.embed(query)?;
        if q.is_zero() {
            return Ok(Vec::new());
        }
        let mut scored: Vec<(u64, f64)> = self
            .ids
            .iter()
            .zip(&self.vectors)
            .filter(|(_, v)| !v.is_zero())
            .map(|(id, v)| (*id, cosine(&q, v)))
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        Ok(scored.into_iter().map(|(id, _)| id).collect())
    }

    pub fn ensemble_rank(
        &self,
        query: &str,
        weights: EnsembleWeights,
        k: usize,
    ) -> Result<Vec<RankedResult>, RetrieverError> {
        weights.validate()?;
        if self.ids.is_empty() {
            return Ok(Vec::new());
        }
        let lexical = self.bm25_ranking(query);
        let dense = self.dense_ranking(query)?;
        Ok(fuse(&lexical, &dense, weights, k.max(1)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrieverConfig {
    pub weights: EnsembleWeights,
    pub top_k: usize,
    pub bm25: Bm25Params,
}

impl Default for RetrieverConfig {
    fn default() -> Self {
        Self {
            weights: EnsembleWeights::default(),
            top_k: DEFAULT_TOP_K,
            bm25: Bm25Params::default(),
        }
    }
}

/// Joins the property names into a query and returns the best matching
/// documents from the store for `rlf_type`, in fused order.
pub fn retrieve_context(
    properties: &[String],
    rlf_type: RlfType,
    store: &KbStore,
    embedder: &dyn Embedder,
    config: &RetrieverConfig,
) -> Result<Vec<KbDocument>, RetrieverError> {
    if properties.is_empty() {
        return Err(RetrieverError::EmptyProperties);
    }
    let docs = store.documents(rlf_type)?;
    let query = properties.join(" ");
    let index = HybridIndex::from_documents(&docs, embedder, config.bm25)?;
    let ranked = index.ensemble_rank(&query, config.weights, config.top_k)?;
    let by_id: BTreeMap<u64, &KbDocument> = docs.iter().map(|d| (d.metadata.id, d)).collect();
    Ok(ranked.iter().map(|r| by_id[&r.doc_id].clone()).collect())
}
