//! Embeddings and the exhaustive cosine-similarity store used by buyer search.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{DatasetId, ListingSnapshot, SearchHit};
use crate::rng::{fnv1a, StreamRng};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmbedError {
    #[error("cannot embed empty text")]
    EmptyText,
    #[error("embedding provider unavailable: {0}")]
    ProviderUnavailable(String),
    #[error("embedding has {got} dimensions, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("embedding contains non-finite values")]
    NonFinite,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StoreError {
    #[error("zero vector cannot be indexed or queried")]
    ZeroVector,
    #[error("vector has {got} dimensions, store holds {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("top_k must be at least 1")]
    ZeroTopK,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self, EmbedError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmbedError::NonFinite);
        }
        Ok(EmbeddingVector(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, factor: f64) -> EmbeddingVector {
        EmbeddingVector(self.0.iter().map(|v| v * factor).collect())
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// cos(a, b) = a·b / (|a| |b|), clamped to [-1, 1]. Zero vectors give 0.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot(a, b) / (na * nb)).clamp(-1.0, 1.0)
}

/// Maps text to a fixed-length vector.
pub trait Embedder: Send + Sync {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError>;
    fn dim(&self) -> usize;
    /// Provider identifier echoed into run metadata.
    fn id(&self) -> String;
}

/// Deterministic offline embedder.
///
/// Each whitespace token (lowercased, outer punctuation stripped) seeds a
/// Gaussian pseudo-random direction; the sum of all token directions is
/// L2-normalized. Texts sharing tokens land closer together.
#[derive(Debug, Clone)]
pub struct MockEmbedder {
    dim: usize,
}

impl MockEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        MockEmbedder { dim }
    }

    pub fn tokens(text: &str) -> Vec<String> {
        text.split_whitespace()
            .map(|t| {
                t.trim_matches(|c: char| !c.is_alphanumeric())
                    .to_lowercase()
            })
            .filter(|t| !t.is_empty())
            .collect()
    }
}

impl Embedder for MockEmbedder {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        if text.trim().is_empty() {
            return Err(EmbedError::EmptyText);
        }
        let mut tokens = Self::tokens(text);
        if tokens.is_empty() {
            tokens.push(text.trim().to_string());
        }
        let mut acc = vec![0.0f64; self.dim];
        for token in &tokens {
            let mut rng = StreamRng::seed_from_u64(fnv1a(token.as_bytes()));
            for slot in acc.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *slot += z;
            }
        }
        let norm = dot(&acc, &acc).sqrt();
        if norm == 0.0 {
            return Err(EmbedError::NonFinite);
        }
        acc.iter_mut().for_each(|v| *v /= norm);
        EmbeddingVector::new(acc)
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn id(&self) -> String {
        format!("mock-token-hash-{}", self.dim)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct StoreEntry {
    vector: EmbeddingVector,
    norm_sq: f64,
    snapshot: ListingSnapshot,
}

/// Exhaustive-scan cosine similarity index, one entry per active listing.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VectorStore {
    dim: Option<usize>,
    entries: BTreeMap<DatasetId, StoreEntry>,
}

impl VectorStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, id: DatasetId) -> bool {
        self.entries.contains_key(&id)
    }

    pub fn ids(&self) -> impl Iterator<Item = DatasetId> + '_ {
        self.entries.keys().copied()
    }

    pub fn vector(&self, id: DatasetId) -> Option<&EmbeddingVector> {
        self.entries.get(&id).map(|e| &e.vector)
    }

    fn check_dim(&self, v: &EmbeddingVector) -> Result<(), StoreError> {
        match self.dim {
            Some(expected) if expected != v.dim() => Err(StoreError::DimensionMismatch {
                expected,
                got: v.dim(),
            }),
            _ => Ok(()),
        }
    }

    /// Inserts or replaces the entry for `id`.
    pub fn upsert(
        &mut self,
        id: DatasetId,
        vector: EmbeddingVector,
        snapshot: ListingSnapshot,
    ) -> Result<(), StoreError> {
        self.check_dim(&vector)?;
        let norm_sq = dot(vector.values(), vector.values());
        if norm_sq == 0.0 {
            return Err(StoreError::ZeroVector);
        }
        self.dim.get_or_insert(vector.dim());
        self.entries.insert(id, StoreEntry { vector, norm_sq, snapshot });
        Ok(())
    }

    /// Replaces only the snapshot, keeping the stored vector.
    pub fn refresh_snapshot(&mut self, id: DatasetId, snapshot: ListingSnapshot) -> bool {
        match self.entries.get_mut(&id) {
            Some(entry) => {
                entry.snapshot = snapshot;
                true
            }
            None => false,
        }
    }

    /// Removes `id`. Unknown ids are a no-op; returns whether anything was removed.
    pub fn remove(&mut self, id: DatasetId) -> bool {
        let removed = self.entries.remove(&id).is_some();
        if !removed {
            log::warn!("vector store: remove of unknown dataset {id} ignored");
        }
        removed
    }

    /// Top-`top_k` entries by cosine similarity, descending, ties by id ascending.
    pub fn search(&self, query: &EmbeddingVector, top_k: usize) -> Result<Vec<SearchHit>, StoreError> {
        if top_k == 0 {
            return Err(StoreError::ZeroTopK);
        }
        self.check_dim(query)?;
        let q_sq = dot(query.values(), query.values());
        if q_sq == 0.0 {
            return Err(StoreError::ZeroVector);
        }
        let mut scored: Vec<(f64, DatasetId)> = self
            .entries
            .iter()
            .map(|(id, e)| {
                let d = dot(query.values(), e.vector.values());
                (signed_cos_sq(d, q_sq, e.norm_sq), *id)
            })
            .collect();
        scored.sort_by(rank_order);
        scored.truncate(top_k);
        Ok(scored
            .into_iter()
            .map(|(key, id)| SearchHit {
                similarity: key.signum() * key.abs().sqrt(),
                listing: self.entries[&id].snapshot.clone(),
            })
            .collect())
    }
}

/// sign(d) * d^2 / (|q|^2 |v|^2), clamped to [-1, 1].
///
/// Monotone in the cosine, and a single rounded division, so vectors with equal
/// cosines get bit-identical keys whenever the products are exact.
fn signed_cos_sq(d: f64, q_sq: f64, v_sq: f64) -> f64 {
    (d.signum() * (d * d) / (q_sq * v_sq)).clamp(-1.0, 1.0)
}

/// Similarity descending, then dataset id ascending.
pub fn rank_order(a: &(f64, DatasetId), b: &(f64, DatasetId)) -> Ordering {
    b.0.total_cmp(&a.0).then(a.1.cmp(&b.1))
}
