//! Pathology-routed retrieval over per-label knowledge bases.
//!
//! For every queried label `c` the query image is embedded together with `c`,
//! each entry of base `c` is scored by cosine similarity, and the top `k`
//! entries of that base are kept (score descending, then entry index
//! ascending). The per-label lists are merged, keeping one hit per entry id
//! (the highest score; ties go to the label that comes first in canonical
//! order), and sorted by score descending then entry id ascending.

mod embed;
mod labels;
mod manifest;
mod store;

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use embed::{EmbedError, Embedder, EmbeddingVector, HttpEmbedder, TestEmbedder, DEFAULT_SEED, DEFAULT_TEST_DIMENSION};
pub use labels::{LabelError, LabelSet};
pub use manifest::{load_manifest, parse_manifest, ManifestError};
pub use store::{
    build_store, BuildError, KnowledgeBase, KnowledgeEntry, KnowledgeStore, StoreError, Triplet,
    DEFAULT_ENTRIES_PER_BASE, STORE_MAGIC, STORE_VERSION,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RetrievalError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("vector has zero norm")]
    DegenerateVector,
    #[error("store was built with {store:?} but the query embedder is {query:?}")]
    StoreMismatch { store: String, query: String },
    #[error("unknown pathology label {0:?}")]
    UnknownLabel(String),
    #[error("k must be at least 1")]
    InvalidK,
    #[error(transparent)]
    Embed(#[from] EmbedError),
}

/// Cosine similarity, clamped to [-1, 1].
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, RetrievalError> {
    if a.dimension() != b.dimension() {
        return Err(RetrievalError::DimensionMismatch {
            left: a.dimension(),
            right: b.dimension(),
        });
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(RetrievalError::DegenerateVector);
    }
    let dot: f64 = a.values().iter().zip(b.values()).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedReport {
    pub report_text: String,
    pub score: f64,
    pub pathology: String,
    pub entry_id: String,
}

pub fn retrieve<S: AsRef<str>>(
    store: &KnowledgeStore,
    image_ref: &str,
    query_labels: &[S],
    k: usize,
    embedder: &dyn Embedder,
) -> Result<Vec<RetrievedReport>, RetrievalError> {
    if k == 0 {
        return Err(RetrievalError::InvalidK);
    }
    if embedder.fingerprint() != store.fingerprint() {
        return Err(RetrievalError::StoreMismatch {
            store: store.fingerprint().to_owned(),
            query: embedder.fingerprint(),
        });
    }
    let mut routed = Vec::with_capacity(query_labels.len());
    for label in query_labels {
        let label = label.as_ref();
        let index = store
            .labels()
            .index_of(label)
            .ok_or_else(|| RetrievalError::UnknownLabel(label.to_owned()))?;
        routed.push(index);
    }
    routed.sort_unstable();
    routed.dedup();

    // entry_id -> (score, label index, entry index)
    let mut best: BTreeMap<&str, (f64, usize, usize)> = BTreeMap::new();
    for label_index in routed {
        let base = &store.bases()[label_index];
        let query = embedder.embed(image_ref, &base.pathology)?;
        let mut scored = base
            .entries
            .iter()
            .enumerate()
            .map(|(i, entry)| cosine(&query, &entry.vector).map(|s| (s, i)))
            .collect::<Result<Vec<_>, _>>()?;
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        scored.truncate(k);
        for (score, i) in scored {
            let id = base.entries[i].entry_id.as_str();
            match best.get(id) {
                // labels arrive in canonical order, so only a strictly higher score replaces
                Some((kept, ..)) if *kept >= score => {}
                _ => {
                    best.insert(id, (score, label_index, i));
                }
            }
        }
    }

    let mut out: Vec<RetrievedReport> = best
        .into_iter()
        .map(|(id, (score, label_index, i))| {
            let base = &store.bases()[label_index];
            RetrievedReport {
                report_text: base.entries[i].report_text.clone(),
                score,
                pathology: base.pathology.clone(),
                entry_id: id.to_owned(),
            }
        })
        .collect();
    out.sort_by(rank_order);
    Ok(out)
}

/// Total order used for ranked output: score descending, then entry id.
pub fn rank_order(a: &RetrievedReport, b: &RetrievedReport) -> Ordering {
    b.score.total_cmp(&a.score).then_with(|| a.entry_id.cmp(&b.entry_id))
}
