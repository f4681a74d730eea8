//! Multimodal embedders: the interface, a deterministic test embedder and a remote adapter.

use std::time::Duration;

use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EmbedError {
    #[error("embedding vector is empty")]
    Empty,
    #[error("embedding has a non-finite entry at {0}")]
    NonFinite(usize),
    #[error("embedder returned dimension {found}, expected {expected}")]
    Dimension { expected: usize, found: usize },
    #[error("embedding endpoint failed: {0}")]
    Remote(String),
}

/// Fixed-length real vector with finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self, EmbedError> {
        if values.is_empty() {
            return Err(EmbedError::Empty);
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(EmbedError::NonFinite(i));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dimension(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Multiply every entry by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self, EmbedError> {
        Self::new(self.0.iter().map(|v| v * factor).collect())
    }
}

/// Joint embedding of an image and a text. The text plays the role of the
/// label concatenated to the image.
pub trait Embedder: Send + Sync {
    fn dimension(&self) -> usize;
    fn embed(&self, image_ref: &str, text: &str) -> Result<EmbeddingVector, EmbedError>;
    /// Identifies the embedding function; stores refuse queries from a different one.
    fn fingerprint(&self) -> String;
}

pub const DEFAULT_SEED: u64 = 0x0E71_A6E7;
pub const DEFAULT_TEST_DIMENSION: usize = 16;

/// Seeded SHA-256 expansion of `(image_ref, text)` into unit vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TestEmbedder {
    dimension: usize,
    seed: u64,
}

impl TestEmbedder {
    pub fn new(dimension: usize, seed: u64) -> Self {
        assert!(dimension > 0, "dimension must be positive");
        Self { dimension, seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

impl Default for TestEmbedder {
    fn default() -> Self {
        Self::new(DEFAULT_TEST_DIMENSION, DEFAULT_SEED)
    }
}

impl Embedder for TestEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, image_ref: &str, text: &str) -> Result<EmbeddingVector, EmbedError> {
        let mut prefix = Sha256::new();
        prefix.update(self.seed.to_le_bytes());
        prefix.update((image_ref.len() as u64).to_le_bytes());
        prefix.update(image_ref.as_bytes());
        prefix.update((text.len() as u64).to_le_bytes());
        prefix.update(text.as_bytes());

        let mut values = Vec::with_capacity(self.dimension);
        let mut block = 0u64;
        while values.len() < self.dimension {
            let digest = prefix.clone().chain_update(block.to_le_bytes()).finalize();
            for chunk in digest.chunks_exact(8) {
                if values.len() == self.dimension {
                    break;
                }
                let word = u64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
                // 53 random bits -> [0, 1) -> [-1, 1)
                let unit = (word >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
                values.push(unit * 2.0 - 1.0);
            }
            block += 1;
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            values[0] = 1.0;
        } else {
            values.iter_mut().for_each(|v| *v /= norm);
        }
        EmbeddingVector::new(values)
    }

    fn fingerprint(&self) -> String {
        format!("sha256-test-embedder/v1:dim={}:seed={}", self.dimension, self.seed)
    }
}

/// Remote embedder: `POST <url>` with `{"model","image","text"}`, expects `{"embedding":[...]}`.
pub struct HttpEmbedder {
    url: String,
    model: String,
    dimension: usize,
    client: reqwest::blocking::Client,
}

impl HttpEmbedder {
    pub fn new(url: impl Into<String>, model: impl Into<String>, dimension: usize, timeout_ms: u64) -> Result<Self, EmbedError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(timeout_ms))
            .build()
            .map_err(|e| EmbedError::Remote(e.to_string()))?;
        Ok(Self {
            url: url.into(),
            model: model.into(),
            dimension,
            client,
        })
    }
}

impl Embedder for HttpEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, image_ref: &str, text: &str) -> Result<EmbeddingVector, EmbedError> {
        let body = json!({"model": self.model, "image": image_ref, "text": text});
        let response = self
            .client
            .post(&self.url)
            .json(&body)
            .send()
            .map_err(|e| EmbedError::Remote(e.to_string()))?;
        if !response.status().is_success() {
            return Err(EmbedError::Remote(format!("HTTP {}", response.status())));
        }
        let value: Value = response.json().map_err(|e| EmbedError::Remote(e.to_string()))?;
        let values = value
            .get("embedding")
            .and_then(Value::as_array)
            .ok_or_else(|| EmbedError::Remote("response lacks \"embedding\" array".into()))?
            .iter()
            .map(|v| v.as_f64().ok_or_else(|| EmbedError::Remote("non-numeric embedding entry".into())))
            .collect::<Result<Vec<f64>, _>>()?;
        if values.len() != self.dimension {
            return Err(EmbedError::Dimension {
                expected: self.dimension,
                found: values.len(),
            });
        }
        EmbeddingVector::new(values)
    }

    fn fingerprint(&self) -> String {
        format!("http:{}#{}:dim={}", self.url, self.model, self.dimension)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn test_embedder_is_deterministic_unit_norm() {
        let e = TestEmbedder::default();
        let a = e.embed("img/f1.png", "Edema").unwrap();
        assert_eq!(a, e.embed("img/f1.png", "Edema").unwrap());
        assert_eq!(a.dimension(), 16);
        assert!((a.norm() - 1.0).abs() < 1e-12);
        assert_ne!(a, e.embed("img/f1.png", "Pneumonia").unwrap());
        // the split point between image and text matters
        assert_ne!(e.embed("ab", "c").unwrap(), e.embed("a", "bc").unwrap());
    }

    #[test]
    fn seed_and_dimension_change_output() {
        let a = TestEmbedder::new(16, 1).embed("x", "y").unwrap();
        let b = TestEmbedder::new(16, 2).embed("x", "y").unwrap();
        assert_ne!(a, b);
        assert_eq!(TestEmbedder::new(37, 1).embed("x", "y").unwrap().dimension(), 37);
        assert_ne!(TestEmbedder::new(16, 1).fingerprint(), TestEmbedder::new(16, 2).fingerprint());
    }

    #[test]
    fn vector_validation() {
        assert_eq!(EmbeddingVector::new(vec![]), Err(EmbedError::Empty));
        assert_eq!(EmbeddingVector::new(vec![1.0, f64::NAN]), Err(EmbedError::NonFinite(1)));
    }
}
