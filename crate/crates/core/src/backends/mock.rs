//! Deterministic stand-ins for the neural backends.
//!
//! [`MockEmbedder`] maps each token to a signed basis direction chosen by a
//! seeded FNV-1a hash, scales it by the token's weight (default 1.0) and
//! returns the normalized sum. Texts that share weighted tokens therefore
//! have higher cosine similarity, and the output depends only on
//! `(seed, dim, weights, text)`.

use std::collections::BTreeMap;

use super::{BackendDescriptor, BackendError, CaptionProvider, ImageEmbedder, ImageRef, TextEmbedder};
use crate::hashing::{fnv1a64, tokenize};
use crate::model::EmbeddingVector;

/// Axis returned for texts with no tokens (or whose tokens cancel out).
pub const EMPTY_TEXT_AXIS: usize = 0;

pub const MIN_MOCK_DIM: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct MockEmbedder {
    dim: usize,
    seed: u64,
    token_weights: BTreeMap<String, f64>,
}

impl MockEmbedder {
    pub fn new(dim: usize, seed: u64) -> Result<Self, BackendError> {
        if dim < MIN_MOCK_DIM {
            return Err(BackendError::DimensionMismatch { expected: MIN_MOCK_DIM, actual: dim });
        }
        Ok(Self { dim, seed, token_weights: BTreeMap::new() })
    }

    /// Tokens are matched after lowercasing.
    pub fn with_weight(mut self, token: &str, weight: f64) -> Self {
        self.token_weights.insert(token.to_lowercase(), weight);
        self
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Signed basis axis for one token.
    pub fn token_axis(&self, token: &str) -> (usize, f64) {
        let h = fnv1a64(self.seed, token.to_lowercase().as_bytes());
        let axis = (h % self.dim as u64) as usize;
        let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
        (axis, sign)
    }

    pub fn weight(&self, token: &str) -> f64 {
        self.token_weights.get(token).copied().unwrap_or(1.0)
    }

    pub fn embed(&self, text: &str) -> EmbeddingVector {
        let mut values = vec![0.0; self.dim];
        for token in tokenize(text) {
            let (axis, sign) = self.token_axis(&token);
            values[axis] += sign * self.weight(&token);
        }
        let raw = EmbeddingVector::new(values).expect("finite by construction");
        raw.normalize().unwrap_or_else(|_| {
            let mut fallback = vec![0.0; self.dim];
            fallback[EMPTY_TEXT_AXIS] = 1.0;
            EmbeddingVector::new(fallback).expect("finite")
        })
    }
}

impl TextEmbedder for MockEmbedder {
    fn name(&self) -> &str {
        "mock"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_texts(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, BackendError> {
        Ok(texts.iter().map(|t| self.embed(t)).collect())
    }
}

/// Embeds the image reference string as if it were text.
impl ImageEmbedder for MockEmbedder {
    fn name(&self) -> &str {
        "mock"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_images(&self, images: &[ImageRef<'_>]) -> Result<Vec<EmbeddingVector>, BackendError> {
        Ok(images.iter().map(|i| self.embed(i.image_ref)).collect())
    }
}

/// Captions every image as `"a photo of <image_ref>"`.
#[derive(Debug, Clone, Default)]
pub struct MockCaptioner;

impl CaptionProvider for MockCaptioner {
    fn descriptor(&self) -> BackendDescriptor {
        BackendDescriptor { name: "mock".into(), version: "1".into() }
    }

    fn caption_batch(&self, images: &[ImageRef<'_>]) -> Result<Vec<String>, BackendError> {
        Ok(images.iter().map(|i| format!("a photo of {}", i.image_ref)).collect())
    }
}
