//! Uniform interfaces to the external models: captioners and image/text
//! embedders.
//!
//! Three families implement them:
//!
//! - [`cache`]: lookups into precomputed caption/embedding files,
//! - [`http`]: a JSON-over-HTTP client for models hosted out of process,
//! - [`mock`]: deterministic hashed embedders for tests and desk runs.

use std::io;

use serde::Serialize;
use thiserror::Error;

use crate::bank::BankError;
use crate::model::{EmbeddingVector, ModelError};

pub mod cache;
pub mod http;
pub mod mock;

pub use cache::CacheBackend;
pub use http::{HttpBackend, HttpConfig};
pub use mock::{MockCaptioner, MockEmbedder};

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("no cache entry for {id:?}")]
    MissingEntry { id: String },
    #[error("embedding dimension {actual} does not match configured dimension {expected}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("expected {expected} results, backend returned {actual}")]
    CountMismatch { expected: usize, actual: usize },
    #[error("request timed out after {attempts} attempt(s)")]
    Timeout { attempts: u32 },
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("HTTP {status} ({code}): {message}")]
    HttpStatus { status: u16, code: String, message: String },
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("cache file {path}: {message}")]
    CacheFormat { path: String, message: String },
    #[error(transparent)]
    Bank(#[from] BankError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("backend does not support {0}")]
    Unsupported(&'static str),
}

/// Name and version reported by a backend.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BackendDescriptor {
    pub name: String,
    pub version: String,
}

/// An image as the pipeline sees it: an example id plus an opaque reference
/// (usually a file path) the backend knows how to resolve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ImageRef<'a> {
    pub id: &'a str,
    pub image_ref: &'a str,
}

pub trait CaptionProvider: Send + Sync {
    fn descriptor(&self) -> BackendDescriptor;

    /// One caption per input, in input order.
    fn caption_batch(&self, images: &[ImageRef<'_>]) -> Result<Vec<String>, BackendError>;

    fn caption(&self, image: ImageRef<'_>) -> Result<String, BackendError> {
        let mut out = self.caption_batch(&[image])?;
        out.pop().ok_or(BackendError::CountMismatch { expected: 1, actual: 0 })
    }
}

pub trait TextEmbedder: Send + Sync {
    fn name(&self) -> &str;

    fn dim(&self) -> usize;

    /// One embedding per text, in input order.
    fn embed_texts(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, BackendError>;

    fn embed_text(&self, text: &str) -> Result<EmbeddingVector, BackendError> {
        let mut out = self.embed_texts(&[text])?;
        out.pop().ok_or(BackendError::CountMismatch { expected: 1, actual: 0 })
    }
}

pub trait ImageEmbedder: Send + Sync {
    fn name(&self) -> &str;

    fn dim(&self) -> usize;

    fn embed_images(&self, images: &[ImageRef<'_>]) -> Result<Vec<EmbeddingVector>, BackendError>;
}

/// Checks a backend batch: right count, right dimension, finite values.
pub(crate) fn validate_embeddings(
    embeddings: &[EmbeddingVector],
    expected_count: usize,
    expected_dim: usize,
) -> Result<(), BackendError> {
    if embeddings.len() != expected_count {
        return Err(BackendError::CountMismatch { expected: expected_count, actual: embeddings.len() });
    }
    if let Some(bad) = embeddings.iter().find(|e| e.dim() != expected_dim) {
        return Err(BackendError::DimensionMismatch { expected: expected_dim, actual: bad.dim() });
    }
    Ok(())
}
