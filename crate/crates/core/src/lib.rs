//! Language-bottleneck image classification.
//!
//! Images are turned into text by an external captioner, optionally enriched
//! with phrases picked from an embedding bank, classified by a linear probe,
//! and fused at score level with an image-based classifier. The evaluation
//! side sweeps the fusion weight and aggregates accuracies over trials.
//!
//! Module map:
//!
//! - [`model`]: label spaces, probability vectors, embeddings, softmax.
//! - [`dataset`]: TSV manifests with train/dev/test splits and a seeded
//!   synthetic generator.
//! - [`bank`]: phrase/embedding bank binary format and exact top-k search.
//! - [`interrogator`]: greedy phrase chaining on top of a base caption.
//! - [`backends`]: caption and embedding providers (cache, HTTP, mock).
//! - [`probe`]: hashed text features and the softmax linear probe.
//! - [`fusion`]: score-level fusion, weight sweeps and reports.

pub mod backends;
pub mod bank;
pub mod dataset;
pub mod fusion;
mod hashing;
pub mod interrogator;
pub mod model;
pub mod probe;
mod tsv;

pub use bank::{PhraseBank, ScoredPhrase};
pub use dataset::{Example, Manifest, Split};
pub use model::{argmax, softmax, EmbeddingVector, LabelSpace, Logits, ModelError, ProbabilityVector};
