//! Shared domain types and numeric primitives.
//!
//! Everything here is immutable after construction. All arithmetic runs in
//! `f64`; only on-disk embedding payloads are narrowed to `f32`.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Distance from 1 that a probability vector's sum may have.
pub const SIMPLEX_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("degenerate vector: norm is zero")]
    DegenerateVector,
    #[error("not on the probability simplex: {0}")]
    NotOnSimplex(String),
    #[error("invalid label space: {0}")]
    InvalidLabelSpace(String),
}

/// Ordered class names for one task. Index positions never change.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct LabelSpace {
    names: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl LabelSpace {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Self, ModelError> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.len() < 2 {
            return Err(ModelError::InvalidLabelSpace(format!("need at least 2 classes, got {}", names.len())));
        }
        let mut index = HashMap::with_capacity(names.len());
        for (i, name) in names.iter().enumerate() {
            if name.is_empty() {
                return Err(ModelError::InvalidLabelSpace(format!("class {i} has an empty name")));
            }
            if index.insert(name.clone(), i).is_some() {
                return Err(ModelError::InvalidLabelSpace(format!("duplicate class name {name:?}")));
            }
        }
        Ok(Self { names, index })
    }

    /// Number of classes, `C`.
    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, index: usize) -> Option<&str> {
        self.names.get(index).map(String::as_str)
    }

    /// Case-sensitive lookup.
    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }
}

impl TryFrom<Vec<String>> for LabelSpace {
    type Error = ModelError;

    fn try_from(names: Vec<String>) -> Result<Self, Self::Error> {
        LabelSpace::new(names)
    }
}

impl From<LabelSpace> for Vec<String> {
    fn from(space: LabelSpace) -> Self {
        space.names
    }
}

/// A point on the probability simplex: the output of any classifier.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct ProbabilityVector(Vec<f64>);

impl ProbabilityVector {
    /// Validates `values` against the simplex.
    ///
    /// A sum within [`SIMPLEX_TOLERANCE`] of 1 is accepted. Drift larger than
    /// floating-point rounding noise is divided out; anything beyond the
    /// tolerance is rejected.
    pub fn new(values: Vec<f64>) -> Result<Self, ModelError> {
        if values.is_empty() {
            return Err(ModelError::NotOnSimplex("empty vector".into()));
        }
        for (i, &v) in values.iter().enumerate() {
            if !v.is_finite() || !(0.0..=1.0 + SIMPLEX_TOLERANCE).contains(&v) {
                return Err(ModelError::NotOnSimplex(format!("entry {i} = {v} outside [0, 1]")));
            }
        }
        let sum: f64 = values.iter().sum();
        let drift = (sum - 1.0).abs();
        if drift > SIMPLEX_TOLERANCE {
            return Err(ModelError::NotOnSimplex(format!("entries sum to {sum}")));
        }
        let rounding_noise = 4.0 * values.len() as f64 * f64::EPSILON;
        if drift > rounding_noise {
            let values = values.into_iter().map(|v| (v / sum).min(1.0)).collect();
            return Ok(Self(values));
        }
        Ok(Self(values))
    }

    /// Uniform distribution over `classes` entries.
    pub fn uniform(classes: usize) -> Result<Self, ModelError> {
        if classes == 0 {
            return Err(ModelError::InvalidInput("uniform over zero classes".into()));
        }
        Ok(Self(vec![1.0 / classes as f64; classes]))
    }

    /// Wraps values the caller has produced by a convex combination of
    /// simplex points. No renormalization is applied.
    pub(crate) fn from_convex_combination(values: Vec<f64>) -> Self {
        debug_assert!((values.iter().sum::<f64>() - 1.0).abs() <= SIMPLEX_TOLERANCE);
        Self(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Predicted class: the lowest index attaining the maximum.
    pub fn argmax(&self) -> usize {
        argmax(&self.0).expect("probability vectors are never empty")
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl<'de> Deserialize<'de> for ProbabilityVector {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let values = Vec::<f64>::deserialize(deserializer)?;
        ProbabilityVector::new(values).map_err(serde::de::Error::custom)
    }
}

/// Pre-softmax classifier output.
#[derive(Debug, Clone, PartialEq)]
pub struct Logits(Vec<f64>);

impl Logits {
    pub fn new(values: Vec<f64>) -> Result<Self, ModelError> {
        if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(ModelError::InvalidInput(format!("logit {i} is not finite ({v})")));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

/// A real vector in the shared image/text similarity space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self, ModelError> {
        if values.is_empty() {
            return Err(ModelError::InvalidInput("empty embedding".into()));
        }
        if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(ModelError::InvalidInput(format!("embedding entry {i} is not finite ({v})")));
        }
        Ok(Self(values))
    }

    pub fn from_f32(values: &[f32]) -> Result<Self, ModelError> {
        Self::new(values.iter().map(|&v| f64::from(v)).collect())
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &EmbeddingVector) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    /// Scales to unit Euclidean norm.
    pub fn normalize(&self) -> Result<EmbeddingVector, ModelError> {
        let norm = self.norm();
        if norm == 0.0 {
            return Err(ModelError::DegenerateVector);
        }
        Ok(Self(self.0.iter().map(|v| v / norm).collect()))
    }

    /// Cosine similarity; both vectors must be non-zero and equally sized.
    pub fn cosine(&self, other: &EmbeddingVector) -> Result<f64, ModelError> {
        if self.dim() != other.dim() {
            return Err(ModelError::InvalidInput(format!("dimension mismatch: {} vs {}", self.dim(), other.dim())));
        }
        let denom = self.norm() * other.norm();
        if denom == 0.0 {
            return Err(ModelError::DegenerateVector);
        }
        Ok(self.dot(other) / denom)
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl TryFrom<Vec<f64>> for EmbeddingVector {
    type Error = ModelError;

    fn try_from(values: Vec<f64>) -> Result<Self, Self::Error> {
        EmbeddingVector::new(values)
    }
}

impl From<EmbeddingVector> for Vec<f64> {
    fn from(v: EmbeddingVector) -> Self {
        v.0
    }
}

/// Numerically stable softmax (max subtraction).
pub fn softmax(logits: &Logits) -> Result<ProbabilityVector, ModelError> {
    let x = logits.values();
    if x.len() < 2 {
        return Err(ModelError::InvalidInput(format!("softmax needs at least 2 logits, got {}", x.len())));
    }
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(ProbabilityVector(exps.into_iter().map(|e| e / total).collect()))
}

/// Index of the maximum, lowest index on ties.
pub fn argmax(values: &[f64]) -> Result<usize, ModelError> {
    let mut iter = values.iter().enumerate();
    let (mut best, mut best_value) = match iter.next() {
        Some((i, v)) => (i, *v),
        None => return Err(ModelError::InvalidInput("argmax of an empty vector".into())),
    };
    for (i, &v) in iter {
        if v > best_value {
            best = i;
            best_value = v;
        }
    }
    Ok(best)
}

impl fmt::Display for LabelSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.names.join(","))
    }
}
