//! Softmax linear probe over frozen features.
//!
//! Features come either from [`featurize_text`] (a signed hashed bag of
//! unigrams and bigrams standing in for a frozen text encoder) or from
//! precomputed embeddings. The probe is `softmax(W x + b)` trained on mean
//! cross-entropy with mini-batch Adam, starting from `W = 0, b = 0` so the
//! initial loss is exactly `ln C`.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Example;
use crate::hashing::{fnv1a64, tokenize};
use crate::model::{softmax, EmbeddingVector, LabelSpace, Logits, ModelError, ProbabilityVector};

pub const DEFAULT_TEXT_FEATURES: usize = 32_768;
pub const MIN_TEXT_FEATURES: usize = 256;
const FEATURE_HASH_SEED: u64 = 0x6c62_6d5f_6665_6174;

pub const PROBE_MAGIC: [u8; 4] = *b"LPRB";
pub const PROBE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error("feature dimension {actual} does not match probe dimension {expected}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("feature dimension {0} must be a power of two >= {MIN_TEXT_FEATURES}")]
    BadFeatureDim(usize),
    #[error("training data is empty")]
    EmptyData,
    #[error("label {label} outside 0..{classes}")]
    InvalidLabel { label: usize, classes: usize },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("loss diverged (non-finite) at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("bad probe magic {found:?}, expected \"LPRB\"")]
    BadMagic { found: [u8; 4] },
    #[error("unsupported probe version {0}")]
    VersionMismatch(u32),
    #[error("truncated probe file: expected {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("bad probe header: {0}")]
    BadHeader(String),
    #[error("{examples} examples but {embeddings} embeddings")]
    CountMismatch { examples: usize, embeddings: usize },
    #[error("example {id:?} has no caption")]
    MissingCaption { id: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Sparse feature vector: strictly increasing indices with their values.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    dim: usize,
    indices: Vec<u32>,
    values: Vec<f64>,
}

impl FeatureVector {
    pub fn from_dense(values: &[f64]) -> Result<Self, ProbeError> {
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(ModelError::InvalidInput(format!("non-finite feature {v}")).into());
        }
        let (indices, nonzero) =
            values.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(i, v)| (i as u32, *v)).unzip();
        Ok(Self { dim: values.len(), indices, values: nonzero })
    }

    pub fn from_embedding(embedding: &EmbeddingVector) -> Self {
        Self::from_dense(embedding.values()).expect("embeddings are finite")
    }

    /// Entries with repeated indices are summed.
    pub fn from_sparse(dim: usize, entries: impl IntoIterator<Item = (u32, f64)>) -> Result<Self, ProbeError> {
        let mut merged: BTreeMap<u32, f64> = BTreeMap::new();
        for (i, v) in entries {
            if i as usize >= dim {
                return Err(ModelError::InvalidInput(format!("feature index {i} outside 0..{dim}")).into());
            }
            if !v.is_finite() {
                return Err(ModelError::InvalidInput(format!("non-finite feature {v}")).into());
            }
            *merged.entry(i).or_insert(0.0) += v;
        }
        let (indices, values) = merged.into_iter().filter(|(_, v)| *v != 0.0).unzip();
        Ok(Self { dim, indices, values })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices.iter().zip(&self.values).map(|(&i, &v)| (i as usize, v))
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for (i, v) in self.iter() {
            out[i] = v;
        }
        out
    }

    /// The all-zero vector, e.g. the features of an empty text.
    pub fn is_degenerate(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &FeatureVector) -> f64 {
        let (mut a, mut b, mut acc) = (0, 0, 0.0);
        while a < self.indices.len() && b < other.indices.len() {
            match self.indices[a].cmp(&other.indices[b]) {
                std::cmp::Ordering::Less => a += 1,
                std::cmp::Ordering::Greater => b += 1,
                std::cmp::Ordering::Equal => {
                    acc += self.values[a] * other.values[b];
                    a += 1;
                    b += 1;
                }
            }
        }
        acc
    }

    pub fn cosine(&self, other: &FeatureVector) -> f64 {
        let denom = self.norm() * other.norm();
        if denom == 0.0 {
            0.0
        } else {
            self.dot(other) / denom
        }
    }

    fn dot_dense(&self, row: &[f64]) -> f64 {
        self.iter().map(|(i, v)| row[i] * v).sum()
    }
}

/// Signed hashed bag of word unigrams and bigrams, L2-normalized.
///
/// `dim` must be a power of two of at least 256. Empty text yields the
/// zero vector, reported by [`FeatureVector::is_degenerate`].
pub fn featurize_text(text: &str, dim: usize) -> Result<FeatureVector, ProbeError> {
    if dim < MIN_TEXT_FEATURES || !dim.is_power_of_two() {
        return Err(ProbeError::BadFeatureDim(dim));
    }
    let tokens = tokenize(text);
    let mask = dim as u64 - 1;
    let mut entries = Vec::with_capacity(tokens.len() * 2);
    let mut push = |key: String| {
        let h = fnv1a64(FEATURE_HASH_SEED, key.as_bytes());
        let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
        entries.push(((h & mask) as u32, sign));
    };
    for t in &tokens {
        push(format!("u\u{1}{t}"));
    }
    for pair in tokens.windows(2) {
        push(format!("b\u{1}{}\u{1}{}", pair[0], pair[1]));
    }
    let raw = FeatureVector::from_sparse(dim, entries)?;
    let norm = raw.norm();
    if norm == 0.0 {
        return Ok(FeatureVector { dim, indices: Vec::new(), values: Vec::new() });
    }
    Ok(FeatureVector { values: raw.values.iter().map(|v| v / norm).collect(), ..raw })
}

/// Hashed caption features for each example. Every example must carry a
/// caption.
pub fn text_samples(examples: &[Example], dim: usize) -> Result<Vec<Sample>, ProbeError> {
    examples
        .iter()
        .map(|e| {
            let caption = e.caption.as_deref().ok_or_else(|| ProbeError::MissingCaption { id: e.id.clone() })?;
            Ok(Sample { features: featurize_text(caption, dim)?, label: e.label })
        })
        .collect()
}

/// Pairs each example with its embedding as dense features.
pub fn embedding_samples(examples: &[Example], embeddings: &[EmbeddingVector]) -> Result<Vec<Sample>, ProbeError> {
    if examples.len() != embeddings.len() {
        return Err(ProbeError::CountMismatch { examples: examples.len(), embeddings: embeddings.len() });
    }
    Ok(examples
        .iter()
        .zip(embeddings)
        .map(|(e, v)| Sample { features: FeatureVector::from_embedding(v), label: e.label })
        .collect())
}

/// One labeled training or evaluation instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: FeatureVector,
    pub label: usize,
}

/// Training hyperparameters. Defaults: Adam, learning rate 1e-4,
/// mini-batch 128, 30 epochs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 128,
            epochs: 30,
            seed: 0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ProbeError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(ProbeError::InvalidConfig(format!("learning_rate {} must be > 0", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(ProbeError::InvalidConfig("batch_size must be >= 1".into()));
        }
        if self.epochs == 0 {
            return Err(ProbeError::InvalidConfig("epochs must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(ProbeError::InvalidConfig("Adam betas must lie in [0, 1)".into()));
        }
        if self.adam_eps.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
            return Err(ProbeError::InvalidConfig("adam_eps must be > 0".into()));
        }
        Ok(())
    }
}

/// `softmax(W x + b)` with `W` stored row-major as `C x F`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProbe {
    label_space: LabelSpace,
    features: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
    /// Recipe that produced the parameters, if trained here.
    config: Option<TrainConfig>,
}

impl LinearProbe {
    pub fn zeros(label_space: LabelSpace, features: usize) -> Self {
        let c = label_space.len();
        Self { label_space, features, weights: vec![0.0; c * features], bias: vec![0.0; c], config: None }
    }

    pub fn from_parts(
        label_space: LabelSpace,
        features: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
    ) -> Result<Self, ProbeError> {
        let c = label_space.len();
        if weights.len() != c * features || bias.len() != c {
            return Err(ProbeError::InvalidConfig(format!(
                "parameter shapes {}+{} do not match {c} x {features}",
                weights.len(),
                bias.len()
            )));
        }
        if weights.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(ModelError::InvalidInput("non-finite probe parameter".into()).into());
        }
        Ok(Self { label_space, features, weights, bias, config: None })
    }

    pub fn label_space(&self) -> &LabelSpace {
        &self.label_space
    }

    pub fn classes(&self) -> usize {
        self.label_space.len()
    }

    pub fn features(&self) -> usize {
        self.features
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn config(&self) -> Option<&TrainConfig> {
        self.config.as_ref()
    }

    /// Flat parameter access: weights first, then bias.
    fn param_mut(&mut self, p: usize) -> &mut f64 {
        let n = self.weights.len();
        if p < n {
            &mut self.weights[p]
        } else {
            &mut self.bias[p - n]
        }
    }

    fn check_dim(&self, x: &FeatureVector) -> Result<(), ProbeError> {
        if x.dim() != self.features {
            return Err(ProbeError::DimensionMismatch { expected: self.features, actual: x.dim() });
        }
        Ok(())
    }

    fn raw_logits(&self, x: &FeatureVector) -> Vec<f64> {
        self.weights.chunks_exact(self.features).zip(&self.bias).map(|(row, b)| x.dot_dense(row) + b).collect()
    }

    pub fn logits(&self, x: &FeatureVector) -> Result<Logits, ProbeError> {
        self.check_dim(x)?;
        Ok(Logits::new(self.raw_logits(x))?)
    }

    pub fn forward(&self, x: &FeatureVector) -> Result<ProbabilityVector, ProbeError> {
        Ok(softmax(&self.logits(x)?)?)
    }

    pub fn predict(&self, x: &FeatureVector) -> Result<usize, ProbeError> {
        Ok(self.forward(x)?.argmax())
    }

    /// Fraction of `samples` predicted correctly.
    pub fn accuracy(&self, samples: &[Sample]) -> Result<f64, ProbeError> {
        if samples.is_empty() {
            return Err(ProbeError::EmptyData);
        }
        let mut correct = 0usize;
        for s in samples {
            if self.predict(&s.features)? == s.label {
                correct += 1;
            }
        }
        Ok(correct as f64 / samples.len() as f64)
    }
}

/// Gradient of the mean cross-entropy, shaped like the probe parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

fn log_sum_exp(x: &[f64]) -> f64 {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + x.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Mean cross-entropy of `batch` under `probe`.
pub fn loss(probe: &LinearProbe, batch: &[Sample]) -> Result<f64, ProbeError> {
    let refs: Vec<&Sample> = batch.iter().collect();
    check_batch(probe, &refs)?;
    let total: f64 = refs
        .iter()
        .map(|s| {
            let z = probe.raw_logits(&s.features);
            log_sum_exp(&z) - z[s.label]
        })
        .sum();
    Ok(total / refs.len() as f64)
}

/// Mean cross-entropy and its analytic gradient.
///
/// For logits `z = W x + b` and target `y`, the per-example gradient is
/// `(softmax(z) - onehot(y)) x^T` for `W` and `softmax(z) - onehot(y)` for
/// `b`; the batch gradient is their mean.
pub fn loss_and_gradient(probe: &LinearProbe, batch: &[Sample]) -> Result<(f64, Gradient), ProbeError> {
    let refs: Vec<&Sample> = batch.iter().collect();
    loss_and_gradient_refs(probe, &refs)
}

fn check_batch(probe: &LinearProbe, batch: &[&Sample]) -> Result<(), ProbeError> {
    if batch.is_empty() {
        return Err(ProbeError::EmptyData);
    }
    for s in batch {
        probe.check_dim(&s.features)?;
        if s.label >= probe.classes() {
            return Err(ProbeError::InvalidLabel { label: s.label, classes: probe.classes() });
        }
    }
    Ok(())
}

fn loss_and_gradient_refs(probe: &LinearProbe, batch: &[&Sample]) -> Result<(f64, Gradient), ProbeError> {
    check_batch(probe, batch)?;
    let c = probe.classes();
    let f = probe.features;
    let mut grad = Gradient { weights: vec![0.0; c * f], bias: vec![0.0; c] };
    let mut total = 0.0;
    let scale = 1.0 / batch.len() as f64;
    for s in batch {
        let z = probe.raw_logits(&s.features);
        let lse = log_sum_exp(&z);
        total += lse - z[s.label];
        for (k, zk) in z.iter().enumerate() {
            let delta = (zk - lse).exp() - if k == s.label { 1.0 } else { 0.0 };
            grad.bias[k] += delta * scale;
            let row = &mut grad.weights[k * f..(k + 1) * f];
            for (i, v) in s.features.iter() {
                row[i] += delta * v * scale;
            }
        }
    }
    Ok((total * scale, grad))
}

/// Largest relative error between the analytic gradient and central finite
/// differences with step `1e-5`, over every parameter.
///
/// Relative error is `|a - n| / max(|a| + |n|, 1e-6)`; the floor keeps
/// parameters whose true gradient is zero from dividing by zero.
pub fn grad_check(probe: &LinearProbe, batch: &[Sample]) -> Result<f64, ProbeError> {
    const H: f64 = 1e-5;
    let (_, analytic) = loss_and_gradient(probe, batch)?;
    let mut worst: f64 = 0.0;
    let mut perturbed = probe.clone();
    let n_weights = probe.weights.len();
    for p in 0..n_weights + probe.bias.len() {
        let original = *perturbed.param_mut(p);
        *perturbed.param_mut(p) = original + H;
        let up = loss(&perturbed, batch)?;
        *perturbed.param_mut(p) = original - H;
        let down = loss(&perturbed, batch)?;
        *perturbed.param_mut(p) = original;
        let numeric = (up - down) / (2.0 * H);
        let a = if p < n_weights { analytic.weights[p] } else { analytic.bias[p - n_weights] };
        let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean cross-entropy over the epoch's batches, measured before each
    /// update.
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub dev_accuracy: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub probe: LinearProbe,
    pub history: Vec<EpochMetrics>,
}

/// Mini-batch Adam on mean cross-entropy from a zero initialization.
///
/// Examples are reshuffled every epoch by a ChaCha8 generator seeded with
/// `config.seed`; the last partial batch is kept. The loop is sequential,
/// so the result is bit-identical for identical inputs.
pub fn train(
    label_space: &LabelSpace,
    data: &[Sample],
    dev: Option<&[Sample]>,
    config: &TrainConfig,
) -> Result<TrainOutcome, ProbeError> {
    config.validate()?;
    let first = data.first().ok_or(ProbeError::EmptyData)?;
    let features = first.features.dim();
    let mut probe = LinearProbe::zeros(label_space.clone(), features);
    let all: Vec<&Sample> = data.iter().collect();
    check_batch(&probe, &all)?;
    if let Some(dev) = dev {
        check_batch(&probe, &dev.iter().collect::<Vec<_>>())?;
    }

    let mut m_w = vec![0.0; probe.weights.len()];
    let mut v_w = vec![0.0; probe.weights.len()];
    let mut m_b = vec![0.0; probe.bias.len()];
    let mut v_b = vec![0.0; probe.bias.len()];
    let (beta1, beta2) = (config.adam_beta1, config.adam_beta2);
    let mut step: i32 = 0;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (batch_no, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &data[i]).collect();
            let (batch_loss, grad) = loss_and_gradient_refs(&probe, &batch)?;
            if !batch_loss.is_finite() {
                return Err(ProbeError::Diverged { epoch, batch: batch_no + 1 });
            }
            epoch_loss += batch_loss * batch.len() as f64;

            step += 1;
            let correction1 = 1.0 - beta1.powi(step);
            let correction2 = 1.0 - beta2.powi(step);
            let update = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
                for j in 0..p.len() {
                    m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
                    v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
                    let m_hat = m[j] / correction1;
                    let v_hat = v[j] / correction2;
                    p[j] -= config.learning_rate * m_hat / (v_hat.sqrt() + config.adam_eps);
                }
            };
            update(&mut probe.weights, &grad.weights, &mut m_w, &mut v_w);
            update(&mut probe.bias, &grad.bias, &mut m_b, &mut v_b);
            if probe.weights.iter().chain(&probe.bias).any(|v| !v.is_finite()) {
                return Err(ProbeError::Diverged { epoch, batch: batch_no + 1 });
            }
        }
        history.push(EpochMetrics {
            epoch,
            train_loss: epoch_loss / data.len() as f64,
            train_accuracy: probe.accuracy(data)?,
            dev_accuracy: match dev {
                Some(d) if !d.is_empty() => Some(probe.accuracy(d)?),
                _ => None,
            },
        });
    }
    probe.config = Some(config.clone());
    Ok(TrainOutcome { probe, history })
}

#[derive(Debug, Serialize, Deserialize)]
struct ProbeHeader {
    classes: usize,
    features: usize,
    label_names: Vec<String>,
    config: Option<TrainConfig>,
    seed: Option<u64>,
}

impl LinearProbe {
    /// Layout: `b"LPRB" | u32 version | u32 header length | JSON header |
    /// f32 W (C x F, row-major) | f32 b (C)`, little-endian throughout.
    /// Parameters are narrowed to `f32`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = ProbeHeader {
            classes: self.classes(),
            features: self.features,
            label_names: self.label_space.names().to_vec(),
            config: self.config.clone(),
            seed: self.config.as_ref().map(|c| c.seed),
        };
        let header = serde_json::to_vec(&header).expect("serializable header");
        let mut out = Vec::with_capacity(12 + header.len() + 4 * (self.weights.len() + self.bias.len()));
        out.extend_from_slice(&PROBE_MAGIC);
        out.extend_from_slice(&PROBE_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for v in self.weights.iter().chain(&self.bias) {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ProbeError> {
        let need = |expected: usize| {
            if bytes.len() < expected {
                Err(ProbeError::Truncated { expected, actual: bytes.len() })
            } else {
                Ok(())
            }
        };
        need(12)?;
        let magic: [u8; 4] = bytes[0..4].try_into().expect("4 bytes");
        if magic != PROBE_MAGIC {
            return Err(ProbeError::BadMagic { found: magic });
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != PROBE_VERSION {
            return Err(ProbeError::VersionMismatch(version));
        }
        let header_len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
        need(12 + header_len)?;
        let header: ProbeHeader =
            serde_json::from_slice(&bytes[12..12 + header_len]).map_err(|e| ProbeError::BadHeader(e.to_string()))?;
        let label_space = LabelSpace::new(header.label_names).map_err(|e| ProbeError::BadHeader(e.to_string()))?;
        if label_space.len() != header.classes {
            return Err(ProbeError::BadHeader(format!(
                "{} label names for {} classes",
                label_space.len(),
                header.classes
            )));
        }
        let params = header.classes * (header.features + 1);
        let expected = 12 + header_len + 4 * params;
        need(expected)?;
        if bytes.len() != expected {
            return Err(ProbeError::BadHeader(format!("{} trailing bytes after parameters", bytes.len() - expected)));
        }
        let values: Vec<f64> = bytes[12 + header_len..]
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
            .collect();
        let split = header.classes * header.features;
        let mut probe =
            LinearProbe::from_parts(label_space, header.features, values[..split].to_vec(), values[split..].to_vec())?;
        probe.config = header.config;
        Ok(probe)
    }

    pub fn write(&self, path: &Path) -> Result<(), ProbeError> {
        fs::write(path, self.to_bytes()).map_err(|source| ProbeError::Io { path: path.display().to_string(), source })
    }

    pub fn read(path: &Path) -> Result<Self, ProbeError> {
        let bytes = fs::read(path).map_err(|source| ProbeError::Io { path: path.display().to_string(), source })?;
        Self::from_bytes(&bytes)
    }
}
