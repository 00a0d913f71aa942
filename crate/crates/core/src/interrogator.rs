//! Phrase chaining on top of a base caption.
//!
//! This is a reconstruction of how prompt-interrogation tools enrich a
//! caption, not a replica of any one tool:
//!
//! 1. rank every bank phrase against the image embedding and keep the
//!    best `candidate_pool_k` as the pool;
//! 2. greedily, for each unused pool phrase, embed the current caption
//!    with that phrase appended and score it against the image;
//! 3. accept the best candidate if it beats the current similarity by more
//!    than `min_gain`, otherwise stop; also stop when the pool runs out or
//!    `max_phrases` have been accepted.
//!
//! Candidate ties go to the earlier pool entry. Each step re-embeds the
//! full concatenated caption.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{BackendError, TextEmbedder};
use crate::bank::{BankError, PhraseBank, ScoredPhrase};
use crate::model::{EmbeddingVector, ModelError};

#[derive(Debug, Error)]
pub enum InterrogateError {
    #[error("embedder dimension {embedder} does not match image embedding dimension {image}")]
    DimensionMismatch { embedder: usize, image: usize },
    #[error("embedding failed at step {step} for candidate {candidate:?}: {source}")]
    Embedder { step: usize, candidate: String, source: BackendError },
    #[error("embedding the base caption failed: {0}")]
    BaseCaption(#[source] BackendError),
    #[error("invalid interrogation config: {0}")]
    InvalidConfig(String),
    #[error("candidate pool is empty")]
    EmptyPool,
    #[error(transparent)]
    Bank(#[from] BankError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InterrogationConfig {
    pub candidate_pool_k: usize,
    pub max_phrases: usize,
    pub min_gain: f64,
    pub separator: String,
}

impl Default for InterrogationConfig {
    fn default() -> Self {
        Self { candidate_pool_k: 1024, max_phrases: 16, min_gain: 0.0, separator: ", ".into() }
    }
}

impl InterrogationConfig {
    pub fn validate(&self) -> Result<(), InterrogateError> {
        if self.candidate_pool_k == 0 {
            return Err(InterrogateError::InvalidConfig("candidate_pool_k must be >= 1".into()));
        }
        if !(self.min_gain >= 0.0 && self.min_gain.is_finite()) {
            return Err(InterrogateError::InvalidConfig(format!("min_gain {} must be >= 0", self.min_gain)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InterrogationResult {
    pub final_caption: String,
    pub selected: Vec<ScoredPhrase>,
    /// Similarity of the base caption alone.
    pub base_similarity: f64,
    /// Similarity after each accepted phrase.
    pub similarity_trace: Vec<f64>,
}

/// Candidate pool: the `k` bank phrases closest to the image.
pub fn rank_candidates(
    image: &EmbeddingVector,
    bank: &PhraseBank,
    k: usize,
) -> Result<Vec<ScoredPhrase>, InterrogateError> {
    Ok(bank.top_k(image, k)?)
}

/// `base` followed by the selected phrases, joined by `separator`.
pub fn compose_caption(base: &str, phrases: &[&str], separator: &str) -> String {
    let mut out = base.to_owned();
    for p in phrases {
        if !out.is_empty() {
            out.push_str(separator);
        }
        out.push_str(p);
    }
    out
}

/// Greedy phrase selection; see the module docs for the procedure.
pub fn chain_select(
    base_caption: &str,
    image: &EmbeddingVector,
    pool: &[ScoredPhrase],
    embedder: &dyn TextEmbedder,
    config: &InterrogationConfig,
) -> Result<InterrogationResult, InterrogateError> {
    config.validate()?;
    if embedder.dim() != image.dim() {
        return Err(InterrogateError::DimensionMismatch { embedder: embedder.dim(), image: image.dim() });
    }
    if config.max_phrases == 0 {
        return Ok(InterrogationResult {
            final_caption: base_caption.to_owned(),
            selected: Vec::new(),
            base_similarity: similarity(embedder, image, base_caption)?,
            similarity_trace: Vec::new(),
        });
    }
    if pool.is_empty() {
        return Err(InterrogateError::EmptyPool);
    }

    let base_similarity = similarity(embedder, image, base_caption)?;
    let mut current = base_similarity;
    let mut caption = base_caption.to_owned();
    let mut used = vec![false; pool.len()];
    let mut selected = Vec::new();
    let mut trace = Vec::new();

    while selected.len() < config.max_phrases {
        let step = selected.len() + 1;
        let open: Vec<usize> = (0..pool.len()).filter(|&i| !used[i]).collect();
        if open.is_empty() {
            break;
        }
        let texts: Vec<String> =
            open.iter().map(|&i| compose_caption(&caption, &[&pool[i].phrase], &config.separator)).collect();
        let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
        let embeddings = embed_step(embedder, &refs, &open, pool, step)?;

        let mut best: Option<(usize, f64)> = None;
        for (slot, emb) in open.iter().zip(&embeddings) {
            let sim = image.cosine(emb)?;
            // Strict comparison keeps the earliest pool entry on ties.
            if best.is_none_or(|(_, s)| sim > s) {
                best = Some((*slot, sim));
            }
        }
        let (chosen, sim) = best.expect("open is non-empty");
        if sim - current <= config.min_gain {
            break;
        }
        used[chosen] = true;
        caption = compose_caption(&caption, &[&pool[chosen].phrase], &config.separator);
        current = sim;
        selected.push(pool[chosen].clone());
        trace.push(sim);
    }

    Ok(InterrogationResult { final_caption: caption, selected, base_similarity, similarity_trace: trace })
}

/// Ranks candidates from `bank`, then chains phrases onto `base_caption`.
pub fn interrogate(
    base_caption: &str,
    image: &EmbeddingVector,
    bank: &PhraseBank,
    embedder: &dyn TextEmbedder,
    config: &InterrogationConfig,
) -> Result<InterrogationResult, InterrogateError> {
    config.validate()?;
    let k = config.candidate_pool_k.min(bank.len());
    let pool = rank_candidates(image, bank, k)?;
    chain_select(base_caption, image, &pool, embedder, config)
}

fn similarity(embedder: &dyn TextEmbedder, image: &EmbeddingVector, text: &str) -> Result<f64, InterrogateError> {
    let emb = embedder.embed_text(text).map_err(InterrogateError::BaseCaption)?;
    Ok(image.cosine(&emb)?)
}

/// Embeds one step's candidates as a batch. If the batch fails, candidates
/// are retried one at a time so the error can name the one that fails.
fn embed_step(
    embedder: &dyn TextEmbedder,
    texts: &[&str],
    open: &[usize],
    pool: &[ScoredPhrase],
    step: usize,
) -> Result<Vec<EmbeddingVector>, InterrogateError> {
    match embedder.embed_texts(texts) {
        Ok(v) if v.len() == texts.len() => Ok(v),
        Ok(v) => Err(InterrogateError::Embedder {
            step,
            candidate: "<batch>".into(),
            source: BackendError::CountMismatch { expected: texts.len(), actual: v.len() },
        }),
        Err(batch_err) => {
            let mut out = Vec::with_capacity(texts.len());
            for (text, &slot) in texts.iter().zip(open) {
                match embedder.embed_text(text) {
                    Ok(e) => out.push(e),
                    Err(source) => {
                        return Err(InterrogateError::Embedder { step, candidate: pool[slot].phrase.clone(), source })
                    }
                }
            }
            log::warn!("step {step}: batch embedding failed ({batch_err}) but every candidate succeeded alone");
            Ok(out)
        }
    }
}
