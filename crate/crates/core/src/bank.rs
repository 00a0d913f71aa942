//! Phrase banks and exact top-k similarity search.
//!
//! A bank pairs `N` phrases with an `N x D` matrix of unit-norm `f32` rows.
//! Search is brute force: with normalized rows and a normalized query the
//! maximum inner product is the cosine nearest neighbour, and a full scan
//! over ~100k rows is cheap enough that no approximate index is needed.
//!
//! On-disk layout (all little-endian):
//!
//! ```text
//! b"EMBK" | u32 version = 1 | u32 N | u32 D
//! N * D f32, row-major
//! N times: u32 byte length | UTF-8 phrase bytes
//! ```

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fs;
use std::io::{self, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::model::EmbeddingVector;

pub const BANK_MAGIC: [u8; 4] = *b"EMBK";
pub const BANK_VERSION: u32 = 1;
/// Magic, version, N and D.
pub const BANK_HEADER_LEN: usize = 16;

const ROW_NORM_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Error)]
pub enum BankError {
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("bad magic bytes {found:?}, expected \"EMBK\"")]
    BadMagic { found: [u8; 4] },
    #[error("unsupported bank version {found}, expected {BANK_VERSION}")]
    VersionMismatch { found: u32 },
    #[error("truncated payload: expected at least {expected} bytes, file has {actual}")]
    TruncatedPayload { expected: usize, actual: usize },
    #[error("phrase count mismatch: header declares {rows} rows but {trailing} bytes follow the last phrase")]
    CountMismatch { rows: usize, trailing: usize },
    #[error("phrase {index} is not valid UTF-8")]
    InvalidUtf8 { index: usize },
    #[error("row {row} is not unit-norm (norm {norm})")]
    NotNormalized { row: usize, norm: f64 },
    #[error("invalid bank: {0}")]
    Invalid(String),
    #[error("query dimension {query} does not match bank dimension {bank}")]
    DimensionMismatch { query: usize, bank: usize },
    #[error("k = {k} out of range 1..={n}")]
    KOutOfRange { k: usize, n: usize },
    #[error("degenerate query: zero norm")]
    DegenerateQuery,
}

/// Phrases ("flavors") and their unit-norm embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct PhraseBank {
    phrases: Vec<String>,
    matrix: Vec<f32>,
    dim: usize,
    /// Optional grouping ("objects", "styles", ...). Not stored on disk and
    /// never consulted by ranking.
    categories: Option<Vec<Option<String>>>,
}

impl PhraseBank {
    /// Builds a bank from an already-normalized row-major matrix.
    pub fn new(phrases: Vec<String>, matrix: Vec<f32>, dim: usize) -> Result<Self, BankError> {
        if phrases.is_empty() {
            return Err(BankError::Invalid("bank must hold at least one phrase".into()));
        }
        if dim == 0 {
            return Err(BankError::Invalid("dimension must be positive".into()));
        }
        if matrix.len() != phrases.len() * dim {
            return Err(BankError::Invalid(format!(
                "matrix has {} values, expected {} rows x {} dims",
                matrix.len(),
                phrases.len(),
                dim
            )));
        }
        if phrases.len() > u32::MAX as usize || dim > u32::MAX as usize {
            return Err(BankError::Invalid("bank too large for the u32 header".into()));
        }
        for (row, chunk) in matrix.chunks_exact(dim).enumerate() {
            let norm = chunk.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt();
            if !norm.is_finite() || (norm - 1.0).abs() > ROW_NORM_TOLERANCE {
                return Err(BankError::NotNormalized { row, norm });
            }
        }
        Ok(Self { phrases, matrix, dim, categories: None })
    }

    /// Normalizes each embedding, narrows it to `f32` and builds the bank.
    pub fn from_embeddings(phrases: Vec<String>, embeddings: &[EmbeddingVector]) -> Result<Self, BankError> {
        if phrases.len() != embeddings.len() {
            return Err(BankError::Invalid(format!("{} phrases but {} embeddings", phrases.len(), embeddings.len())));
        }
        let dim = embeddings.first().map(EmbeddingVector::dim).unwrap_or(0);
        let mut matrix = Vec::with_capacity(embeddings.len() * dim);
        for (row, e) in embeddings.iter().enumerate() {
            if e.dim() != dim {
                return Err(BankError::Invalid(format!("row {row} has dimension {}, expected {dim}", e.dim())));
            }
            let unit = e.normalize().map_err(|_| BankError::NotNormalized { row, norm: 0.0 })?;
            matrix.extend(unit.values().iter().map(|&v| v as f32));
        }
        Self::new(phrases, matrix, dim)
    }

    pub fn with_categories(mut self, categories: Vec<Option<String>>) -> Result<Self, BankError> {
        if categories.len() != self.phrases.len() {
            return Err(BankError::Invalid(format!(
                "{} categories for {} phrases",
                categories.len(),
                self.phrases.len()
            )));
        }
        self.categories = Some(categories);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.phrases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phrases.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn phrases(&self) -> &[String] {
        &self.phrases
    }

    pub fn phrase(&self, index: usize) -> &str {
        &self.phrases[index]
    }

    pub fn category(&self, index: usize) -> Option<&str> {
        self.categories.as_ref()?.get(index)?.as_deref()
    }

    pub fn row(&self, index: usize) -> &[f32] {
        &self.matrix[index * self.dim..(index + 1) * self.dim]
    }

    pub fn matrix(&self) -> &[f32] {
        &self.matrix
    }

    /// Row `index` widened to `f64`.
    pub fn embedding(&self, index: usize) -> EmbeddingVector {
        EmbeddingVector::from_f32(self.row(index)).expect("bank rows are finite")
    }

    /// Index of the first row whose phrase equals `phrase`.
    pub fn position(&self, phrase: &str) -> Option<usize> {
        self.phrases.iter().position(|p| p == phrase)
    }

    /// Size in bytes of the serialized bank.
    pub fn encoded_len(&self) -> usize {
        encoded_len(self.len(), self.dim, self.phrases.iter().map(String::len))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        out.extend_from_slice(&BANK_MAGIC);
        out.extend_from_slice(&BANK_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for v in &self.matrix {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for p in &self.phrases {
            out.extend_from_slice(&(p.len() as u32).to_le_bytes());
            out.extend_from_slice(p.as_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, BankError> {
        let mut cursor = Cursor { bytes, pos: 0 };
        let magic: [u8; 4] = cursor.take(4)?.try_into().expect("4 bytes");
        if magic != BANK_MAGIC {
            return Err(BankError::BadMagic { found: magic });
        }
        let version = cursor.u32()?;
        if version != BANK_VERSION {
            return Err(BankError::VersionMismatch { found: version });
        }
        let n = cursor.u32()? as usize;
        let dim = cursor.u32()? as usize;
        let matrix_bytes = n
            .checked_mul(dim)
            .and_then(|x| x.checked_mul(4))
            .ok_or_else(|| BankError::Invalid(format!("header declares an impossible size {n} x {dim}")))?;
        let raw = cursor.take(matrix_bytes)?;
        let matrix: Vec<f32> =
            raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        let mut phrases = Vec::with_capacity(n.min((bytes.len() - cursor.pos) / 4));
        for index in 0..n {
            let len = cursor.u32()? as usize;
            let raw = cursor.take(len)?;
            let phrase = std::str::from_utf8(raw).map_err(|_| BankError::InvalidUtf8 { index })?;
            phrases.push(phrase.to_owned());
        }
        let trailing = bytes.len() - cursor.pos;
        if trailing != 0 {
            return Err(BankError::CountMismatch { rows: n, trailing });
        }
        Self::new(phrases, matrix, dim)
    }

    pub fn write(&self, path: &Path) -> Result<(), BankError> {
        let io_err = |source| BankError::Io { path: path.display().to_string(), source };
        let mut file = fs::File::create(path).map_err(io_err)?;
        file.write_all(&self.to_bytes()).map_err(io_err)?;
        file.flush().map_err(io_err)
    }

    pub fn read(path: &Path) -> Result<Self, BankError> {
        let bytes = fs::read(path).map_err(|source| BankError::Io { path: path.display().to_string(), source })?;
        Self::from_bytes(&bytes)
    }

    /// Exact top-k by cosine similarity over the whole bank.
    pub fn top_k(&self, query: &EmbeddingVector, k: usize) -> Result<Vec<ScoredPhrase>, BankError> {
        let query = self.prepare_query(query, k)?;
        let best = scan_rows(self, &query, 0..self.len(), k);
        Ok(self.finish(best))
    }

    /// Same result as [`PhraseBank::top_k`], with rows split into `shards`
    /// contiguous ranges scanned in parallel.
    pub fn top_k_sharded(
        &self,
        query: &EmbeddingVector,
        k: usize,
        shards: usize,
    ) -> Result<Vec<ScoredPhrase>, BankError> {
        if shards == 0 {
            return Err(BankError::Invalid("shard count must be at least 1".into()));
        }
        let query = self.prepare_query(query, k)?;
        let n = self.len();
        let shards = shards.min(n);
        let per_shard = n.div_ceil(shards);
        let mut merged: Vec<Candidate> = (0..shards)
            .into_par_iter()
            .flat_map_iter(|s| {
                let start = s * per_shard;
                let end = ((s + 1) * per_shard).min(n);
                scan_rows(self, &query, start..end, k)
            })
            .collect();
        merged.sort_unstable_by(|a, b| b.cmp(a));
        merged.truncate(k);
        Ok(self.finish(merged))
    }

    fn prepare_query(&self, query: &EmbeddingVector, k: usize) -> Result<Vec<f64>, BankError> {
        if query.dim() != self.dim {
            return Err(BankError::DimensionMismatch { query: query.dim(), bank: self.dim });
        }
        if k == 0 || k > self.len() {
            return Err(BankError::KOutOfRange { k, n: self.len() });
        }
        let unit = query.normalize().map_err(|_| BankError::DegenerateQuery)?;
        Ok(unit.into_inner())
    }

    fn finish(&self, best: Vec<Candidate>) -> Vec<ScoredPhrase> {
        best.into_iter()
            .map(|c| ScoredPhrase { index: c.index, phrase: self.phrases[c.index].clone(), score: c.score })
            .collect()
    }
}

/// Serialized size of a bank with `n` rows of `dim` values and the given
/// phrase byte lengths.
pub fn encoded_len(n: usize, dim: usize, phrase_lens: impl IntoIterator<Item = usize>) -> usize {
    BANK_HEADER_LEN + n * dim * 4 + phrase_lens.into_iter().map(|l| 4 + l).sum::<usize>()
}

/// Dot product of an `f32` row with an `f64` query, accumulated in `f64`.
#[inline]
pub fn row_dot(row: &[f32], query: &[f64]) -> f64 {
    row.iter().zip(query).map(|(&a, &b)| f64::from(a) * b).sum()
}

/// One bank hit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoredPhrase {
    pub index: usize,
    pub phrase: String,
    pub score: f64,
}

/// Ordered so that `a > b` means `a` ranks ahead of `b`: higher score first,
/// then lower index.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    score: f64,
    index: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.score.total_cmp(&other.score).then_with(|| other.index.cmp(&self.index))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Best `k` rows of `rows`, sorted best first.
fn scan_rows(bank: &PhraseBank, query: &[f64], rows: std::ops::Range<usize>, k: usize) -> Vec<Candidate> {
    // Min-heap on rank: the root is the weakest candidate kept so far.
    let mut heap: BinaryHeap<std::cmp::Reverse<Candidate>> = BinaryHeap::with_capacity(k + 1);
    for index in rows {
        let candidate = Candidate { score: row_dot(bank.row(index), query), index };
        if heap.len() < k {
            heap.push(std::cmp::Reverse(candidate));
        } else if let Some(mut weakest) = heap.peek_mut() {
            if candidate > weakest.0 {
                weakest.0 = candidate;
            }
        }
    }
    let mut best: Vec<Candidate> = heap.into_iter().map(|r| r.0).collect();
    best.sort_unstable_by(|a, b| b.cmp(a));
    best
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, len: usize) -> Result<&'a [u8], BankError> {
        let end = self
            .pos
            .checked_add(len)
            .filter(|&e| e <= self.bytes.len())
            .ok_or(BankError::TruncatedPayload { expected: self.pos.saturating_add(len), actual: self.bytes.len() })?;
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32, BankError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}
