//! Precomputed captions and embeddings read from a directory.
//!
//! Layout:
//!
//! - `captions.tsv`: header `id<TAB>caption`, one row per image id;
//! - `image_embeddings.emb`: bank file whose phrases are image ids;
//! - `text_embeddings.emb` (optional): bank file whose phrases are the texts.
//!
//! Every lookup is by key. A missing key is an error, never a silent skip.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use super::{BackendDescriptor, BackendError, CaptionProvider, ImageEmbedder, ImageRef, TextEmbedder};
use crate::bank::PhraseBank;
use crate::model::EmbeddingVector;
use crate::tsv;

pub const CAPTIONS_FILE: &str = "captions.tsv";
pub const IMAGE_EMBEDDINGS_FILE: &str = "image_embeddings.emb";
pub const TEXT_EMBEDDINGS_FILE: &str = "text_embeddings.emb";

#[derive(Debug, Clone)]
pub struct CacheBackend {
    dir: PathBuf,
    captions: HashMap<String, String>,
    images: Option<KeyedBank>,
    texts: Option<KeyedBank>,
}

#[derive(Debug, Clone)]
struct KeyedBank {
    bank: PhraseBank,
    rows: HashMap<String, usize>,
}

impl KeyedBank {
    fn open(path: &Path, expected_dim: Option<usize>) -> Result<Option<Self>, BackendError> {
        if !path.exists() {
            return Ok(None);
        }
        let bank = PhraseBank::read(path)?;
        if let Some(expected) = expected_dim {
            if bank.dim() != expected {
                return Err(BackendError::DimensionMismatch { expected, actual: bank.dim() });
            }
        }
        let mut rows = HashMap::with_capacity(bank.len());
        for (i, key) in bank.phrases().iter().enumerate() {
            rows.entry(key.clone()).or_insert(i);
        }
        Ok(Some(Self { bank, rows }))
    }

    fn lookup(&self, key: &str) -> Result<EmbeddingVector, BackendError> {
        let row = self.rows.get(key).ok_or_else(|| BackendError::MissingEntry { id: key.to_owned() })?;
        Ok(self.bank.embedding(*row))
    }
}

impl CacheBackend {
    /// Opens a cache directory. When `expected_dim` is given, embedding files
    /// of any other dimension are rejected.
    pub fn open(dir: &Path, expected_dim: Option<usize>) -> Result<Self, BackendError> {
        if !dir.is_dir() {
            return Err(BackendError::Io {
                path: dir.display().to_string(),
                source: std::io::Error::new(std::io::ErrorKind::NotFound, "cache directory not found"),
            });
        }
        let captions_path = dir.join(CAPTIONS_FILE);
        let captions = if captions_path.exists() { read_captions(&captions_path)? } else { HashMap::new() };
        Ok(Self {
            dir: dir.to_path_buf(),
            captions,
            images: KeyedBank::open(&dir.join(IMAGE_EMBEDDINGS_FILE), expected_dim)?,
            texts: KeyedBank::open(&dir.join(TEXT_EMBEDDINGS_FILE), expected_dim)?,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn caption_for(&self, id: &str) -> Result<&str, BackendError> {
        self.captions.get(id).map(String::as_str).ok_or_else(|| BackendError::MissingEntry { id: id.to_owned() })
    }

    pub fn image_embedding(&self, id: &str) -> Result<EmbeddingVector, BackendError> {
        self.images.as_ref().ok_or(BackendError::Unsupported("image embeddings (no image_embeddings.emb)"))?.lookup(id)
    }

    pub fn has_captions(&self) -> bool {
        !self.captions.is_empty()
    }

    /// Writes a cache directory: captions in the given order plus optional
    /// embedding banks.
    pub fn write(
        dir: &Path,
        captions: &[(String, String)],
        images: Option<&PhraseBank>,
        texts: Option<&PhraseBank>,
    ) -> Result<Vec<PathBuf>, BackendError> {
        fs::create_dir_all(dir).map_err(|source| BackendError::Io { path: dir.display().to_string(), source })?;
        let mut written = Vec::new();
        let path = dir.join(CAPTIONS_FILE);
        let mut out = String::from("id\tcaption\n");
        for (id, caption) in captions {
            out.push_str(&tsv::escape(id));
            out.push('\t');
            out.push_str(&tsv::escape(caption));
            out.push('\n');
        }
        fs::write(&path, out).map_err(|source| BackendError::Io { path: path.display().to_string(), source })?;
        written.push(path);
        for (bank, name) in [(images, IMAGE_EMBEDDINGS_FILE), (texts, TEXT_EMBEDDINGS_FILE)] {
            if let Some(bank) = bank {
                let path = dir.join(name);
                bank.write(&path)?;
                written.push(path);
            }
        }
        Ok(written)
    }
}

fn read_captions(path: &Path) -> Result<HashMap<String, String>, BackendError> {
    let shown = path.display().to_string();
    let content = fs::read_to_string(path).map_err(|source| BackendError::Io { path: shown.clone(), source })?;
    let format_err = |line: usize, message: &str| BackendError::CacheFormat {
        path: shown.clone(),
        message: format!("line {line}: {message}"),
    };
    let mut lines = tsv::numbered_lines(&content);
    match lines.next() {
        Some((_, "id\tcaption")) => {}
        _ => return Err(format_err(1, "expected header \"id<TAB>caption\"")),
    }
    let mut captions = HashMap::new();
    for (line, text) in lines {
        let fields = tsv::split_line(text);
        if fields.len() != 2 {
            return Err(format_err(line, &format!("expected 2 columns, found {}", fields.len())));
        }
        let id = tsv::unescape(fields[0]).ok_or_else(|| format_err(line, "bad escape"))?;
        let caption = tsv::unescape(fields[1]).ok_or_else(|| format_err(line, "bad escape"))?;
        if captions.insert(id.clone(), caption).is_some() {
            return Err(format_err(line, &format!("duplicate id {id:?}")));
        }
    }
    Ok(captions)
}

impl CaptionProvider for CacheBackend {
    fn descriptor(&self) -> BackendDescriptor {
        BackendDescriptor { name: format!("cache:{}", self.dir.display()), version: "1".into() }
    }

    fn caption_batch(&self, images: &[ImageRef<'_>]) -> Result<Vec<String>, BackendError> {
        images.iter().map(|i| self.caption_for(i.id).map(str::to_owned)).collect()
    }
}

impl ImageEmbedder for CacheBackend {
    fn name(&self) -> &str {
        "cache"
    }

    fn dim(&self) -> usize {
        self.images.as_ref().map_or(0, |b| b.bank.dim())
    }

    fn embed_images(&self, images: &[ImageRef<'_>]) -> Result<Vec<EmbeddingVector>, BackendError> {
        images.iter().map(|i| self.image_embedding(i.id)).collect()
    }
}

impl TextEmbedder for CacheBackend {
    fn name(&self) -> &str {
        "cache"
    }

    fn dim(&self) -> usize {
        self.texts.as_ref().map_or(0, |b| b.bank.dim())
    }

    fn embed_texts(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, BackendError> {
        let bank = self.texts.as_ref().ok_or(BackendError::Unsupported("text embeddings (no text_embeddings.emb)"))?;
        texts.iter().map(|t| bank.lookup(t)).collect()
    }
}
