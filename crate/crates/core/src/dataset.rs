//! Dataset manifests and the synthetic generator.
//!
//! A task lives in one directory as:
//!
//! - `<task>.labels`: class names, one per line, in index order;
//! - `<task>.<split>.tsv` for `train`, `dev` and `test`, with header
//!   `id<TAB>image_ref<TAB>caption<TAB>label`.
//!
//! The caption column may be empty (images not captioned yet). Labels are
//! class names matched case-sensitively. Fields use the backslash escapes
//! `\\`, `\t`, `\n` and `\r`.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::cache::CacheBackend;
use crate::backends::mock::MockEmbedder;
use crate::backends::BackendError;
use crate::bank::{BankError, PhraseBank};
use crate::model::{EmbeddingVector, LabelSpace, ModelError};
use crate::tsv;

pub const MANIFEST_HEADER: &str = "id\timage_ref\tcaption\tlabel";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("manifest file not found: {path}")]
    MissingFile { path: String },
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("{path}:1: bad header {found:?}, expected \"id<TAB>image_ref<TAB>caption<TAB>label\"")]
    BadHeader { path: String, found: String },
    #[error("{path}:{line}: malformed row, expected 4 columns, found {found}")]
    MalformedRow { path: String, line: usize, found: usize },
    #[error("{path}:{line}: invalid escape sequence")]
    BadEscape { path: String, line: usize },
    #[error("{path}:{line}: unknown label {label:?}")]
    UnknownLabel { path: String, line: usize, label: String },
    #[error("{path}:{line}: duplicate id {id:?}")]
    DuplicateId { path: String, line: usize, id: String },
    #[error("{path}:{line}: empty id")]
    EmptyId { path: String, line: usize },
    #[error("invalid manifest: {0}")]
    Invalid(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Bank(#[from] BankError),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(DatasetError::Invalid(format!("unknown split {other:?}"))),
        }
    }
}

/// One image with its optional caption and gold label index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub id: String,
    pub image_ref: String,
    /// `None` until a captioner has run. Empty captions read back as `None`.
    pub caption: Option<String>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    task_name: String,
    label_space: LabelSpace,
    train: Vec<Example>,
    dev: Vec<Example>,
    test: Vec<Example>,
}

impl Manifest {
    pub fn new(
        task_name: impl Into<String>,
        label_space: LabelSpace,
        train: Vec<Example>,
        dev: Vec<Example>,
        test: Vec<Example>,
    ) -> Result<Self, DatasetError> {
        let task_name = task_name.into();
        if task_name.is_empty() || task_name.contains(['/', '\\', '\t', '\n']) {
            return Err(DatasetError::Invalid(format!("bad task name {task_name:?}")));
        }
        for (split, examples) in [(Split::Train, &train), (Split::Dev, &dev), (Split::Test, &test)] {
            validate_split(split, examples, &label_space)?;
        }
        Ok(Self { task_name, label_space, train, dev, test })
    }

    pub fn task_name(&self) -> &str {
        &self.task_name
    }

    pub fn label_space(&self) -> &LabelSpace {
        &self.label_space
    }

    pub fn split(&self, split: Split) -> &[Example] {
        match split {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Test => &self.test,
        }
    }

    pub fn split_mut(&mut self, split: Split) -> &mut Vec<Example> {
        match split {
            Split::Train => &mut self.train,
            Split::Dev => &mut self.dev,
            Split::Test => &mut self.test,
        }
    }

    /// Example counts for train, dev and test.
    pub fn counts(&self) -> [usize; 3] {
        [self.train.len(), self.dev.len(), self.test.len()]
    }

    /// Empty train or test splits. An empty dev split is allowed.
    pub fn warnings(&self) -> Vec<String> {
        [Split::Train, Split::Test]
            .into_iter()
            .filter(|s| self.split(*s).is_empty())
            .map(|s| format!("{} split of task {:?} is empty", s, self.task_name))
            .collect()
    }
}

fn validate_split(split: Split, examples: &[Example], labels: &LabelSpace) -> Result<(), DatasetError> {
    let mut seen = HashSet::with_capacity(examples.len());
    for e in examples {
        if e.label >= labels.len() {
            return Err(DatasetError::Invalid(format!(
                "{split} example {:?} has label {} outside 0..{}",
                e.id,
                e.label,
                labels.len()
            )));
        }
        if !seen.insert(e.id.as_str()) {
            return Err(DatasetError::Invalid(format!("{split} split repeats id {:?}", e.id)));
        }
    }
    Ok(())
}

pub fn split_path(dir: &Path, task: &str, split: Split) -> PathBuf {
    dir.join(format!("{task}.{split}.tsv"))
}

pub fn labels_path(dir: &Path, task: &str) -> PathBuf {
    dir.join(format!("{task}.labels"))
}

pub fn embeddings_path(dir: &Path, task: &str, split: Split) -> PathBuf {
    dir.join(format!("{task}.{split}.emb"))
}

pub fn flavors_path(dir: &Path, task: &str) -> PathBuf {
    dir.join(format!("{task}.flavors.emb"))
}

fn read_text(path: &Path) -> Result<String, DatasetError> {
    fs::read_to_string(path).map_err(|source| {
        if source.kind() == io::ErrorKind::NotFound {
            DatasetError::MissingFile { path: path.display().to_string() }
        } else {
            DatasetError::Io { path: path.display().to_string(), source }
        }
    })
}

fn write_text(path: &Path, content: &str) -> Result<(), DatasetError> {
    fs::write(path, content).map_err(|source| DatasetError::Io { path: path.display().to_string(), source })
}

pub fn read_label_space(path: &Path) -> Result<LabelSpace, DatasetError> {
    let content = read_text(path)?;
    let names: Vec<&str> = tsv::numbered_lines(&content).map(|(_, l)| l).collect();
    Ok(LabelSpace::new(names)?)
}

pub fn write_label_space(path: &Path, labels: &LabelSpace) -> Result<(), DatasetError> {
    let mut out = String::new();
    for name in labels.names() {
        out.push_str(name);
        out.push('\n');
    }
    write_text(path, &out)
}

/// Reads one split file, validating every row against `labels`.
pub fn read_split(path: &Path, labels: &LabelSpace) -> Result<Vec<Example>, DatasetError> {
    let content = read_text(path)?;
    let shown = path.display().to_string();
    let mut lines = tsv::numbered_lines(&content);
    match lines.next() {
        Some((_, h)) if h == MANIFEST_HEADER => {}
        Some((_, h)) => return Err(DatasetError::BadHeader { path: shown, found: h.to_owned() }),
        None => return Err(DatasetError::BadHeader { path: shown, found: String::new() }),
    }
    let mut examples = Vec::new();
    let mut seen = HashSet::new();
    for (line, text) in lines {
        let fields = tsv::split_line(text);
        if fields.len() != 4 {
            return Err(DatasetError::MalformedRow { path: shown, line, found: fields.len() });
        }
        let field =
            |i: usize| tsv::unescape(fields[i]).ok_or_else(|| DatasetError::BadEscape { path: shown.clone(), line });
        let id = field(0)?;
        if id.is_empty() {
            return Err(DatasetError::EmptyId { path: shown, line });
        }
        let image_ref = field(1)?;
        let caption = field(2)?;
        let label_name = field(3)?;
        let label = labels.index_of(&label_name).ok_or_else(|| DatasetError::UnknownLabel {
            path: shown.clone(),
            line,
            label: label_name.clone(),
        })?;
        if !seen.insert(id.clone()) {
            return Err(DatasetError::DuplicateId { path: shown, line, id });
        }
        examples.push(Example { id, image_ref, caption: (!caption.is_empty()).then_some(caption), label });
    }
    Ok(examples)
}

pub fn write_split(path: &Path, examples: &[Example], labels: &LabelSpace) -> Result<(), DatasetError> {
    let mut out = String::with_capacity(64 * (examples.len() + 1));
    out.push_str(MANIFEST_HEADER);
    out.push('\n');
    for e in examples {
        let label = labels.name(e.label).ok_or_else(|| {
            DatasetError::Invalid(format!("example {:?} has label {} outside the label space", e.id, e.label))
        })?;
        for (i, field) in
            [e.id.as_str(), e.image_ref.as_str(), e.caption.as_deref().unwrap_or(""), label].into_iter().enumerate()
        {
            if i > 0 {
                out.push('\t');
            }
            out.push_str(&tsv::escape(field));
        }
        out.push('\n');
    }
    write_text(path, &out)
}

/// Loads `<task>.{train,dev,test}.tsv` from `dir`.
pub fn load_manifest(dir: &Path, task: &str, labels: &LabelSpace) -> Result<Manifest, DatasetError> {
    let mut splits = Vec::with_capacity(3);
    for split in Split::ALL {
        splits.push(read_split(&split_path(dir, task, split), labels)?);
    }
    let test = splits.pop().expect("3 splits");
    let dev = splits.pop().expect("3 splits");
    let train = splits.pop().expect("3 splits");
    let manifest = Manifest::new(task, labels.clone(), train, dev, test)?;
    for warning in manifest.warnings() {
        log::warn!("{warning}");
    }
    Ok(manifest)
}

/// Writes the label file and all three split files; returns their paths.
pub fn write_manifest(manifest: &Manifest, dir: &Path) -> Result<Vec<PathBuf>, DatasetError> {
    fs::create_dir_all(dir).map_err(|source| DatasetError::Io { path: dir.display().to_string(), source })?;
    let labels = labels_path(dir, manifest.task_name());
    write_label_space(&labels, manifest.label_space())?;
    let mut written = vec![labels];
    for split in Split::ALL {
        let path = split_path(dir, manifest.task_name(), split);
        write_split(&path, manifest.split(split), manifest.label_space())?;
        written.push(path);
    }
    Ok(written)
}

/// Parameters of the synthetic dataset.
///
/// Each split holds `n_per_class` examples of every class, interleaved by
/// class. Every example gets two independent corruptions, each with
/// probability `noise`:
///
/// - the caption `"a scene with {class_token} and {distractor}"` uses the
///   token of a uniformly drawn class instead of the true one;
/// - the image embedding is drawn around a uniformly drawn class centroid
///   instead of the true one.
///
/// Centroids are the mock text embeddings of the class tokens, so images,
/// captions and the generated phrase bank share one similarity space.
/// With `noise = 0` the clusters are linearly separable; with `noise = 1`
/// neither modality carries any label signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub task_name: String,
    pub seed: u64,
    pub classes: usize,
    pub n_per_class: usize,
    pub noise: f64,
    pub dim: usize,
    /// Seed of the mock embedder defining the shared space.
    pub embed_seed: u64,
    /// Standard deviation of the isotropic cluster spread (total norm).
    pub spread: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            task_name: "synth".into(),
            seed: 0,
            classes: 3,
            n_per_class: 100,
            noise: 0.0,
            dim: 512,
            embed_seed: 0,
            spread: 0.5,
        }
    }
}

const CLASS_TOKENS: [&str; 12] = [
    "flood",
    "fire",
    "earthquake",
    "hurricane",
    "landslide",
    "drought",
    "blizzard",
    "tornado",
    "tsunami",
    "eruption",
    "avalanche",
    "heatwave",
];

const DISTRACTORS: [&str; 10] = ["tree", "car", "road", "fence", "bridge", "roof", "street", "truck", "field", "house"];

const NEUTRAL_FLAVORS: [&str; 8] = [
    "film still",
    "stock photo",
    "wide angle shot",
    "trending on social media",
    "high resolution",
    "blurry photo",
    "overcast lighting",
    "news footage",
];

/// Token standing for class `c` in captions and flavor phrases.
pub fn class_token(c: usize) -> String {
    CLASS_TOKENS.get(c).map_or_else(|| format!("hazard{c}"), |t| (*t).to_owned())
}

#[derive(Debug, Clone)]
pub struct SynthDataset {
    /// Captions filled in.
    pub manifest: Manifest,
    /// Unit-norm image embeddings aligned with each split's examples.
    pub embeddings: [Vec<EmbeddingVector>; 3],
    /// Phrase bank embedded with the mock embedder.
    pub flavors: PhraseBank,
    pub config: SynthConfig,
}

pub fn synth_dataset(config: &SynthConfig) -> Result<SynthDataset, DatasetError> {
    if config.classes < 2 {
        return Err(DatasetError::Invalid(format!("need at least 2 classes, got {}", config.classes)));
    }
    if config.n_per_class < 1 {
        return Err(DatasetError::Invalid("n_per_class must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&config.noise) {
        return Err(DatasetError::Invalid(format!("noise {} outside [0, 1]", config.noise)));
    }
    if !(config.spread >= 0.0 && config.spread.is_finite()) {
        return Err(DatasetError::Invalid(format!("spread {} must be finite and non-negative", config.spread)));
    }
    let embedder = MockEmbedder::new(config.dim, config.embed_seed)?;
    let tokens: Vec<String> = (0..config.classes).map(class_token).collect();
    let centroids: Vec<EmbeddingVector> = tokens.iter().map(|t| embedder.embed(t)).collect();
    for a in 0..centroids.len() {
        for b in a + 1..centroids.len() {
            if centroids[a].dot(&centroids[b]).abs() > 0.5 {
                return Err(DatasetError::Invalid(format!(
                    "class tokens {:?} and {:?} hash to the same axis at dim {}; pick another embed seed",
                    tokens[a], tokens[b], config.dim
                )));
            }
        }
    }
    let labels = LabelSpace::new(tokens.clone())?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut splits: Vec<Vec<Example>> = Vec::with_capacity(3);
    let mut embeddings: Vec<Vec<EmbeddingVector>> = Vec::with_capacity(3);
    let per_coord = config.spread / (config.dim as f64).sqrt();
    for split in Split::ALL {
        let mut examples = Vec::with_capacity(config.classes * config.n_per_class);
        let mut vectors = Vec::with_capacity(config.classes * config.n_per_class);
        for i in 0..config.n_per_class {
            for label in 0..config.classes {
                let id = format!("{split}-{:06}", i * config.classes + label);
                let caption_class = if rng.gen_bool(config.noise) { rng.gen_range(0..config.classes) } else { label };
                let distractor = DISTRACTORS.choose(&mut rng).expect("non-empty");
                let caption = format!("a scene with {} and {}", tokens[caption_class], distractor);
                let image_class = if rng.gen_bool(config.noise) { rng.gen_range(0..config.classes) } else { label };
                let values: Vec<f64> = centroids[image_class]
                    .values()
                    .iter()
                    .map(|c| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        c + per_coord * z
                    })
                    .collect();
                let vector = EmbeddingVector::new(values)?.normalize()?;
                examples.push(Example { image_ref: format!("synth://{id}"), id, caption: Some(caption), label });
                vectors.push(vector);
            }
        }
        splits.push(examples);
        embeddings.push(vectors);
    }
    let test = splits.pop().expect("3 splits");
    let dev = splits.pop().expect("3 splits");
    let train = splits.pop().expect("3 splits");
    let manifest = Manifest::new(config.task_name.clone(), labels, train, dev, test)?;

    let mut phrases = Vec::new();
    let mut categories = Vec::new();
    for token in &tokens {
        for phrase in
            [token.clone(), format!("heavy {token}"), format!("{token} damage"), format!("aftermath of {token}")]
        {
            phrases.push(phrase);
            categories.push(Some("event".to_owned()));
        }
    }
    for d in DISTRACTORS {
        phrases.push(format!("{d} in view"));
        categories.push(Some("object".to_owned()));
    }
    for f in NEUTRAL_FLAVORS {
        phrases.push(f.to_owned());
        categories.push(Some("style".to_owned()));
    }
    let vectors: Vec<EmbeddingVector> = phrases.iter().map(|p| embedder.embed(p)).collect();
    let flavors = PhraseBank::from_embeddings(phrases, &vectors)?.with_categories(categories)?;

    let embeddings: [Vec<EmbeddingVector>; 3] = embeddings.try_into().expect("3 splits");
    Ok(SynthDataset { manifest, embeddings, flavors, config: config.clone() })
}

impl SynthDataset {
    /// Image embeddings of one split as a bank keyed by example id.
    pub fn embedding_bank(&self, split: Split) -> Result<PhraseBank, DatasetError> {
        let idx = Split::ALL.iter().position(|s| *s == split).expect("known split");
        let ids = self.manifest.split(split).iter().map(|e| e.id.clone()).collect();
        Ok(PhraseBank::from_embeddings(ids, &self.embeddings[idx])?)
    }

    /// Writes the uncaptioned manifest, per-split embedding banks, the
    /// flavor bank and a `cache/` directory holding the captions and all
    /// image embeddings. Returns every written path.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>, DatasetError> {
        let task = self.manifest.task_name();
        let mut uncaptioned = self.manifest.clone();
        for split in Split::ALL {
            for e in uncaptioned.split_mut(split) {
                e.caption = None;
            }
        }
        let mut written = write_manifest(&uncaptioned, dir)?;
        let mut captions = Vec::new();
        let mut all_ids = Vec::new();
        let mut all_vectors = Vec::new();
        for (i, split) in Split::ALL.into_iter().enumerate() {
            let path = embeddings_path(dir, task, split);
            self.embedding_bank(split)?.write(&path)?;
            written.push(path);
            for (e, v) in self.manifest.split(split).iter().zip(&self.embeddings[i]) {
                captions.push((e.id.clone(), e.caption.clone().unwrap_or_default()));
                all_ids.push(e.id.clone());
                all_vectors.push(v.clone());
            }
        }
        let path = flavors_path(dir, task);
        self.flavors.write(&path)?;
        written.push(path);
        let images = PhraseBank::from_embeddings(all_ids, &all_vectors)?;
        written.extend(CacheBackend::write(&dir.join("cache"), &captions, Some(&images), None)?);
        Ok(written)
    }
}
