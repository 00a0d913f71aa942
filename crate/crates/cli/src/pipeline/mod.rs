//! Pipeline stages. Stages talk to each other only through files under the
//! run directory:
//!
//! ```text
//! data/          ingested or synthesized manifests, labels, banks, cache/
//! captioned/     manifests with backend captions + image embeddings
//! interrogated/  manifests with enriched captions + trace sidecars
//! probes/        <system>.trial<i>.probe + training histories
//! scores/        <system>.trial<i>.<split>.tsv + accuracy summary
//! fusion/        sweep curves (per trial and aggregated) + best weight
//! report/        report.json, curve.csv, table.txt
//! ```

pub mod data;
pub mod eval;
pub mod model;

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use lbm_core::dataset::{self, load_manifest, read_label_space, Manifest};
use lbm_core::{PhraseBank, Split};

use crate::config::RunConfig;
use crate::stage::require;

pub const DATA_DIR: &str = "data";
pub const CAPTIONED_DIR: &str = "captioned";
pub const INTERROGATED_DIR: &str = "interrogated";
pub const PROBES_DIR: &str = "probes";
pub const SCORES_DIR: &str = "scores";
pub const FUSION_DIR: &str = "fusion";
pub const REPORT_DIR: &str = "report";

/// Evaluation splits scored for every trial.
pub const EVAL_SPLITS: [Split; 2] = [Split::Dev, Split::Test];

pub struct Ctx {
    pub out: PathBuf,
    pub config: RunConfig,
}

impl Ctx {
    pub fn dir(&self, stage: &str) -> PathBuf {
        self.out.join(stage)
    }

    pub fn task(&self) -> &str {
        &self.config.task
    }

    /// Manifest of `stage`, failing with the expected file names when the
    /// stage has not run.
    pub fn load_stage_manifest(&self, stage: &str, hint: &str) -> Result<Manifest> {
        let dir = self.dir(stage);
        let labels = dataset::labels_path(&dir, self.task());
        let mut expected = vec![labels.clone()];
        expected.extend(Split::ALL.iter().map(|s| dataset::split_path(&dir, self.task(), *s)));
        require(&expected, hint)?;
        let space = read_label_space(&labels)?;
        Ok(load_manifest(&dir, self.task(), &space)?)
    }

    pub fn gold(&self) -> Result<Manifest> {
        self.load_stage_manifest(DATA_DIR, "run `lbm ingest` or `lbm synth` first")
    }

    pub fn probe_path(&self, system: &str, trial: usize) -> PathBuf {
        self.dir(PROBES_DIR).join(probe_name(system, trial))
    }

    pub fn score_path(&self, system: &str, trial: usize, split: Split) -> PathBuf {
        self.dir(SCORES_DIR).join(score_name(system, trial, split))
    }

    /// `path` relative to the run directory when inside it, so snapshots do
    /// not depend on where the run lives.
    pub fn display_path(&self, path: &Path) -> String {
        path.strip_prefix(&self.out).map_or_else(|_| path.display().to_string(), |p| format!("<out>/{}", p.display()))
    }

    pub fn snapshot(&self, command: &str, args: &[(&str, String)]) -> Result<String> {
        self.config.snapshot(command, args)
    }
}

pub fn probe_name(system: &str, trial: usize) -> String {
    format!("{system}.trial{trial}.probe")
}

pub fn score_name(system: &str, trial: usize, split: Split) -> String {
    format!("{system}.trial{trial}.{split}.tsv")
}

/// Loads a bank whose phrases are example ids and checks they match the
/// manifest split in order.
pub fn load_id_bank(path: &Path, ids: &[String]) -> Result<PhraseBank> {
    let bank = PhraseBank::read(path).with_context(|| format!("reading {}", path.display()))?;
    if bank.phrases() != ids {
        let first = bank.phrases().iter().zip(ids).position(|(a, b)| a != b).unwrap_or(bank.len().min(ids.len()));
        return Err(crate::error::invalid(format!(
            "{} does not list the manifest ids in order (first difference at row {first}; {} rows vs {} examples)",
            path.display(),
            bank.len(),
            ids.len()
        )));
    }
    Ok(bank)
}

pub fn ids(examples: &[dataset::Example]) -> Vec<String> {
    examples.iter().map(|e| e.id.clone()).collect()
}
