//! Output directories written atomically, each with a config snapshot and a
//! hash manifest of its files.
//!
//! A stage writes into `<out>/.<name>.partial/`. On [`Stage::commit`] the
//! snapshot and `outputs.json` are added and the directory is renamed to
//! `<out>/<name>/`, replacing any previous version. A stage dropped without
//! committing deletes its partial directory.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::invalid;

pub const SNAPSHOT_FILE: &str = "config.toml";
pub const OUTPUTS_FILE: &str = "outputs.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputEntry {
    /// Relative to the stage directory, `/`-separated.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputManifest {
    pub command: String,
    pub files: Vec<OutputEntry>,
}

pub struct Stage {
    final_dir: PathBuf,
    partial_dir: PathBuf,
    command: String,
    committed: bool,
}

impl Stage {
    pub fn begin(out: &Path, name: &str, command: &str) -> Result<Self> {
        let final_dir = out.join(name);
        let partial_dir = out.join(format!(".{name}.partial"));
        if partial_dir.exists() {
            fs::remove_dir_all(&partial_dir).with_context(|| format!("removing stale {}", partial_dir.display()))?;
        }
        fs::create_dir_all(&partial_dir).with_context(|| format!("creating {}", partial_dir.display()))?;
        Ok(Self { final_dir, partial_dir, command: command.to_owned(), committed: false })
    }

    /// Where a file named `rel` is written before commit.
    pub fn path(&self, rel: &str) -> PathBuf {
        self.partial_dir.join(rel)
    }

    pub fn dir(&self) -> &Path {
        &self.partial_dir
    }

    pub fn write(&self, rel: &str, contents: impl AsRef<[u8]>) -> Result<PathBuf> {
        let path = self.path(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }

    pub fn write_json(&self, rel: &str, value: &impl Serialize) -> Result<PathBuf> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(rel, text)
    }

    pub fn commit(mut self, snapshot: &str) -> Result<OutputManifest> {
        self.write(SNAPSHOT_FILE, snapshot)?;
        let manifest = OutputManifest { command: self.command.clone(), files: hash_tree(&self.partial_dir)? };
        self.write_json(OUTPUTS_FILE, &manifest)?;
        if self.final_dir.exists() {
            fs::remove_dir_all(&self.final_dir).with_context(|| format!("replacing {}", self.final_dir.display()))?;
        }
        fs::rename(&self.partial_dir, &self.final_dir)
            .with_context(|| format!("moving outputs into {}", self.final_dir.display()))?;
        self.committed = true;
        Ok(manifest)
    }
}

impl Drop for Stage {
    fn drop(&mut self) {
        if !self.committed && self.partial_dir.exists() {
            if let Err(e) = fs::remove_dir_all(&self.partial_dir) {
                log::warn!("could not remove partial outputs {}: {e}", self.partial_dir.display());
            }
        }
    }
}

/// Files written outside a stage directory, deleted on drop unless kept.
#[derive(Default)]
pub struct FileGuard {
    paths: Vec<PathBuf>,
    keep: bool,
}

impl FileGuard {
    pub fn track(&mut self, path: PathBuf) -> PathBuf {
        self.paths.push(path.clone());
        path
    }

    pub fn keep(mut self) -> Vec<PathBuf> {
        self.keep = true;
        std::mem::take(&mut self.paths)
    }
}

impl Drop for FileGuard {
    fn drop(&mut self) {
        if !self.keep {
            for p in &self.paths {
                let _ = fs::remove_file(p);
            }
        }
    }
}

pub fn sha256_file(path: &Path) -> Result<(String, u64)> {
    let mut file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    let mut total = 0u64;
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
        total += n as u64;
    }
    Ok((hex::encode(hasher.finalize()), total))
}

/// Hashes every file below `root`, sorted by relative path.
pub fn hash_tree(root: &Path) -> Result<Vec<OutputEntry>> {
    let mut files = Vec::new();
    collect(root, root, &mut files)?;
    files.sort();
    files
        .into_iter()
        .map(|(rel, path)| {
            let (sha256, bytes) = sha256_file(&path)?;
            Ok(OutputEntry { path: rel, sha256, bytes })
        })
        .collect()
}

fn collect(root: &Path, dir: &Path, out: &mut Vec<(String, PathBuf)>) -> Result<()> {
    for entry in fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let path = entry?.path();
        if path.is_dir() {
            collect(root, &path, out)?;
        } else {
            let rel = path.strip_prefix(root).expect("below root");
            let rel = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
            if rel != OUTPUTS_FILE {
                out.push((rel, path));
            }
        }
    }
    Ok(())
}

/// Fails with one error naming every missing path.
pub fn require(paths: &[PathBuf], hint: &str) -> Result<()> {
    let missing: Vec<String> = paths.iter().filter(|p| !p.exists()).map(|p| p.display().to_string()).collect();
    if missing.is_empty() {
        return Ok(());
    }
    Err(invalid(format!("missing upstream artifact(s) ({hint}):\n  {}", missing.join("\n  "))))
}
