//! Run configuration: defaults, overlaid by a TOML file, overlaid by flags.

use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use lbm_core::backends::http::HttpConfig;
use lbm_core::dataset::SynthConfig;
use lbm_core::fusion::FusionGrid;
use lbm_core::interrogator::InterrogationConfig;
use lbm_core::probe::{TrainConfig, DEFAULT_TEXT_FEATURES, MIN_TEXT_FEATURES};
use serde::{Deserialize, Serialize};

use crate::error::invalid;

pub const IMAGE_SYSTEM: &str = "image";
pub const CAPTION_SYSTEM: &str = "caption";
pub const INTERROGATED_SYSTEM: &str = "interrogated";
pub const KNOWN_SYSTEMS: [&str; 3] = [IMAGE_SYSTEM, CAPTION_SYSTEM, INTERROGATED_SYSTEM];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Cache,
    Http,
    Mock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub endpoint: Option<String>,
    /// Cache directory; defaults to `<out>/data/cache`.
    pub cache_dir: Option<PathBuf>,
    /// Base for relative image references sent to the HTTP backend.
    pub image_root: Option<PathBuf>,
    /// Embedding dimension for the mock and HTTP backends.
    pub dim: usize,
    /// Seed of the mock embedder.
    pub embed_seed: u64,
    pub timeout_ms: u64,
    pub retries: u32,
    pub backoff_ms: u64,
    pub batch_size: usize,
    pub max_in_flight: usize,
    /// Name of an environment variable holding a bearer token.
    pub token_env: Option<String>,
    /// Forwarded verbatim to the HTTP service.
    pub params: Option<toml::Table>,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            kind: BackendKind::Cache,
            endpoint: None,
            cache_dir: None,
            image_root: None,
            dim: 512,
            embed_seed: 0,
            timeout_ms: 30_000,
            retries: 3,
            backoff_ms: 200,
            batch_size: 32,
            max_in_flight: 4,
            token_env: None,
            params: None,
        }
    }
}

impl BackendConfig {
    pub fn http(&self, dim: usize) -> Result<HttpConfig> {
        let endpoint = self.endpoint.clone().ok_or_else(|| invalid("the http backend needs --endpoint"))?;
        let mut c = HttpConfig::new(endpoint, dim);
        c.timeout = Duration::from_millis(self.timeout_ms);
        c.retries = self.retries;
        c.backoff = Duration::from_millis(self.backoff_ms);
        c.batch_size = self.batch_size;
        c.max_in_flight = self.max_in_flight;
        if let Some(var) = &self.token_env {
            c.bearer_token =
                Some(std::env::var(var).map_err(|_| invalid(format!("environment variable {var} is not set")))?);
        }
        c.params = self.params.as_ref().map(serde_json::to_value).transpose()?;
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionSettings {
    /// Single weight; takes precedence over `grid`.
    pub w: Option<f64>,
    pub grid: FusionGrid,
    pub image_system: String,
    pub text_system: String,
}

impl Default for FusionSettings {
    fn default() -> Self {
        Self {
            w: None,
            grid: FusionGrid::default(),
            image_system: IMAGE_SYSTEM.into(),
            text_system: INTERROGATED_SYSTEM.into(),
        }
    }
}

impl FusionSettings {
    pub fn grid(&self) -> FusionGrid {
        self.w.map_or(self.grid, FusionGrid::single)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub task: String,
    /// Base seed; trial `i` uses `seed + i`.
    pub seed: u64,
    pub trials: usize,
    /// Worker cap; 0 lets the thread pool decide.
    pub threads: usize,
    pub systems: Vec<String>,
    /// Phrase bank for `interrogate`; defaults to the task's flavor bank.
    pub bank: Option<PathBuf>,
    /// Hashed caption feature dimension.
    pub text_features: usize,
    pub backend: BackendConfig,
    pub train: TrainConfig,
    pub interrogation: InterrogationConfig,
    pub fusion: FusionSettings,
    pub synth: SynthConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            task: "synth".into(),
            seed: 0,
            trials: 5,
            threads: 0,
            systems: KNOWN_SYSTEMS.iter().map(|s| (*s).to_owned()).collect(),
            bank: None,
            text_features: DEFAULT_TEXT_FEATURES,
            backend: BackendConfig::default(),
            train: TrainConfig::default(),
            interrogation: InterrogationConfig::default(),
            fusion: FusionSettings::default(),
            synth: SynthConfig::default(),
        }
    }
}

/// Command-line values that override the file.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub w: Option<f64>,
    pub grid: Option<FusionGrid>,
    pub backend: Option<BackendKind>,
    pub endpoint: Option<String>,
    pub threads: Option<usize>,
    pub task: Option<String>,
    pub trials: Option<usize>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<Self> {
        let mut config = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| invalid(format!("cannot read config {}: {e}", p.display())))?;
                toml::from_str(&text).map_err(|e| invalid(format!("bad config {}: {e}", p.display())))?
            }
            None => RunConfig::default(),
        };
        if let Some(seed) = overrides.seed {
            config.seed = seed;
            config.synth.seed = seed;
        }
        if let Some(grid) = overrides.grid {
            config.fusion.grid = grid;
            config.fusion.w = None;
        }
        if let Some(w) = overrides.w {
            config.fusion.w = Some(w);
        }
        if let Some(kind) = overrides.backend {
            config.backend.kind = kind;
        }
        if let Some(endpoint) = &overrides.endpoint {
            config.backend.endpoint = Some(endpoint.clone());
        }
        if let Some(threads) = overrides.threads {
            config.threads = threads;
        }
        if let Some(task) = &overrides.task {
            config.task = task.clone();
        }
        if let Some(trials) = overrides.trials {
            config.trials = trials;
        }
        config.synth.task_name = config.task.clone();
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.task.is_empty() || self.task.contains(['/', '\\', '\t', '\n']) {
            bail!(invalid(format!("bad task name {:?}", self.task)));
        }
        if self.trials == 0 {
            bail!(invalid("trials must be at least 1"));
        }
        if self.text_features < MIN_TEXT_FEATURES || !self.text_features.is_power_of_two() {
            bail!(invalid(format!("text_features must be a power of two >= {MIN_TEXT_FEATURES}")));
        }
        if self.systems.is_empty() {
            bail!(invalid("no systems configured"));
        }
        for s in &self.systems {
            if !KNOWN_SYSTEMS.contains(&s.as_str()) {
                bail!(invalid(format!("unknown system {s:?}; expected one of {KNOWN_SYSTEMS:?}")));
            }
        }
        for s in [&self.fusion.image_system, &self.fusion.text_system] {
            if !KNOWN_SYSTEMS.contains(&s.as_str()) {
                bail!(invalid(format!("unknown fusion system {s:?}")));
            }
        }
        self.train.validate().map_err(|e| invalid(e.to_string()))?;
        self.interrogation.validate().map_err(|e| invalid(e.to_string()))?;
        self.fusion.grid().points().map_err(|e| invalid(e.to_string()))?;
        Ok(())
    }

    /// Seeds for trials `0..trials`.
    pub fn trial_seeds(&self) -> Vec<u64> {
        (0..self.trials as u64).map(|i| self.seed + i).collect()
    }

    /// TOML snapshot recording the command that produced a directory.
    pub fn snapshot(&self, command: &str, args: &[(&str, String)]) -> Result<String> {
        #[derive(Serialize)]
        struct Snapshot<'a> {
            command: &'a str,
            args: toml::Table,
            config: &'a RunConfig,
        }
        let args = args.iter().map(|(k, v)| ((*k).to_owned(), toml::Value::String(v.clone()))).collect();
        toml::to_string(&Snapshot { command, args, config: self }).context("serializing config snapshot")
    }
}
