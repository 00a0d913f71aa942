//! Model stages: train and score.

use anyhow::{Context, Result};
use lbm_core::dataset::{self, Manifest};
use lbm_core::fusion::{accuracy, ScoreTable, TrialSummary};
use lbm_core::probe::{
    embedding_samples, text_samples, train as train_probe, EpochMetrics, LinearProbe, Sample, TrainConfig,
};
use lbm_core::{LabelSpace, ProbabilityVector, Split};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    ids, load_id_bank, probe_name, score_name, Ctx, CAPTIONED_DIR, EVAL_SPLITS, INTERROGATED_DIR, PROBES_DIR,
    SCORES_DIR,
};
use crate::config::{CAPTION_SYSTEM, IMAGE_SYSTEM, INTERROGATED_SYSTEM};
use crate::error::invalid;
use crate::stage::{require, Stage};

pub const ACCURACY_FILE: &str = "accuracy.json";

/// Features and labels of one system on one split.
pub struct SystemData {
    pub ids: Vec<String>,
    pub samples: Vec<Sample>,
    pub labels: LabelSpace,
}

impl SystemData {
    pub fn gold(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }
}

/// Loads the manifests a system reads, once per command.
pub struct Inputs<'a> {
    ctx: &'a Ctx,
    captioned: Option<Manifest>,
    interrogated: Option<Manifest>,
}

impl<'a> Inputs<'a> {
    pub fn load(ctx: &'a Ctx, systems: &[String]) -> Result<Self> {
        let needs = |s: &str| systems.iter().any(|x| x == s);
        let captioned = if needs(IMAGE_SYSTEM) || needs(CAPTION_SYSTEM) {
            Some(ctx.load_stage_manifest(CAPTIONED_DIR, "run `lbm caption` first")?)
        } else {
            None
        };
        let interrogated = if needs(INTERROGATED_SYSTEM) {
            Some(ctx.load_stage_manifest(INTERROGATED_DIR, "run `lbm interrogate` first")?)
        } else {
            None
        };
        Ok(Self { ctx, captioned, interrogated })
    }

    pub fn system(&self, system: &str, split: Split) -> Result<SystemData> {
        let manifest = match system {
            INTERROGATED_SYSTEM => self.interrogated.as_ref(),
            _ => self.captioned.as_ref(),
        }
        .ok_or_else(|| invalid(format!("inputs for system {system:?} were not loaded")))?;
        let examples = manifest.split(split);
        let samples = match system {
            IMAGE_SYSTEM if examples.is_empty() => Vec::new(),
            IMAGE_SYSTEM => {
                let path = dataset::embeddings_path(&self.ctx.dir(CAPTIONED_DIR), self.ctx.task(), split);
                require(std::slice::from_ref(&path), "run `lbm caption` first")?;
                let bank = load_id_bank(&path, &ids(examples))?;
                let vectors: Vec<_> = (0..bank.len()).map(|i| bank.embedding(i)).collect();
                embedding_samples(examples, &vectors)?
            }
            _ => text_samples(examples, self.ctx.config.text_features)?,
        };
        Ok(SystemData { ids: ids(examples), samples, labels: manifest.label_space().clone() })
    }
}

#[derive(Serialize, Deserialize)]
struct History {
    system: String,
    trial: usize,
    seed: u64,
    config: TrainConfig,
    epochs: Vec<EpochMetrics>,
}

pub fn train(ctx: &Ctx) -> Result<()> {
    let systems = &ctx.config.systems;
    let inputs = Inputs::load(ctx, systems)?;
    let stage = Stage::begin(&ctx.out, PROBES_DIR, "train")?;
    for system in systems {
        let train_data = inputs.system(system, Split::Train)?;
        let dev_data = inputs.system(system, Split::Dev)?;
        let dev = (!dev_data.samples.is_empty()).then_some(dev_data.samples.as_slice());
        for (trial, seed) in ctx.config.trial_seeds().into_iter().enumerate() {
            let config = TrainConfig { seed, ..ctx.config.train.clone() };
            let outcome = train_probe(&train_data.labels, &train_data.samples, dev, &config)
                .with_context(|| format!("training {system} trial {trial}"))?;
            outcome.probe.write(&stage.path(&probe_name(system, trial)))?;
            let last = outcome.history.last().expect("at least one epoch");
            println!(
                "{system:<13} trial {trial} seed {seed}: train acc {:.4}{}",
                last.train_accuracy,
                last.dev_accuracy.map(|a| format!(", dev acc {a:.4}")).unwrap_or_default()
            );
            let history = History { system: system.clone(), trial, seed, config, epochs: outcome.history };
            stage.write_json(&format!("{system}.trial{trial}.history.json"), &history)?;
        }
    }
    stage.commit(&ctx.snapshot("train", &[("systems", systems.join(","))])?)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemAccuracy {
    pub system: String,
    pub split: String,
    pub accuracy: TrialSummary,
}

pub fn score(ctx: &Ctx) -> Result<()> {
    let systems = &ctx.config.systems;
    let trials = ctx.config.trials;
    let probes: Vec<_> = systems.iter().flat_map(|s| (0..trials).map(move |t| ctx.probe_path(s, t))).collect();
    require(&probes, "run `lbm train` first")?;
    let inputs = Inputs::load(ctx, systems)?;
    let seeds = ctx.config.trial_seeds();
    let stage = Stage::begin(&ctx.out, SCORES_DIR, "score")?;
    let mut summary = Vec::new();
    for system in systems {
        let loaded: Vec<LinearProbe> = (0..trials)
            .map(|t| {
                LinearProbe::read(&ctx.probe_path(system, t)).with_context(|| format!("loading {system} trial {t}"))
            })
            .collect::<Result<_>>()?;
        for split in EVAL_SPLITS {
            let data = inputs.system(system, split)?;
            if data.samples.is_empty() {
                log::warn!("{system}: {split} split is empty, nothing to score");
                continue;
            }
            let gold = data.gold();
            let mut values = Vec::with_capacity(trials);
            for (trial, probe) in loaded.iter().enumerate() {
                if probe.label_space() != &data.labels {
                    return Err(invalid(format!("{} was trained on different labels", probe_name(system, trial))));
                }
                let rows: Vec<ProbabilityVector> =
                    data.samples.par_iter().map(|s| probe.forward(&s.features)).collect::<Result<_, _>>()?;
                let table = ScoreTable::new(data.ids.clone(), rows)?;
                table.write(&stage.path(&score_name(system, trial, split)), data.labels.len())?;
                values.push(accuracy(&table.predictions(), &gold)?);
            }
            let acc = TrialSummary::from_values(seeds.clone(), values)?;
            println!(
                "{system:<13} {split:<4} accuracy {:.4}{} over {trials} trial(s)",
                acc.mean,
                acc.std.map(|s| format!(" ± {s:.4}")).unwrap_or_default()
            );
            summary.push(SystemAccuracy { system: system.clone(), split: split.to_string(), accuracy: acc });
        }
    }
    stage.write_json(ACCURACY_FILE, &summary)?;
    stage.commit(&ctx.snapshot("score", &[("systems", systems.join(","))])?)?;
    Ok(())
}
