//! Evaluation stages: fuse and report.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use lbm_core::fusion::{
    aggregate_curves, best_weight, curve_csv, sweep, ClassMetrics, ConfusionMatrix, CurvePoint, CurveStat, GoldLabels,
    ScoreTable, TrialSummary,
};
use lbm_core::{Manifest, Split};
use serde::{Deserialize, Serialize};

use super::{ids, Ctx, EVAL_SPLITS, FUSION_DIR, REPORT_DIR};
use crate::config::IMAGE_SYSTEM;
use crate::error::invalid;
use crate::stage::{require, Stage};

pub const FUSION_FILE: &str = "fusion.json";
pub const REPORT_FILE: &str = "report.json";
pub const TABLE_FILE: &str = "table.txt";
pub const CURVE_FILE: &str = "curve.csv";
pub const SELECTION_POLICY: &str =
    "w maximizing mean dev accuracy over trials; ties go to the smallest w (image branch); test accuracy reported at that w";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitCurves {
    /// One curve per trial, in seed order.
    pub per_trial: Vec<Vec<CurvePoint>>,
    pub mean: Vec<CurveStat>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestWeight {
    pub w: f64,
    pub dev_accuracy: TrialSummary,
    pub test_accuracy: TrialSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionOutput {
    pub image_system: String,
    pub text_system: String,
    pub grid: Vec<f64>,
    pub seeds: Vec<u64>,
    pub curves: BTreeMap<String, SplitCurves>,
    pub best: Option<BestWeight>,
    pub selection_policy: String,
}

fn gold_labels(gold: &Manifest, split: Split) -> Result<GoldLabels> {
    let examples = gold.split(split);
    Ok(GoldLabels::new(ids(examples), examples.iter().map(|e| e.label).collect())?)
}

fn nonempty_eval_splits(gold: &Manifest) -> Vec<Split> {
    EVAL_SPLITS.into_iter().filter(|s| !gold.split(*s).is_empty()).collect()
}

fn expected_scores(ctx: &Ctx, systems: &[&str], splits: &[Split]) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for system in systems {
        for trial in 0..ctx.config.trials {
            for split in splits {
                out.push(ctx.score_path(system, trial, *split));
            }
        }
    }
    out
}

pub fn fuse(ctx: &Ctx) -> Result<()> {
    let gold = ctx.gold()?;
    let settings = &ctx.config.fusion;
    let (image, text) = (settings.image_system.as_str(), settings.text_system.as_str());
    let splits = nonempty_eval_splits(&gold);
    if !splits.contains(&Split::Test) {
        return Err(invalid("the test split is empty; nothing to fuse"));
    }
    require(&expected_scores(ctx, &[image, text], &splits), "run `lbm score` first")?;
    let grid = settings.grid().points()?;
    let seeds = ctx.config.trial_seeds();

    let mut curves = BTreeMap::new();
    for split in &splits {
        let labels = gold_labels(&gold, *split)?;
        let mut per_trial = Vec::with_capacity(seeds.len());
        for trial in 0..seeds.len() {
            let a = ScoreTable::read(&ctx.score_path(image, trial, *split))?;
            let b = ScoreTable::read(&ctx.score_path(text, trial, *split))?;
            per_trial.push(sweep(&a, &b, &labels, &grid).with_context(|| format!("fusing trial {trial} on {split}"))?);
        }
        let mean = aggregate_curves(&seeds, &per_trial)?;
        curves.insert(split.to_string(), SplitCurves { per_trial, mean });
    }

    let best = curves.get("dev").and_then(|dev| best_weight(&dev.mean)).map(|b| {
        let test = &curves["test"].mean;
        let at = test.iter().find(|s| s.w == b.w).expect("same grid on every split");
        BestWeight { w: b.w, dev_accuracy: b.accuracy.clone(), test_accuracy: at.accuracy.clone() }
    });
    let output = FusionOutput {
        image_system: image.to_owned(),
        text_system: text.to_owned(),
        grid,
        seeds,
        curves,
        best,
        selection_policy: SELECTION_POLICY.to_owned(),
    };

    let stage = Stage::begin(&ctx.out, FUSION_DIR, "fuse")?;
    for (split, c) in &output.curves {
        stage.write(&format!("curve.{split}.csv"), curve_csv(&c.mean))?;
    }
    stage.write_json(FUSION_FILE, &output)?;
    stage.commit(&ctx.snapshot("fuse", &[("image_system", image.into()), ("text_system", text.into())])?)?;

    let test = &output.curves["test"].mean;
    let (first, last) = (&test[0], &test[test.len() - 1]);
    println!("fused {image} + {text} on {} weight(s)", output.grid.len());
    println!("  test accuracy at w={}: {:.4}", first.w, first.accuracy.mean);
    println!("  test accuracy at w={}: {:.4}", last.w, last.accuracy.mean);
    if let Some(b) = &output.best {
        println!("  best w on dev: {} (dev {:.4}, test {:.4})", b.w, b.dev_accuracy.mean, b.test_accuracy.mean);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialDetail {
    pub trial: usize,
    pub seed: u64,
    pub test_accuracy: f64,
    pub confusion: ConfusionMatrix,
    pub per_class: Vec<ClassMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemReport {
    pub name: String,
    pub modality: String,
    /// Keyed by split name.
    pub accuracy: BTreeMap<String, TrialSummary>,
    pub per_trial: Vec<TrialDetail>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: String,
    pub classes: Vec<String>,
    pub trials: usize,
    pub seeds: Vec<u64>,
    pub systems: Vec<SystemReport>,
    pub fusion: FusionOutput,
}

fn system_report(ctx: &Ctx, gold: &Manifest, system: &str, splits: &[Split]) -> Result<SystemReport> {
    let seeds = ctx.config.trial_seeds();
    let classes = gold.label_space().len();
    let mut accuracy = BTreeMap::new();
    let mut per_trial = Vec::new();
    for split in splits {
        let labels = gold_labels(gold, *split)?;
        let mut values = Vec::new();
        for (trial, seed) in seeds.iter().enumerate() {
            let table = ScoreTable::read(&ctx.score_path(system, trial, *split))?;
            lbm_core::fusion::check_alignment(&[(system, &table)], &labels)?;
            let confusion = ConfusionMatrix::from_predictions(&table.predictions(), &labels.labels, classes)?;
            let acc = confusion.accuracy().expect("non-empty split");
            values.push(acc);
            if *split == Split::Test {
                let per_class = confusion.per_class(gold.label_space());
                per_trial.push(TrialDetail { trial, seed: *seed, test_accuracy: acc, confusion, per_class });
            }
        }
        accuracy.insert(split.to_string(), TrialSummary::from_values(seeds.clone(), values)?);
    }
    let modality = if system == IMAGE_SYSTEM { "image" } else { "text" };
    Ok(SystemReport { name: system.to_owned(), modality: modality.into(), accuracy, per_trial })
}

pub fn report(ctx: &Ctx, compare: &[PathBuf]) -> Result<()> {
    let gold = ctx.gold()?;
    let splits = nonempty_eval_splits(&gold);
    let systems: Vec<&str> = ctx.config.systems.iter().map(String::as_str).collect();
    let fusion_path = ctx.dir(FUSION_DIR).join(FUSION_FILE);
    let mut expected = expected_scores(ctx, &systems, &splits);
    expected.push(fusion_path.clone());
    require(&expected, "run `lbm score` and `lbm fuse` first")?;
    let fusion: FusionOutput = read_json(&fusion_path)?;
    if fusion.seeds != ctx.config.trial_seeds() {
        return Err(invalid("fusion outputs were produced with different trial seeds; rerun `lbm fuse`"));
    }
    let systems = systems.iter().map(|s| system_report(ctx, &gold, s, &splits)).collect::<Result<Vec<_>>>()?;
    let report = EvalReport {
        task: ctx.task().to_owned(),
        classes: gold.label_space().names().to_vec(),
        trials: ctx.config.trials,
        seeds: ctx.config.trial_seeds(),
        systems,
        fusion,
    };
    let mut columns = vec![report.clone()];
    for dir in compare {
        let path = if dir.is_dir() { dir.join(REPORT_DIR).join(REPORT_FILE) } else { dir.clone() };
        columns.push(read_json(&path)?);
    }
    let table = render_table(&columns);

    let stage = Stage::begin(&ctx.out, REPORT_DIR, "report")?;
    stage.write_json(REPORT_FILE, &report)?;
    stage.write(CURVE_FILE, curve_csv(&report.fusion.curves["test"].mean))?;
    stage.write(TABLE_FILE, &table)?;
    let compared = compare.iter().map(|p| ctx.display_path(p)).collect::<Vec<_>>().join(",");
    stage.commit(&ctx.snapshot("report", &[("compare", compared)])?)?;
    print!("{table}");
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))
}

fn percent(s: &TrialSummary) -> String {
    match s.std {
        Some(std) => format!("{:.2} ± {:.2}", 100.0 * s.mean, 100.0 * std),
        None => format!("{:.2}", 100.0 * s.mean),
    }
}

/// Test accuracies (%) with one column per report: single-modal systems
/// grouped by modality, then the dev-selected fusion.
pub fn render_table(reports: &[EvalReport]) -> String {
    let mut rows: Vec<(String, Vec<String>)> = Vec::new();
    for (modality, heading) in [("image", "Image-based"), ("text", "Text-based")] {
        let mut names: Vec<&str> = Vec::new();
        for r in reports {
            for s in r.systems.iter().filter(|s| s.modality == modality) {
                if !names.contains(&s.name.as_str()) {
                    names.push(&s.name);
                }
            }
        }
        if names.is_empty() {
            continue;
        }
        rows.push((heading.to_owned(), Vec::new()));
        for name in names {
            let cells = reports
                .iter()
                .map(|r| {
                    r.systems
                        .iter()
                        .find(|s| s.name == name)
                        .and_then(|s| s.accuracy.get("test"))
                        .map_or_else(|| "-".to_owned(), percent)
                })
                .collect();
            rows.push((format!("  {name}"), cells));
        }
    }
    rows.push(("Fusion (dev-selected w)".to_owned(), Vec::new()));
    let mut pairs: Vec<String> = Vec::new();
    for r in reports {
        let pair = format!("{} + {}", r.fusion.image_system, r.fusion.text_system);
        if !pairs.contains(&pair) {
            pairs.push(pair);
        }
    }
    for pair in pairs {
        let cells = reports
            .iter()
            .map(|r| {
                let same = format!("{} + {}", r.fusion.image_system, r.fusion.text_system) == pair;
                match (&r.fusion.best, same) {
                    (Some(b), true) => format!("{} (w={})", percent(&b.test_accuracy), b.w),
                    _ => "-".to_owned(),
                }
            })
            .collect();
        rows.push((format!("  {pair}"), cells));
    }

    let headers: Vec<String> = reports.iter().map(|r| format!("{} ({} trials)", r.task, r.trials)).collect();
    let first_width = rows.iter().map(|(l, _)| l.chars().count()).chain(["System".len()]).max().unwrap_or(6);
    let widths: Vec<usize> = (0..reports.len())
        .map(|i| {
            rows.iter()
                .filter_map(|(_, c)| c.get(i))
                .map(|c| c.chars().count())
                .chain([headers[i].chars().count()])
                .max()
                .unwrap_or(0)
        })
        .collect();

    let mut out = String::from("Test accuracies (%), mean ± std over trials\n\n");
    let line = |out: &mut String, label: &str, cells: &[String]| {
        let _ = write!(out, "{label:<first_width$}");
        for (i, w) in widths.iter().enumerate() {
            let cell = cells.get(i).map_or("", String::as_str);
            let _ = write!(out, " | {cell:>w$}");
        }
        out.push('\n');
    };
    line(&mut out, "System", &headers);
    let header = out.lines().last().unwrap_or_default().to_owned();
    let rule: String = header.chars().map(|c| if c == '|' { '+' } else { '-' }).collect();
    out.push_str(&rule);
    out.push('\n');
    for (label, cells) in &rows {
        line(&mut out, label, cells);
    }
    out
}
