//! Score-level fusion and the evaluation protocol.
//!
//! Fusion is the convex combination `(1 - w) * y_img + w * y_txt`, with `w`
//! the weight on the text branch. `w = 0` is the image classifier alone,
//! `w = 1` the text classifier alone. Sweeps evaluate accuracy over a grid
//! of `w`; trials repeat training under different seeds and report the raw
//! values together with mean and sample standard deviation.

use std::collections::HashMap;
use std::fs;
use std::io;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{LabelSpace, ModelError, ProbabilityVector};
use crate::tsv;

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("fusion weight {0} outside [0, 1]")]
    WeightOutOfRange(f64),
    #[error("empty input")]
    Empty,
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("score tables are misaligned: {0}")]
    Misaligned(String),
    #[error("score file not found: {path}")]
    MissingFile { path: String },
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("{path}:{line}: {message}")]
    Malformed { path: String, line: usize, message: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// `(1 - w) * image + w * text`. No renormalization: a convex combination of
/// simplex points is already on the simplex.
pub fn fuse(image: &ProbabilityVector, text: &ProbabilityVector, w: f64) -> Result<ProbabilityVector, FusionError> {
    if image.len() != text.len() {
        return Err(FusionError::LengthMismatch { left: image.len(), right: text.len() });
    }
    if !(0.0..=1.0).contains(&w) {
        return Err(FusionError::WeightOutOfRange(w));
    }
    let keep = 1.0 - w;
    let values = image.values().iter().zip(text.values()).map(|(a, b)| keep * a + w * b).collect();
    Ok(ProbabilityVector::from_convex_combination(values))
}

/// Fraction of positions where `predictions` equals `gold`.
pub fn accuracy(predictions: &[usize], gold: &[usize]) -> Result<f64, FusionError> {
    if predictions.len() != gold.len() {
        return Err(FusionError::LengthMismatch { left: predictions.len(), right: gold.len() });
    }
    if gold.is_empty() {
        return Err(FusionError::Empty);
    }
    let correct = predictions.iter().zip(gold).filter(|(p, g)| p == g).count();
    Ok(correct as f64 / gold.len() as f64)
}

/// Evenly spaced weights from `start` to `stop` inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionGrid {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl Default for FusionGrid {
    fn default() -> Self {
        Self { start: 0.0, stop: 1.0, step: 0.05 }
    }
}

impl FusionGrid {
    /// A one-point grid.
    pub fn single(w: f64) -> Self {
        Self { start: w, stop: w, step: 1.0 }
    }

    /// Parses `start:stop:step`.
    pub fn parse(text: &str) -> Result<Self, FusionError> {
        let parts: Vec<&str> = text.split(':').collect();
        let [start, stop, step] = parts.as_slice() else {
            return Err(FusionError::InvalidGrid(format!("expected start:stop:step, got {text:?}")));
        };
        let num = |s: &str| s.trim().parse::<f64>().map_err(|_| FusionError::InvalidGrid(format!("bad number {s:?}")));
        let grid = Self { start: num(start)?, stop: num(stop)?, step: num(step)? };
        grid.points()?;
        Ok(grid)
    }

    /// Grid points, rounded to 12 decimals so that e.g. `0.15` prints as
    /// `0.15`. The last point is exactly `stop` when the step divides the
    /// span.
    pub fn points(&self) -> Result<Vec<f64>, FusionError> {
        let Self { start, stop, step } = *self;
        if ![start, stop, step].iter().all(|v| v.is_finite()) {
            return Err(FusionError::InvalidGrid("non-finite grid parameter".into()));
        }
        if !(0.0..=1.0).contains(&start) || !(0.0..=1.0).contains(&stop) || start > stop {
            return Err(FusionError::InvalidGrid(format!("need 0 <= start <= stop <= 1, got {start}..{stop}")));
        }
        if step <= 0.0 {
            return Err(FusionError::InvalidGrid(format!("step {step} must be positive")));
        }
        let intervals = ((stop - start) / step + 1e-9).floor() as usize;
        Ok((0..=intervals)
            .map(|i| {
                let w = start + i as f64 * step;
                if (w - stop).abs() < 1e-9 {
                    stop
                } else {
                    (w * 1e12).round() / 1e12
                }
            })
            .collect())
    }
}

/// Per-example class probabilities from one system on one split.
///
/// File format: header `id<TAB>p_0<TAB>...<TAB>p_{C-1}`, then one row per
/// example. Values are written in shortest round-trip form, so reading a
/// written table reproduces every `f64` exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    ids: Vec<String>,
    rows: Vec<ProbabilityVector>,
}

impl ScoreTable {
    pub fn new(ids: Vec<String>, rows: Vec<ProbabilityVector>) -> Result<Self, FusionError> {
        if ids.len() != rows.len() {
            return Err(FusionError::LengthMismatch { left: ids.len(), right: rows.len() });
        }
        if let Some(first) = rows.first() {
            if let Some(bad) = rows.iter().find(|r| r.len() != first.len()) {
                return Err(FusionError::LengthMismatch { left: first.len(), right: bad.len() });
            }
        }
        Ok(Self { ids, rows })
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn rows(&self) -> &[ProbabilityVector] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn classes(&self) -> Option<usize> {
        self.rows.first().map(ProbabilityVector::len)
    }

    pub fn predictions(&self) -> Vec<usize> {
        self.rows.iter().map(ProbabilityVector::argmax).collect()
    }

    pub fn to_tsv(&self, classes: usize) -> String {
        let mut out = String::from("id");
        for k in 0..classes {
            out.push_str(&format!("\tp_{k}"));
        }
        out.push('\n');
        for (id, row) in self.ids.iter().zip(&self.rows) {
            out.push_str(&tsv::escape(id));
            for v in row.values() {
                out.push('\t');
                out.push_str(&v.to_string());
            }
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path, classes: usize) -> Result<(), FusionError> {
        fs::write(path, self.to_tsv(classes))
            .map_err(|source| FusionError::Io { path: path.display().to_string(), source })
    }

    pub fn read(path: &Path) -> Result<Self, FusionError> {
        let shown = path.display().to_string();
        let content = fs::read_to_string(path).map_err(|source| {
            if source.kind() == io::ErrorKind::NotFound {
                FusionError::MissingFile { path: shown.clone() }
            } else {
                FusionError::Io { path: shown.clone(), source }
            }
        })?;
        Self::parse(&content, &shown)
    }

    pub fn parse(content: &str, source_name: &str) -> Result<Self, FusionError> {
        let malformed =
            |line: usize, message: String| FusionError::Malformed { path: source_name.to_owned(), line, message };
        let mut lines = tsv::numbered_lines(content);
        let header = lines.next().ok_or_else(|| malformed(1, "missing header".into()))?.1;
        let columns = tsv::split_line(header);
        let classes = columns.len().saturating_sub(1);
        let expected: Vec<String> =
            std::iter::once("id".to_owned()).chain((0..classes).map(|k| format!("p_{k}"))).collect();
        if classes < 2 || columns != expected {
            return Err(malformed(1, format!("bad header {header:?}")));
        }
        let mut ids = Vec::new();
        let mut rows = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for (line, text) in lines {
            let fields = tsv::split_line(text);
            if fields.len() != classes + 1 {
                return Err(malformed(line, format!("expected {} columns, found {}", classes + 1, fields.len())));
            }
            let id = tsv::unescape(fields[0]).ok_or_else(|| malformed(line, "bad escape in id".into()))?;
            if !seen.insert(id.clone()) {
                return Err(malformed(line, format!("duplicate id {id:?}")));
            }
            let values = fields[1..]
                .iter()
                .map(|f| f.parse::<f64>().map_err(|_| malformed(line, format!("bad probability {f:?}"))))
                .collect::<Result<Vec<_>, _>>()?;
            let row = ProbabilityVector::new(values).map_err(|e| malformed(line, e.to_string()))?;
            ids.push(id);
            rows.push(row);
        }
        Self::new(ids, rows)
    }
}

/// Gold labels keyed by example id, in split order.
#[derive(Debug, Clone, PartialEq)]
pub struct GoldLabels {
    pub ids: Vec<String>,
    pub labels: Vec<usize>,
}

impl GoldLabels {
    pub fn new(ids: Vec<String>, labels: Vec<usize>) -> Result<Self, FusionError> {
        if ids.len() != labels.len() {
            return Err(FusionError::LengthMismatch { left: ids.len(), right: labels.len() });
        }
        Ok(Self { ids, labels })
    }
}

/// Checks that every table lists exactly the gold ids, in the same order.
pub fn check_alignment(tables: &[(&str, &ScoreTable)], gold: &GoldLabels) -> Result<(), FusionError> {
    for (name, table) in tables {
        if table.ids() == gold.ids.as_slice() {
            continue;
        }
        let gold_pos: HashMap<&str, usize> = gold.ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
        let table_ids: std::collections::HashSet<&str> = table.ids().iter().map(String::as_str).collect();
        let missing: Vec<&str> =
            gold.ids.iter().map(String::as_str).filter(|id| !table_ids.contains(id)).take(5).collect();
        let extra: Vec<&str> =
            table.ids().iter().map(String::as_str).filter(|id| !gold_pos.contains_key(id)).take(5).collect();
        let detail = if missing.is_empty() && extra.is_empty() {
            let first = table.ids().iter().zip(&gold.ids).position(|(a, b)| a != b).unwrap_or(0);
            format!("{name}: same ids in a different order (first difference at row {first}: {:?})", table.ids()[first])
        } else {
            format!("{name}: missing ids {missing:?}, unexpected ids {extra:?}")
        };
        return Err(FusionError::Misaligned(detail));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub w: f64,
    pub accuracy: f64,
}

/// Fused accuracy at every grid weight. Grid points are evaluated in
/// parallel; the output order follows the grid.
pub fn sweep(
    image: &ScoreTable,
    text: &ScoreTable,
    gold: &GoldLabels,
    grid: &[f64],
) -> Result<Vec<CurvePoint>, FusionError> {
    if grid.is_empty() {
        return Err(FusionError::InvalidGrid("empty grid".into()));
    }
    if let Some(w) = grid.iter().find(|w| !(0.0..=1.0).contains(*w)) {
        return Err(FusionError::WeightOutOfRange(*w));
    }
    check_alignment(&[("image scores", image), ("text scores", text)], gold)?;
    if gold.ids.is_empty() {
        return Err(FusionError::Empty);
    }
    grid.par_iter()
        .map(|&w| {
            let predictions = image
                .rows()
                .iter()
                .zip(text.rows())
                .map(|(a, b)| fuse(a, b, w).map(|p| p.argmax()))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(CurvePoint { w, accuracy: accuracy(&predictions, &gold.labels)? })
        })
        .collect()
}

/// `counts[gold][predicted]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<usize>>,
}

impl ConfusionMatrix {
    pub fn from_predictions(predictions: &[usize], gold: &[usize], classes: usize) -> Result<Self, FusionError> {
        if predictions.len() != gold.len() {
            return Err(FusionError::LengthMismatch { left: predictions.len(), right: gold.len() });
        }
        let mut counts = vec![vec![0usize; classes]; classes];
        for (&p, &g) in predictions.iter().zip(gold) {
            if p >= classes || g >= classes {
                return Err(ModelError::InvalidInput(format!("class index outside 0..{classes}")).into());
            }
            counts[g][p] += 1;
        }
        Ok(Self { counts })
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn support(&self, class: usize) -> usize {
        self.counts[class].iter().sum()
    }

    pub fn accuracy(&self) -> Option<f64> {
        let total = self.total();
        (total > 0).then(|| (0..self.counts.len()).map(|k| self.counts[k][k]).sum::<usize>() as f64 / total as f64)
    }

    /// Precision and recall per class; `None` where undefined (no
    /// predictions, or no gold examples, for that class).
    pub fn per_class(&self, labels: &LabelSpace) -> Vec<ClassMetrics> {
        (0..self.counts.len())
            .map(|k| {
                let tp = self.counts[k][k];
                let predicted: usize = self.counts.iter().map(|row| row[k]).sum();
                let support = self.support(k);
                ClassMetrics {
                    class: labels.name(k).unwrap_or("?").to_owned(),
                    precision: (predicted > 0).then(|| tp as f64 / predicted as f64),
                    recall: (support > 0).then(|| tp as f64 / support as f64),
                    support,
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: String,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub support: usize,
}

/// Raw per-trial values with their mean and sample standard deviation.
/// The standard deviation is absent for a single trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub seeds: Vec<u64>,
    pub values: Vec<f64>,
    pub mean: f64,
    pub std: Option<f64>,
}

impl TrialSummary {
    pub fn from_values(seeds: Vec<u64>, values: Vec<f64>) -> Result<Self, FusionError> {
        if values.is_empty() {
            return Err(FusionError::Empty);
        }
        if seeds.len() != values.len() {
            return Err(FusionError::LengthMismatch { left: seeds.len(), right: values.len() });
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std =
            (values.len() > 1).then(|| (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
        Ok(Self { seeds, values, mean, std })
    }
}

/// Runs `run` with seeds `base_seed + i` for `i` in `0..n_trials`.
pub fn multi_trial<E>(
    n_trials: usize,
    base_seed: u64,
    mut run: impl FnMut(u64) -> Result<f64, E>,
) -> Result<TrialSummary, E>
where
    E: From<FusionError>,
{
    if n_trials == 0 {
        return Err(FusionError::Empty.into());
    }
    let seeds: Vec<u64> = (0..n_trials as u64).map(|i| base_seed + i).collect();
    let mut values = Vec::with_capacity(n_trials);
    for &seed in &seeds {
        values.push(run(seed)?);
    }
    Ok(TrialSummary::from_values(seeds, values)?)
}

/// One grid weight aggregated over trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveStat {
    pub w: f64,
    pub accuracy: TrialSummary,
}

/// Aggregates per-trial curves evaluated on the same grid.
pub fn aggregate_curves(seeds: &[u64], curves: &[Vec<CurvePoint>]) -> Result<Vec<CurveStat>, FusionError> {
    let first = curves.first().ok_or(FusionError::Empty)?;
    if seeds.len() != curves.len() {
        return Err(FusionError::LengthMismatch { left: seeds.len(), right: curves.len() });
    }
    for c in curves {
        if c.len() != first.len() || c.iter().zip(first).any(|(a, b)| a.w != b.w) {
            return Err(FusionError::InvalidGrid("trials were swept on different grids".into()));
        }
    }
    first
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let values = curves.iter().map(|c| c[i].accuracy).collect();
            Ok(CurveStat { w: p.w, accuracy: TrialSummary::from_values(seeds.to_vec(), values)? })
        })
        .collect()
}

/// Weight with the highest mean accuracy; ties go to the smallest `w`
/// (toward the image branch).
pub fn best_weight(curve: &[CurveStat]) -> Option<&CurveStat> {
    let mut best: Option<&CurveStat> = None;
    for stat in curve {
        let better = match best {
            None => true,
            Some(b) => stat.accuracy.mean > b.accuracy.mean || (stat.accuracy.mean == b.accuracy.mean && stat.w < b.w),
        };
        if better {
            best = Some(stat);
        }
    }
    best
}

/// Mean-and-std CSV (`w,accuracy_mean,accuracy_std`) for plotting; the std
/// field is empty for single-trial runs.
pub fn curve_csv(curve: &[CurveStat]) -> String {
    let mut out = String::from("w,accuracy_mean,accuracy_std\n");
    for stat in curve {
        let std = stat.accuracy.std.map(|s| s.to_string()).unwrap_or_default();
        out.push_str(&format!("{},{},{}\n", stat.w, stat.accuracy.mean, std));
    }
    out
}
