//! Acceptance checks. Prints one PASS/FAIL line per criterion with its
//! elapsed time against a fixed budget; exits non-zero if any fails.
//!
//! Every check compares the library or the `lbm` binary against an oracle
//! written here from first principles.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use lbm_core::backends::cache::CacheBackend;
use lbm_core::backends::mock::MockEmbedder;
use lbm_core::dataset::{
    self, load_manifest, read_label_space, read_split, synth_dataset, write_manifest, Example, Manifest, SynthConfig,
};
use lbm_core::fusion::{aggregate_curves, best_weight, fuse, sweep, FusionGrid, GoldLabels, ScoreTable};
use lbm_core::interrogator::{interrogate, InterrogationConfig};
use lbm_core::probe::{
    embedding_samples, featurize_text, loss_and_gradient, text_samples, train, FeatureVector, LinearProbe, Sample,
    TrainConfig, DEFAULT_TEXT_FEATURES,
};
use lbm_core::{EmbeddingVector, LabelSpace, PhraseBank, ProbabilityVector, Split};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

const SIMPLEX_TOL: f64 = 1e-9;
const COLLINEAR_TOL: f64 = 1e-12;
const TRACE_TOL: f64 = 1e-12;
const FD_STEP: f64 = 1e-5;
const GRAD_REL_TOL: f64 = 1e-4;
/// Denominator floor of the relative gradient error.
const GRAD_FLOOR: f64 = 1e-6;
const CHANCE_TOL: f64 = 0.05;
const FUSION_WEIGHTS: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        let holds: bool = $cond;
        if !holds {
            return Err(format!($($fmt)+));
        }
    };
}

fn ok<T, E: std::fmt::Display>(r: Result<T, E>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

struct Criterion {
    name: &'static str,
    budget: Duration,
    run: fn() -> Outcome,
}

fn main() {
    let criteria = [
        Criterion { name: "fusion-invariants", budget: Duration::from_secs(5), run: fusion_invariants },
        Criterion { name: "fusion-synergy", budget: Duration::from_secs(1), run: fusion_synergy },
        Criterion { name: "mips-exact", budget: Duration::from_secs(60), run: mips_exact },
        Criterion { name: "interrogator-greedy", budget: Duration::from_secs(30), run: interrogator_greedy },
        Criterion { name: "gradient-fidelity", budget: Duration::from_secs(10), run: gradient_fidelity },
        Criterion { name: "training-sanity", budget: Duration::from_secs(60), run: training_sanity },
        Criterion { name: "format-round-trips", budget: Duration::from_secs(10), run: format_round_trips },
        Criterion { name: "end-to-end", budget: Duration::from_secs(120), run: end_to_end },
        Criterion { name: "full-scale-ingest", budget: Duration::from_secs(600), run: full_scale_ingest },
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for c in &criteria {
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(c.run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| (*s).to_owned()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let elapsed = start.elapsed();
        let (pass, detail) = match outcome {
            Ok(d) if elapsed <= c.budget => (true, d),
            Ok(d) => (false, format!("{d}; over budget")),
            Err(e) => (false, e),
        };
        if !pass {
            failed += 1;
        }
        println!(
            "{} {:<20} {:>8.2}s / {:>3}s  {}",
            if pass { "PASS" } else { "FAIL" },
            c.name,
            elapsed.as_secs_f64(),
            c.budget.as_secs(),
            detail
        );
    }
    println!("{} passed, {} failed", criteria.len() - failed, failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

// ---------------------------------------------------------------- fusion

fn random_simplex(rng: &mut ChaCha8Rng, c: usize) -> Vec<f64> {
    let mut raw: Vec<f64> = (0..c).map(|_| if rng.gen_bool(0.2) { 0.0 } else { rng.gen_range(0.0..1.0) }).collect();
    if raw.iter().all(|v| *v == 0.0) {
        raw[rng.gen_range(0..c)] = 1.0;
    }
    let s: f64 = raw.iter().sum();
    raw.iter().map(|v| v / s).collect()
}

fn fusion_invariants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let pairs = 10_000;
    let mut worst_sum: f64 = 0.0;
    let mut worst_line: f64 = 0.0;
    for pair in 0..pairs {
        let c = rng.gen_range(2..=16);
        let a = ok(ProbabilityVector::new(random_simplex(&mut rng, c)))?;
        let b = ok(ProbabilityVector::new(random_simplex(&mut rng, c)))?;
        let (av, bv) = (a.values(), b.values());
        for w in FUSION_WEIGHTS {
            let y = ok(fuse(&a, &b, w))?;
            let yv = y.values();
            ensure!(yv.len() == c, "pair {pair}: fused length {} != {c}", yv.len());
            let sum: f64 = yv.iter().sum();
            worst_sum = worst_sum.max((sum - 1.0).abs());
            ensure!((sum - 1.0).abs() <= SIMPLEX_TOL, "pair {pair} w={w}: sum {sum}");
            ensure!(yv.iter().all(|v| (0.0..=1.0).contains(v)), "pair {pair} w={w}: entry outside [0, 1]");
            if w == 0.0 {
                ensure!(
                    yv.iter().zip(av).all(|(p, q)| p.to_bits() == q.to_bits()),
                    "pair {pair}: w=0 is not the image input"
                );
            }
            if w == 1.0 {
                ensure!(
                    yv.iter().zip(bv).all(|(p, q)| p.to_bits() == q.to_bits()),
                    "pair {pair}: w=1 is not the text input"
                );
            }
            for k in 0..c {
                let line = (1.0 - w) * av[k] + w * bv[k];
                worst_line = worst_line.max((yv[k] - line).abs());
                ensure!(
                    (yv[k] - line).abs() <= COLLINEAR_TOL,
                    "pair {pair} w={w} k={k}: {} off the segment",
                    yv[k] - line
                );
            }
        }
    }
    Ok(format!(
        "{pairs} pairs x {} weights; max |sum-1| {worst_sum:.1e}, max distance to segment {worst_line:.1e}",
        FUSION_WEIGHTS.len()
    ))
}

fn fusion_synergy() -> Outcome {
    // Half the examples are right only under the image scores, half only
    // under the text scores; each wrong branch is less confident than the
    // right one, so any weight strictly between the crossover points is
    // right everywhere. Crossovers are at w = 3/11 and 8/11, off the grid.
    let mut ids = Vec::new();
    let mut labels = Vec::new();
    let (mut img, mut txt) = (Vec::new(), Vec::new());
    for i in 0..20 {
        ids.push(format!("ex-{i}"));
        if i % 2 == 0 {
            labels.push(0);
            img.push(vec![0.9, 0.1]);
            txt.push(vec![0.35, 0.65]);
        } else {
            labels.push(1);
            img.push(vec![0.65, 0.35]);
            txt.push(vec![0.1, 0.9]);
        }
    }
    let table = |rows: &[Vec<f64>]| {
        ScoreTable::new(ids.clone(), rows.iter().map(|r| ProbabilityVector::new(r.clone()).unwrap()).collect())
    };
    let (a, b) = (ok(table(&img))?, ok(table(&txt))?);
    let gold = ok(GoldLabels::new(ids.clone(), labels.clone()))?;
    let grid = ok(FusionGrid::default().points())?;
    ensure!(grid.len() == 21 && grid[0] == 0.0 && grid[20] == 1.0, "default grid is {grid:?}");
    let curve = ok(sweep(&a, &b, &gold, &grid))?;

    let oracle = |w: f64| {
        let correct = (0..ids.len())
            .filter(|&i| {
                let p0 = (1.0 - w) * img[i][0] + w * txt[i][0];
                let p1 = (1.0 - w) * img[i][1] + w * txt[i][1];
                usize::from(p1 > p0) == labels[i]
            })
            .count();
        correct as f64 / ids.len() as f64
    };
    for p in &curve {
        ensure!(p.accuracy == oracle(p.w), "w={}: sweep {} vs oracle {}", p.w, p.accuracy, oracle(p.w));
    }
    ensure!(
        curve[0].accuracy == 0.5 && curve[20].accuracy == 0.5,
        "endpoints {} / {}",
        curve[0].accuracy,
        curve[20].accuracy
    );
    let interior = curve[1..20].iter().map(|p| p.accuracy).fold(0.0, f64::max);
    ensure!(interior == 1.0, "best interior accuracy {interior}");
    let stats = ok(aggregate_curves(&[0], std::slice::from_ref(&curve)))?;
    let best = best_weight(&stats).ok_or("no best weight")?;
    ensure!(
        best.w > 0.0 && best.w < 1.0 && best.accuracy.mean == 1.0,
        "best weight {} scores {}",
        best.w,
        best.accuracy.mean
    );
    Ok(format!("endpoints 0.5, best interior w={} scores 1.0", best.w))
}

// ---------------------------------------------------------------- search

fn naive_ranking(bank: &PhraseBank, query: &[f64]) -> Vec<(usize, f64)> {
    let norm = query.iter().map(|v| v * v).sum::<f64>().sqrt();
    let q: Vec<f64> = query.iter().map(|v| v / norm).collect();
    let mut all: Vec<(usize, f64)> = (0..bank.len())
        .map(|i| {
            let mut s = 0.0;
            for (a, b) in bank.row(i).iter().zip(&q) {
                s += f64::from(*a) * b;
            }
            (i, s)
        })
        .collect();
    all.sort_by(|x, y| y.1.partial_cmp(&x.1).unwrap().then(x.0.cmp(&y.0)));
    all
}

fn random_row(rng: &mut ChaCha8Rng, dim: usize, quantized: bool) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim)
            .map(|_| if quantized { f64::from(rng.gen_range(-1i8..=1)) } else { rng.gen_range(-1.0..1.0) })
            .collect();
        if v.iter().any(|x| *x != 0.0) {
            return v;
        }
    }
}

fn mips_exact() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let banks = 200;
    let mut comparisons = 0;
    let mut tied_banks = 0;
    for case in 0..banks {
        let n = if case % 10 == 0 { rng.gen_range(1..=20) } else { rng.gen_range(1..=10_000) };
        let dim = rng.gen_range(1..=64);
        // Quantized rows (and duplicated rows) force exact score ties.
        let quantized = case % 2 == 0;
        let mut rows: Vec<EmbeddingVector> = Vec::with_capacity(n);
        for i in 0..n {
            if i > 0 && rng.gen_bool(0.05) {
                let j = rng.gen_range(0..i);
                rows.push(rows[j].clone());
            } else {
                rows.push(ok(ok(EmbeddingVector::new(random_row(&mut rng, dim, quantized)))?.normalize())?);
            }
        }
        let bank = ok(PhraseBank::from_embeddings((0..n).map(|i| format!("p{i}")).collect(), &rows))?;
        let query = random_row(&mut rng, dim, quantized);
        let expected = naive_ranking(&bank, &query);
        if expected.windows(2).any(|w| w[0].1 == w[1].1) {
            tied_banks += 1;
        }
        let q = ok(EmbeddingVector::new(query))?;
        for k in [1, 5.min(n), n] {
            let plain: Vec<(usize, f64)> = ok(bank.top_k(&q, k))?.into_iter().map(|s| (s.index, s.score)).collect();
            ensure!(plain == expected[..k], "bank {case} (n={n}, d={dim}): top_k k={k} differs from the full sort");
            for shards in [1, 2, 3, 7, 16] {
                let got: Vec<(usize, f64)> =
                    ok(bank.top_k_sharded(&q, k, shards))?.into_iter().map(|s| (s.index, s.score)).collect();
                ensure!(got == expected[..k], "bank {case} (n={n}, d={dim}): k={k} shards={shards} differs");
                comparisons += 1;
            }
        }
    }
    Ok(format!(
        "{banks} banks, {comparisons} sharded searches identical to the full sort; {tied_banks} banks with ties"
    ))
}

// ---------------------------------------------------------------- interrogator

const WORDS: [&str; 14] =
    ["storm", "sea", "wave", "boat", "fire", "smoke", "dark", "sky", "flood", "street", "car", "tree", "roof", "crowd"];

fn random_phrase(rng: &mut ChaCha8Rng) -> String {
    let len = rng.gen_range(1..=3);
    (0..len).map(|_| WORDS[rng.gen_range(0..WORDS.len())]).collect::<Vec<_>>().join(" ")
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

struct GreedyOutcome {
    caption: String,
    chosen: Vec<String>,
    base: f64,
    trace: Vec<f64>,
}

/// Ranks the whole bank by cosine to the image, keeps the first `pool_k`,
/// then at every step scores each remaining candidate appended to the
/// current caption and takes the first strict maximum while it improves.
fn greedy_oracle(
    base: &str,
    image: &[f64],
    bank: &PhraseBank,
    embedder: &MockEmbedder,
    pool_k: usize,
    max_phrases: usize,
) -> GreedyOutcome {
    let pool: Vec<String> =
        naive_ranking(bank, image).into_iter().take(pool_k).map(|(i, _)| bank.phrase(i).to_owned()).collect();
    let sim = |text: &str| cosine(embedder.embed(text).values(), image);
    let join = |caption: &str, p: &str| if caption.is_empty() { p.to_owned() } else { format!("{caption}, {p}") };
    let mut caption = base.to_owned();
    let base_sim = sim(base);
    let mut current = base_sim;
    let mut remaining = pool;
    let (mut chosen, mut trace) = (Vec::new(), Vec::new());
    while chosen.len() < max_phrases && !remaining.is_empty() {
        let scores: Vec<f64> = remaining.iter().map(|p| sim(&join(&caption, p))).collect();
        let mut best = 0;
        for i in 1..scores.len() {
            if scores[i] > scores[best] {
                best = i;
            }
        }
        if scores[best] <= current {
            break;
        }
        let p = remaining.remove(best);
        caption = join(&caption, &p);
        current = scores[best];
        chosen.push(p);
        trace.push(current);
    }
    GreedyOutcome { caption, chosen, base: base_sim, trace }
}

fn interrogator_greedy() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let instances = 100;
    let mut steps = 0;
    for case in 0..instances {
        let dim = rng.gen_range(8..=48);
        let embedder = ok(MockEmbedder::new(dim, case))?;
        let n = rng.gen_range(1..=8);
        let phrases: Vec<String> = (0..n).map(|_| random_phrase(&mut rng)).collect();
        let rows: Vec<EmbeddingVector> = phrases.iter().map(|p| embedder.embed(p)).collect();
        let bank = ok(PhraseBank::from_embeddings(phrases, &rows))?;
        let base = if case % 10 == 0 { String::new() } else { random_phrase(&mut rng) };
        let image = embedder.embed(&format!("{} {}", random_phrase(&mut rng), random_phrase(&mut rng)));
        let config = InterrogationConfig {
            candidate_pool_k: rng.gen_range(1..=8),
            max_phrases: rng.gen_range(1..=8),
            ..InterrogationConfig::default()
        };
        let got = ok(interrogate(&base, &image, &bank, &embedder, &config))?;
        let want =
            greedy_oracle(&base, image.values(), &bank, &embedder, config.candidate_pool_k.min(n), config.max_phrases);
        let got_phrases: Vec<String> = got.selected.iter().map(|s| s.phrase.clone()).collect();
        ensure!(got_phrases == want.chosen, "case {case}: selected {got_phrases:?}, oracle {:?}", want.chosen);
        ensure!(
            got.final_caption == want.caption,
            "case {case}: caption {:?} vs {:?}",
            got.final_caption,
            want.caption
        );
        ensure!((got.base_similarity - want.base).abs() <= TRACE_TOL, "case {case}: base similarity differs");
        ensure!(got.similarity_trace.len() == want.trace.len(), "case {case}: trace length differs");
        for (a, b) in got.similarity_trace.iter().zip(&want.trace) {
            ensure!((a - b).abs() <= TRACE_TOL, "case {case}: trace {a} vs oracle {b}");
        }
        let mut prev = got.base_similarity;
        for s in &got.similarity_trace {
            ensure!(*s >= prev, "case {case}: trace decreases ({prev} -> {s})");
            prev = *s;
        }
        steps += got.similarity_trace.len();
    }
    Ok(format!("{instances} instances, {steps} greedy steps matched; traces non-decreasing"))
}

// ---------------------------------------------------------------- gradient

/// Mean cross-entropy of a dense linear softmax model with row-major `w`.
fn oracle_loss(w: &[f64], b: &[f64], xs: &[Vec<f64>], ys: &[usize]) -> f64 {
    let c = b.len();
    let f = xs[0].len();
    let mut total = 0.0;
    for (x, &y) in xs.iter().zip(ys) {
        let z: Vec<f64> = (0..c).map(|k| b[k] + (0..f).map(|i| w[k * f + i] * x[i]).sum::<f64>()).collect();
        let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        total += lse - z[y];
    }
    total / xs.len() as f64
}

fn gradient_fidelity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let instances = 100;
    let mut worst: f64 = 0.0;
    let mut params = 0;
    for case in 0..instances {
        let c = rng.gen_range(2..=8);
        let f = rng.gen_range(1..=24);
        let names: Vec<String> = (0..c).map(|k| format!("class{k}")).collect();
        let w: Vec<f64> = (0..c * f).map(|_| rng.gen_range(-1.5..1.5)).collect();
        let b: Vec<f64> = (0..c).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let m = rng.gen_range(1..=16);
        let xs: Vec<Vec<f64>> = (0..m)
            .map(|_| (0..f).map(|_| if rng.gen_bool(0.3) { 0.0 } else { rng.gen_range(-1.0..1.0) }).collect())
            .collect();
        let ys: Vec<usize> = (0..m).map(|_| rng.gen_range(0..c)).collect();
        let probe = ok(LinearProbe::from_parts(ok(LabelSpace::new(names))?, f, w.clone(), b.clone()))?;
        let batch: Vec<Sample> = xs
            .iter()
            .zip(&ys)
            .map(|(x, y)| Ok(Sample { features: ok(FeatureVector::from_dense(x))?, label: *y }))
            .collect::<Result<_, String>>()?;
        let (loss, grad) = ok(loss_and_gradient(&probe, &batch))?;
        let reference = oracle_loss(&w, &b, &xs, &ys);
        ensure!(
            (loss - reference).abs() <= 1e-12 * reference.abs().max(1.0),
            "case {case}: loss {loss} vs {reference}"
        );

        let mut theta: Vec<f64> = w.iter().chain(&b).copied().collect();
        let analytic: Vec<f64> = grad.weights.iter().chain(&grad.bias).copied().collect();
        for p in 0..theta.len() {
            let orig = theta[p];
            theta[p] = orig + FD_STEP;
            let up = oracle_loss(&theta[..c * f], &theta[c * f..], &xs, &ys);
            theta[p] = orig - FD_STEP;
            let down = oracle_loss(&theta[..c * f], &theta[c * f..], &xs, &ys);
            theta[p] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let rel = (analytic[p] - numeric).abs() / (analytic[p].abs() + numeric.abs()).max(GRAD_FLOOR);
            worst = worst.max(rel);
            ensure!(
                rel < GRAD_REL_TOL,
                "case {case} param {p}: analytic {} numeric {numeric} (rel {rel:.2e})",
                analytic[p]
            );
        }
        params += theta.len();
    }
    Ok(format!("{instances} instances, {params} parameters; max relative error {worst:.2e}"))
}

// ---------------------------------------------------------------- training

/// Accuracy recomputed from the probe parameters.
fn oracle_accuracy(probe: &LinearProbe, samples: &[Sample]) -> f64 {
    let (c, f) = (probe.classes(), probe.features());
    let correct = samples
        .iter()
        .filter(|s| {
            let x = s.features.to_dense();
            let z: Vec<f64> = (0..c)
                .map(|k| probe.bias()[k] + (0..f).map(|i| probe.weights()[k * f + i] * x[i]).sum::<f64>())
                .collect();
            let mut best = 0;
            for k in 1..c {
                if z[k] > z[best] {
                    best = k;
                }
            }
            best == s.label
        })
        .count();
    correct as f64 / samples.len() as f64
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
    (mean, var.sqrt())
}

type SplitSamples = (Vec<Sample>, Vec<Sample>);

fn system_samples(data: &dataset::SynthDataset, image: bool) -> Result<SplitSamples, String> {
    let m = &data.manifest;
    if image {
        Ok((
            ok(embedding_samples(m.split(Split::Train), &data.embeddings[0]))?,
            ok(embedding_samples(m.split(Split::Test), &data.embeddings[2]))?,
        ))
    } else {
        Ok((
            ok(text_samples(m.split(Split::Train), DEFAULT_TEXT_FEATURES))?,
            ok(text_samples(m.split(Split::Test), DEFAULT_TEXT_FEATURES))?,
        ))
    }
}

fn training_sanity() -> Outcome {
    let defaults = TrainConfig::default();
    ensure!(
        defaults.learning_rate == 1e-4 && defaults.batch_size == 128 && defaults.epochs == 30,
        "unexpected defaults {defaults:?}"
    );
    let classes = 3;
    let clean =
        ok(synth_dataset(&SynthConfig { seed: 11, noise: 0.0, classes, n_per_class: 100, ..SynthConfig::default() }))?;
    let mut parts = Vec::new();
    for (name, image) in [("caption", false), ("image", true)] {
        let (tr, _) = system_samples(&clean, image)?;
        let outcome = ok(train(clean.manifest.label_space(), &tr, None, &defaults))?;
        let acc = oracle_accuracy(&outcome.probe, &tr);
        ensure!(acc == 1.0, "{name}: train accuracy {acc} at noise 0");
        parts.push(format!("{name} noise=0 train 100%"));
    }
    let chance = 1.0 / classes as f64;
    for (name, image) in [("caption", false), ("image", true)] {
        let mut accs = Vec::new();
        for seed in 0..5u64 {
            let noisy = ok(synth_dataset(&SynthConfig {
                seed: 500 + seed,
                noise: 1.0,
                classes,
                n_per_class: 200,
                ..SynthConfig::default()
            }))?;
            let (tr, te) = system_samples(&noisy, image)?;
            let outcome =
                ok(train(noisy.manifest.label_space(), &tr, None, &TrainConfig { seed, ..defaults.clone() }))?;
            accs.push(oracle_accuracy(&outcome.probe, &te));
        }
        let (mean, std) = mean_std(&accs);
        ensure!(
            (mean - chance).abs() <= CHANCE_TOL,
            "{name}: noise=1 test accuracy {mean:.4} ± {std:.4}, chance {chance:.4}"
        );
        parts.push(format!("{name} noise=1 test {mean:.4} ± {std:.4}"));
    }
    Ok(parts.join("; "))
}

// ---------------------------------------------------------------- formats

fn variant(debug: String) -> String {
    debug.split(|c: char| !c.is_alphanumeric() && c != '_').next().unwrap_or_default().to_owned()
}

/// Errors must differ pairwise in variant (when `by_variant`) and message.
fn distinct(format: &str, errors: &[(&str, String, String)], by_variant: bool) -> Result<usize, String> {
    let messages: BTreeSet<&String> = errors.iter().map(|e| &e.2).collect();
    ensure!(messages.len() == errors.len(), "{format}: corruptions share an error message: {errors:?}");
    if by_variant {
        let variants: BTreeSet<&String> = errors.iter().map(|e| &e.1).collect();
        ensure!(variants.len() == errors.len(), "{format}: corruptions share an error kind: {errors:?}");
    }
    Ok(errors.len())
}

fn format_round_trips() -> Outcome {
    let dir = ok(tempfile::tempdir())?;
    let d = dir.path();
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut corruptions = 0;

    // Bank.
    let n = 300;
    let rows: Vec<EmbeddingVector> = (0..n)
        .map(|_| ok(ok(EmbeddingVector::new(random_row(&mut rng, 33, false)))?.normalize()))
        .collect::<Result<_, _>>()?;
    let phrases: Vec<String> = (0..n).map(|i| format!("phrase {i} ✓ «{}»\t\\n", "z".repeat(i % 7))).collect();
    let bank = ok(PhraseBank::from_embeddings(phrases, &rows))?;
    let bank_path = d.join("bank.emb");
    ok(bank.write(&bank_path))?;
    let first = ok(fs::read(&bank_path))?;
    let back = ok(PhraseBank::read(&bank_path))?;
    ensure!(back.phrases() == bank.phrases(), "bank phrases changed");
    ensure!(back.matrix().iter().zip(bank.matrix()).all(|(a, b)| a.to_bits() == b.to_bits()), "bank matrix changed");
    ok(back.write(&d.join("bank2.emb")))?;
    ensure!(ok(fs::read(d.join("bank2.emb")))? == first, "bank bytes changed on rewrite");
    let mut bank_errors = Vec::new();
    let mut corrupt_bank = |name: &'static str, bytes: Vec<u8>| -> Result<(), String> {
        let p = d.join(format!("bad-{name}.emb"));
        ok(fs::write(&p, bytes))?;
        let e = PhraseBank::read(&p).err().ok_or(format!("bank corruption {name} was accepted"))?;
        bank_errors.push((name, variant(format!("{e:?}")), e.to_string()));
        Ok(())
    };
    let mut magic = first.clone();
    magic[..4].copy_from_slice(b"NOPE");
    corrupt_bank("magic", magic)?;
    let mut version = first.clone();
    version[4] = 7;
    corrupt_bank("version", version)?;
    corrupt_bank("truncated", first[..first.len() - 5].to_vec())?;
    let mut trailing = first.clone();
    trailing.extend_from_slice(b"extra");
    corrupt_bank("trailing", trailing)?;
    corruptions += distinct("bank", &bank_errors, true)?;

    // Probe.
    let labels = ok(LabelSpace::new(["flood", "fire", "quake"]))?;
    let texts = ["water in the street", "flames over roofs", "cracked road", "river flood", "smoke", "rubble"];
    let data: Vec<Sample> = texts
        .iter()
        .enumerate()
        .map(|(i, t)| Ok(Sample { features: ok(featurize_text(t, 256))?, label: i % 3 }))
        .collect::<Result<_, String>>()?;
    let probe =
        ok(train(&labels, &data, None, &TrainConfig { epochs: 5, batch_size: 2, seed: 9, ..TrainConfig::default() }))?
            .probe;
    let probe_path = d.join("p.probe");
    ok(probe.write(&probe_path))?;
    let pbytes = ok(fs::read(&probe_path))?;
    let pback = ok(LinearProbe::read(&probe_path))?;
    ensure!(pback.label_space() == probe.label_space() && pback.config() == probe.config(), "probe metadata changed");
    ensure!(
        pback
            .weights()
            .iter()
            .chain(pback.bias())
            .zip(probe.weights().iter().chain(probe.bias()))
            .all(|(a, b)| *a == f64::from(*b as f32)),
        "probe parameters are not the f32 rounding of the originals"
    );
    ok(pback.write(&d.join("p2.probe")))?;
    ensure!(ok(fs::read(d.join("p2.probe")))? == pbytes, "probe bytes changed on rewrite");
    let mut probe_errors = Vec::new();
    let mut corrupt_probe = |name: &'static str, bytes: Vec<u8>| -> Result<(), String> {
        let e = LinearProbe::from_bytes(&bytes).err().ok_or(format!("probe corruption {name} was accepted"))?;
        probe_errors.push((name, variant(format!("{e:?}")), e.to_string()));
        Ok(())
    };
    let mut magic = pbytes.clone();
    magic[0] = b'X';
    corrupt_probe("magic", magic)?;
    let mut version = pbytes.clone();
    version[4] = 3;
    corrupt_probe("version", version)?;
    let mut header = pbytes.clone();
    header[12] = b'!';
    corrupt_probe("header", header)?;
    corrupt_probe("truncated", pbytes[..pbytes.len() - 4].to_vec())?;
    corruptions += distinct("probe", &probe_errors, true)?;

    // Manifest.
    let ex = |id: &str, caption: Option<&str>, label| Example {
        id: id.into(),
        image_ref: format!("images/{id}.jpg"),
        caption: caption.map(str::to_owned),
        label,
    };
    let manifest = ok(Manifest::new(
        "fmt",
        labels.clone(),
        vec![ex("a", Some("tab\tand\\backslash"), 0), ex("b", None, 1), ex("c", Some("ünïcode ✓"), 2)],
        vec![ex("d", Some("two\nlines\r"), 1)],
        vec![ex("e", Some("plain"), 2)],
    ))?;
    let mdir = d.join("manifest");
    ok(write_manifest(&manifest, &mdir))?;
    let snapshot: Vec<Vec<u8>> =
        Split::ALL.iter().map(|s| fs::read(dataset::split_path(&mdir, "fmt", *s)).unwrap_or_default()).collect();
    let space = ok(read_label_space(&dataset::labels_path(&mdir, "fmt")))?;
    let mback = ok(load_manifest(&mdir, "fmt", &space))?;
    ensure!(mback == manifest, "manifest changed on round trip");
    ok(write_manifest(&mback, &mdir))?;
    for (s, before) in Split::ALL.iter().zip(&snapshot) {
        ensure!(
            &ok(fs::read(dataset::split_path(&mdir, "fmt", *s)))? == before,
            "{s} manifest bytes changed on rewrite"
        );
    }
    let header = "id\timage_ref\tcaption\tlabel\n";
    let mut manifest_errors = Vec::new();
    for (name, body) in [
        ("header", "id\tlabel\n".to_owned()),
        ("columns", format!("{header}a\tx\n")),
        ("label", format!("{header}a\tx\t\tnope\n")),
        ("duplicate", format!("{header}a\tx\t\tfire\na\ty\t\tflood\n")),
        ("escape", format!("{header}a\tx\tbad\\q\tfire\n")),
    ] {
        let p = d.join(format!("bad-{name}.tsv"));
        ok(fs::write(&p, body))?;
        let e = read_split(&p, &labels).err().ok_or(format!("manifest corruption {name} was accepted"))?;
        manifest_errors.push((name, variant(format!("{e:?}")), e.to_string()));
    }
    let e = read_split(&d.join("absent.tsv"), &labels).err().ok_or("missing manifest was accepted")?;
    manifest_errors.push(("missing", variant(format!("{e:?}")), e.to_string()));
    corruptions += distinct("manifest", &manifest_errors, true)?;

    // Score table.
    let rows: Vec<ProbabilityVector> = (0..200)
        .map(|_| ProbabilityVector::new(random_simplex(&mut rng, 4)))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let table = ok(ScoreTable::new((0..200).map(|i| format!("test-{i:06}")).collect(), rows))?;
    let spath = d.join("s.tsv");
    ok(table.write(&spath, 4))?;
    let sbytes = ok(fs::read(&spath))?;
    let sback = ok(ScoreTable::read(&spath))?;
    ensure!(sback.ids() == table.ids(), "score ids changed");
    for (a, b) in sback.rows().iter().zip(table.rows()) {
        ensure!(a.values().iter().zip(b.values()).all(|(x, y)| x.to_bits() == y.to_bits()), "score values changed");
    }
    ok(sback.write(&d.join("s2.tsv"), 4))?;
    ensure!(ok(fs::read(d.join("s2.tsv")))? == sbytes, "score bytes changed on rewrite");
    let mut score_errors = Vec::new();
    for (name, body) in [
        ("header", "key\tp_0\tp_1\n"),
        ("columns", "id\tp_0\tp_1\na\t0.5\n"),
        ("number", "id\tp_0\tp_1\na\t0.5\tzz\n"),
        ("duplicate", "id\tp_0\tp_1\na\t0.5\t0.5\na\t0.5\t0.5\n"),
    ] {
        let e = ScoreTable::parse(body, "s.tsv").err().ok_or(format!("score corruption {name} was accepted"))?;
        score_errors.push((name, variant(format!("{e:?}")), e.to_string()));
    }
    let e = ScoreTable::read(&d.join("absent.tsv")).err().ok_or("missing score file was accepted")?;
    score_errors.push(("missing", variant(format!("{e:?}")), e.to_string()));
    corruptions += distinct("scores", &score_errors, false)?;

    Ok(format!("bank, probe, manifest and score files rewrite byte-identically; {corruptions} corruptions rejected with distinct errors"))
}

// ---------------------------------------------------------------- CLI

fn lbm(args: &[&str]) -> Result<String, String> {
    let out = ok(Command::new(env!("CARGO_BIN_EXE_lbm")).args(args).output())?;
    if !out.status.success() {
        return Err(format!(
            "`lbm {}` exited with {:?}: {}",
            args.join(" "),
            out.status.code(),
            String::from_utf8_lossy(&out.stderr).trim()
        ));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn read_json(path: &Path) -> Result<Value, String> {
    serde_json::from_str(&ok(fs::read_to_string(path))?).map_err(|e| format!("{}: {e}", path.display()))
}

/// Accuracy of the argmax of every score row, parsed here from the TSV.
fn score_file_accuracy(path: &Path, gold: &BTreeMap<String, usize>) -> Result<f64, String> {
    let text = ok(fs::read_to_string(path))?;
    let mut lines = text.lines();
    ensure!(lines.next().is_some_and(|h| h.starts_with("id\t")), "{}: bad header", path.display());
    let (mut correct, mut total) = (0usize, 0usize);
    for line in lines {
        let mut cols = line.split('\t');
        let id = cols.next().ok_or("empty row")?;
        let probs: Vec<f64> = cols.map(|c| c.parse::<f64>().map_err(|e| e.to_string())).collect::<Result<_, _>>()?;
        let mut best = 0;
        for k in 1..probs.len() {
            if probs[k] > probs[best] {
                best = k;
            }
        }
        let label = gold.get(id).ok_or(format!("{}: unknown id {id}", path.display()))?;
        correct += usize::from(best == *label);
        total += 1;
    }
    ensure!(total == gold.len(), "{}: {total} rows for {} examples", path.display(), gold.len());
    Ok(correct as f64 / total as f64)
}

const STAGES: [&str; 7] = ["data", "captioned", "interrogated", "probes", "scores", "fusion", "report"];

fn run_chain(out: &Path) -> Result<(), String> {
    let o = out.to_str().ok_or("non-utf8 path")?;
    let common = ["--out", o, "--seed", "7"];
    let steps: [&[&str]; 7] = [
        &["synth", "--classes", "3", "--n-per-class", "300", "--noise", "0.3"],
        &["caption", "--backend", "cache"],
        &["interrogate", "--backend", "mock"],
        &["train"],
        &["score"],
        &["fuse"],
        &["report"],
    ];
    for step in steps {
        let args: Vec<&str> = step.iter().chain(&common).copied().collect();
        lbm(&args)?;
    }
    Ok(())
}

fn end_to_end() -> Outcome {
    let root = ok(tempfile::tempdir())?;
    let (run1, run2) = (root.path().join("run1"), root.path().join("nested/run2"));
    run_chain(&run1)?;

    let labels = ok(read_label_space(&run1.join("data/synth.labels")))?;
    let test = ok(read_split(&run1.join("data/synth.test.tsv"), &labels))?;
    let gold: BTreeMap<String, usize> = test.iter().map(|e| (e.id.clone(), e.label)).collect();
    let fusion = read_json(&run1.join("fusion/fusion.json"))?;
    let image = fusion["image_system"].as_str().ok_or("fusion.json lacks image_system")?.to_owned();
    let text = fusion["text_system"].as_str().ok_or("fusion.json lacks text_system")?.to_owned();
    let per_trial = fusion["curves"]["test"]["per_trial"].as_array().ok_or("fusion.json lacks test curves")?;
    ensure!(per_trial.len() == 5, "{} trials in the sweep", per_trial.len());
    for (trial, curve) in per_trial.iter().enumerate() {
        let points = curve.as_array().ok_or("curve is not a list")?;
        ensure!(points.len() == 21, "trial {trial}: {} grid points", points.len());
        let (first, last) = (&points[0], &points[points.len() - 1]);
        ensure!(first["w"] == 0.0 && last["w"] == 1.0, "trial {trial}: grid does not span [0, 1]");
        let img_acc = score_file_accuracy(&run1.join(format!("scores/{image}.trial{trial}.test.tsv")), &gold)?;
        let txt_acc = score_file_accuracy(&run1.join(format!("scores/{text}.trial{trial}.test.tsv")), &gold)?;
        ensure!(
            first["accuracy"].as_f64() == Some(img_acc),
            "trial {trial}: w=0 gives {} but {image} alone scores {img_acc}",
            first["accuracy"]
        );
        ensure!(
            last["accuracy"].as_f64() == Some(txt_acc),
            "trial {trial}: w=1 gives {} but {text} alone scores {txt_acc}",
            last["accuracy"]
        );
    }
    let table = ok(fs::read_to_string(run1.join("report/table.txt")))?;
    ensure!(table.contains("Fusion (dev-selected w)"), "report table lacks the fusion row");

    run_chain(&run2)?;
    let mut files = 0;
    for stage in STAGES {
        let a = ok(fs::read(run1.join(stage).join("outputs.json")))?;
        let b = ok(fs::read(run2.join(stage).join("outputs.json")))?;
        ensure!(a == b, "{stage}: output hashes differ between reruns");
        let snap_a = ok(fs::read(run1.join(stage).join("config.toml")))?;
        let snap_b = ok(fs::read(run2.join(stage).join("config.toml")))?;
        ensure!(snap_a == snap_b, "{stage}: config snapshots differ between reruns");
        files += read_json(&run1.join(stage).join("outputs.json"))?["files"].as_array().map_or(0, Vec::len);
    }
    Ok(format!("7 stages; sweep endpoints equal single-modal accuracies in all 5 trials; rerun reproduced {files} output hashes"))
}

// ---------------------------------------------------------------- full-scale fixtures

struct TaskCounts {
    task: &'static str,
    classes: usize,
    counts: [usize; 3],
}

const FULL_SCALE: [TaskCounts; 2] = [
    TaskCounts { task: "types", classes: 7, counts: [12_724, 1_574, 3_213] },
    TaskCounts { task: "severity", classes: 3, counts: [26_898, 2_898, 5_100] },
];

const FIXTURE_DIM: usize = 16;

/// Writes manifests, labels, a flavor bank and a backend cache for a task
/// with the given split sizes.
fn write_fixture(dir: &Path, task_counts: &TaskCounts, seed: u64) -> Result<PathBuf, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names: Vec<String> = (0..task_counts.classes).map(|c| format!("class_{c}")).collect();
    let labels = ok(LabelSpace::new(names.clone()))?;
    let centroids: Vec<Vec<f64>> = (0..task_counts.classes).map(|_| random_row(&mut rng, FIXTURE_DIM, false)).collect();
    let mut splits: Vec<Vec<Example>> = Vec::new();
    let mut captions = Vec::new();
    let (mut image_ids, mut image_rows) = (Vec::new(), Vec::new());
    for (split, n) in Split::ALL.iter().zip(task_counts.counts) {
        let mut examples = Vec::with_capacity(n);
        for i in 0..n {
            let id = format!("{}-{split}-{i:06}", task_counts.task);
            let label = rng.gen_range(0..task_counts.classes);
            let seen = if rng.gen_bool(0.3) { rng.gen_range(0..task_counts.classes) } else { label };
            captions.push((
                id.clone(),
                format!("a photo of {} near {}", names[seen], WORDS[rng.gen_range(0..WORDS.len())]),
            ));
            let v: Vec<f64> = centroids[seen].iter().map(|c| c + rng.gen_range(-0.5..0.5)).collect();
            image_rows.push(ok(EmbeddingVector::new(v))?);
            image_ids.push(id.clone());
            examples.push(Example { image_ref: format!("images/{id}.jpg"), id, caption: None, label });
        }
        splits.push(examples);
    }
    let test = splits.pop().unwrap_or_default();
    let dev = splits.pop().unwrap_or_default();
    let train_split = splits.pop().unwrap_or_default();
    let manifest = ok(Manifest::new(task_counts.task, labels, train_split, dev, test))?;
    let source = dir.join(format!("{}-source", task_counts.task));
    ok(write_manifest(&manifest, &source))?;

    let embedder = ok(MockEmbedder::new(FIXTURE_DIM, 0))?;
    let phrases: Vec<String> = names
        .iter()
        .flat_map(|n| [n.clone(), format!("{n} damage")])
        .chain(WORDS.iter().map(|w| (*w).to_owned()))
        .collect();
    let rows: Vec<EmbeddingVector> = phrases.iter().map(|p| embedder.embed(p)).collect();
    ok(ok(PhraseBank::from_embeddings(phrases, &rows))?.write(&dataset::flavors_path(&source, task_counts.task)))?;

    let images = ok(PhraseBank::from_embeddings(image_ids, &image_rows))?;
    let cache = dir.join(format!("{}-cache", task_counts.task));
    ok(CacheBackend::write(&cache, &captions, Some(&images), None))?;
    Ok(cache)
}

fn full_scale_ingest() -> Outcome {
    let root = ok(tempfile::tempdir())?;
    let config = root.path().join("reduced.toml");
    ok(fs::write(
        &config,
        "trials = 1\ntext_features = 4096\n\n[train]\nepochs = 2\n\n[interrogation]\ncandidate_pool_k = 4\nmax_phrases = 2\n\n[backend]\ndim = 16\n",
    ))?;
    let config = config.to_str().ok_or("non-utf8 path")?.to_owned();
    let mut runs = Vec::new();
    for (i, task_counts) in FULL_SCALE.iter().enumerate() {
        let cache = write_fixture(root.path(), task_counts, 900 + i as u64)?;
        let source = root.path().join(format!("{}-source", task_counts.task));
        let out = root.path().join(format!("{}-run", task_counts.task));
        let (src, o, c) =
            (source.to_str().unwrap_or_default(), out.to_str().unwrap_or_default(), cache.to_str().unwrap_or_default());
        let printed = lbm(&["ingest", "--task", task_counts.task, "--source", src, "--out", o])?;
        let counts = read_json(&out.join("data/counts.json"))?;
        let got = [&counts["train"], &counts["dev"], &counts["test"]].map(|v| v.as_u64().unwrap_or(0) as usize);
        ensure!(got == task_counts.counts, "{}: ingested {got:?}, expected {:?}", task_counts.task, task_counts.counts);
        ensure!(
            counts["classes"].as_u64() == Some(task_counts.classes as u64),
            "{}: {} classes",
            task_counts.task,
            counts["classes"]
        );
        ensure!(
            printed.contains(&format!("{}: {} classes", task_counts.task, task_counts.classes))
                && printed.contains(&format!("{:>8}", task_counts.counts[0])),
            "{}: ingest summary {printed:?}",
            task_counts.task
        );
        let common = ["--task", task_counts.task, "--out", o, "--config", config.as_str()];
        let steps: [Vec<&str>; 6] = [
            vec!["caption", "--backend", "cache", "--cache", c],
            vec!["interrogate", "--backend", "mock"],
            vec!["train"],
            vec!["score"],
            vec!["fuse"],
            vec!["report"],
        ];
        for step in steps {
            let args: Vec<&str> = step.into_iter().chain(common).collect();
            lbm(&args)?;
        }
        runs.push(out);
    }
    let (first, rest) = (runs[0].to_str().unwrap_or_default(), runs[1].to_str().unwrap_or_default());
    lbm(&["report", "--task", "types", "--out", first, "--config", config.as_str(), "--compare", rest])?;
    let table = ok(fs::read_to_string(runs[0].join("report/table.txt")))?;
    for needle in [
        "Test accuracies (%)",
        "types (1 trials)",
        "severity (1 trials)",
        "Image-based",
        "Text-based",
        "Fusion (dev-selected w)",
    ] {
        ensure!(table.contains(needle), "table lacks {needle:?}:\n{table}");
    }
    Ok("types 12724/1574/3213 (C=7) and severity 26898/2898/5100 (C=3) ingested; side-by-side table emitted".into())
}
