//! Built-in oracle suites for checking an installation.

use std::path::Path;
use std::time::Instant;

use anyhow::{bail, ensure, Context, Result};
use lbm_core::dataset::{load_manifest, write_manifest, Example, Manifest};
use lbm_core::fusion::{fuse, ScoreTable};
use lbm_core::probe::{grad_check, FeatureVector, LinearProbe, Sample};
use lbm_core::{EmbeddingVector, LabelSpace, PhraseBank, ProbabilityVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct SuiteResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

type Suite<'a> = Box<dyn Fn() -> Result<String> + 'a>;

pub fn run(bank_fixture: Option<&Path>) -> Vec<SuiteResult> {
    let suites: [(&'static str, Suite<'_>); 4] = [
        ("top-k", Box::new(top_k_suite)),
        ("grad-check", Box::new(grad_check_suite)),
        ("fusion", Box::new(fusion_suite)),
        ("formats", Box::new(move || formats_suite(bank_fixture))),
    ];
    suites
        .into_iter()
        .map(|(name, suite)| {
            let start = Instant::now();
            let outcome = suite();
            let seconds = start.elapsed().as_secs_f64();
            match outcome {
                Ok(detail) => SuiteResult { name, passed: true, detail, seconds },
                Err(e) => SuiteResult { name, passed: false, detail: format!("{e:#}"), seconds },
            }
        })
        .collect()
}

pub fn render(results: &[SuiteResult]) -> String {
    let mut out = format!("{:<12} {:<6} {:>8}  detail\n", "suite", "result", "seconds");
    for r in results {
        let status = if r.passed { "PASS" } else { "FAIL" };
        out.push_str(&format!("{:<12} {:<6} {:>8.2}  {}\n", r.name, status, r.seconds, r.detail));
    }
    out
}

fn unit(rng: &mut ChaCha8Rng, dim: usize, quantized: bool) -> EmbeddingVector {
    loop {
        let v: Vec<f64> = (0..dim)
            .map(|_| if quantized { f64::from(rng.gen_range(-1i8..=1)) } else { rng.gen_range(-1.0..1.0) })
            .collect();
        if let Ok(u) = EmbeddingVector::new(v).and_then(|e| e.normalize()) {
            return u;
        }
    }
}

fn top_k_suite() -> Result<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let banks = 30;
    let mut comparisons = 0;
    for case in 0..banks {
        let n = rng.gen_range(1..=2000);
        let dim = rng.gen_range(2..=32);
        let quantized = case % 2 == 0;
        let rows: Vec<EmbeddingVector> = (0..n).map(|_| unit(&mut rng, dim, quantized)).collect();
        let bank = PhraseBank::from_embeddings((0..n).map(|i| i.to_string()).collect(), &rows)?;
        let query = unit(&mut rng, dim, false);
        let norm = query.values().iter().map(|v| v * v).sum::<f64>().sqrt();
        let q: Vec<f64> = query.values().iter().map(|v| v / norm).collect();
        let mut all: Vec<(usize, f64)> =
            (0..n).map(|i| (i, bank.row(i).iter().zip(&q).map(|(a, b)| f64::from(*a) * b).sum())).collect();
        all.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        for k in [1, 5.min(n), n] {
            for shards in [1, 2, 3, 7, 16] {
                let got: Vec<(usize, f64)> =
                    bank.top_k_sharded(&query, k, shards)?.into_iter().map(|s| (s.index, s.score)).collect();
                ensure!(got == all[..k], "bank {case}: k={k} shards={shards} differs from brute force");
                comparisons += 1;
            }
        }
    }
    Ok(format!("{banks} banks, {comparisons} comparisons identical to brute force"))
}

fn random_probe(rng: &mut ChaCha8Rng) -> Result<(LinearProbe, Vec<Sample>)> {
    let classes = rng.gen_range(2..=6);
    let features = rng.gen_range(1..=12);
    let names: Vec<String> = (0..classes).map(|c| format!("c{c}")).collect();
    let weights = (0..classes * features).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let bias = (0..classes).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let probe = LinearProbe::from_parts(LabelSpace::new(names)?, features, weights, bias)?;
    let batch = (0..rng.gen_range(1..=8))
        .map(|_| {
            let x: Vec<f64> = (0..features).map(|_| rng.gen_range(-1.0..1.0)).collect();
            Ok(Sample { features: FeatureVector::from_dense(&x)?, label: rng.gen_range(0..classes) })
        })
        .collect::<Result<_>>()?;
    Ok((probe, batch))
}

fn grad_check_suite() -> Result<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x6ead);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let (probe, batch) = random_probe(&mut rng)?;
        worst = worst.max(grad_check(&probe, &batch)?);
    }
    ensure!(worst < 1e-4, "max relative error {worst:.3e} exceeds 1e-4");
    Ok(format!("max relative error {worst:.3e} over 100 instances"))
}

fn simplex(rng: &mut ChaCha8Rng, c: usize) -> ProbabilityVector {
    let raw: Vec<f64> = (0..c).map(|_| rng.gen_range(1e-9..1.0)).collect();
    let s: f64 = raw.iter().sum();
    ProbabilityVector::new(raw.iter().map(|v| v / s).collect()).expect("normalized")
}

fn fusion_suite() -> Result<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(0xf05e);
    let weights = [0.0, 0.25, 0.5, 0.75, 1.0];
    let pairs = 1000;
    for _ in 0..pairs {
        let c = rng.gen_range(2..=10);
        let (a, b) = (simplex(&mut rng, c), simplex(&mut rng, c));
        let fused: Vec<ProbabilityVector> = weights.iter().map(|w| fuse(&a, &b, *w)).collect::<Result<_, _>>()?;
        for f in &fused {
            let sum: f64 = f.values().iter().sum();
            ensure!((sum - 1.0).abs() <= 1e-9 && f.values().iter().all(|v| *v >= 0.0), "fused vector left the simplex");
        }
        ensure!(fused[0].values() == a.values() && fused[4].values() == b.values(), "endpoints are not exact");
        for k in 0..c {
            let (y0, y5, y1) = (fused[0].values()[k], fused[2].values()[k], fused[4].values()[k]);
            ensure!((y5 - (y0 + y1) / 2.0).abs() <= 1e-12, "fused entries are not linear in w");
        }
    }
    Ok(format!("{pairs} pairs x {} weights: on simplex, exact endpoints, linear in w", weights.len()))
}

fn formats_suite(bank_fixture: Option<&Path>) -> Result<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(0xf11e);
    let rows: Vec<EmbeddingVector> = (0..64).map(|_| unit(&mut rng, 16, false)).collect();
    let bank = PhraseBank::from_embeddings((0..64).map(|i| format!("phrase {i}\twith tab")).collect(), &rows)?;
    let back = PhraseBank::from_bytes(&bank.to_bytes())?;
    ensure!(back.phrases() == bank.phrases(), "bank phrases changed");
    ensure!(back.matrix().iter().zip(bank.matrix()).all(|(a, b)| a.to_bits() == b.to_bits()), "bank payload changed");

    let (probe, _) = random_probe(&mut rng)?;
    let bytes = probe.to_bytes();
    let reread = LinearProbe::from_bytes(&bytes)?;
    ensure!(reread.to_bytes() == bytes, "probe bytes changed on round trip");
    ensure!(
        reread.weights().iter().zip(probe.weights()).all(|(a, b)| *a == f64::from(*b as f32)),
        "probe weights are not exact at f32"
    );

    let table =
        ScoreTable::new((0..32).map(|i| format!("id-{i}")).collect(), (0..32).map(|_| simplex(&mut rng, 5)).collect())?;
    ensure!(ScoreTable::parse(&table.to_tsv(5), "memory")? == table, "score table changed on round trip");

    let dir = std::env::temp_dir().join(format!("lbm-selftest-{}", std::process::id()));
    let manifest_result = manifest_round_trip(&dir);
    let _ = std::fs::remove_dir_all(&dir);
    manifest_result?;

    let mut detail = "bank, probe, score table and manifest round trips exact".to_owned();
    if let Some(path) = bank_fixture {
        let fixture = PhraseBank::read(path).with_context(|| format!("bank fixture {}", path.display()))?;
        let on_disk = std::fs::read(path)?;
        if fixture.to_bytes() != on_disk {
            bail!("bank fixture {} does not re-serialize to the same bytes", path.display());
        }
        detail.push_str(&format!("; fixture {} ok ({} phrases)", path.display(), fixture.len()));
    }
    Ok(detail)
}

fn manifest_round_trip(dir: &Path) -> Result<()> {
    let labels = LabelSpace::new(["flood", "not disaster"])?;
    let ex = |id: &str, caption: Option<&str>, label| Example {
        id: id.into(),
        image_ref: format!("images/{id}.jpg"),
        caption: caption.map(str::to_owned),
        label,
    };
    let manifest = Manifest::new(
        "selftest",
        labels.clone(),
        vec![ex("a", Some("tab\there and a \\ backslash"), 0), ex("b", None, 1)],
        vec![ex("c", Some("two\nlines"), 1)],
        vec![ex("d", Some("ünïcode"), 0)],
    )?;
    write_manifest(&manifest, dir)?;
    ensure!(load_manifest(dir, "selftest", &labels)? == manifest, "manifest changed on round trip");
    Ok(())
}
