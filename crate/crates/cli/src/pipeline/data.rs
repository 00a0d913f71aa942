//! Data stages: ingest, synth, caption, interrogate.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use lbm_core::backends::cache::CacheBackend;
use lbm_core::backends::http::HttpBackend;
use lbm_core::backends::mock::{MockCaptioner, MockEmbedder};
use lbm_core::backends::{CaptionProvider, ImageEmbedder, ImageRef, TextEmbedder};
use lbm_core::dataset::{
    self, load_manifest, read_label_space, read_split, synth_dataset, write_split, Example, Manifest,
};
use lbm_core::interrogator::{interrogate, InterrogationResult};
use lbm_core::{EmbeddingVector, LabelSpace, PhraseBank, Split};
use rayon::prelude::*;
use serde::Serialize;

use super::{ids, load_id_bank, Ctx, CAPTIONED_DIR, DATA_DIR, INTERROGATED_DIR};
use crate::config::BackendKind;
use crate::error::invalid;
use crate::stage::{require, FileGuard, Stage};

#[derive(Serialize)]
struct Counts<'a> {
    task: &'a str,
    classes: usize,
    labels: &'a [String],
    train: usize,
    dev: usize,
    test: usize,
    warnings: Vec<String>,
}

fn write_counts(stage: &Stage, manifest: &Manifest) -> Result<()> {
    let [train, dev, test] = manifest.counts();
    let counts = Counts {
        task: manifest.task_name(),
        classes: manifest.label_space().len(),
        labels: manifest.label_space().names(),
        train,
        dev,
        test,
        warnings: manifest.warnings(),
    };
    stage.write_json("counts.json", &counts)?;
    Ok(())
}

fn print_counts(manifest: &Manifest) {
    let [train, dev, test] = manifest.counts();
    println!("task {}: {} classes", manifest.task_name(), manifest.label_space().len());
    println!("  train {train:>8}");
    println!("  dev   {dev:>8}");
    println!("  test  {test:>8}");
    for w in manifest.warnings() {
        log::warn!("{w}");
    }
}

/// Validates manifests from `source` and copies them into `data/`.
pub fn ingest(ctx: &Ctx, source: &Path, labels: Option<&Path>) -> Result<()> {
    let task = ctx.task();
    let labels_file = labels.map_or_else(|| dataset::labels_path(source, task), Path::to_path_buf);
    let mut expected = vec![labels_file.clone()];
    expected.extend(Split::ALL.iter().map(|s| dataset::split_path(source, task, *s)));
    require(&expected, "ingest needs a label file and one manifest per split")?;
    let space = read_label_space(&labels_file)?;
    let manifest = load_manifest(source, task, &space)?;

    let stage = Stage::begin(&ctx.out, DATA_DIR, "ingest")?;
    dataset::write_manifest(&manifest, stage.dir())?;
    let flavors = dataset::flavors_path(source, task);
    if flavors.exists() {
        fs::copy(&flavors, dataset::flavors_path(stage.dir(), task))?;
    }
    write_counts(&stage, &manifest)?;
    let snapshot = ctx.snapshot("ingest", &[("source", ctx.display_path(source))])?;
    stage.commit(&snapshot)?;
    print_counts(&manifest);
    Ok(())
}

pub fn synth(ctx: &Ctx) -> Result<()> {
    let data = synth_dataset(&ctx.config.synth).map_err(|e| invalid(e.to_string()))?;
    let stage = Stage::begin(&ctx.out, DATA_DIR, "synth")?;
    data.write(stage.dir())?;
    write_counts(&stage, &data.manifest)?;
    stage.commit(&ctx.snapshot("synth", &[])?)?;
    print_counts(&data.manifest);
    Ok(())
}

fn cache_dir(ctx: &Ctx) -> PathBuf {
    ctx.config.backend.cache_dir.clone().unwrap_or_else(|| ctx.dir(DATA_DIR).join("cache"))
}

fn open_cache(ctx: &Ctx) -> Result<CacheBackend> {
    let dir = cache_dir(ctx);
    require(std::slice::from_ref(&dir), "set backend.cache_dir or run `lbm synth`")?;
    Ok(CacheBackend::open(&dir, None)?)
}

struct CaptionBackends {
    captioner: Box<dyn CaptionProvider>,
    images: Box<dyn ImageEmbedder>,
}

fn caption_backends(ctx: &Ctx) -> Result<CaptionBackends> {
    let b = &ctx.config.backend;
    Ok(match b.kind {
        BackendKind::Cache => {
            CaptionBackends { captioner: Box::new(open_cache(ctx)?), images: Box::new(open_cache(ctx)?) }
        }
        BackendKind::Mock => CaptionBackends {
            captioner: Box::new(MockCaptioner),
            images: Box::new(MockEmbedder::new(b.dim, b.embed_seed)?),
        },
        BackendKind::Http => CaptionBackends {
            captioner: Box::new(HttpBackend::new(b.http(b.dim)?)?),
            images: Box::new(HttpBackend::new(b.http(b.dim)?)?),
        },
    })
}

/// Image references as the backend should see them.
fn resolve_refs(ctx: &Ctx, examples: &[Example]) -> Vec<String> {
    let root = ctx.config.backend.image_root.as_deref();
    examples
        .iter()
        .map(|e| match (ctx.config.backend.kind, root) {
            (BackendKind::Http, Some(root)) if Path::new(&e.image_ref).is_relative() => {
                root.join(&e.image_ref).display().to_string()
            }
            _ => e.image_ref.clone(),
        })
        .collect()
}

/// Captions every image and stores its embedding next to the manifest.
pub fn caption(ctx: &Ctx) -> Result<()> {
    let gold = ctx.gold()?;
    let backends = caption_backends(ctx)?;
    log::info!("captioning with {}", backends.captioner.descriptor().name);
    let stage = Stage::begin(&ctx.out, CAPTIONED_DIR, "caption")?;
    let task = ctx.task();
    dataset::write_label_space(&dataset::labels_path(stage.dir(), task), gold.label_space())?;
    for split in Split::ALL {
        let examples = gold.split(split);
        let refs = resolve_refs(ctx, examples);
        let images: Vec<ImageRef<'_>> =
            examples.iter().zip(&refs).map(|(e, r)| ImageRef { id: &e.id, image_ref: r }).collect();
        let captions = backends.captioner.caption_batch(&images).with_context(|| format!("captioning {split}"))?;
        let embeddings = backends.images.embed_images(&images).with_context(|| format!("embedding {split} images"))?;
        let captioned: Vec<Example> =
            examples.iter().zip(captions).map(|(e, c)| Example { caption: Some(c), ..e.clone() }).collect();
        write_split(&dataset::split_path(stage.dir(), task, split), &captioned, gold.label_space())?;
        if !examples.is_empty() {
            PhraseBank::from_embeddings(ids(examples), &embeddings)?.write(&dataset::embeddings_path(
                stage.dir(),
                task,
                split,
            ))?;
        }
        println!("captioned {split}: {} images", examples.len());
    }
    stage.commit(&ctx.snapshot("caption", &[("cache_dir", ctx.display_path(&cache_dir(ctx)))])?)?;
    Ok(())
}

#[derive(Serialize)]
struct TraceRecord<'a> {
    id: &'a str,
    base_caption: &'a str,
    #[serde(flatten)]
    result: &'a InterrogationResult,
}

fn text_embedder(ctx: &Ctx, dim: usize) -> Result<Box<dyn TextEmbedder>> {
    let b = &ctx.config.backend;
    Ok(match b.kind {
        BackendKind::Mock => Box::new(MockEmbedder::new(dim, b.embed_seed)?),
        BackendKind::Http => Box::new(HttpBackend::new(b.http(dim)?)?),
        BackendKind::Cache => Box::new(open_cache(ctx)?),
    })
}

/// Enriches every caption of one split. Returns the new examples and the
/// traces, both in input order.
fn interrogate_split(
    ctx: &Ctx,
    examples: &[Example],
    embeddings: &PhraseBank,
    bank: &PhraseBank,
    embedder: &dyn TextEmbedder,
) -> Result<(Vec<Example>, String)> {
    let results: Vec<InterrogationResult> = examples
        .par_iter()
        .enumerate()
        .map(|(i, e)| {
            let base = e.caption.as_deref().ok_or_else(|| invalid(format!("example {:?} has no caption", e.id)))?;
            let image: EmbeddingVector = embeddings.embedding(i);
            interrogate(base, &image, bank, embedder, &ctx.config.interrogation)
                .with_context(|| format!("interrogating {:?}", e.id))
        })
        .collect::<Result<_>>()?;
    let enriched = examples
        .iter()
        .zip(&results)
        .map(|(e, r)| Example { caption: Some(r.final_caption.clone()), ..e.clone() })
        .collect();
    let traces: Vec<TraceRecord<'_>> = examples
        .iter()
        .zip(&results)
        .map(|(e, r)| TraceRecord { id: &e.id, base_caption: e.caption.as_deref().unwrap_or_default(), result: r })
        .collect();
    let mut json = serde_json::to_string_pretty(&traces)?;
    json.push('\n');
    Ok((enriched, json))
}

fn load_bank(ctx: &Ctx, bank: Option<&Path>) -> Result<(PathBuf, PhraseBank)> {
    let path = bank
        .map(Path::to_path_buf)
        .or_else(|| ctx.config.bank.clone())
        .unwrap_or_else(|| dataset::flavors_path(&ctx.dir(DATA_DIR), ctx.task()));
    require(std::slice::from_ref(&path), "pass --bank or set `bank` in the config")?;
    let bank = PhraseBank::read(&path).with_context(|| format!("reading phrase bank {}", path.display()))?;
    Ok((path, bank))
}

/// Run-directory mode: every split of `captioned/` into `interrogated/`.
pub fn interrogate_run(ctx: &Ctx, bank: Option<&Path>) -> Result<()> {
    let captioned = ctx.load_stage_manifest(CAPTIONED_DIR, "run `lbm caption` first")?;
    let (bank_path, bank) = load_bank(ctx, bank)?;
    let embedder = text_embedder(ctx, bank.dim())?;
    let task = ctx.task();
    let stage = Stage::begin(&ctx.out, INTERROGATED_DIR, "interrogate")?;
    dataset::write_label_space(&dataset::labels_path(stage.dir(), task), captioned.label_space())?;
    for split in Split::ALL {
        let examples = captioned.split(split);
        let enriched = if examples.is_empty() {
            stage.write(&format!("{task}.{split}.traces.json"), "[]\n")?;
            Vec::new()
        } else {
            let emb_path = dataset::embeddings_path(&ctx.dir(CAPTIONED_DIR), task, split);
            require(std::slice::from_ref(&emb_path), "run `lbm caption` first")?;
            let embeddings = load_id_bank(&emb_path, &ids(examples))?;
            let (enriched, traces) = interrogate_split(ctx, examples, &embeddings, &bank, embedder.as_ref())?;
            stage.write(&format!("{task}.{split}.traces.json"), traces)?;
            enriched
        };
        write_split(&dataset::split_path(stage.dir(), task, split), &enriched, captioned.label_space())?;
        println!("interrogated {split}: {} captions", enriched.len());
    }
    stage.commit(&ctx.snapshot("interrogate", &[("bank", ctx.display_path(&bank_path))])?)?;
    Ok(())
}

/// Splits `<task>.<split>.tsv` into its task and split.
fn parse_manifest_name(path: &Path) -> Option<(String, Split)> {
    let name = path.file_name()?.to_str()?.strip_suffix(".tsv")?;
    let (task, split) = name.rsplit_once('.')?;
    Some((task.to_owned(), split.parse().ok()?))
}

/// Single-manifest mode: `--images <manifest> --out <manifest>`. Image
/// embeddings come from `--embeddings` or the sibling `<task>.<split>.emb`;
/// labels from `--labels` or the sibling `<task>.labels`. Writes the
/// enriched manifest and `<out stem>.traces.json`.
pub fn interrogate_file(
    ctx: &Ctx,
    bank: Option<&Path>,
    images: &Path,
    embeddings: Option<&Path>,
    labels: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let dir = images.parent().unwrap_or(Path::new("."));
    let parsed = parse_manifest_name(images);
    let labels_file = match (labels, &parsed) {
        (Some(l), _) => l.to_path_buf(),
        (None, Some((task, _))) => dataset::labels_path(dir, task),
        (None, None) => return Err(invalid("cannot infer the label file from the manifest name; pass --labels")),
    };
    let emb_file = match (embeddings, &parsed) {
        (Some(e), _) => e.to_path_buf(),
        (None, Some((task, split))) => dataset::embeddings_path(dir, task, *split),
        (None, None) => {
            return Err(invalid("cannot infer the embedding file from the manifest name; pass --embeddings"))
        }
    };
    require(&[images.to_path_buf(), labels_file.clone(), emb_file.clone()], "interrogate inputs")?;
    let space: LabelSpace = read_label_space(&labels_file)?;
    let examples = read_split(images, &space)?;
    let image_bank = load_id_bank(&emb_file, &ids(&examples))?;
    let (_, bank) = load_bank(ctx, bank)?;
    let embedder = text_embedder(ctx, bank.dim())?;
    let (enriched, traces) = interrogate_split(ctx, &examples, &image_bank, &bank, embedder.as_ref())?;

    let mut guard = FileGuard::default();
    let traces_path = out.with_extension("traces.json");
    write_split(&guard.track(out.to_path_buf()), &enriched, &space)?;
    fs::write(guard.track(traces_path.clone()), traces)?;
    guard.keep();
    println!("interrogated {} captions -> {} (+ {})", enriched.len(), out.display(), traces_path.display());
    Ok(())
}
