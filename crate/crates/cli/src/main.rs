//! `lbm`: caption, enrich, classify and fuse.

mod config;
mod error;
mod pipeline;
mod selftest;
mod stage;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use lbm_core::fusion::FusionGrid;

use config::{BackendKind, Overrides, RunConfig};
use error::{exit_code, invalid, SelftestFailed};
use pipeline::Ctx;

#[derive(Parser, Debug)]
#[command(name = "lbm", version, about = "Language-bottleneck classification pipeline")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base seed; trial i uses seed + i.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Single fusion weight instead of a sweep.
    #[arg(long, global = true)]
    w: Option<f64>,
    /// Fusion sweep as start:stop:step.
    #[arg(long, global = true, value_parser = parse_grid)]
    grid: Option<FusionGrid>,
    #[arg(long, global = true, value_enum)]
    backend: Option<BackendKind>,
    #[arg(long, global = true)]
    endpoint: Option<String>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Run directory. For `interrogate --images` this is the output manifest.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    task: Option<String>,
    #[arg(long, global = true)]
    trials: Option<usize>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Validate manifests and copy them into the run directory.
    Ingest {
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        labels: Option<PathBuf>,
    },
    /// Generate a synthetic task with a matching backend cache.
    Synth {
        #[arg(long)]
        classes: Option<usize>,
        #[arg(long)]
        n_per_class: Option<usize>,
        #[arg(long)]
        noise: Option<f64>,
        #[arg(long)]
        dim: Option<usize>,
        #[arg(long)]
        spread: Option<f64>,
    },
    /// Caption and embed every image.
    Caption {
        /// Cache directory for the cache backend.
        #[arg(long)]
        cache: Option<PathBuf>,
    },
    /// Enrich captions with phrases from a bank.
    Interrogate {
        #[arg(long)]
        bank: Option<PathBuf>,
        /// A single manifest to enrich instead of the run directory.
        #[arg(long)]
        images: Option<PathBuf>,
        #[arg(long, requires = "images")]
        embeddings: Option<PathBuf>,
        #[arg(long, requires = "images")]
        labels: Option<PathBuf>,
    },
    /// Fit one probe per system and trial.
    Train {
        /// Comma-separated systems.
        #[arg(long, value_delimiter = ',')]
        systems: Option<Vec<String>>,
    },
    /// Score dev and test with the trained probes.
    Score {
        #[arg(long, value_delimiter = ',')]
        systems: Option<Vec<String>>,
    },
    /// Sweep the fusion weight.
    Fuse {
        #[arg(long)]
        text_system: Option<String>,
        #[arg(long)]
        image_system: Option<String>,
    },
    /// Summarize a run, optionally next to other runs.
    Report {
        #[arg(long)]
        compare: Vec<PathBuf>,
    },
    /// Run the built-in oracle suites.
    Selftest {
        #[arg(long)]
        bank_fixture: Option<PathBuf>,
    },
}

fn parse_grid(s: &str) -> Result<FusionGrid, String> {
    FusionGrid::parse(s).map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", render_error(&e));
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Command::Selftest { bank_fixture } = &cli.command {
        return selftest(bank_fixture.as_deref());
    }
    let overrides = Overrides {
        seed: cli.seed,
        w: cli.w,
        grid: cli.grid,
        backend: cli.backend,
        endpoint: cli.endpoint.clone(),
        threads: cli.threads,
        task: cli.task.clone(),
        trials: cli.trials,
    };
    let mut config = RunConfig::load(cli.config.as_deref(), &overrides)?;
    match &cli.command {
        Command::Synth { classes, n_per_class, noise, dim, spread } => {
            let s = &mut config.synth;
            s.classes = classes.unwrap_or(s.classes);
            s.n_per_class = n_per_class.unwrap_or(s.n_per_class);
            s.noise = noise.unwrap_or(s.noise);
            s.dim = dim.unwrap_or(s.dim);
            s.spread = spread.unwrap_or(s.spread);
        }
        Command::Caption { cache: Some(cache) } => config.backend.cache_dir = Some(cache.clone()),
        Command::Train { systems: Some(systems) } | Command::Score { systems: Some(systems) } => {
            config.systems = systems.clone();
        }
        Command::Fuse { text_system, image_system } => {
            if let Some(t) = text_system {
                config.fusion.text_system = t.clone();
            }
            if let Some(i) = image_system {
                config.fusion.image_system = i.clone();
            }
        }
        _ => {}
    }
    config.validate()?;
    if config.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(config.threads)
            .build_global()
            .map_err(|e| invalid(format!("cannot configure {} threads: {e}", config.threads)))?;
    }

    if let Command::Interrogate { bank, images: Some(images), embeddings, labels } = &cli.command {
        let out = cli.out.clone().ok_or_else(|| invalid("interrogate --images needs --out <manifest>"))?;
        let ctx = Ctx { out: PathBuf::from("."), config };
        return pipeline::data::interrogate_file(
            &ctx,
            bank.as_deref(),
            images,
            embeddings.as_deref(),
            labels.as_deref(),
            &out,
        );
    }

    let ctx = Ctx { out: cli.out.clone().unwrap_or_else(|| PathBuf::from("run")), config };
    match &cli.command {
        Command::Ingest { source, labels } => pipeline::data::ingest(&ctx, source, labels.as_deref()),
        Command::Synth { .. } => pipeline::data::synth(&ctx),
        Command::Caption { .. } => pipeline::data::caption(&ctx),
        Command::Interrogate { bank, .. } => pipeline::data::interrogate_run(&ctx, bank.as_deref()),
        Command::Train { .. } => pipeline::model::train(&ctx),
        Command::Score { .. } => pipeline::model::score(&ctx),
        Command::Fuse { .. } => pipeline::eval::fuse(&ctx),
        Command::Report { compare } => pipeline::eval::report(&ctx, compare),
        Command::Selftest { .. } => unreachable!("handled above"),
    }
}

/// The error chain on one line, skipping causes already quoted by the
/// message above them.
fn render_error(err: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in err.chain() {
        let text = cause.to_string();
        if !out.contains(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
    }
    out
}

fn selftest(bank_fixture: Option<&Path>) -> Result<()> {
    let results = selftest::run(bank_fixture);
    print!("{}", selftest::render(&results));
    let failed = results.iter().filter(|r| !r.passed).count();
    if failed > 0 {
        return Err(SelftestFailed(failed).into());
    }
    Ok(())
}
