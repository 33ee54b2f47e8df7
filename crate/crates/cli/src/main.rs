//! `geocon`: synthetic scenes, texture partitions, loss reports, toy optimization and
//! parameter sweeps, each run recorded in a `manifest.json`.
//!
//! Exit codes: 0 success, 2 input or configuration error, 3 numerical failure.

mod bundle;
mod commands;
mod manifest;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};
use geocon::optim::OptimConfig;
use geocon::SceneSpec;

use manifest::{FileRecord, Job, RunManifest, SweepParam};

#[derive(Parser, Debug)]
#[command(name = "geocon", version, about = "Geometric-consistency losses on synthetic scenes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON config: an optimizer config for loss/optimize/sweep, a scene spec for synth.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; 1 gives reproducible timing.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    /// Overrides the scene seed (synth).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Texture-rich percentile; 75 when unset.
    #[arg(long, global = true)]
    percentile: Option<f64>,
    /// Trust-region threshold θ.
    #[arg(long, global = true)]
    theta: Option<f64>,
    /// Number of sampled patches; 0 disables the multi-view term.
    #[arg(long = "s", global = true)]
    s: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a scene spec into a bundle directory.
    Synth { spec: Option<PathBuf> },
    /// Sobel partition of a PPM image into texture-rich and texture-less masks.
    Partition { image: PathBuf },
    /// All loss terms of a bundle as one JSON report.
    Loss { bundle: PathBuf },
    /// Refine the bundle's depth and normals by gradient descent.
    Optimize { bundle: PathBuf },
    /// Run the optimizer once per parameter value.
    Sweep {
        bundle: PathBuf,
        #[arg(long, value_enum)]
        param: SweepParam,
        /// Comma-separated values.
        #[arg(long)]
        values: String,
        /// Timing repeats per value; the minimum wall time is reported.
        #[arg(long, default_value_t = 3)]
        repeats: usize,
    },
    /// Re-run the job recorded in a manifest, optionally into another directory.
    Replay { manifest: PathBuf },
}

/// Failure carrying its exit code.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn input(error: anyhow::Error) -> Failure {
    Failure { code: 2, error }
}

fn run(cli: Cli) -> std::result::Result<(), Failure> {
    if cli.threads == 0 {
        return Err(input(anyhow!("--threads must be at least 1")));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build_global()
        .map_err(|e| input(e.into()))?;
    let job = resolve(&cli).map_err(input)?;
    execute(job, cli.threads)
}

fn execute(job: Job, threads: usize) -> std::result::Result<(), Failure> {
    let start = Instant::now();
    if let Some(out) = job.out() {
        fs::create_dir_all(out)
            .with_context(|| format!("creating {}", out.display()))
            .map_err(input)?;
    }
    let report = match &job {
        Job::Synth { spec, out } => commands::synth(spec, out),
        Job::Partition { image, percentile, out } => commands::partition(image, *percentile, out),
        Job::Loss { bundle, config, out } => commands::loss(bundle, config, out.as_deref()),
        Job::Optimize { bundle, config, out } => commands::optimize(bundle, config, out),
        Job::Sweep {
            bundle,
            config,
            param,
            values,
            repeats,
            out,
        } => commands::sweep(bundle, config, *param, values, *repeats, out),
    }
    .map_err(input)?;
    if let Some(out) = job.out() {
        let records = |paths: &[PathBuf]| paths.iter().map(|p| FileRecord::of(p)).collect::<Result<Vec<_>>>();
        let manifest = RunManifest {
            version: env!("CARGO_PKG_VERSION").to_string(),
            spec_hash: job.settings_hash(),
            threads,
            bundle_spec_hash: report.bundle_spec_hash.clone(),
            inputs: records(&report.inputs).map_err(input)?,
            outputs: records(&report.outputs).map_err(input)?,
            duration_s: start.elapsed().as_secs_f64(),
            views: report.views.clone(),
            job: job.clone(),
        };
        let path = manifest.write(out).map_err(input)?;
        eprintln!("{} done in {:.2}s; manifest {}", job.name(), manifest.duration_s, path.display());
    }
    if let Some(it) = report.diverged_at {
        return Err(Failure {
            code: 3,
            error: anyhow!("loss became non-finite at iteration {it}; last good iteration {it}"),
        });
    }
    Ok(())
}

fn absolute(p: &Path) -> Result<PathBuf> {
    std::path::absolute(p).with_context(|| format!("resolving {}", p.display()))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn require_out(cli: &Cli) -> Result<PathBuf> {
    match &cli.out {
        Some(p) => absolute(p),
        None => bail!("--out is required"),
    }
}

/// Optimizer config from `--config` with flag overrides applied; flags win.
fn optim_config(cli: &Cli) -> Result<OptimConfig> {
    let mut cfg: OptimConfig = match &cli.config {
        Some(p) => read_json(p)?,
        None => OptimConfig::default(),
    };
    if let Some(p) = cli.percentile {
        cfg.sv.percentile = p;
    }
    if let Some(t) = cli.theta {
        cfg.sv.theta = t;
    }
    if let Some(s) = cli.s {
        cfg.mv.s = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn resolve(cli: &Cli) -> Result<Job> {
    Ok(match &cli.command {
        Command::Synth { spec } => {
            let path = spec
                .as_ref()
                .or(cli.config.as_ref())
                .ok_or_else(|| anyhow!("synth needs a scene spec path"))?;
            let mut spec: SceneSpec = read_json(path)?;
            if let Some(seed) = cli.seed {
                spec.seed = seed;
            }
            spec.validate()?;
            Job::Synth {
                spec,
                out: require_out(cli)?,
            }
        }
        Command::Partition { image } => Job::Partition {
            image: absolute(image)?,
            percentile: cli.percentile.unwrap_or(75.0),
            out: require_out(cli)?,
        },
        Command::Loss { bundle } => Job::Loss {
            bundle: absolute(bundle)?,
            config: optim_config(cli)?,
            out: cli.out.as_deref().map(absolute).transpose()?,
        },
        Command::Optimize { bundle } => Job::Optimize {
            bundle: absolute(bundle)?,
            config: optim_config(cli)?,
            out: require_out(cli)?,
        },
        Command::Sweep {
            bundle,
            param,
            values,
            repeats,
        } => Job::Sweep {
            bundle: absolute(bundle)?,
            config: optim_config(cli)?,
            param: *param,
            values: parse_values(values)?,
            repeats: *repeats,
            out: require_out(cli)?,
        },
        Command::Replay { manifest } => {
            let mut job = RunManifest::read(manifest)?.job;
            if let Some(out) = &cli.out {
                job.set_out(absolute(out)?);
            }
            job
        }
    })
}

fn parse_values(list: &str) -> Result<Vec<f64>> {
    let values = list
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().with_context(|| format!("invalid value {s:?}")))
        .collect::<Result<Vec<_>>>()?;
    if values.is_empty() {
        bail!("--values must list at least one value");
    }
    Ok(values)
}
