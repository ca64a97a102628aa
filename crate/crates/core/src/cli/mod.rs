//! Command-line front end: `qdiff <command>` with a TOML config or preset.

pub mod artifacts;
pub mod commands;
pub mod config;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::error::Result;
use artifacts::{Checkpoint, MANIFEST_FILE};
use commands::{execute, replay, run_id, CommandKind};
use config::{config_err, presets, Config};

#[derive(Debug, Parser)]
#[command(name = "qdiff", version, about = "Quantum denoising diffusion models on a state-vector simulator")]
pub struct Cli {
    /// TOML config file.
    #[arg(long, global = true, conflicts_with = "preset")]
    pub config: Option<PathBuf>,
    /// Named preset (see `qdiff presets`).
    #[arg(long, global = true)]
    pub preset: Option<String>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    /// Diffusion steps.
    #[arg(long, global = true)]
    pub tau: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write a checkpoint and per-epoch losses.
    Train {
        #[arg(long)]
        epochs: Option<usize>,
        /// Use only this many training images.
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Generate images and their denoising trajectories.
    Sample(SampleArgs),
    /// Write the composed sampling unitary of a single-sample model.
    Compose {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Score generated images against the dataset.
    Eval(SampleArgs),
    /// Fill in the bottom rows of dataset images.
    Inpaint {
        #[command(flatten)]
        sample: SampleArgs,
        #[arg(long)]
        mask_rows: Option<usize>,
    },
    /// Re-run a recorded command and compare its output hashes.
    Replay { manifest: PathBuf },
    /// List the built-in presets.
    Presets,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub n_samples: Option<usize>,
    #[arg(long)]
    pub label: Option<usize>,
}

fn base_config(cli: &Cli, checkpoint: Option<&Path>) -> Result<Config> {
    if let Some(p) = &cli.config {
        return Config::load(p);
    }
    if let Some(name) = &cli.preset {
        return config::preset(name);
    }
    match checkpoint {
        Some(p) => Ok(Checkpoint::load(p)?.config),
        None => Err(config_err("config", "pass --config or --preset")),
    }
}

/// The config a command runs with: file, preset or checkpoint, then flags.
pub fn effective_config(cli: &Cli) -> Result<Config> {
    let checkpoint = match &cli.command {
        Command::Sample(a) | Command::Eval(a) | Command::Inpaint { sample: a, .. } => Some(a.checkpoint.as_path()),
        Command::Compose { checkpoint } => Some(checkpoint.as_path()),
        _ => None,
    };
    let mut cfg = base_config(cli, checkpoint)?;
    if let Some(s) = cli.seed {
        cfg.run.seed = s;
    }
    if let Some(t) = cli.tau {
        cfg.schedule.tau = t;
    }
    if let Some(d) = &cli.out_dir {
        cfg.run.out_dir = d.clone();
    }
    match &cli.command {
        Command::Train { epochs, limit } => {
            if let Some(e) = epochs {
                cfg.optimizer.epochs = *e;
            }
            if limit.is_some() {
                cfg.data.limit = *limit;
            }
        }
        Command::Sample(a) | Command::Eval(a) => apply_sample_args(&mut cfg, a),
        Command::Inpaint { sample, mask_rows } => {
            apply_sample_args(&mut cfg, sample);
            if mask_rows.is_some() {
                cfg.run.mask_rows = *mask_rows;
            }
        }
        _ => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

fn apply_sample_args(cfg: &mut Config, a: &SampleArgs) {
    if let Some(n) = a.n_samples {
        cfg.run.n_samples = n;
    }
    if a.label.is_some() {
        cfg.run.label = a.label;
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let (kind, checkpoint) = match &cli.command {
        Command::Presets => {
            for p in presets() {
                println!("{:<28} {}", p.name, p.description);
            }
            return Ok(());
        }
        Command::Replay { manifest } => {
            let out = cli.out_dir.clone().unwrap_or_else(|| manifest.parent().unwrap_or(Path::new(".")).join("replay"));
            let report = replay(manifest, &out)?;
            for (path, want, got) in &report.outputs {
                let status = if got.as_deref() == Some(want.as_str()) { "match" } else { "MISMATCH" };
                println!("{status:<8} {}", path.display());
            }
            println!("{:<8} params", if report.params_match { "match" } else { "MISMATCH" });
            if !report.matches() {
                return Err(crate::Error::InvalidArgument(format!(
                    "replay in {} differs from the recorded run",
                    out.display()
                )));
            }
            println!("replay reproduced every output");
            return Ok(());
        }
        Command::Train { .. } => (CommandKind::Train, None),
        Command::Sample(a) => (CommandKind::Sample, Some(a.checkpoint.clone())),
        Command::Eval(a) => (CommandKind::Eval, Some(a.checkpoint.clone())),
        Command::Inpaint { sample, .. } => (CommandKind::Inpaint, Some(sample.checkpoint.clone())),
        Command::Compose { checkpoint } => (CommandKind::Compose, Some(checkpoint.clone())),
    };
    let mut cfg = effective_config(&cli)?;
    if cfg.run.out_dir.as_os_str().is_empty() {
        cfg.run.out_dir = PathBuf::from("runs").join(format!("{}-{}", kind.name(), run_id(kind, &cfg)));
    }
    let out = cfg.run.out_dir.clone();
    let manifest = execute(kind, &cfg, checkpoint.as_deref(), &out)?;
    for o in &manifest.outputs {
        println!("{}  {}", o.sha256, out.join(&o.path).display());
    }
    println!("manifest: {}", out.join(MANIFEST_FILE).display());
    Ok(())
}
