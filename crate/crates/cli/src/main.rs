//! `respira`: synthetic data, feature extraction, training, evaluation and
//! reports for respiratory sound classification.

mod commands;
mod features;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use respira_core::eval::Level;
use respira_core::ingest::RunConfig;

#[derive(Parser)]
#[command(name = "respira", version, about = "Respiratory sound classification pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Settings shared by every pipeline command. Flags override the config file.
#[derive(Args, Clone, Default)]
pub struct Common {
    /// Flat `key = value` run configuration.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Mother wavelet: amor, bump or morse.
    #[arg(long)]
    wavelet: Option<String>,
    /// Spectrogram size before cropping, e.g. 128x512.
    #[arg(long, value_name = "FxT")]
    size: Option<String>,
    /// Task: 1-1, 1-2, 2-1 or 2-2.
    #[arg(long)]
    task: Option<String>,
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

impl Common {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
            None => RunConfig::default(),
        };
        let seed = self.seed.map(|s| s.to_string());
        let out = self.out.as_ref().map(|p| p.display().to_string());
        for (key, value) in
            [("wavelet", &self.wavelet), ("size", &self.size), ("task", &self.task), ("seed", &seed), ("out", &out)]
        {
            if let Some(v) = value {
                cfg.set(key, v).with_context(|| format!("--{key}"))?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum LevelArg {
    Event,
    Record,
}

impl From<LevelArg> for Level {
    fn from(l: LevelArg) -> Level {
        match l {
            LevelArg::Event => Level::Event,
            LevelArg::Record => Level::Record,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
pub enum SplitArg {
    Train,
    Validation,
    All,
}

#[derive(Subcommand)]
enum Command {
    /// Write a seeded synthetic dataset (WAV, annotations, manifest).
    Synth {
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Recordings per event class.
        #[arg(long, default_value_t = 5)]
        per_class: usize,
    },
    /// Compute spectrogram caches for every manifest entry.
    Extract {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH")]
        manifest: PathBuf,
        /// Segment events or keep whole recordings (default: from the task).
        #[arg(long, value_enum)]
        level: Option<LevelArg>,
    },
    /// Train on cached features and write a checkpoint and history CSV.
    Train {
        #[command(flatten)]
        common: Common,
        /// Feature directory (default: OUT/features).
        #[arg(long, value_name = "DIR")]
        features: Option<PathBuf>,
        /// Checkpoint to write (default: OUT/model-TASK.lsck).
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
    },
    /// Score a checkpoint, or a predictions CSV, and write a ScoreReport JSON.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "DIR")]
        features: Option<PathBuf>,
        /// Checkpoint to load (default: OUT/model-TASK.lsck).
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
        /// Score an existing `id,truth,prediction,...` CSV instead of a model.
        #[arg(long, value_name = "CSV", conflicts_with = "checkpoint")]
        predictions: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "validation")]
        split: SplitArg,
    },
    /// Render cached spectrograms as PGM images and summarise reports.
    Report {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "DIR")]
        features: Option<PathBuf>,
        /// Images per feature level.
        #[arg(long, default_value_t = 8)]
        limit: usize,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { out, seed, per_class } => commands::synth(&out, seed, per_class),
        Command::Extract { common, manifest, level } => {
            commands::extract(&common.resolve()?, &manifest, level.map(Level::from))
        }
        Command::Train { common, features, checkpoint } => commands::train(&common.resolve()?, features, checkpoint),
        Command::Evaluate { common, features, checkpoint, predictions, split } => {
            let cfg = common.resolve()?;
            match predictions {
                Some(csv) => commands::evaluate_predictions(&cfg, &csv),
                None => commands::evaluate(&cfg, features, checkpoint, split),
            }
        }
        Command::Report { common, features, limit } => commands::report(&common.resolve()?, features, limit),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
