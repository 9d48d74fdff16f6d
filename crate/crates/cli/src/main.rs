//! `affect`: extract HRV features from wrist PPG, train and evaluate
//! classifiers, compile tree ensembles and benchmark them.

mod commands;
mod config;

use std::path::PathBuf;

use affect_core::bench::BenchConfig;
use anyhow::Result;
use clap::{Parser, Subcommand};

use commands::{BenchArgs, EvalArgs, ExtractArgs, InferArgs, SynthArgs, TrainArgs};
use config::{CommonArgs, FileConfig, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "affect", version, about = "Emotion recognition from wrist PPG")]
struct Cli {
    /// TOML file of default settings; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Windowed HRV features from PPG, label and chest-interval CSVs.
    Extract {
        #[command(flatten)]
        common: CommonArgs,
        /// Directory of `<subject>_ppg.csv` / `_labels.csv` / `_chest_ibi.csv` files.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Single-subject PPG file, used with --labels.
        #[arg(long)]
        ppg: Option<PathBuf>,
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        chest_ibi: Option<PathBuf>,
        /// Overrides the PPG files' sampling-rate metadata.
        #[arg(long)]
        rate_hz: Option<f64>,
    },
    /// Fit a classifier on the training part of a features CSV.
    Train {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        features: PathBuf,
        /// Share held out for evaluation; 0 trains on every row.
        #[arg(long, default_value_t = 0.2)]
        test_frac: f64,
        /// Trees per forest, or boosting rounds.
        #[arg(long)]
        trees: Option<usize>,
    },
    /// Score a model on the held-out part of a features CSV.
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long = "model-file")]
        model_file: PathBuf,
        #[arg(long)]
        features: PathBuf,
        /// Must match the value used for training; 0 scores every row.
        #[arg(long, default_value_t = 0.2)]
        test_frac: f64,
    },
    /// Flatten a tree-ensemble model file.
    Compile {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long = "model-file")]
        model_file: PathBuf,
    },
    /// Single-row latency and size of one or more model files.
    Bench {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long = "model-file", required = true, num_args = 1..)]
        model_files: Vec<PathBuf>,
        /// Probe rows, also used for the held-out macro-F1 column.
        #[arg(long)]
        features: PathBuf,
        #[arg(long, default_value_t = 0.2)]
        test_frac: f64,
        /// Also compile each source ensemble in memory and time both.
        #[arg(long)]
        with_compiled: bool,
        #[arg(long, default_value_t = 10_000)]
        reps: usize,
        #[arg(long, default_value_t = 1_000)]
        warmup: usize,
        #[arg(long, default_value_t = 5)]
        runs: usize,
        /// Plot-ready CSV; defaults to the JSON path with a .csv extension.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Synthetic subjects in the converted dataset layout.
    Synth {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, default_value_t = 3)]
        subjects: usize,
        /// Consecutive `label:seconds` segments per subject.
        #[arg(long, default_value = "baseline:1200,stress:660,amusement:390")]
        segments: String,
        #[arg(long, default_value_t = 0.0)]
        noise_std: f64,
        #[arg(long, default_value_t = 64.0)]
        rate_hz: f64,
        #[arg(long, default_value_t = 4.0)]
        label_rate_hz: f64,
    },
    /// Predict the state of one window of intervals.
    Infer {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long = "model-file")]
        model_file: PathBuf,
        /// Wrist intervals for the window (`beat_time_s,interval_ms`).
        #[arg(long)]
        ibi: PathBuf,
        /// Chest intervals, required by COMBINED models.
        #[arg(long)]
        chest_ibi: Option<PathBuf>,
    },
}

impl Command {
    fn common(&self) -> &CommonArgs {
        match self {
            Self::Extract { common, .. }
            | Self::Train { common, .. }
            | Self::Eval { common, .. }
            | Self::Compile { common, .. }
            | Self::Bench { common, .. }
            | Self::Synth { common, .. }
            | Self::Infer { common, .. } => common,
        }
    }
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let file = match &cli.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    let cfg = RunConfig::resolve(cli.command.common(), &file)?;
    match cli.command {
        Command::Extract {
            input,
            ppg,
            labels,
            chest_ibi,
            rate_hz,
            ..
        } => commands::extract(
            &cfg,
            &ExtractArgs {
                input,
                ppg,
                labels,
                chest_ibi,
                rate_hz,
            },
        ),
        Command::Train {
            features,
            test_frac,
            trees,
            ..
        } => commands::train_cmd(
            &cfg,
            &TrainArgs {
                features,
                test_frac,
                trees,
            },
        ),
        Command::Eval {
            model_file,
            features,
            test_frac,
            ..
        } => commands::eval(
            &cfg,
            &EvalArgs {
                model: model_file,
                features,
                test_frac,
            },
        ),
        Command::Compile { model_file, .. } => commands::compile(&cfg, &model_file),
        Command::Bench {
            model_files,
            features,
            test_frac,
            with_compiled,
            reps,
            warmup,
            runs,
            csv,
            ..
        } => commands::bench(
            &cfg,
            &BenchArgs {
                models: model_files,
                features,
                test_frac,
                with_compiled,
                bench: BenchConfig { reps, warmup, runs },
                csv,
            },
        ),
        Command::Synth {
            subjects,
            segments,
            noise_std,
            rate_hz,
            label_rate_hz,
            ..
        } => commands::synth(
            &cfg,
            &SynthArgs {
                subjects,
                segments: commands::parse_segments(&segments)?,
                noise_std,
                rate_hz,
                label_rate_hz,
            },
        ),
        Command::Infer {
            model_file,
            ibi,
            chest_ibi,
            ..
        } => commands::infer(
            &cfg,
            &InferArgs {
                model: model_file,
                ibi,
                chest_ibi,
            },
        ),
    }
}
