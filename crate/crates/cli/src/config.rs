//! Settings shared by every subcommand, merged from flags and an optional
//! config file.

use std::path::{Path, PathBuf};

use affect_core::dataset::WindowConfig;
use affect_core::{ModelKind, Scenario};
use anyhow::{Context, Result};
use clap::Args;
use serde::Deserialize;

pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// Feature configuration: WRIST_SDNN, WRIST_RMSSD, WRIST_ALL or COMBINED.
    #[arg(long)]
    pub scenario: Option<Scenario>,
    /// Model family: logistic, linear_svm, random_forest, extra_trees or gradient_boosted.
    #[arg(long)]
    pub model: Option<ModelKind>,
    /// Master seed for every random choice the command makes.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Window width in seconds.
    #[arg(long)]
    pub window_s: Option<f64>,
    /// Window step in seconds.
    #[arg(long)]
    pub step_s: Option<f64>,
    /// Output path.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Config file contents. Keys match the long flag names with underscores.
#[derive(Debug, Clone, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub scenario: Option<String>,
    pub model: Option<String>,
    pub seed: Option<u64>,
    pub window_s: Option<f64>,
    pub step_s: Option<f64>,
    pub out: Option<PathBuf>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

/// Flags and file merged, flags first.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub scenario: Option<Scenario>,
    pub model: Option<ModelKind>,
    pub seed: u64,
    pub window_s: f64,
    pub step_s: f64,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn resolve(flags: &CommonArgs, file: &FileConfig) -> Result<Self> {
        let defaults = WindowConfig::default();
        let scenario = match (flags.scenario, &file.scenario) {
            (Some(s), _) => Some(s),
            (None, Some(s)) => Some(s.parse().map_err(anyhow::Error::msg).context("config key `scenario`")?),
            (None, None) => None,
        };
        let model = match (flags.model, &file.model) {
            (Some(m), _) => Some(m),
            (None, Some(m)) => Some(m.parse().map_err(anyhow::Error::msg).context("config key `model`")?),
            (None, None) => None,
        };
        let cfg = Self {
            scenario,
            model,
            seed: flags.seed.or(file.seed).unwrap_or(DEFAULT_SEED),
            window_s: flags.window_s.or(file.window_s).unwrap_or(defaults.width_s),
            step_s: flags.step_s.or(file.step_s).unwrap_or(defaults.step_s),
            out: flags.out.clone().or_else(|| file.out.clone()),
        };
        anyhow::ensure!(
            cfg.window_s > 0.0 && cfg.step_s > 0.0,
            "window and step must be positive, got {} and {}",
            cfg.window_s,
            cfg.step_s
        );
        Ok(cfg)
    }

    pub fn window_config(&self) -> WindowConfig {
        WindowConfig {
            width_s: self.window_s,
            step_s: self.step_s,
            scenario: self.scenario.unwrap_or(Scenario::WristAll),
            ..WindowConfig::default()
        }
    }

    pub fn out_or(&self, fallback: &str) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from(fallback))
    }
}
