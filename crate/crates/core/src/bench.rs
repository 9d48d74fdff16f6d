//! Single-row inference latency and model size.
//!
//! Each run times `reps` individual `predict` calls after `warmup` untimed
//! calls, cycling through the probe rows. The reported mean, p50 and p99 are
//! medians of the per-run values; min and max are taken over all runs.

use std::fmt;
use std::hint::black_box;
use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::models::{InferenceModel, ModelError};

pub const MIN_REPS: usize = 100;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("no probe rows to benchmark with")]
    NoProbes,
    #[error("at least {MIN_REPS} timed repetitions are required, got {0}")]
    TooFewReps(usize),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: std::path::PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Source,
    Compiled,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(match self {
            Self::Source => "source",
            Self::Compiled => "compiled",
        })
    }
}

/// Latencies in microseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub mean: f64,
    pub p50: f64,
    pub p99: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub model_name: String,
    pub variant: Variant,
    pub size_bytes: u64,
    pub latency: LatencyStats,
    pub reps: usize,
    pub warmup: usize,
    pub runs: usize,
    pub single_thread: bool,
    /// Held-out macro-F1, when the caller has one, for size/accuracy plots.
    #[serde(default)]
    pub macro_f1: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BenchConfig {
    pub reps: usize,
    pub warmup: usize,
    pub runs: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            reps: 10_000,
            warmup: 1_000,
            runs: 5,
        }
    }
}

/// Nearest-rank percentile of sorted data.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

pub fn benchmark<M: InferenceModel + ?Sized>(
    model: &M,
    model_name: &str,
    variant: Variant,
    probes: &[Vec<f64>],
    cfg: &BenchConfig,
) -> Result<BenchReport, BenchError> {
    if probes.is_empty() {
        return Err(BenchError::NoProbes);
    }
    if cfg.reps < MIN_REPS {
        return Err(BenchError::TooFewReps(cfg.reps));
    }
    for p in probes {
        model.check_dim(p)?;
    }
    let runs = cfg.runs.max(1);
    let mut means = Vec::with_capacity(runs);
    let mut p50s = Vec::with_capacity(runs);
    let mut p99s = Vec::with_capacity(runs);
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    let mut samples = vec![0.0; cfg.reps];
    let mut cursor = 0;
    for _ in 0..runs {
        for _ in 0..cfg.warmup {
            black_box(model.predict(black_box(&probes[cursor % probes.len()]))?);
            cursor += 1;
        }
        for s in samples.iter_mut() {
            let probe = &probes[cursor % probes.len()];
            cursor += 1;
            let start = Instant::now();
            let out = model.predict(black_box(probe));
            let elapsed = start.elapsed();
            black_box(out?);
            *s = elapsed.as_secs_f64() * 1e6;
        }
        samples.sort_by(f64::total_cmp);
        means.push(samples.iter().sum::<f64>() / samples.len() as f64);
        p50s.push(percentile(&samples, 0.50));
        p99s.push(percentile(&samples, 0.99));
        min = min.min(samples[0]);
        max = max.max(samples[samples.len() - 1]);
    }
    Ok(BenchReport {
        model_name: model_name.to_string(),
        variant,
        size_bytes: model.encoded_len() as u64,
        latency: LatencyStats {
            mean: median(&mut means),
            p50: median(&mut p50s),
            p99: median(&mut p99s),
            min,
            max,
        },
        reps: cfg.reps,
        warmup: cfg.warmup,
        runs,
        single_thread: true,
        macro_f1: None,
    })
}

/// Ratio of p50 latencies, `baseline / candidate`.
pub fn speedup(baseline: &BenchReport, candidate: &BenchReport) -> f64 {
    baseline.latency.p50 / candidate.latency.p50
}

pub fn save_reports_json(path: impl AsRef<Path>, reports: &[BenchReport]) -> Result<(), BenchError> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(reports).expect("reports serialize");
    std::fs::write(path, text).map_err(|source| BenchError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_reports_json(path: impl AsRef<Path>) -> Result<Vec<BenchReport>, BenchError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| BenchError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| BenchError::Json {
        path: path.to_path_buf(),
        source,
    })
}

pub const CSV_HEADER: &str = "model_name,variant,size_bytes,mean_us,p50_us,p99_us,min_us,max_us,reps,warmup,runs,macro_f1";

/// Plot-ready CSV, one row per report; `macro_f1` is empty when unknown.
pub fn write_reports_csv(path: impl AsRef<Path>, reports: &[BenchReport]) -> Result<(), BenchError> {
    let path = path.as_ref();
    let io = |source| BenchError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    writeln!(out, "{CSV_HEADER}").map_err(io)?;
    for r in reports {
        let l = &r.latency;
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.model_name,
            r.variant,
            r.size_bytes,
            l.mean,
            l.p50,
            l.p99,
            l.min,
            l.max,
            r.reps,
            r.warmup,
            r.runs,
            r.macro_f1.map(|f| f.to_string()).unwrap_or_default()
        )
        .map_err(io)?;
    }
    out.flush().map_err(io)
}

impl fmt::Display for BenchReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let l = &self.latency;
        write!(
            f,
            "{:<24} {:<9} {:>10} B  mean {:>9.3} us  p50 {:>9.3} us  p99 {:>9.3} us  min {:>9.3} us  max {:>10.3} us",
            self.model_name, self.variant, self.size_bytes, l.mean, l.p50, l.p99, l.min, l.max
        )
    }
}
