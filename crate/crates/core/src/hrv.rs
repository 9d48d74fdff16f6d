//! Time-domain heart rate variability.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HrvError {
    #[error("need at least 2 intervals, got {0}")]
    InsufficientData(usize),
    #[error("interval {index} is not a positive finite value ({value})")]
    InvalidInterval { index: usize, value: f64 },
}

/// Successive differences strictly greater than this count toward pNN50.
pub const NN50_THRESHOLD_MS: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HrvFeatures {
    pub sdnn_ms: f64,
    pub rmssd_ms: f64,
    pub pnn50_pct: f64,
    pub mean_rr_ms: f64,
    pub mean_hr_bpm: f64,
}

impl HrvFeatures {
    pub const NAMES: [&'static str; 5] = ["sdnn", "rmssd", "pnn50", "mean_rr", "mean_hr"];

    pub fn to_array(&self) -> [f64; 5] {
        [
            self.sdnn_ms,
            self.rmssd_ms,
            self.pnn50_pct,
            self.mean_rr_ms,
            self.mean_hr_bpm,
        ]
    }
}

/// SDNN and RMSSD both divide by `n - 1`; pNN50 is the share of the `n - 1`
/// successive differences whose magnitude exceeds 50 ms.
pub fn compute_hrv(intervals: &[f64]) -> Result<HrvFeatures, HrvError> {
    let n = intervals.len();
    if n < 2 {
        return Err(HrvError::InsufficientData(n));
    }
    if let Some((index, &value)) = intervals
        .iter()
        .enumerate()
        .find(|(_, v)| !(v.is_finite() && **v > 0.0))
    {
        return Err(HrvError::InvalidInterval { index, value });
    }

    let denom = (n - 1) as f64;
    let mean_rr = intervals.iter().sum::<f64>() / n as f64;
    let sdnn = (intervals.iter().map(|v| (v - mean_rr).powi(2)).sum::<f64>() / denom).sqrt();

    let mut sum_sq = 0.0;
    let mut nn50 = 0usize;
    for w in intervals.windows(2) {
        let d = w[1] - w[0];
        sum_sq += d * d;
        if d.abs() > NN50_THRESHOLD_MS {
            nn50 += 1;
        }
    }

    Ok(HrvFeatures {
        sdnn_ms: sdnn,
        rmssd_ms: (sum_sq / denom).sqrt(),
        pnn50_pct: nn50 as f64 / denom * 100.0,
        mean_rr_ms: mean_rr,
        mean_hr_bpm: 60_000.0 / mean_rr,
    })
}
