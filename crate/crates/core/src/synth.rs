//! Synthetic interval streams and PPG waveforms with known ground truth.
//!
//! Intervals are `mean_rr + a·e_i + rsa·sin(2π·0.25·t_i)`, where `e` is a
//! unit-variance AR(1) process with coefficient 0.9 standardized over the
//! expected beat count, and `a = √(sdnn² − rsa²/2)` so that the sine and
//! the noise together reach the target SDNN.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::dataset::{EmotionLabel, FeatureRow, LabelSeries, Scenario};
use crate::hrv::{compute_hrv, HrvFeatures};
use crate::rng;
use crate::signal::{IbiSequence, PpgSignal, MAX_IBI_MS, MIN_IBI_MS};

pub const AR_COEFFICIENT: f64 = 0.9;
pub const RESPIRATION_HZ: f64 = 0.25;
pub const PULSE_SIGMA_S: f64 = 0.060;
pub const DRIFT_HZ: f64 = 0.1;
/// Time of the first beat in a generated stream.
pub const FIRST_BEAT_S: f64 = 0.5;

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("invalid profile: {0}")]
    InvalidProfile(String),
    #[error("duration {duration_s} s is shorter than one mean interval")]
    TooShort { duration_s: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateProfile {
    pub label: EmotionLabel,
    pub mean_rr_ms: f64,
    pub sdnn_target_ms: f64,
    pub rsa_depth_ms: f64,
    pub seed: u64,
}

impl StateProfile {
    /// Resting, stressed and amused physiology: stress shortens intervals and
    /// lowers variability, amusement sits in between.
    pub fn canonical(label: EmotionLabel, seed: u64) -> Self {
        let (mean_rr_ms, sdnn_target_ms, rsa_depth_ms) = match label {
            EmotionLabel::Baseline => (850.0, 55.0, 30.0),
            EmotionLabel::Stress => (650.0, 25.0, 10.0),
            EmotionLabel::Amusement => (760.0, 40.0, 20.0),
        };
        Self {
            label,
            mean_rr_ms,
            sdnn_target_ms,
            rsa_depth_ms,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidProfile(m));
        if !(MIN_IBI_MS..=MAX_IBI_MS).contains(&self.mean_rr_ms) {
            return bad(format!("mean_rr_ms {} outside [300, 2000]", self.mean_rr_ms));
        }
        if !(self.sdnn_target_ms.is_finite() && self.sdnn_target_ms >= 0.0) {
            return bad(format!("sdnn_target_ms {} must be non-negative", self.sdnn_target_ms));
        }
        if !(self.rsa_depth_ms.is_finite() && self.rsa_depth_ms >= 0.0) {
            return bad(format!("rsa_depth_ms {} must be non-negative", self.rsa_depth_ms));
        }
        if self.rsa_depth_ms / std::f64::consts::SQRT_2 > self.sdnn_target_ms {
            return bad(format!(
                "rsa_depth_ms {} alone exceeds sdnn_target_ms {}",
                self.rsa_depth_ms, self.sdnn_target_ms
            ));
        }
        Ok(())
    }

    fn noise_amplitude(&self) -> f64 {
        (self.sdnn_target_ms.powi(2) - self.rsa_depth_ms.powi(2) / 2.0)
            .max(0.0)
            .sqrt()
    }
}

/// Generated intervals with one label per interval.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthIbi {
    pub ibi: IbiSequence,
    pub labels: Vec<EmotionLabel>,
    /// The beat that opens the first interval.
    pub first_beat_s: f64,
}

impl SynthIbi {
    /// Every beat time, including the one that opens the first interval.
    pub fn beat_times_s(&self) -> Vec<f64> {
        let mut t = Vec::with_capacity(self.ibi.len() + 1);
        t.push(self.first_beat_s);
        t.extend_from_slice(self.ibi.beat_times_s());
        t
    }
}

/// Appends beats from `start_s` while they stay before `end_s`.
fn generate_into(
    profile: &StateProfile,
    start_s: f64,
    end_s: f64,
    intervals: &mut Vec<f64>,
    beats: &mut Vec<f64>,
) {
    let mut rng = ChaCha8Rng::seed_from_u64(profile.seed);
    let expected = ((end_s - start_s) * 1000.0 / profile.mean_rr_ms).floor().max(2.0) as usize;
    let capacity = ((end_s - start_s) * 1000.0 / MIN_IBI_MS).ceil() as usize + 1;
    let innovation = (1.0 - AR_COEFFICIENT * AR_COEFFICIENT).sqrt();
    let mut noise = Vec::with_capacity(capacity);
    let mut e: f64 = StandardNormal.sample(&mut rng);
    for _ in 0..capacity {
        noise.push(e);
        let n: f64 = StandardNormal.sample(&mut rng);
        e = AR_COEFFICIENT * e + innovation * n;
    }
    let head = &noise[..expected.min(capacity)];
    let mean = head.iter().sum::<f64>() / head.len() as f64;
    let sd = (head.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (head.len() - 1) as f64).sqrt();
    let scale = if sd > 0.0 { profile.noise_amplitude() / sd } else { 0.0 };

    let mut t = start_s;
    for e in noise {
        let rsa = profile.rsa_depth_ms * (2.0 * std::f64::consts::PI * RESPIRATION_HZ * t).sin();
        let rr = (profile.mean_rr_ms + (e - mean) * scale + rsa).clamp(MIN_IBI_MS, MAX_IBI_MS);
        let next = t + rr / 1000.0;
        if next >= end_s {
            break;
        }
        intervals.push(rr);
        beats.push(next);
        t = next;
    }
}

/// Interval stream for one state over `duration_s` seconds.
pub fn synth_ibi(profile: &StateProfile, duration_s: f64) -> Result<SynthIbi, SynthError> {
    synth_session(&[(*profile, duration_s)])
}

/// Consecutive state segments of the given durations, each generated with
/// its own profile and seed. Beats stop half a second before the end.
pub fn synth_session(segments: &[(StateProfile, f64)]) -> Result<SynthIbi, SynthError> {
    let mut intervals = Vec::new();
    let mut beats = Vec::new();
    let mut labels = Vec::new();
    let total: f64 = segments.iter().map(|(_, d)| d).sum();
    let mut seg_start = 0.0;
    for (i, (profile, duration_s)) in segments.iter().enumerate() {
        profile.validate()?;
        if !(duration_s.is_finite() && duration_s * 1000.0 >= profile.mean_rr_ms) {
            return Err(SynthError::TooShort {
                duration_s: *duration_s,
            });
        }
        let seg_end = seg_start + duration_s;
        let stop = if i + 1 == segments.len() {
            total - FIRST_BEAT_S
        } else {
            seg_end
        };
        let from = beats.last().copied().unwrap_or(FIRST_BEAT_S);
        let before = intervals.len();
        generate_into(profile, from, stop, &mut intervals, &mut beats);
        labels.resize(labels.len() + intervals.len() - before, profile.label);
        seg_start = seg_end;
    }
    let ibi = IbiSequence::new(intervals, beats).map_err(|e| SynthError::InvalidProfile(e.to_string()))?;
    Ok(SynthIbi {
        ibi,
        labels,
        first_beat_s: FIRST_BEAT_S,
    })
}

/// Label stream sampled at `rate_hz` for consecutive segments.
pub fn segment_labels(segments: &[(EmotionLabel, f64)], rate_hz: f64) -> LabelSeries {
    let mut labels = Vec::new();
    let mut t0 = 0.0;
    for &(label, duration) in segments {
        let end = t0 + duration;
        let from = (t0 * rate_hz).round() as usize;
        let to = (end * rate_hz).round() as usize;
        labels.resize(labels.len() + to.saturating_sub(from), label);
        t0 = end;
    }
    LabelSeries::uniform(labels, rate_hz, 0.0)
}

/// `n_windows` independent feature rows with labels cycling through the
/// three classes, each computed from a fresh canonical-profile stream of
/// `width_s` seconds. Chest features for [`Scenario::Combined`] come from a
/// second stream with its own seed.
pub fn synth_feature_rows(
    n_windows: usize,
    width_s: f64,
    scenario: Scenario,
    seed: u64,
) -> Result<Vec<FeatureRow>, SynthError> {
    (0..n_windows)
        .map(|i| {
            let label = EmotionLabel::ALL[i % EmotionLabel::COUNT];
            let stream = |k: u64| -> Result<HrvFeatures, SynthError> {
                let profile = StateProfile::canonical(label, rng::derive_seed(seed, 2 * i as u64 + k));
                let s = synth_ibi(&profile, width_s)?;
                compute_hrv(s.ibi.intervals_ms()).map_err(|e| SynthError::InvalidProfile(e.to_string()))
            };
            let wrist = stream(0)?;
            let chest = if scenario.needs_chest() { Some(stream(1)?) } else { None };
            Ok(FeatureRow {
                features: scenario.features(&wrist, chest.as_ref()).expect("chest stream present"),
                label,
                subject_id: format!("synth{}", i / EmotionLabel::COUNT),
                window_start_s: 0.0,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderOptions {
    pub rate_hz: f64,
    pub noise_std: f64,
    /// Amplitude of a 0.1 Hz baseline wander.
    pub drift_amplitude: f64,
    pub seed: u64,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            rate_hz: 64.0,
            noise_std: 0.0,
            drift_amplitude: 0.0,
            seed: 0,
        }
    }
}

/// Unit-amplitude Gaussian pulse (σ = 60 ms) at every beat time, sampled
/// over `[0, duration_s)`, plus optional white noise and drift.
pub fn render_beats(beat_times_s: &[f64], duration_s: f64, opts: &RenderOptions) -> PpgSignal {
    let rate = opts.rate_hz;
    let n = (duration_s * rate).round().max(0.0) as usize;
    let mut samples = vec![0.0; n];
    let reach = 6.0 * PULSE_SIGMA_S;
    for &tb in beat_times_s {
        let lo = ((tb - reach) * rate).floor().max(0.0) as usize;
        let hi = (((tb + reach) * rate).ceil().max(0.0) as usize).min(n);
        for (i, s) in samples.iter_mut().enumerate().take(hi).skip(lo) {
            let dt = i as f64 / rate - tb;
            *s += (-dt * dt / (2.0 * PULSE_SIGMA_S * PULSE_SIGMA_S)).exp();
        }
    }
    if opts.drift_amplitude != 0.0 {
        for (i, s) in samples.iter_mut().enumerate() {
            *s += opts.drift_amplitude * (2.0 * std::f64::consts::PI * DRIFT_HZ * i as f64 / rate).sin();
        }
    }
    if opts.noise_std > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        for s in samples.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *s += opts.noise_std * z;
        }
    }
    PpgSignal::new(samples, rate, 0.0).expect("rendered samples are finite")
}

/// Renders an interval sequence; the opening beat is recovered from the
/// first interval.
pub fn render_ppg(ibi: &IbiSequence, duration_s: f64, opts: &RenderOptions) -> PpgSignal {
    let mut beats = Vec::with_capacity(ibi.len() + 1);
    if let (Some(&t), Some(&rr)) = (ibi.beat_times_s().first(), ibi.intervals_ms().first()) {
        beats.push(t - rr / 1000.0);
    }
    beats.extend_from_slice(ibi.beat_times_s());
    render_beats(&beats, duration_s, opts)
}
