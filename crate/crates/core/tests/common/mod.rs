#![allow(dead_code)]

pub mod checks;

use affect_core::dataset::{Dataset, EmotionLabel, FeatureMatrix, Scenario};
use affect_core::models::{train, AnyModel, ModelKind, TrainConfig, TreeEnsembleModel};
use affect_core::hrv::compute_hrv;
use affect_core::pipeline::{ppg_to_ibi, ppg_to_raw_ibi};
use affect_core::synth::{render_beats, synth_feature_rows, synth_ibi, RenderOptions, StateProfile};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Balanced three-class WRIST_ALL dataset from canonical profiles.
pub fn synthetic_dataset(n_windows: usize, seed: u64) -> Dataset {
    let rows = synth_feature_rows(n_windows, 120.0, Scenario::WristAll, seed).unwrap();
    Dataset::from_rows(&rows, Scenario::WristAll.feature_names()).unwrap()
}

pub fn train_ensemble(kind: ModelKind, data: &Dataset, n_trees: usize, seed: u64) -> TreeEnsembleModel {
    let mut cfg = TrainConfig {
        seed,
        ..TrainConfig::default()
    };
    cfg.forest.n_trees = n_trees;
    cfg.boosting.rounds = n_trees;
    match train(kind, data, &cfg).unwrap() {
        AnyModel::Ensemble(m) => m,
        other => panic!("expected an ensemble, got {:?}", other.kind()),
    }
}

/// Uniform probes over each feature's observed range widened by 25% on
/// both sides.
pub fn random_probes(data: &Dataset, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let ranges: Vec<(f64, f64)> = (0..data.n_features())
        .map(|c| {
            let (lo, hi) = data
                .x
                .column(c)
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
            let pad = 0.25 * (hi - lo).max(1e-6);
            (lo - pad, hi + pad)
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| ranges.iter().map(|&(lo, hi)| rng.random_range(lo..hi)).collect())
        .collect()
}

/// [`synthetic_dataset`] with a fraction of labels redrawn uniformly, so
/// fully grown trees end up deep.
pub fn noisy_dataset(n_windows: usize, flip: f64, seed: u64) -> Dataset {
    let mut data = synthetic_dataset(n_windows, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for y in data.y.iter_mut() {
        if rng.random_bool(flip) {
            *y = EmotionLabel::ALL[rng.random_range(0..EmotionLabel::COUNT)];
        }
    }
    data
}

/// Features drawn uniformly from [0, 1) with cyclic labels. Nothing is
/// learnable, so fully grown trees reach their maximum size.
pub fn unstructured_dataset(n_rows: usize, n_features: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<Vec<f64>> = (0..n_rows)
        .map(|_| (0..n_features).map(|_| rng.random_range(0.0..1.0)).collect())
        .collect();
    let y = (0..n_rows).map(|i| EmotionLabel::ALL[i % EmotionLabel::COUNT]).collect();
    let names = (0..n_features).map(|c| format!("f{c}")).collect();
    Dataset::new(FeatureMatrix::from_rows(&rows).unwrap(), y, names).unwrap()
}

/// Ground truth against what the pipeline recovered from a rendered stream.
#[derive(Debug, Clone, Copy)]
pub struct RoundTrip {
    pub true_beats: usize,
    pub recovered_beats: usize,
    /// Largest interval error in ms; infinite when beat counts differ.
    pub max_interval_error_ms: f64,
    pub true_sdnn_ms: f64,
    pub recovered_sdnn_ms: f64,
}

impl RoundTrip {
    pub fn sdnn_relative_error(&self) -> f64 {
        (self.recovered_sdnn_ms - self.true_sdnn_ms).abs() / self.true_sdnn_ms
    }
}

/// Variability from respiratory modulation alone, 4% of the mean interval.
/// Bounded swings keep every interval clear of the 300 ms refractory
/// period even at 180 bpm.
pub fn sweep_profile(bpm: f64, seed: u64) -> StateProfile {
    let mean_rr = 60_000.0 / bpm;
    let rsa = 0.04 * mean_rr;
    StateProfile {
        label: EmotionLabel::Baseline,
        mean_rr_ms: mean_rr,
        sdnn_target_ms: rsa / std::f64::consts::SQRT_2,
        rsa_depth_ms: rsa,
        seed,
    }
}

/// Two minutes at `bpm` with mild variability, rendered at 64 Hz and run
/// through filter, peak detection and cleaning.
pub fn round_trip_at(bpm: f64, noise_std: f64, seed: u64) -> RoundTrip {
    let profile = sweep_profile(bpm, seed);
    let duration = 120.0;
    let truth = synth_ibi(&profile, duration).unwrap();
    let opts = RenderOptions {
        noise_std,
        seed: seed ^ 0xa5a5,
        ..RenderOptions::default()
    };
    let ppg = render_beats(&truth.beat_times_s(), duration, &opts);
    let recovered = ppg_to_ibi(&ppg).unwrap();
    let t = truth.ibi.intervals_ms();
    let r = recovered.intervals_ms();
    let max_interval_error_ms = if t.len() == r.len() {
        t.iter().zip(r).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    } else {
        f64::INFINITY
    };
    RoundTrip {
        true_beats: t.len() + 1,
        recovered_beats: r.len() + 1,
        max_interval_error_ms,
        true_sdnn_ms: compute_hrv(t).unwrap().sdnn_ms,
        recovered_sdnn_ms: compute_hrv(r).map(|h| h.sdnn_ms).unwrap_or(f64::NAN),
    }
}

/// Mean distance in ms from each detected beat to the nearest true beat.
pub fn beat_timing_error(bpm: f64, noise_std: f64, seed: u64) -> f64 {
    let profile = sweep_profile(bpm, seed);
    let duration = 120.0;
    let truth = synth_ibi(&profile, duration).unwrap().beat_times_s();
    let opts = RenderOptions {
        noise_std,
        seed: seed ^ 0xa5a5,
        ..RenderOptions::default()
    };
    let ppg = render_beats(&truth, duration, &opts);
    let detected = ppg_to_raw_ibi(&ppg).unwrap();
    let times = detected.beat_times_s();
    times
        .iter()
        .map(|&d| truth.iter().map(|&b| (b - d).abs()).fold(f64::INFINITY, f64::min) * 1000.0)
        .sum::<f64>()
        / times.len().max(1) as f64
}
