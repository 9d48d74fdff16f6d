//! One function per acceptance criterion. Each runs the measurement and
//! reports whether it met its pinned tolerance.

use std::path::Path;
use std::time::{Duration, Instant};

use affect_core::bench::{benchmark, speedup, BenchConfig, Variant};
use affect_core::compile::compile_ensemble;
use affect_core::dataset::{class_counts, stratified_split, Dataset, EmotionLabel, Scenario, WindowConfig};
use affect_core::pipeline::{discover_subjects, extract_subject};
use affect_core::eval::evaluate;
use affect_core::hrv::compute_hrv;
use affect_core::models::{train, InferenceModel, ModelKind, TrainConfig};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{random_probes, round_trip_at, synthetic_dataset, train_ensemble, unstructured_dataset};

pub const HRV_RELATIVE_TOLERANCE: f64 = 1e-9;
pub const HRV_RANDOM_ARRAYS: usize = 1_000;
pub const SAMPLE_PERIOD_MS: f64 = 1000.0 / 64.0;
pub const SDNN_RELATIVE_TOLERANCE: f64 = 0.10;
pub const EQUIVALENCE_PROBES: usize = 10_000;
pub const PROBABILITY_TOLERANCE: f64 = 1e-9;
pub const MIN_SPEEDUP: f64 = 5.0;
pub const MAX_COMPILED_P50_US: f64 = 1_000.0;
pub const TREE_F1_FLOOR: f64 = 0.90;
pub const LINEAR_F1_FLOOR: f64 = 0.80;
pub const METRIC_TRIALS: usize = 200;
pub const METRIC_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct Outcome {
    pub pass: bool,
    pub detail: String,
    pub elapsed: Duration,
}

fn timed(f: impl FnOnce() -> Result<String, String>) -> Outcome {
    let start = Instant::now();
    let result = f();
    let elapsed = start.elapsed();
    match result {
        Ok(detail) => Outcome {
            pass: true,
            detail,
            elapsed,
        },
        Err(detail) => Outcome {
            pass: false,
            detail,
            elapsed,
        },
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn rel_err(got: f64, want: f64) -> f64 {
    if want == 0.0 {
        got.abs()
    } else {
        ((got - want) / want).abs()
    }
}

/// Straight transcription of the definitions with plain loops.
fn brute_force_hrv(x: &[f64]) -> [f64; 5] {
    let n = x.len() as f64;
    let mut total = 0.0;
    for v in x {
        total += v;
    }
    let mean = total / n;
    let mut dev = 0.0;
    for v in x {
        dev += (v - mean) * (v - mean);
    }
    let mut sq = 0.0;
    let mut count = 0.0;
    for i in 1..x.len() {
        let d = x[i] - x[i - 1];
        sq += d * d;
        if d.abs() > 50.0 {
            count += 1.0;
        }
    }
    [
        (dev / (n - 1.0)).sqrt(),
        (sq / (n - 1.0)).sqrt(),
        100.0 * count / (n - 1.0),
        mean,
        60_000.0 / mean,
    ]
}

pub fn hrv_oracle() -> Outcome {
    timed(|| {
        let worked: [(&[f64], [f64; 5]); 3] = [
            (&[800.0, 800.0, 800.0], [0.0, 0.0, 0.0, 800.0, 75.0]),
            (&[700.0, 800.0, 900.0], [100.0, 100.0, 100.0, 800.0, 75.0]),
            (
                &[1000.0, 1040.0],
                [800f64.sqrt(), 40.0, 0.0, 1020.0, 60_000.0 / 1020.0],
            ),
        ];
        for (x, want) in worked {
            let got = compute_hrv(x).map_err(|e| e.to_string())?.to_array();
            for (g, w) in got.iter().zip(want) {
                ensure(rel_err(*g, w) <= 1e-12, || format!("{x:?}: got {got:?}, want {want:?}"))?;
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0x4852_56);
        let mut worst = 0.0f64;
        for trial in 0..HRV_RANDOM_ARRAYS {
            let len = rng.random_range(2..=500);
            let integer = trial % 2 == 0;
            let mut v: f64 = rng.random_range(500.0..1200.0);
            let x: Vec<f64> = (0..len)
                .map(|_| {
                    v = (v + rng.random_range(-80.0..80.0)).clamp(300.0, 2000.0);
                    if integer {
                        v.round()
                    } else {
                        v
                    }
                })
                .collect();
            let got = compute_hrv(&x).map_err(|e| e.to_string())?.to_array();
            let want = brute_force_hrv(&x);
            for (g, w) in got.iter().zip(want) {
                worst = worst.max(rel_err(*g, w));
            }
        }
        ensure(worst <= HRV_RELATIVE_TOLERANCE, || {
            format!("worst relative error {worst:.3e} over {HRV_RANDOM_ARRAYS} arrays")
        })?;
        Ok(format!(
            "3 worked examples exact, worst relative error {worst:.1e} over {HRV_RANDOM_ARRAYS} arrays"
        ))
    })
}

pub fn pipeline_round_trip() -> Outcome {
    timed(|| {
        let mut worst_interval = 0.0f64;
        let mut worst_sdnn = 0.0f64;
        for bpm in (40..=180).step_by(5) {
            let rt = round_trip_at(bpm as f64, 0.0, bpm as u64);
            ensure(rt.recovered_beats == rt.true_beats, || {
                format!("{bpm} bpm: {} beats recovered of {}", rt.recovered_beats, rt.true_beats)
            })?;
            worst_interval = worst_interval.max(rt.max_interval_error_ms);
            worst_sdnn = worst_sdnn.max(rt.sdnn_relative_error());
            ensure(rt.max_interval_error_ms <= SAMPLE_PERIOD_MS, || {
                format!("{bpm} bpm: interval error {:.3} ms", rt.max_interval_error_ms)
            })?;
            ensure(rt.sdnn_relative_error() <= SDNN_RELATIVE_TOLERANCE, || {
                format!(
                    "{bpm} bpm: SDNN {:.3} vs {:.3}",
                    rt.recovered_sdnn_ms, rt.true_sdnn_ms
                )
            })?;
        }
        Ok(format!(
            "40-180 bpm: beat counts exact, max interval error {worst_interval:.3} ms, max SDNN error {:.2}%",
            100.0 * worst_sdnn
        ))
    })
}

pub fn compiled_equivalence() -> Outcome {
    timed(|| {
        let data = synthetic_dataset(500, 11);
        let probes = random_probes(&data, EQUIVALENCE_PROBES, 12);
        let mut summary = Vec::new();
        for kind in [ModelKind::RandomForest, ModelKind::ExtraTrees, ModelKind::GradientBoosted] {
            let model = train_ensemble(kind, &data, 200, 13);
            let compiled = compile_ensemble(&model).map_err(|e| e.to_string())?;
            let mut agree = 0usize;
            let mut worst = 0.0f64;
            for p in &probes {
                let a = model.predict(p).map_err(|e| e.to_string())?;
                let b = compiled.predict(p).map_err(|e| e.to_string())?;
                agree += usize::from(a.label == b.label);
                for (x, y) in a.probabilities.iter().zip(&b.probabilities) {
                    worst = worst.max((x - y).abs());
                }
            }
            ensure(agree == probes.len() && worst <= PROBABILITY_TOLERANCE, || {
                format!("{kind}: argmax agreement {agree}/{}, max prob gap {worst:.2e}", probes.len())
            })?;
            summary.push(format!("{kind} {worst:.0e}"));
        }
        Ok(format!(
            "argmax 100% on {EQUIVALENCE_PROBES} probes; max prob gap {}",
            summary.join(", ")
        ))
    })
}

/// Best p50 ratio out of three source/compiled measurement pairs.
pub fn best_speedup(
    model: &dyn InferenceModel,
    compiled: &dyn InferenceModel,
    probes: &[Vec<f64>],
    cfg: &BenchConfig,
) -> (f64, f64) {
    let mut best = (0.0, f64::INFINITY);
    for _ in 0..3 {
        let src = benchmark(model, "source", Variant::Source, probes, cfg).unwrap();
        let cmp = benchmark(compiled, "compiled", Variant::Compiled, probes, cfg).unwrap();
        let s = speedup(&src, &cmp);
        if s > best.0 {
            best = (s, cmp.latency.p50);
        }
    }
    best
}

pub fn speedup_cfg() -> BenchConfig {
    BenchConfig {
        reps: 2_000,
        warmup: 200,
        runs: 5,
    }
}

/// 200 fully grown ExtraTrees on data with no structure, so every tree is
/// as deep as the training set allows.
pub fn compiled_speedup() -> Outcome {
    timed(|| {
        let data = unstructured_dataset(500, 5, 21);
        let model = train_ensemble(ModelKind::ExtraTrees, &data, 200, 22);
        let compiled = compile_ensemble(&model).map_err(|e| e.to_string())?;
        let probes = random_probes(&data, 1_000, 23);
        let (s, p50) = best_speedup(&model, &compiled, &probes, &speedup_cfg());
        let detail = format!("extra_trees x200: p50 speedup {s:.2}x, compiled p50 {p50:.3} us");
        ensure(s >= MIN_SPEEDUP && p50 < MAX_COMPILED_P50_US, || detail.clone())?;
        Ok(detail)
    })
}

pub fn separable_learning() -> Outcome {
    timed(|| {
        let data = synthetic_dataset(600, 71);
        let split = stratified_split(&data.y, 0.2, 42).map_err(|e| e.to_string())?;
        let train_set = data.subset(&split.train);
        let test_set = data.subset(&split.test);
        let cfg = TrainConfig::default();
        let mut summary = Vec::new();
        let mut failures = Vec::new();
        for kind in [
            ModelKind::Logistic,
            ModelKind::LinearSvm,
            ModelKind::RandomForest,
            ModelKind::ExtraTrees,
            ModelKind::GradientBoosted,
        ] {
            let model = train(kind, &train_set, &cfg).map_err(|e| e.to_string())?;
            let preds = test_set
                .x
                .rows()
                .map(|r| model.predict(r).map(|p| p.label))
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| e.to_string())?;
            let f1 = evaluate(&preds, &test_set.y).map_err(|e| e.to_string())?.macro_f1;
            let floor = if kind.is_ensemble() { TREE_F1_FLOOR } else { LINEAR_F1_FLOOR };
            if f1 < floor {
                failures.push(format!("{kind} {f1:.3} < {floor}"));
            }
            summary.push(format!("{kind} {f1:.3}"));
        }
        ensure(failures.is_empty(), || failures.join(", "))?;
        Ok(format!("held-out macro-F1: {}", summary.join(", ")))
    })
}

pub fn split_fidelity() -> Outcome {
    timed(|| {
        let mut labels: Vec<EmotionLabel> = [(EmotionLabel::Baseline, 261), (EmotionLabel::Stress, 145), (EmotionLabel::Amusement, 82)]
            .iter()
            .flat_map(|&(l, n)| std::iter::repeat_n(l, n))
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for seed in 0..20u64 {
            labels.shuffle(&mut rng);
            let split = stratified_split(&labels, 0.2, seed).map_err(|e| e.to_string())?;
            let test: Vec<EmotionLabel> = split.test.iter().map(|&i| labels[i]).collect();
            let counts = class_counts(&test);
            ensure(counts == [52, 29, 17], || format!("seed {seed}: test supports {counts:?}"))?;
            ensure(split.train.len() + split.test.len() == labels.len(), || {
                format!("seed {seed}: split loses rows")
            })?;
        }
        Ok("test supports (52, 29, 17) for 20 seeds and shuffles".into())
    })
}

pub fn metric_oracle() -> Outcome {
    use EmotionLabel::*;
    timed(|| {
        let n = 11;
        let truths: Vec<_> = EmotionLabel::ALL.iter().flat_map(|&l| std::iter::repeat_n(l, n)).collect();
        let r = evaluate(&vec![Baseline; truths.len()], &truths).map_err(|e| e.to_string())?;
        let f1: Vec<f64> = r.per_class.iter().map(|m| m.f1).collect();
        ensure(
            (f1[0] - 0.5).abs() <= METRIC_TOLERANCE
                && f1[1] == 0.0
                && f1[2] == 0.0
                && (r.macro_f1 - 1.0 / 6.0).abs() <= METRIC_TOLERANCE,
            || format!("always-majority: per-class F1 {f1:?}, macro {}", r.macro_f1),
        )?;

        let perms: [[EmotionLabel; 3]; 6] = [
            [Baseline, Stress, Amusement],
            [Baseline, Amusement, Stress],
            [Stress, Baseline, Amusement],
            [Stress, Amusement, Baseline],
            [Amusement, Baseline, Stress],
            [Amusement, Stress, Baseline],
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(0x6d65_7472);
        let draw = |rng: &mut ChaCha8Rng| EmotionLabel::ALL[rng.random_range(0..3)];
        for trial in 0..METRIC_TRIALS {
            let len = rng.random_range(1..=300);
            let preds: Vec<_> = (0..len).map(|_| draw(&mut rng)).collect();
            let truths: Vec<_> = (0..len).map(|_| draw(&mut rng)).collect();
            let base = evaluate(&preds, &truths).map_err(|e| e.to_string())?;

            let mean = base.per_class.iter().map(|m| m.f1).sum::<f64>() / 3.0;
            ensure(
                base.per_class.iter().all(|m| (0.0..=1.0).contains(&m.f1))
                    && (base.macro_f1 - mean).abs() <= METRIC_TOLERANCE,
                || format!("trial {trial}: F1 bounds or macro mean broken"),
            )?;

            let mut order: Vec<usize> = (0..len).collect();
            order.shuffle(&mut rng);
            let sp: Vec<_> = order.iter().map(|&i| preds[i]).collect();
            let st: Vec<_> = order.iter().map(|&i| truths[i]).collect();
            let shuffled = evaluate(&sp, &st).map_err(|e| e.to_string())?;
            ensure(base == shuffled, || {
                format!("trial {trial}: joint shuffle changed the report")
            })?;

            let perm = perms[rng.random_range(0..perms.len())];
            let map = |l: EmotionLabel| perm[l.index()];
            let rp: Vec<_> = preds.iter().map(|&l| map(l)).collect();
            let rt: Vec<_> = truths.iter().map(|&l| map(l)).collect();
            let relabeled = evaluate(&rp, &rt).map_err(|e| e.to_string())?;
            let close = |a: f64, b: f64| (a - b).abs() <= METRIC_TOLERANCE;
            ensure(
                close(base.accuracy, relabeled.accuracy) && close(base.macro_f1, relabeled.macro_f1),
                || format!("trial {trial}: relabeling changed accuracy or macro-F1"),
            )?;
            for m in &base.per_class {
                let moved = &relabeled.per_class[map(m.label).index()];
                ensure(
                    close(m.precision, moved.precision)
                        && close(m.recall, moved.recall)
                        && close(m.f1, moved.f1)
                        && m.support == moved.support
                        && m.zero_division == moved.zero_division,
                    || format!("trial {trial}: {} metrics did not follow relabeling", m.label.name()),
                )?;
            }
        }
        Ok(format!(
            "always-majority macro-F1 = 1/6; shuffle and relabel properties hold over {METRIC_TRIALS} random vectors"
        ))
    })
}

pub const WESAD_ENV: &str = "AFFECT_WESAD_DIR";
pub const WESAD_WINDOWS: f64 = 488.0;
pub const WESAD_WINDOW_TOLERANCE: f64 = 0.05;
pub const WESAD_SHARES_PCT: [f64; 3] = [53.5, 29.7, 16.8];
pub const WESAD_SHARE_TOLERANCE_PCT: f64 = 2.0;
pub const WESAD_GBT_WRIST_F1: f64 = 0.685;
pub const WESAD_ET_COMBINED_F1: f64 = 0.826;
pub const WESAD_F1_TOLERANCE: f64 = 0.10;

fn held_out_f1(rows: &[affect_core::dataset::FeatureRow], scenario: Scenario, kind: ModelKind) -> Result<f64, String> {
    let data = Dataset::from_rows(rows, scenario.feature_names()).map_err(|e| e.to_string())?;
    let split = stratified_split(&data.y, 0.2, 42).map_err(|e| e.to_string())?;
    let model = train(kind, &data.subset(&split.train), &TrainConfig::default()).map_err(|e| e.to_string())?;
    let test = data.subset(&split.test);
    let preds = test
        .x
        .rows()
        .map(|r| model.predict(r).map(|p| p.label))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    Ok(evaluate(&preds, &test.y).map_err(|e| e.to_string())?.macro_f1)
}

/// Converted dataset in `dir`: window count, class shares and two
/// headline scores, each against a loose band.
pub fn wesad_reproduction(dir: &Path) -> Outcome {
    timed(|| {
        let wrist_cfg = WindowConfig::default();
        let combined_cfg = WindowConfig {
            scenario: Scenario::Combined,
            ..WindowConfig::default()
        };
        let mut wrist = Vec::new();
        let mut combined = Vec::new();
        for files in discover_subjects(dir).map_err(|e| e.to_string())? {
            let inputs = files.load(None).map_err(|e| e.to_string())?;
            wrist.extend(extract_subject(&inputs, &wrist_cfg).map_err(|e| e.to_string())?);
            if inputs.chest_ibi.is_some() {
                combined.extend(extract_subject(&inputs, &combined_cfg).map_err(|e| e.to_string())?);
            }
        }
        let n = wrist.len() as f64;
        let labels: Vec<_> = wrist.iter().map(|r| r.label).collect();
        let counts = class_counts(&labels);
        let shares: Vec<f64> = counts.iter().map(|&c| 100.0 * c as f64 / n.max(1.0)).collect();
        let gbt = held_out_f1(&wrist, Scenario::WristAll, ModelKind::GradientBoosted)?;
        let et = held_out_f1(&combined, Scenario::Combined, ModelKind::ExtraTrees)?;
        let detail = format!(
            "{n} windows, shares {:.1}/{:.1}/{:.1}%, GBT wrist_all F1 {gbt:.3}, ExtraTrees combined F1 {et:.3}",
            shares[0], shares[1], shares[2]
        );
        let ok = (n - WESAD_WINDOWS).abs() <= WESAD_WINDOW_TOLERANCE * WESAD_WINDOWS
            && shares
                .iter()
                .zip(WESAD_SHARES_PCT)
                .all(|(s, w)| (s - w).abs() <= WESAD_SHARE_TOLERANCE_PCT)
            && (gbt - WESAD_GBT_WRIST_F1).abs() <= WESAD_F1_TOLERANCE
            && (et - WESAD_ET_COMBINED_F1).abs() <= WESAD_F1_TOLERANCE;
        ensure(ok, || detail.clone())?;
        Ok(detail)
    })
}
