use std::path::{Path, PathBuf};

use affect_core::bench::{benchmark, save_reports_json, speedup, write_reports_csv, BenchConfig, BenchReport, Variant};
use affect_core::dataset::{
    load_ibi_csv, read_features_csv, stratified_split, write_features_csv, write_ibi_csv, write_labels_csv,
    write_ppg_csv, Dataset, FeatureTable,
};
use affect_core::models::{train, InferenceModel, TrainConfig};
use affect_core::pipeline::{discover_subjects, extract_subject, SubjectInputs};
use affect_core::rng::derive_seed;
use affect_core::signal::clean_ibi;
use affect_core::synth::{render_ppg, segment_labels, synth_session, RenderOptions, StateProfile};
use affect_core::{compile_ensemble, compute_hrv, evaluate, AnyModel, EmotionLabel, EvalReport, Scenario};
use anyhow::{bail, ensure, Context, Result};

use crate::config::RunConfig;

pub struct ExtractArgs {
    pub input: Option<PathBuf>,
    pub ppg: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub chest_ibi: Option<PathBuf>,
    pub rate_hz: Option<f64>,
}

fn load_inputs(args: &ExtractArgs) -> Result<Vec<SubjectInputs>> {
    if let Some(dir) = &args.input {
        ensure!(args.ppg.is_none(), "--input and --ppg are mutually exclusive");
        let files = discover_subjects(dir).with_context(|| format!("scanning {}", dir.display()))?;
        ensure!(!files.is_empty(), "no *_ppg.csv files in {}", dir.display());
        return files
            .iter()
            .map(|f| f.load(args.rate_hz).with_context(|| format!("loading subject {}", f.subject_id)))
            .collect();
    }
    let (Some(ppg), Some(labels)) = (&args.ppg, &args.labels) else {
        bail!("give either --input <dir> or both --ppg and --labels");
    };
    let files = affect_core::pipeline::SubjectFiles {
        subject_id: ppg
            .file_stem()
            .and_then(|s| s.to_str())
            .map(|s| s.trim_end_matches("_ppg").to_string())
            .unwrap_or_else(|| "subject".into()),
        ppg: ppg.clone(),
        labels: labels.clone(),
        chest_ibi: args.chest_ibi.clone(),
    };
    Ok(vec![files.load(args.rate_hz)?])
}

pub fn extract(cfg: &RunConfig, args: &ExtractArgs) -> Result<()> {
    let window = cfg.window_config();
    let mut rows = Vec::new();
    for inputs in load_inputs(args)? {
        if window.scenario.needs_chest() && inputs.chest_ibi.is_none() {
            eprintln!("warning: {} has no chest intervals, skipped for {}", inputs.subject_id, window.scenario);
            continue;
        }
        let subject_rows =
            extract_subject(&inputs, &window).with_context(|| format!("extracting {}", inputs.subject_id))?;
        eprintln!("{}: {} windows", inputs.subject_id, subject_rows.len());
        rows.extend(subject_rows);
    }
    let out = cfg.out_or("features.csv");
    let n = rows.len();
    write_features_csv(
        &out,
        &FeatureTable {
            scenario: window.scenario,
            rows,
        },
    )?;
    println!("wrote {n} {} rows to {}", window.scenario, out.display());
    Ok(())
}

fn load_table(path: &Path, expected: Option<Scenario>) -> Result<FeatureTable> {
    let table = read_features_csv(path).with_context(|| format!("reading {}", path.display()))?;
    if let Some(s) = expected {
        ensure!(
            s == table.scenario,
            "{} holds {} features but {s} was requested",
            path.display(),
            table.scenario
        );
    }
    Ok(table)
}

/// Train and test parts of a table under the shared split rule.
fn split(data: &Dataset, test_frac: f64, seed: u64) -> Result<(Dataset, Option<Dataset>)> {
    if test_frac == 0.0 {
        return Ok((data.clone(), None));
    }
    let idx = stratified_split(&data.y, test_frac, seed)?;
    Ok((data.subset(&idx.train), Some(data.subset(&idx.test))))
}

pub struct TrainArgs {
    pub features: PathBuf,
    pub test_frac: f64,
    pub trees: Option<usize>,
}

pub fn train_cmd(cfg: &RunConfig, args: &TrainArgs) -> Result<()> {
    let kind = cfg.model.context("--model is required")?;
    let table = load_table(&args.features, cfg.scenario)?;
    let (train_set, _) = split(&table.dataset()?, args.test_frac, cfg.seed)?;
    let mut tc = TrainConfig {
        seed: cfg.seed,
        ..TrainConfig::default()
    };
    if let Some(n) = args.trees {
        tc.forest.n_trees = n;
        tc.boosting.rounds = n;
    }
    let model = train(kind, &train_set, &tc)?;
    let out = cfg.out_or("model.pafm");
    let size = model.save(&out)?;
    println!(
        "trained {kind} on {} {} rows, wrote {size} bytes to {}",
        train_set.len(),
        table.scenario,
        out.display()
    );
    Ok(())
}

fn predict_all(model: &dyn InferenceModel, data: &Dataset) -> Result<Vec<EmotionLabel>> {
    data.x
        .rows()
        .map(|r| Ok(model.predict(r)?.label))
        .collect()
}

fn held_out_report(model: &AnyModel, table: &FeatureTable, test_frac: f64, seed: u64) -> Result<EvalReport> {
    let names = model.feature_names();
    ensure!(
        names == table.scenario.feature_names().as_slice(),
        "model expects features [{}] but the table holds {}",
        names.join(", "),
        table.scenario
    );
    let data = table.dataset()?;
    let (_, test) = split(&data, test_frac, seed)?;
    let test = test.unwrap_or(data);
    Ok(evaluate(&predict_all(model, &test)?, &test.y)?)
}

pub struct EvalArgs {
    pub model: PathBuf,
    pub features: PathBuf,
    pub test_frac: f64,
}

pub fn eval(cfg: &RunConfig, args: &EvalArgs) -> Result<()> {
    let model = AnyModel::load(&args.model)?;
    let table = load_table(&args.features, cfg.scenario)?;
    let report = held_out_report(&model, &table, args.test_frac, cfg.seed)?;
    let out = cfg.out_or("eval.json");
    report.save_json(&out)?;
    print!("{report}");
    println!("wrote {}", out.display());
    Ok(())
}

pub fn compile(cfg: &RunConfig, model_path: &Path) -> Result<()> {
    let AnyModel::Ensemble(model) = AnyModel::load(model_path)? else {
        bail!("{} is not an uncompiled tree ensemble", model_path.display());
    };
    let compiled = compile_ensemble(&model)?;
    let out = cfg.out.clone().unwrap_or_else(|| model_path.with_extension("compiled.pafm"));
    let size = affect_core::models::save_model(&compiled, &out)?;
    println!(
        "compiled {} trees into {} nodes: {} -> {size} bytes, wrote {}",
        compiled.n_trees(),
        compiled.node_count(),
        model.encoded_len(),
        out.display()
    );
    Ok(())
}

pub struct BenchArgs {
    pub models: Vec<PathBuf>,
    pub features: PathBuf,
    pub test_frac: f64,
    pub with_compiled: bool,
    pub bench: BenchConfig,
    pub csv: Option<PathBuf>,
}

pub fn bench(cfg: &RunConfig, args: &BenchArgs) -> Result<()> {
    let table = load_table(&args.features, cfg.scenario)?;
    let probes: Vec<Vec<f64>> = table.rows.iter().map(|r| r.features.clone()).collect();
    let mut reports: Vec<BenchReport> = Vec::new();
    let mut run = |model: &AnyModel, name: &str| -> Result<BenchReport> {
        let variant = if model.is_compiled() { Variant::Compiled } else { Variant::Source };
        let mut r = benchmark(model, name, variant, &probes, &args.bench)?;
        r.macro_f1 = Some(held_out_report(model, &table, args.test_frac, cfg.seed)?.macro_f1);
        println!("{r}");
        reports.push(r.clone());
        Ok(r)
    };
    for path in &args.models {
        let model = AnyModel::load(path)?;
        let name = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("model")
            .to_string();
        let source = run(&model, &name)?;
        if let (true, AnyModel::Ensemble(m)) = (args.with_compiled, &model) {
            let compiled = AnyModel::Compiled(compile_ensemble(m)?);
            let fast = run(&compiled, &name)?;
            println!("{name}: p50 speedup {:.2}x", speedup(&source, &fast));
        }
    }
    let out = cfg.out_or("bench.json");
    save_reports_json(&out, &reports)?;
    let csv = args.csv.clone().unwrap_or_else(|| out.with_extension("csv"));
    write_reports_csv(&csv, &reports)?;
    println!("wrote {} and {}", out.display(), csv.display());
    Ok(())
}

pub struct SynthArgs {
    pub subjects: usize,
    pub segments: Vec<(EmotionLabel, f64)>,
    pub noise_std: f64,
    pub rate_hz: f64,
    pub label_rate_hz: f64,
}

pub fn parse_label(s: &str) -> Result<EmotionLabel> {
    if let Ok(code) = s.parse::<u8>() {
        return EmotionLabel::from_code(code).with_context(|| format!("label code {code} is not 0, 1 or 2"));
    }
    EmotionLabel::ALL
        .into_iter()
        .find(|l| l.name().eq_ignore_ascii_case(s))
        .with_context(|| format!("unknown label `{s}`"))
}

/// `label:seconds` pairs separated by commas.
pub fn parse_segments(s: &str) -> Result<Vec<(EmotionLabel, f64)>> {
    s.split(',')
        .map(|part| {
            let (label, secs) = part
                .split_once(':')
                .with_context(|| format!("segment `{part}` is not label:seconds"))?;
            let secs: f64 = secs.trim().parse().with_context(|| format!("segment `{part}`"))?;
            ensure!(secs > 0.0, "segment `{part}` must last a positive time");
            Ok((parse_label(label.trim())?, secs))
        })
        .collect()
}

pub fn synth(cfg: &RunConfig, args: &SynthArgs) -> Result<()> {
    ensure!(!args.segments.is_empty(), "no segments given");
    let out = cfg.out_or("synth");
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let duration: f64 = args.segments.iter().map(|(_, d)| d).sum();
    for s in 0..args.subjects {
        let id = format!("S{}", s + 1);
        let subject_seed = derive_seed(cfg.seed, s as u64);
        let profiled: Vec<(StateProfile, f64)> = args
            .segments
            .iter()
            .enumerate()
            .map(|(i, &(label, d))| (StateProfile::canonical(label, derive_seed(subject_seed, i as u64)), d))
            .collect();
        let truth = synth_session(&profiled)?;
        let opts = RenderOptions {
            rate_hz: args.rate_hz,
            noise_std: args.noise_std,
            seed: derive_seed(subject_seed, u64::MAX),
            ..RenderOptions::default()
        };
        write_ppg_csv(out.join(format!("{id}_ppg.csv")), &render_ppg(&truth.ibi, duration, &opts))?;
        write_labels_csv(
            out.join(format!("{id}_labels.csv")),
            &segment_labels(&args.segments, args.label_rate_hz),
        )?;
        write_ibi_csv(out.join(format!("{id}_chest_ibi.csv")), &truth.ibi)?;
    }
    println!("wrote {} subjects of {duration} s to {}", args.subjects, out.display());
    Ok(())
}

pub struct InferArgs {
    pub model: PathBuf,
    pub ibi: PathBuf,
    pub chest_ibi: Option<PathBuf>,
}

fn window_hrv(path: &Path) -> Result<affect_core::HrvFeatures> {
    let ibi = clean_ibi(&load_ibi_csv(path)?);
    compute_hrv(ibi.intervals_ms()).with_context(|| format!("computing HRV from {}", path.display()))
}

pub fn infer(cfg: &RunConfig, args: &InferArgs) -> Result<()> {
    let model = AnyModel::load(&args.model)?;
    let scenario = Scenario::from_feature_names(model.feature_names())
        .context("model feature names match no known scenario")?;
    if let Some(s) = cfg.scenario {
        ensure!(s == scenario, "model was trained on {scenario}, not {s}");
    }
    let wrist = window_hrv(&args.ibi)?;
    let chest = args.chest_ibi.as_deref().map(window_hrv).transpose()?;
    let features = scenario
        .features(&wrist, chest.as_ref())
        .with_context(|| format!("{scenario} needs --chest-ibi"))?;
    let p = model.predict(&features)?;
    let probabilities: serde_json::Map<String, serde_json::Value> = EmotionLabel::ALL
        .iter()
        .zip(&p.probabilities)
        .map(|(l, v)| (l.name().to_string(), (*v).into()))
        .collect();
    let json = serde_json::json!({
        "label": p.label.name(),
        "code": p.label.code(),
        "confidence": p.confidence,
        "probabilities": probabilities,
        "features": scenario.feature_names().into_iter().zip(features.iter().map(|&v| serde_json::Value::from(v)))
            .collect::<serde_json::Map<_, _>>(),
    });
    let text = serde_json::to_string_pretty(&json)?;
    println!("{text}");
    if let Some(out) = &cfg.out {
        std::fs::write(out, &text).with_context(|| format!("writing {}", out.display()))?;
    }
    Ok(())
}
