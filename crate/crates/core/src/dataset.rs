//! Ingestion, windowing, normalization and splitting.
//!
//! CSV schemas (all files may carry `# key=value` metadata lines before the
//! header; `rate_hz` declares the sample rate):
//!
//! | file     | header                                        |
//! |----------|-----------------------------------------------|
//! | PPG      | `time_s,value`                                |
//! | labels   | `time_s,label` with label in {0, 1, 2}        |
//! | IBI      | `beat_time_s,interval_ms`                     |
//! | features | `subject,window_start_s,<feature names>,label` |

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hrv::{compute_hrv, HrvError, HrvFeatures};
use crate::rng;
use crate::signal::{IbiSequence, PpgSignal, SignalError};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}, line {line}: {message}")]
    Schema {
        path: PathBuf,
        line: u64,
        message: String,
    },
    #[error("{path}, line {line}: non-finite value in column `{column}`")]
    NonFinite {
        path: PathBuf,
        line: u64,
        column: String,
    },
    #[error("{0}: sample rate not declared (add `# rate_hz=<value>` or pass it explicitly)")]
    MissingRate(PathBuf),
    #[error("need at least {needed} rows, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("class {label} has only {count} row(s); stratified splitting needs at least 2")]
    ClassTooSmall { label: EmotionLabel, count: usize },
    #[error("test fraction must lie in [0, 1), got {0}")]
    InvalidFraction(f64),
    #[error("expected {expected} features, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("scenario {0} needs a chest interval stream")]
    MissingChestStream(Scenario),
    #[error("unknown feature layout: {0}")]
    UnknownFeatures(String),
    #[error("window parameters must be positive, got width {width_s} s, step {step_s} s")]
    InvalidWindow { width_s: f64, step_s: f64 },
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Hrv(#[from] HrvError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum EmotionLabel {
    Baseline = 0,
    Stress = 1,
    Amusement = 2,
}

impl EmotionLabel {
    pub const COUNT: usize = 3;
    pub const ALL: [EmotionLabel; 3] = [Self::Baseline, Self::Stress, Self::Amusement];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Baseline => "Baseline",
            Self::Stress => "Stress",
            Self::Amusement => "Amusement",
        }
    }
}

impl From<EmotionLabel> for u8 {
    fn from(label: EmotionLabel) -> u8 {
        label.code()
    }
}

impl TryFrom<u8> for EmotionLabel {
    type Error = String;

    fn try_from(code: u8) -> Result<Self, String> {
        Self::from_code(code).ok_or_else(|| format!("invalid label code {code}"))
    }
}

impl fmt::Display for EmotionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

/// Argmax over per-class values; exact ties resolve to the lowest code.
pub fn argmax_label(values: &[f64]) -> EmotionLabel {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    EmotionLabel::ALL[best]
}

/// Feature configuration of a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scenario {
    WristSdnn,
    WristRmssd,
    WristAll,
    Combined,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [
        Self::WristSdnn,
        Self::WristRmssd,
        Self::WristAll,
        Self::Combined,
    ];

    pub fn dim(self) -> usize {
        match self {
            Self::WristSdnn | Self::WristRmssd => 1,
            Self::WristAll => 5,
            Self::Combined => 10,
        }
    }

    pub fn needs_chest(self) -> bool {
        self == Self::Combined
    }

    pub fn feature_names(self) -> Vec<String> {
        match self {
            Self::WristSdnn => vec!["sdnn".into()],
            Self::WristRmssd => vec!["rmssd".into()],
            Self::WristAll => HrvFeatures::NAMES.iter().map(|s| s.to_string()).collect(),
            Self::Combined => HrvFeatures::NAMES
                .iter()
                .map(|s| s.to_string())
                .chain(HrvFeatures::NAMES.iter().map(|s| format!("chest_{s}")))
                .collect(),
        }
    }

    pub fn from_feature_names(names: &[String]) -> Option<Self> {
        Self::ALL
            .into_iter()
            .find(|s| s.feature_names().as_slice() == names)
    }

    /// Feature vector for one window. `chest` is required for `Combined`.
    pub fn features(self, wrist: &HrvFeatures, chest: Option<&HrvFeatures>) -> Option<Vec<f64>> {
        Some(match self {
            Self::WristSdnn => vec![wrist.sdnn_ms],
            Self::WristRmssd => vec![wrist.rmssd_ms],
            Self::WristAll => wrist.to_array().to_vec(),
            Self::Combined => {
                let mut v = wrist.to_array().to_vec();
                v.extend_from_slice(&chest?.to_array());
                v
            }
        })
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(match self {
            Self::WristSdnn => "WRIST_SDNN",
            Self::WristRmssd => "WRIST_RMSSD",
            Self::WristAll => "WRIST_ALL",
            Self::Combined => "COMBINED",
        })
    }
}

impl FromStr for Scenario {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_uppercase().replace('-', "_").as_str() {
            "WRIST_SDNN" => Ok(Self::WristSdnn),
            "WRIST_RMSSD" => Ok(Self::WristRmssd),
            "WRIST_ALL" => Ok(Self::WristAll),
            "COMBINED" => Ok(Self::Combined),
            other => Err(format!("unknown scenario `{other}`")),
        }
    }
}

/// One labelled window.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub features: Vec<f64>,
    pub label: EmotionLabel,
    pub subject_id: String,
    pub window_start_s: f64,
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    data: Vec<f64>,
    n_rows: usize,
    n_cols: usize,
}

impl FeatureMatrix {
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self, DatasetError> {
        let n_cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * n_cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != n_cols {
                return Err(DatasetError::DimensionMismatch {
                    expected: n_cols,
                    got: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            data,
            n_rows: rows.len(),
            n_cols,
        })
    }

    pub fn from_flat(data: Vec<f64>, n_cols: usize) -> Self {
        assert!(n_cols > 0 && data.len() % n_cols == 0, "ragged flat matrix");
        Self {
            n_rows: data.len() / n_cols,
            data,
            n_cols,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.n_rows).map(move |i| self.row(i))
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.n_cols + col]
    }

    pub fn column(&self, col: usize) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_rows).map(move |r| self.get(r, col))
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.n_cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Self {
            data,
            n_rows: indices.len(),
            n_cols: self.n_cols,
        }
    }

    pub fn map_rows(&self, mut f: impl FnMut(&[f64], &mut [f64])) -> Self {
        let mut data = vec![0.0; self.data.len()];
        for (src, dst) in self
            .data
            .chunks(self.n_cols.max(1))
            .zip(data.chunks_mut(self.n_cols.max(1)))
        {
            f(src, dst);
        }
        Self {
            data,
            n_rows: self.n_rows,
            n_cols: self.n_cols,
        }
    }
}

/// Labelled feature matrix handed to the trainers.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: FeatureMatrix,
    pub y: Vec<EmotionLabel>,
    pub feature_names: Vec<String>,
}

impl Dataset {
    pub fn new(
        x: FeatureMatrix,
        y: Vec<EmotionLabel>,
        feature_names: Vec<String>,
    ) -> Result<Self, DatasetError> {
        if x.n_rows() != y.len() {
            return Err(DatasetError::DimensionMismatch {
                expected: x.n_rows(),
                got: y.len(),
            });
        }
        if !feature_names.is_empty() && feature_names.len() != x.n_cols() {
            return Err(DatasetError::DimensionMismatch {
                expected: x.n_cols(),
                got: feature_names.len(),
            });
        }
        let feature_names = if feature_names.is_empty() {
            (0..x.n_cols()).map(|i| format!("f{i}")).collect()
        } else {
            feature_names
        };
        Ok(Self {
            x,
            y,
            feature_names,
        })
    }

    pub fn from_rows(rows: &[FeatureRow], feature_names: Vec<String>) -> Result<Self, DatasetError> {
        let features: Vec<&[f64]> = rows.iter().map(|r| r.features.as_slice()).collect();
        let x = FeatureMatrix::from_rows(&features)?;
        Self::new(x, rows.iter().map(|r| r.label).collect(), feature_names)
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.x.n_cols()
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            x: self.x.select(indices),
            y: indices.iter().map(|&i| self.y[i]).collect(),
            feature_names: self.feature_names.clone(),
        }
    }

    pub fn class_counts(&self) -> [usize; EmotionLabel::COUNT] {
        class_counts(&self.y)
    }
}

pub fn class_counts(labels: &[EmotionLabel]) -> [usize; EmotionLabel::COUNT] {
    let mut counts = [0; EmotionLabel::COUNT];
    for l in labels {
        counts[l.index()] += 1;
    }
    counts
}

/// Floor applied to per-feature standard deviations.
pub const STD_FLOOR: f64 = 1e-8;

/// Per-feature z-score parameters fitted on training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationParams {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormalizationParams {
    /// Population mean and standard deviation (divisor N) per column.
    pub fn fit(x: &FeatureMatrix) -> Result<Self, DatasetError> {
        if x.n_rows() < 2 {
            return Err(DatasetError::InsufficientData {
                needed: 2,
                got: x.n_rows(),
            });
        }
        let n = x.n_rows() as f64;
        let (mean, std) = (0..x.n_cols())
            .map(|c| {
                let mean = x.column(c).sum::<f64>() / n;
                let var = x.column(c).map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                (mean, var.sqrt().max(STD_FLOOR))
            })
            .unzip();
        Ok(Self { mean, std })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        for (((o, v), m), s) in out.iter_mut().zip(x).zip(&self.mean).zip(&self.std) {
            *o = (v - m) / s;
        }
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>, DatasetError> {
        if x.len() != self.dim() {
            return Err(DatasetError::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        let mut out = vec![0.0; x.len()];
        self.apply_into(x, &mut out);
        Ok(out)
    }

    pub fn apply_matrix(&self, x: &FeatureMatrix) -> Result<FeatureMatrix, DatasetError> {
        if x.n_cols() != self.dim() {
            return Err(DatasetError::DimensionMismatch {
                expected: self.dim(),
                got: x.n_cols(),
            });
        }
        Ok(x.map_rows(|src, dst| self.apply_into(src, dst)))
    }
}

pub fn fit_normalizer(train: &FeatureMatrix) -> Result<NormalizationParams, DatasetError> {
    NormalizationParams::fit(train)
}

pub fn apply_normalizer(
    params: &NormalizationParams,
    rows: &FeatureMatrix,
) -> Result<FeatureMatrix, DatasetError> {
    params.apply_matrix(rows)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub validation: Option<Vec<usize>>,
}

/// Stratified train/test split.
///
/// The test set holds `ceil(test_frac × N)` rows. Each class receives the
/// floor of its proportional quota, and the leftover slots go to the classes
/// with the largest fractional remainders (ties to the lowest class code).
/// Within a class, rows are shuffled by a ChaCha8 stream keyed on
/// `(seed, class code)` and the first `quota` rows become the test set.
pub fn stratified_split(
    labels: &[EmotionLabel],
    test_frac: f64,
    seed: u64,
) -> Result<SplitIndices, DatasetError> {
    if !(0.0..1.0).contains(&test_frac) {
        return Err(DatasetError::InvalidFraction(test_frac));
    }
    let counts = class_counts(labels);
    for label in EmotionLabel::ALL {
        let count = counts[label.index()];
        if count == 1 {
            return Err(DatasetError::ClassTooSmall { label, count });
        }
    }

    let quotas = test_quotas(&counts, test_frac);
    let mut train = Vec::with_capacity(labels.len());
    let mut test = Vec::new();
    for label in EmotionLabel::ALL {
        let mut members: Vec<usize> = labels
            .iter()
            .enumerate()
            .filter(|(_, l)| **l == label)
            .map(|(i, _)| i)
            .collect();
        members.shuffle(&mut rng::stream(seed, label.code() as u64));
        let k = quotas[label.index()];
        test.extend_from_slice(&members[..k]);
        train.extend_from_slice(&members[k..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(SplitIndices {
        train,
        test,
        validation: None,
    })
}

/// Per-class test counts for `stratified_split`.
pub fn test_quotas(counts: &[usize; EmotionLabel::COUNT], test_frac: f64) -> [usize; EmotionLabel::COUNT] {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return [0; EmotionLabel::COUNT];
    }
    let n_test = ((test_frac * total as f64) - 1e-9).ceil().max(0.0) as usize;
    let mut quotas = [0; EmotionLabel::COUNT];
    let mut remainders = Vec::with_capacity(EmotionLabel::COUNT);
    for (c, &count) in counts.iter().enumerate() {
        let exact = n_test as f64 * count as f64 / total as f64;
        quotas[c] = (exact.floor() as usize).min(count);
        remainders.push((exact - exact.floor(), c));
    }
    let mut left = n_test.saturating_sub(quotas.iter().sum());
    remainders.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    for &(_, c) in remainders.iter().cycle().take(EmotionLabel::COUNT * 2) {
        if left == 0 {
            break;
        }
        if quotas[c] < counts[c] {
            quotas[c] += 1;
            left -= 1;
        }
    }
    quotas
}

/// Keeps every `factor`-th sample starting from the first.
pub fn downsample_labels<T: Clone>(labels: &[T], factor: usize) -> Vec<T> {
    labels.iter().step_by(factor.max(1)).cloned().collect()
}

/// Majority label; ties go to the lowest class code.
pub fn majority_label(labels: &[EmotionLabel]) -> Option<EmotionLabel> {
    if labels.is_empty() {
        return None;
    }
    let counts = class_counts(labels);
    let mut best = 0;
    for c in 1..EmotionLabel::COUNT {
        if counts[c] > counts[best] {
            best = c;
        }
    }
    Some(EmotionLabel::ALL[best])
}

/// Timestamped label stream.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LabelSeries {
    pub times_s: Vec<f64>,
    pub labels: Vec<EmotionLabel>,
    pub rate_hz: Option<f64>,
}

impl LabelSeries {
    /// Regularly sampled series starting at `start_s`.
    pub fn uniform(labels: Vec<EmotionLabel>, rate_hz: f64, start_s: f64) -> Self {
        Self {
            times_s: (0..labels.len())
                .map(|i| start_s + i as f64 / rate_hz)
                .collect(),
            labels,
            rate_hz: Some(rate_hz),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn downsample(&self, factor: usize) -> Self {
        Self {
            times_s: downsample_labels(&self.times_s, factor),
            labels: downsample_labels(&self.labels, factor),
            rate_hz: self.rate_hz.map(|r| r / factor.max(1) as f64),
        }
    }

    pub fn shifted(&self, offset_s: f64) -> Self {
        Self {
            times_s: self.times_s.iter().map(|t| t + offset_s).collect(),
            labels: self.labels.clone(),
            rate_hz: self.rate_hz,
        }
    }

    /// Labels with timestamps in `[start_s, end_s)`.
    pub fn between(&self, start_s: f64, end_s: f64) -> &[EmotionLabel] {
        let lo = self.times_s.partition_point(|&t| t < start_s);
        let hi = self.times_s.partition_point(|&t| t < end_s);
        &self.labels[lo..hi.max(lo)]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowConfig {
    pub width_s: f64,
    pub step_s: f64,
    pub scenario: Scenario,
    /// Windows with fewer cleaned intervals are dropped.
    pub min_intervals: usize,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            width_s: 120.0,
            step_s: 60.0,
            scenario: Scenario::WristAll,
            min_intervals: 10,
        }
    }
}

/// Number of window starts `0, step, 2·step, …` with `start + width ≤ duration`.
pub fn window_count(duration_s: f64, width_s: f64, step_s: f64) -> usize {
    if duration_s + 1e-9 < width_s {
        return 0;
    }
    ((duration_s - width_s) / step_s + 1e-9).floor() as usize + 1
}

/// One subject's aligned streams. All times are seconds from the start of the
/// recording.
#[derive(Debug, Clone, Copy)]
pub struct SubjectRecording<'a> {
    pub subject_id: &'a str,
    pub duration_s: f64,
    pub wrist: &'a IbiSequence,
    pub chest: Option<&'a IbiSequence>,
    pub labels: &'a LabelSeries,
}

/// Slides windows over a recording and emits one feature row per usable
/// window. A window is skipped when it has no label samples or fewer than
/// `min_intervals` intervals on any stream the scenario needs.
pub fn make_windows(
    rec: &SubjectRecording<'_>,
    cfg: &WindowConfig,
) -> Result<Vec<FeatureRow>, DatasetError> {
    if !(cfg.width_s > 0.0 && cfg.step_s > 0.0) {
        return Err(DatasetError::InvalidWindow {
            width_s: cfg.width_s,
            step_s: cfg.step_s,
        });
    }
    if cfg.scenario.needs_chest() && rec.chest.is_none() {
        return Err(DatasetError::MissingChestStream(cfg.scenario));
    }
    let min = cfg.min_intervals.max(2);
    let mut rows = Vec::new();
    for k in 0..window_count(rec.duration_s, cfg.width_s, cfg.step_s) {
        let start = k as f64 * cfg.step_s;
        let end = start + cfg.width_s;
        let Some(label) = majority_label(rec.labels.between(start, end)) else {
            continue;
        };
        let wrist = rec.wrist.intervals_between(start, end);
        if wrist.len() < min {
            continue;
        }
        let chest = match rec.chest {
            Some(chest) if cfg.scenario.needs_chest() => {
                let c = chest.intervals_between(start, end);
                if c.len() < min {
                    continue;
                }
                Some(compute_hrv(c)?)
            }
            _ => None,
        };
        let wrist = compute_hrv(wrist)?;
        let features = cfg
            .scenario
            .features(&wrist, chest.as_ref())
            .ok_or(DatasetError::MissingChestStream(cfg.scenario))?;
        rows.push(FeatureRow {
            features,
            label,
            subject_id: rec.subject_id.to_string(),
            window_start_s: start,
        });
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// CSV

struct CsvFile {
    path: PathBuf,
    metadata: HashMap<String, String>,
    text: String,
}

impl CsvFile {
    fn read(path: &Path) -> Result<Self, DatasetError> {
        let text = fs::read_to_string(path).map_err(|source| DatasetError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut metadata = HashMap::new();
        for line in text.lines() {
            let Some(rest) = line.trim_start().strip_prefix('#') else {
                continue;
            };
            for token in rest.split([',', ' ', '\t']) {
                if let Some((k, v)) = token.split_once('=') {
                    metadata.insert(k.trim().to_string(), v.trim().to_string());
                }
            }
        }
        Ok(Self {
            path: path.to_path_buf(),
            metadata,
            text,
        })
    }

    fn rate_hz(&self) -> Result<Option<f64>, DatasetError> {
        match self.metadata.get("rate_hz") {
            None => Ok(None),
            Some(v) => match v.parse::<f64>() {
                Ok(r) if r.is_finite() && r > 0.0 => Ok(Some(r)),
                _ => Err(self.schema(1, format!("invalid rate_hz `{v}`"))),
            },
        }
    }

    fn schema(&self, line: u64, message: String) -> DatasetError {
        DatasetError::Schema {
            path: self.path.clone(),
            line,
            message,
        }
    }

    /// Parses records after checking the header, handing each row's fields
    /// and line number to `f`.
    fn records(
        &self,
        header: &[&str],
        mut f: impl FnMut(u64, &csv::StringRecord) -> Result<(), DatasetError>,
    ) -> Result<(), DatasetError> {
        let mut reader = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .flexible(true)
            .from_reader(self.text.as_bytes());
        let found = reader
            .headers()
            .map_err(|e| self.schema(1, e.to_string()))?
            .clone();
        let found: Vec<&str> = found.iter().collect();
        if found != header {
            return Err(self.schema(
                1,
                format!("expected header `{}`, found `{}`", header.join(","), found.join(",")),
            ));
        }
        for record in reader.records() {
            let record = record.map_err(|e| {
                let line = e.position().map_or(0, |p| p.line());
                self.schema(line, e.to_string())
            })?;
            let line = record.position().map_or(0, |p| p.line());
            if record.len() != header.len() {
                return Err(self.schema(
                    line,
                    format!("expected {} fields, found {}", header.len(), record.len()),
                ));
            }
            f(line, &record)?;
        }
        Ok(())
    }

    fn number(&self, line: u64, record: &csv::StringRecord, col: usize, name: &str) -> Result<f64, DatasetError> {
        let raw = &record[col];
        let v: f64 = raw
            .parse()
            .map_err(|_| self.schema(line, format!("column `{name}`: cannot parse `{raw}` as a number")))?;
        if !v.is_finite() {
            return Err(DatasetError::NonFinite {
                path: self.path.clone(),
                line,
                column: name.to_string(),
            });
        }
        Ok(v)
    }
}

/// Reads a PPG file. `rate_hz` overrides the file's metadata line.
pub fn load_ppg_csv(path: impl AsRef<Path>, rate_hz: Option<f64>) -> Result<PpgSignal, DatasetError> {
    let file = CsvFile::read(path.as_ref())?;
    let rate = match rate_hz {
        Some(r) => r,
        None => file
            .rate_hz()?
            .ok_or_else(|| DatasetError::MissingRate(file.path.clone()))?,
    };
    let mut start = None;
    let mut samples = Vec::new();
    file.records(&["time_s", "value"], |line, rec| {
        let t = file.number(line, rec, 0, "time_s")?;
        start.get_or_insert(t);
        samples.push(file.number(line, rec, 1, "value")?);
        Ok(())
    })?;
    Ok(PpgSignal::new(samples, rate, start.unwrap_or(0.0))?)
}

pub fn load_labels_csv(path: impl AsRef<Path>) -> Result<LabelSeries, DatasetError> {
    let file = CsvFile::read(path.as_ref())?;
    let mut series = LabelSeries {
        rate_hz: file.rate_hz()?,
        ..LabelSeries::default()
    };
    let mut last = f64::NEG_INFINITY;
    file.records(&["time_s", "label"], |line, rec| {
        let t = file.number(line, rec, 0, "time_s")?;
        if t <= last {
            return Err(file.schema(line, "timestamps must be strictly increasing".into()));
        }
        last = t;
        let raw = &rec[1];
        let label = raw
            .parse::<u8>()
            .ok()
            .and_then(EmotionLabel::from_code)
            .ok_or_else(|| file.schema(line, format!("label must be 0, 1 or 2, found `{raw}`")))?;
        series.times_s.push(t);
        series.labels.push(label);
        Ok(())
    })?;
    Ok(series)
}

pub fn load_ibi_csv(path: impl AsRef<Path>) -> Result<IbiSequence, DatasetError> {
    let file = CsvFile::read(path.as_ref())?;
    let mut times = Vec::new();
    let mut intervals = Vec::new();
    file.records(&["beat_time_s", "interval_ms"], |line, rec| {
        let t = file.number(line, rec, 0, "beat_time_s")?;
        let v = file.number(line, rec, 1, "interval_ms")?;
        if times.last().is_some_and(|&prev| t <= prev) {
            return Err(file.schema(line, "beat times must be strictly increasing".into()));
        }
        if v <= 0.0 {
            return Err(file.schema(line, format!("interval must be positive, found {v}")));
        }
        times.push(t);
        intervals.push(v);
        Ok(())
    })?;
    Ok(IbiSequence::new(intervals, times)?)
}

fn create(path: &Path) -> Result<std::io::BufWriter<fs::File>, DatasetError> {
    fs::File::create(path)
        .map(std::io::BufWriter::new)
        .map_err(|source| DatasetError::Io {
            path: path.to_path_buf(),
            source,
        })
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn write_ppg_csv(path: impl AsRef<Path>, signal: &PpgSignal) -> Result<(), DatasetError> {
    let path = path.as_ref();
    let mut w = create(path)?;
    let write = |w: &mut std::io::BufWriter<fs::File>| -> std::io::Result<()> {
        writeln!(w, "# rate_hz={}", signal.rate_hz())?;
        writeln!(w, "time_s,value")?;
        for (i, v) in signal.samples().iter().enumerate() {
            writeln!(w, "{},{}", signal.start_time_s() + i as f64 / signal.rate_hz(), v)?;
        }
        w.flush()
    };
    write(&mut w).map_err(io_err(path))
}

pub fn write_labels_csv(path: impl AsRef<Path>, labels: &LabelSeries) -> Result<(), DatasetError> {
    let path = path.as_ref();
    let mut w = create(path)?;
    let write = |w: &mut std::io::BufWriter<fs::File>| -> std::io::Result<()> {
        if let Some(rate) = labels.rate_hz {
            writeln!(w, "# rate_hz={rate}")?;
        }
        writeln!(w, "time_s,label")?;
        for (t, l) in labels.times_s.iter().zip(&labels.labels) {
            writeln!(w, "{t},{}", l.code())?;
        }
        w.flush()
    };
    write(&mut w).map_err(io_err(path))
}

pub fn write_ibi_csv(path: impl AsRef<Path>, ibi: &IbiSequence) -> Result<(), DatasetError> {
    let path = path.as_ref();
    let mut w = create(path)?;
    let write = |w: &mut std::io::BufWriter<fs::File>| -> std::io::Result<()> {
        writeln!(w, "beat_time_s,interval_ms")?;
        for (t, v) in ibi.beat_times_s().iter().zip(ibi.intervals_ms()) {
            writeln!(w, "{t},{v}")?;
        }
        w.flush()
    };
    write(&mut w).map_err(io_err(path))
}

/// Feature rows with their scenario, as stored in a features CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub scenario: Scenario,
    pub rows: Vec<FeatureRow>,
}

impl FeatureTable {
    pub fn dataset(&self) -> Result<Dataset, DatasetError> {
        Dataset::from_rows(&self.rows, self.scenario.feature_names())
    }
}

pub fn write_features_csv(path: impl AsRef<Path>, table: &FeatureTable) -> Result<(), DatasetError> {
    let path = path.as_ref();
    let dim = table.scenario.dim();
    if let Some(bad) = table.rows.iter().find(|r| r.features.len() != dim) {
        return Err(DatasetError::DimensionMismatch {
            expected: dim,
            got: bad.features.len(),
        });
    }
    let mut w = csv::Writer::from_writer(create(path)?);
    let mut header = vec!["subject".to_string(), "window_start_s".to_string()];
    header.extend(table.scenario.feature_names());
    header.push("label".into());
    let csv_err = |e: csv::Error| DatasetError::Io {
        path: path.to_path_buf(),
        source: e.into(),
    };
    w.write_record(&header).map_err(csv_err)?;
    for row in &table.rows {
        let mut record = vec![row.subject_id.clone(), row.window_start_s.to_string()];
        record.extend(row.features.iter().map(|v| v.to_string()));
        record.push(row.label.code().to_string());
        w.write_record(&record).map_err(csv_err)?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_features_csv(path: impl AsRef<Path>) -> Result<FeatureTable, DatasetError> {
    let file = CsvFile::read(path.as_ref())?;
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(file.text.as_bytes());
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| file.schema(1, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let names = match header.as_slice() {
        [s, w, names @ .., l] if s == "subject" && w == "window_start_s" && l == "label" => names,
        _ => {
            return Err(file.schema(
                1,
                "expected header `subject,window_start_s,<features>,label`".into(),
            ))
        }
    };
    let scenario = Scenario::from_feature_names(names)
        .ok_or_else(|| DatasetError::UnknownFeatures(names.join(",")))?;
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut rows = Vec::new();
    file.records(&header_refs, |line, rec| {
        let window_start_s = file.number(line, rec, 1, "window_start_s")?;
        let features = (0..names.len())
            .map(|i| file.number(line, rec, i + 2, &names[i]))
            .collect::<Result<Vec<_>, _>>()?;
        let raw = &rec[rec.len() - 1];
        let label = raw
            .parse::<u8>()
            .ok()
            .and_then(EmotionLabel::from_code)
            .ok_or_else(|| file.schema(line, format!("label must be 0, 1 or 2, found `{raw}`")))?;
        rows.push(FeatureRow {
            features,
            label,
            subject_id: rec[0].to_string(),
            window_start_s,
        });
        Ok(())
    })?;
    Ok(FeatureTable { scenario, rows })
}
