//! End-to-end extraction: raw streams to feature rows.

use std::path::{Path, PathBuf};

use crate::dataset::{
    load_ibi_csv, load_labels_csv, load_ppg_csv, make_windows, DatasetError, FeatureRow, LabelSeries,
    SubjectRecording, WindowConfig,
};
use crate::signal::{
    clean_ibi, design_bandpass, filter_zero_phase, peak_positions_to_ibi, refine_peaks, IbiSequence, PeakDetector,
    PpgSignal, SignalError,
};

pub const BAND_LOW_HZ: f64 = 0.5;
pub const BAND_HIGH_HZ: f64 = 8.0;
pub const FILTER_ORDER: usize = 4;

/// Band-pass, peak detection with sub-sample refinement and interval
/// derivation, without cleaning. Beat times are absolute, offset by the
/// signal's start time.
pub fn ppg_to_raw_ibi(signal: &PpgSignal) -> Result<IbiSequence, SignalError> {
    let spec = design_bandpass(BAND_LOW_HZ, BAND_HIGH_HZ, FILTER_ORDER, signal.rate_hz())?;
    let filtered = filter_zero_phase(signal, &spec)?;
    let peaks = PeakDetector::default().detect(&filtered);
    let ibi = peak_positions_to_ibi(&refine_peaks(&filtered, &peaks), signal.rate_hz());
    if signal.start_time_s() == 0.0 {
        return Ok(ibi);
    }
    let shifted = ibi.beat_times_s().iter().map(|t| t + signal.start_time_s()).collect();
    IbiSequence::new(ibi.intervals_ms().to_vec(), shifted)
}

/// [`ppg_to_raw_ibi`] followed by artifact rejection and step clipping.
pub fn ppg_to_ibi(signal: &PpgSignal) -> Result<IbiSequence, SignalError> {
    ppg_to_raw_ibi(signal).map(|ibi| clean_ibi(&ibi))
}

/// One subject's raw inputs.
#[derive(Debug, Clone)]
pub struct SubjectInputs {
    pub subject_id: String,
    pub ppg: PpgSignal,
    pub labels: LabelSeries,
    /// Raw chest RR intervals, cleaned here like the wrist stream.
    pub chest_ibi: Option<IbiSequence>,
}

/// Stride factor that brings a label stream to the PPG rate.
pub fn label_downsample_factor(label_rate_hz: f64, ppg_rate_hz: f64) -> usize {
    ((label_rate_hz / ppg_rate_hz).round() as usize).max(1)
}

/// Runs the full chain and windows the result.
pub fn extract_subject(inputs: &SubjectInputs, cfg: &WindowConfig) -> Result<Vec<FeatureRow>, DatasetError> {
    let wrist = ppg_to_ibi(&inputs.ppg)?;
    let chest = inputs.chest_ibi.as_ref().map(clean_ibi);
    let labels = match inputs.labels.rate_hz {
        Some(rate) => inputs
            .labels
            .downsample(label_downsample_factor(rate, inputs.ppg.rate_hz())),
        None => inputs.labels.clone(),
    };
    let rec = SubjectRecording {
        subject_id: &inputs.subject_id,
        duration_s: inputs.ppg.start_time_s() + inputs.ppg.duration_s(),
        wrist: &wrist,
        chest: chest.as_ref(),
        labels: &labels,
    };
    make_windows(&rec, cfg)
}

pub const PPG_SUFFIX: &str = "_ppg.csv";
pub const LABELS_SUFFIX: &str = "_labels.csv";
pub const CHEST_IBI_SUFFIX: &str = "_chest_ibi.csv";

/// CSV paths for one subject in a converted dataset directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubjectFiles {
    pub subject_id: String,
    pub ppg: PathBuf,
    pub labels: PathBuf,
    pub chest_ibi: Option<PathBuf>,
}

impl SubjectFiles {
    pub fn load(&self, ppg_rate_hz: Option<f64>) -> Result<SubjectInputs, DatasetError> {
        Ok(SubjectInputs {
            subject_id: self.subject_id.clone(),
            ppg: load_ppg_csv(&self.ppg, ppg_rate_hz)?,
            labels: load_labels_csv(&self.labels)?,
            chest_ibi: self.chest_ibi.as_ref().map(load_ibi_csv).transpose()?,
        })
    }
}

/// Every `<subject>_ppg.csv` in `dir` with its labels file, sorted by
/// subject. A PPG file without labels is an error; chest intervals are
/// optional.
pub fn discover_subjects(dir: impl AsRef<Path>) -> Result<Vec<SubjectFiles>, DatasetError> {
    let dir = dir.as_ref();
    let io = |source| DatasetError::Io {
        path: dir.to_path_buf(),
        source,
    };
    let mut found = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(io)? {
        let name = entry.map_err(io)?.file_name();
        let Some(id) = name.to_str().and_then(|n| n.strip_suffix(PPG_SUFFIX)) else {
            continue;
        };
        let labels = dir.join(format!("{id}{LABELS_SUFFIX}"));
        if !labels.is_file() {
            return Err(DatasetError::Io {
                path: labels,
                source: std::io::Error::new(std::io::ErrorKind::NotFound, "labels file missing"),
            });
        }
        let chest = dir.join(format!("{id}{CHEST_IBI_SUFFIX}"));
        found.push(SubjectFiles {
            subject_id: id.to_string(),
            ppg: dir.join(&name),
            labels,
            chest_ibi: chest.is_file().then_some(chest),
        });
    }
    found.sort_by(|a, b| a.subject_id.cmp(&b.subject_id));
    Ok(found)
}

/// Loads and extracts every subject in `dir`, concatenating their rows.
pub fn extract_directory(dir: impl AsRef<Path>, cfg: &WindowConfig) -> Result<Vec<FeatureRow>, DatasetError> {
    let mut rows = Vec::new();
    for files in discover_subjects(dir)? {
        rows.extend(extract_subject(&files.load(None)?, cfg)?);
    }
    Ok(rows)
}
