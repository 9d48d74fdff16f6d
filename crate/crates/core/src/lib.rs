//! On-device emotion recognition from wrist photoplethysmography.
//!
//! The pipeline runs in five stages:
//!
//! 1. [`signal`]: band-pass the raw PPG, detect pulse peaks, derive and clean
//!    inter-beat intervals.
//! 2. [`hrv`]: time-domain heart-rate-variability features for an interval window.
//! 3. [`dataset`]: CSV ingestion, label alignment, windowing, z-score
//!    normalization and stratified splitting.
//! 4. [`models`]: linear and tree-ensemble classifiers plus the `PAFM` model file.
//! 5. [`compile`]: flattening of tree ensembles into contiguous node arrays for
//!    fast iterative inference, measured by [`mod@bench`].
//!
//! [`synth`] fabricates IBI streams and PPG waveforms with known ground truth,
//! and [`eval`] computes the classification report. [`pipeline`] chains the
//! signal and dataset stages over a directory of subject files.

pub mod bench;
pub mod compile;
pub mod dataset;
pub mod eval;
pub mod hrv;
pub mod models;
pub mod pipeline;
pub mod rng;
pub mod signal;
pub mod synth;

pub use compile::{compile_ensemble, CompiledEnsemble};
pub use dataset::{Dataset, EmotionLabel, FeatureRow, NormalizationParams, Scenario};
pub use eval::{evaluate, EvalReport};
pub use hrv::{compute_hrv, HrvFeatures};
pub use models::{AnyModel, LinearModel, ModelKind, Prediction, TreeEnsembleModel};
pub use signal::{IbiSequence, PpgSignal};
