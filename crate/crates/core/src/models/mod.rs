//! Classical classifiers and the `PAFM` model container.
//!
//! Every trainer fits z-score parameters on the data it is given, trains on
//! the normalized matrix and stores the parameters in the model, so
//! [`InferenceModel::predict`] always takes raw feature vectors.

mod boosting;
mod linear;
pub mod persist;
mod tree;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::compile::CompiledEnsemble;
use crate::dataset::{argmax_label, Dataset, DatasetError, EmotionLabel, NormalizationParams};

pub use boosting::{train_gradient_boosted, train_gradient_boosted_with_history, BoostingParams};
pub use linear::{train_linear_svm, train_logistic, LinearKind, LinearModel};
pub use tree::{train_extra_trees, train_random_forest, EnsembleKind, ForestParams, TreeEnsembleModel, TreeNode};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("expected {expected} features, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("training labels contain a single class")]
    DegenerateLabels,
    #[error("training set is empty")]
    EmptyDataset,
    #[error("invalid hyperparameter: {0}")]
    InvalidParams(String),
    #[error("corrupt model file: {0}")]
    CorruptFile(String),
    #[error("model format version {found} is newer than supported version {supported}")]
    VersionMismatch { found: u16, supported: u16 },
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

/// Classifier family. The discriminant is the code stored in model files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    Logistic = 0,
    LinearSvm = 1,
    RandomForest = 2,
    ExtraTrees = 3,
    GradientBoosted = 4,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [
        Self::Logistic,
        Self::LinearSvm,
        Self::RandomForest,
        Self::ExtraTrees,
        Self::GradientBoosted,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn is_ensemble(self) -> bool {
        matches!(
            self,
            Self::RandomForest | Self::ExtraTrees | Self::GradientBoosted
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Logistic => "logistic",
            Self::LinearSvm => "linear_svm",
            Self::RandomForest => "random_forest",
            Self::ExtraTrees => "extra_trees",
            Self::GradientBoosted => "gradient_boosted",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "logistic" | "logreg" | "logistic_regression" => Ok(Self::Logistic),
            "svm" | "linear_svm" => Ok(Self::LinearSvm),
            "rf" | "random_forest" => Ok(Self::RandomForest),
            "et" | "extra_trees" | "extratrees" => Ok(Self::ExtraTrees),
            "gbt" | "xgboost" | "gradient_boosted" => Ok(Self::GradientBoosted),
            other => Err(format!("unknown model kind `{other}`")),
        }
    }
}

/// Class decision with per-class probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: EmotionLabel,
    pub probabilities: Vec<f64>,
    pub confidence: f64,
}

impl Prediction {
    pub fn from_probabilities(probabilities: Vec<f64>) -> Self {
        let label = argmax_label(&probabilities);
        Self {
            confidence: probabilities[label.index()],
            label,
            probabilities,
        }
    }
}

pub(crate) fn softmax_in_place(scores: &mut [f64]) {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for s in scores.iter_mut() {
        *s = (*s - max).exp();
        sum += *s;
    }
    for s in scores.iter_mut() {
        *s /= sum;
    }
}

/// Shared inference surface of source, compiled and linear models.
pub trait InferenceModel: Send + Sync {
    fn n_features(&self) -> usize;

    fn predict(&self, features: &[f64]) -> Result<Prediction, ModelError>;

    /// Serialized `PAFM` bytes.
    fn to_bytes(&self) -> Vec<u8>;

    fn encoded_len(&self) -> usize {
        self.to_bytes().len()
    }

    fn check_dim(&self, features: &[f64]) -> Result<(), ModelError> {
        if features.len() != self.n_features() {
            return Err(ModelError::DimensionMismatch {
                expected: self.n_features(),
                got: features.len(),
            });
        }
        Ok(())
    }
}

/// Free-function form of [`InferenceModel::predict`].
pub fn predict<M: InferenceModel + ?Sized>(model: &M, features: &[f64]) -> Result<Prediction, ModelError> {
    model.predict(features)
}

/// Any model that can live in a `PAFM` file.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyModel {
    Linear(LinearModel),
    Ensemble(TreeEnsembleModel),
    Compiled(CompiledEnsemble),
}

impl AnyModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            Self::Linear(m) => m.model_kind(),
            Self::Ensemble(m) => m.kind.model_kind(),
            Self::Compiled(m) => m.kind().model_kind(),
        }
    }

    pub fn feature_names(&self) -> &[String] {
        match self {
            Self::Linear(m) => &m.feature_names,
            Self::Ensemble(m) => &m.feature_names,
            Self::Compiled(m) => m.feature_names(),
        }
    }

    pub fn normalization(&self) -> &NormalizationParams {
        match self {
            Self::Linear(m) => &m.normalization,
            Self::Ensemble(m) => &m.normalization,
            Self::Compiled(m) => m.normalization(),
        }
    }

    pub fn is_compiled(&self) -> bool {
        matches!(self, Self::Compiled(_))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        persist::decode(bytes)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<usize, ModelError> {
        save_model(self, path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        load_model(path)
    }

    fn inner(&self) -> &dyn InferenceModel {
        match self {
            Self::Linear(m) => m,
            Self::Ensemble(m) => m,
            Self::Compiled(m) => m,
        }
    }
}

impl InferenceModel for AnyModel {
    fn n_features(&self) -> usize {
        self.inner().n_features()
    }

    fn predict(&self, features: &[f64]) -> Result<Prediction, ModelError> {
        self.inner().predict(features)
    }

    fn to_bytes(&self) -> Vec<u8> {
        self.inner().to_bytes()
    }
}

impl From<LinearModel> for AnyModel {
    fn from(m: LinearModel) -> Self {
        Self::Linear(m)
    }
}

impl From<TreeEnsembleModel> for AnyModel {
    fn from(m: TreeEnsembleModel) -> Self {
        Self::Ensemble(m)
    }
}

impl From<CompiledEnsemble> for AnyModel {
    fn from(m: CompiledEnsemble) -> Self {
        Self::Compiled(m)
    }
}

/// Writes the model and returns the file size in bytes.
pub fn save_model<M: InferenceModel + ?Sized>(model: &M, path: impl AsRef<Path>) -> Result<usize, ModelError> {
    let path = path.as_ref();
    let bytes = model.to_bytes();
    std::fs::write(path, &bytes).map_err(|source| ModelError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(bytes.len())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<AnyModel, ModelError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| ModelError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    AnyModel::from_bytes(&bytes)
}

/// Trainer hyperparameters for every model family.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub seed: u64,
    /// L2 coefficient on the mean logistic loss; `None` means `1 / n_rows`.
    pub l2_strength: Option<f64>,
    pub logistic_iters: usize,
    pub svm_iters: usize,
    pub forest: ForestParams,
    pub boosting: BoostingParams,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            l2_strength: None,
            logistic_iters: 1000,
            svm_iters: 10_000,
            forest: ForestParams::default(),
            boosting: BoostingParams::default(),
        }
    }
}

pub fn train(kind: ModelKind, data: &Dataset, cfg: &TrainConfig) -> Result<AnyModel, ModelError> {
    let forest = ForestParams {
        seed: cfg.seed,
        ..cfg.forest.clone()
    };
    Ok(match kind {
        ModelKind::Logistic => {
            let l2 = cfg
                .l2_strength
                .unwrap_or(1.0 / data.len().max(1) as f64);
            train_logistic(data, l2, cfg.logistic_iters)?.into()
        }
        ModelKind::LinearSvm => train_linear_svm(data, cfg.svm_iters)?.into(),
        ModelKind::RandomForest => train_random_forest(data, &forest)?.into(),
        ModelKind::ExtraTrees => train_extra_trees(data, &forest)?.into(),
        ModelKind::GradientBoosted => train_gradient_boosted(data, &cfg.boosting)?.into(),
    })
}

pub(crate) fn normalized(data: &Dataset) -> Result<(NormalizationParams, crate::dataset::FeatureMatrix), ModelError> {
    if data.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let params = if data.len() >= 2 {
        NormalizationParams::fit(&data.x)?
    } else {
        NormalizationParams::identity(data.n_features())
    };
    let x = params.apply_matrix(&data.x)?;
    Ok((params, x))
}

pub(crate) fn distinct_classes(y: &[EmotionLabel]) -> usize {
    crate::dataset::class_counts(y).iter().filter(|&&c| c > 0).count()
}
