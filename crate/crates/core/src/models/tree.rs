//! Node-tree ensembles: Random Forest and ExtraTrees training, plus the
//! recursive scoring path shared with gradient boosting.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dataset::{Dataset, EmotionLabel, FeatureMatrix, NormalizationParams};
use crate::rng;

use super::persist::{self, Writer};
use super::{normalized, softmax_in_place, InferenceModel, ModelError, ModelKind, Prediction};

/// Binary decision tree node. Samples with `x[feature] <= threshold` go left.
#[derive(Debug, Clone, PartialEq)]
pub enum TreeNode {
    Leaf {
        /// Class distribution (forests) or a single additive score (boosting).
        values: Vec<f64>,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
}

impl TreeNode {
    pub fn leaf(values: Vec<f64>) -> Self {
        Self::Leaf { values }
    }

    /// Leaf values reached by `x`.
    pub fn evaluate(&self, x: &[f64]) -> &[f64] {
        match self {
            Self::Leaf { values } => values,
            Self::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                if x[*feature] <= *threshold {
                    left.evaluate(x)
                } else {
                    right.evaluate(x)
                }
            }
        }
    }

    pub fn node_count(&self) -> usize {
        match self {
            Self::Leaf { .. } => 1,
            Self::Split { left, right, .. } => 1 + left.node_count() + right.node_count(),
        }
    }

    pub fn leaf_count(&self) -> usize {
        match self {
            Self::Leaf { .. } => 1,
            Self::Split { left, right, .. } => left.leaf_count() + right.leaf_count(),
        }
    }

    /// Number of splits on the longest root-to-leaf path.
    pub fn depth(&self) -> usize {
        match self {
            Self::Leaf { .. } => 0,
            Self::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    pub fn max_feature_index(&self) -> Option<usize> {
        match self {
            Self::Leaf { .. } => None,
            Self::Split {
                feature, left, right, ..
            } => Some(
                (*feature)
                    .max(left.max_feature_index().unwrap_or(0))
                    .max(right.max_feature_index().unwrap_or(0)),
            ),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnsembleKind {
    RandomForest,
    ExtraTrees,
    GradientBoosted,
}

impl EnsembleKind {
    pub fn model_kind(self) -> ModelKind {
        match self {
            Self::RandomForest => ModelKind::RandomForest,
            Self::ExtraTrees => ModelKind::ExtraTrees,
            Self::GradientBoosted => ModelKind::GradientBoosted,
        }
    }

    pub fn from_model_kind(kind: ModelKind) -> Option<Self> {
        match kind {
            ModelKind::RandomForest => Some(Self::RandomForest),
            ModelKind::ExtraTrees => Some(Self::ExtraTrees),
            ModelKind::GradientBoosted => Some(Self::GradientBoosted),
            _ => None,
        }
    }

    pub fn is_boosted(self) -> bool {
        self == Self::GradientBoosted
    }
}

/// Trained ensemble in node-tree form.
///
/// Forest probabilities are the mean of the per-tree leaf distributions.
/// Boosted trees are stored round-major (tree `i` scores class
/// `i % n_classes`); class scores are `base_score + learning_rate × Σ leaf`,
/// followed by a softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeEnsembleModel {
    pub kind: EnsembleKind,
    pub trees: Vec<TreeNode>,
    pub n_classes: usize,
    pub n_features: usize,
    pub learning_rate: f64,
    pub base_score: Vec<f64>,
    pub normalization: NormalizationParams,
    pub feature_names: Vec<String>,
}

impl TreeEnsembleModel {
    pub fn node_count(&self) -> usize {
        self.trees.iter().map(TreeNode::node_count).sum()
    }

    pub fn max_depth(&self) -> usize {
        self.trees.iter().map(TreeNode::depth).max().unwrap_or(0)
    }

    /// Scores a normalized vector by recursive traversal of every tree.
    pub fn probabilities_normalized(&self, z: &[f64]) -> Vec<f64> {
        let k = self.n_classes;
        let mut acc = vec![0.0; k];
        if self.kind.is_boosted() {
            for (i, tree) in self.trees.iter().enumerate() {
                acc[i % k] += tree.evaluate(z)[0];
            }
            for (a, base) in acc.iter_mut().zip(&self.base_score) {
                *a = base + self.learning_rate * *a;
            }
            softmax_in_place(&mut acc);
        } else {
            for tree in &self.trees {
                for (a, v) in acc.iter_mut().zip(tree.evaluate(z)) {
                    *a += v;
                }
            }
            let n = self.trees.len() as f64;
            for a in acc.iter_mut() {
                *a /= n;
            }
        }
        acc
    }

    pub(crate) fn encode_body(&self, w: &mut Writer) {
        w.section(persist::TAG_TREES, |s| {
            s.f64(self.learning_rate);
            s.f64s(&self.base_score);
            s.u32(self.trees.len() as u32);
            for tree in &self.trees {
                persist::encode_tree(s, tree);
            }
        });
    }
}

impl InferenceModel for TreeEnsembleModel {
    fn n_features(&self) -> usize {
        self.n_features
    }

    fn predict(&self, features: &[f64]) -> Result<Prediction, ModelError> {
        self.check_dim(features)?;
        let mut z = vec![0.0; features.len()];
        self.normalization.apply_into(features, &mut z);
        Ok(Prediction::from_probabilities(self.probabilities_normalized(&z)))
    }

    fn to_bytes(&self) -> Vec<u8> {
        persist::encode_ensemble(self)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForestParams {
    pub n_trees: usize,
    pub seed: u64,
    pub min_samples_split: usize,
    pub max_depth: Option<usize>,
    /// Features examined per split; `None` means `⌈√d⌉`.
    pub max_features: Option<usize>,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 200,
            seed: 42,
            min_samples_split: 2,
            max_depth: None,
            max_features: None,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum SplitSearch {
    /// Best threshold among midpoints of sorted distinct values.
    Exhaustive,
    /// One uniform random threshold per candidate feature.
    Randomized,
}

/// Bootstrap-aggregated Gini trees with `⌈√d⌉` candidate features per split.
pub fn train_random_forest(data: &Dataset, params: &ForestParams) -> Result<TreeEnsembleModel, ModelError> {
    train_forest(data, params, EnsembleKind::RandomForest)
}

/// Extremely randomized trees: full sample per tree, random thresholds.
pub fn train_extra_trees(data: &Dataset, params: &ForestParams) -> Result<TreeEnsembleModel, ModelError> {
    train_forest(data, params, EnsembleKind::ExtraTrees)
}

fn train_forest(data: &Dataset, params: &ForestParams, kind: EnsembleKind) -> Result<TreeEnsembleModel, ModelError> {
    if data.len() < 2 {
        return Err(ModelError::EmptyDataset);
    }
    if params.n_trees == 0 {
        return Err(ModelError::InvalidParams("n_trees must be at least 1".into()));
    }
    let (normalization, x) = normalized(data)?;
    let d = x.n_cols();
    let max_features = params
        .max_features
        .unwrap_or_else(|| (d as f64).sqrt().ceil() as usize)
        .clamp(1, d.max(1));
    let (bootstrap, search) = match kind {
        EnsembleKind::RandomForest => (true, SplitSearch::Exhaustive),
        _ => (false, SplitSearch::Randomized),
    };

    let trees = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = rng::stream(params.seed, t as u64);
            let n = x.n_rows();
            let mut idx: Vec<usize> = if bootstrap {
                (0..n).map(|_| rng.random_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            let mut grower = ClassificationGrower {
                x: &x,
                y: &data.y,
                max_features,
                min_samples_split: params.min_samples_split.max(2),
                max_depth: params.max_depth,
                search,
                rng,
            };
            grower.grow(&mut idx, 0)
        })
        .collect();

    Ok(TreeEnsembleModel {
        kind,
        trees,
        n_classes: EmotionLabel::COUNT,
        n_features: d,
        learning_rate: 1.0,
        base_score: vec![0.0; EmotionLabel::COUNT],
        normalization,
        feature_names: data.feature_names.clone(),
    })
}

struct ClassificationGrower<'a> {
    x: &'a FeatureMatrix,
    y: &'a [EmotionLabel],
    max_features: usize,
    min_samples_split: usize,
    max_depth: Option<usize>,
    search: SplitSearch,
    rng: ChaCha8Rng,
}

type Counts = [usize; EmotionLabel::COUNT];

/// `Σ c² / n`; maximizing its sum over both children minimizes weighted Gini.
fn purity(counts: &Counts, n: usize) -> f64 {
    counts.iter().map(|&c| (c * c) as f64).sum::<f64>() / n as f64
}

impl ClassificationGrower<'_> {
    fn counts(&self, idx: &[usize]) -> Counts {
        let mut counts = [0; EmotionLabel::COUNT];
        for &i in idx {
            counts[self.y[i].index()] += 1;
        }
        counts
    }

    fn grow(&mut self, idx: &mut [usize], depth: usize) -> TreeNode {
        let counts = self.counts(idx);
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        let depth_capped = self.max_depth.is_some_and(|m| depth >= m);
        if pure || idx.len() < self.min_samples_split || depth_capped {
            return leaf_distribution(&counts, idx.len());
        }
        let Some((feature, threshold)) = self.best_split(idx, &counts) else {
            return leaf_distribution(&counts, idx.len());
        };
        let mid = partition(idx, |i| self.x.get(i, feature) <= threshold);
        let (left_idx, right_idx) = idx.split_at_mut(mid);
        let left = self.grow(left_idx, depth + 1);
        let right = self.grow(right_idx, depth + 1);
        TreeNode::Split {
            feature,
            threshold,
            left: Box::new(left),
            right: Box::new(right),
        }
    }

    /// Visits features in random order until `max_features` non-constant
    /// ones have been scored; keeps going past that only while no valid split
    /// has been found.
    fn best_split(&mut self, idx: &[usize], total: &Counts) -> Option<(usize, f64)> {
        let mut order: Vec<usize> = (0..self.x.n_cols()).collect();
        order.shuffle(&mut self.rng);
        let mut best: Option<(f64, usize, f64)> = None;
        let mut scored = 0;
        for feature in order {
            if scored >= self.max_features && best.is_some() {
                break;
            }
            let candidate = match self.search {
                SplitSearch::Exhaustive => self.exhaustive(idx, feature, total),
                SplitSearch::Randomized => self.randomized(idx, feature),
            };
            let Some((score, threshold)) = candidate else {
                continue;
            };
            scored += 1;
            if best.is_none_or(|(s, _, _)| score > s) {
                best = Some((score, feature, threshold));
            }
        }
        best.map(|(_, f, t)| (f, t))
    }

    fn exhaustive(&self, idx: &[usize], feature: usize, total: &Counts) -> Option<(f64, f64)> {
        let mut values: Vec<(f64, usize)> = idx
            .iter()
            .map(|&i| (self.x.get(i, feature), self.y[i].index()))
            .collect();
        values.sort_by(|a, b| a.0.total_cmp(&b.0));
        let n = values.len();
        let mut left = [0usize; EmotionLabel::COUNT];
        let mut best: Option<(f64, f64)> = None;
        for i in 0..n - 1 {
            left[values[i].1] += 1;
            let (v, next) = (values[i].0, values[i + 1].0);
            if v == next {
                continue;
            }
            let mut right = *total;
            for c in 0..EmotionLabel::COUNT {
                right[c] -= left[c];
            }
            let score = purity(&left, i + 1) + purity(&right, n - i - 1);
            if best.is_none_or(|(s, _)| score > s) {
                best = Some((score, midpoint(v, next)));
            }
        }
        best
    }

    fn randomized(&mut self, idx: &[usize], feature: usize) -> Option<(f64, f64)> {
        let (lo, hi) = idx.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
            let v = self.x.get(i, feature);
            (lo.min(v), hi.max(v))
        });
        if lo >= hi {
            return None;
        }
        let mut threshold = self.rng.random_range(lo..hi);
        if threshold >= hi {
            threshold = lo;
        }
        let mut left = [0usize; EmotionLabel::COUNT];
        let mut right = [0usize; EmotionLabel::COUNT];
        for &i in idx {
            if self.x.get(i, feature) <= threshold {
                left[self.y[i].index()] += 1;
            } else {
                right[self.y[i].index()] += 1;
            }
        }
        let nl: usize = left.iter().sum();
        let nr = idx.len() - nl;
        Some((purity(&left, nl) + purity(&right, nr), threshold))
    }
}

/// Threshold between two distinct sorted values, guaranteed `lo <= t < hi`.
pub(crate) fn midpoint(lo: f64, hi: f64) -> f64 {
    let m = lo + (hi - lo) / 2.0;
    if m >= hi {
        lo
    } else {
        m
    }
}

fn leaf_distribution(counts: &Counts, n: usize) -> TreeNode {
    TreeNode::leaf(counts.iter().map(|&c| c as f64 / n as f64).collect())
}

/// Stable-order-free in-place partition; returns the size of the `true` side.
pub(crate) fn partition(idx: &mut [usize], mut goes_left: impl FnMut(usize) -> bool) -> usize {
    let mut mid = 0;
    for j in 0..idx.len() {
        if goes_left(idx[j]) {
            idx.swap(mid, j);
            mid += 1;
        }
    }
    mid
}
