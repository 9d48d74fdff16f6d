//! Multiclass gradient boosting with second-order leaf weights.

use crate::dataset::{Dataset, EmotionLabel, FeatureMatrix};

use super::tree::{midpoint, partition, EnsembleKind, TreeEnsembleModel, TreeNode};
use super::{distinct_classes, normalized, softmax_in_place, ModelError};

#[derive(Debug, Clone, PartialEq)]
pub struct BoostingParams {
    pub rounds: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    /// L2 penalty on leaf weights.
    pub reg_lambda: f64,
    /// Minimum hessian sum in each child of a split.
    pub min_child_weight: f64,
}

impl Default for BoostingParams {
    fn default() -> Self {
        Self {
            rounds: 200,
            learning_rate: 0.3,
            max_depth: 6,
            reg_lambda: 1.0,
            min_child_weight: 1.0,
        }
    }
}

pub fn train_gradient_boosted(data: &Dataset, params: &BoostingParams) -> Result<TreeEnsembleModel, ModelError> {
    train_gradient_boosted_with_history(data, params).map(|(m, _)| m)
}

/// Trains and also returns the mean training log-loss before the first round
/// and after each round (`rounds + 1` entries).
///
/// Each round fits one regression tree per class to the softmax gradient
/// `p − y` with hessian `2p(1 − p)`; leaf weights are `−G / (H + λ)` and
/// splits maximize `G_L²/(H_L+λ) + G_R²/(H_R+λ) − G²/(H+λ)`.
pub fn train_gradient_boosted_with_history(
    data: &Dataset,
    params: &BoostingParams,
) -> Result<(TreeEnsembleModel, Vec<f64>), ModelError> {
    if data.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    if distinct_classes(&data.y) < 2 {
        return Err(ModelError::DegenerateLabels);
    }
    if !(params.learning_rate.is_finite() && params.learning_rate > 0.0) || params.reg_lambda < 0.0 {
        return Err(ModelError::InvalidParams(format!("{params:?}")));
    }
    let (normalization, x) = normalized(data)?;
    let k = EmotionLabel::COUNT;
    let n = x.n_rows();
    let base_score = vec![0.0; k];

    // Raw per-class leaf sums, accumulated in the same tree order as scoring.
    let mut raw = vec![0.0; n * k];
    let probabilities = |raw: &[f64]| -> Vec<f64> {
        let mut p = vec![0.0; n * k];
        for i in 0..n {
            let row = &mut p[i * k..(i + 1) * k];
            for c in 0..k {
                row[c] = base_score[c] + params.learning_rate * raw[i * k + c];
            }
            softmax_in_place(row);
        }
        p
    };
    let log_loss = |p: &[f64]| -> f64 {
        data.y
            .iter()
            .enumerate()
            .map(|(i, l)| -p[i * k + l.index()].max(f64::MIN_POSITIVE).ln())
            .sum::<f64>()
            / n as f64
    };

    let mut p = probabilities(&raw);
    let mut history = vec![log_loss(&p)];
    let mut trees = Vec::with_capacity(params.rounds * k);
    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n];
    for _ in 0..params.rounds {
        let mut round = Vec::with_capacity(k);
        for c in 0..k {
            for i in 0..n {
                let pi = p[i * k + c];
                let yi = if data.y[i].index() == c { 1.0 } else { 0.0 };
                grad[i] = pi - yi;
                hess[i] = (2.0 * pi * (1.0 - pi)).max(1e-16);
            }
            let grower = RegressionGrower {
                x: &x,
                grad: &grad,
                hess: &hess,
                params,
            };
            let mut idx: Vec<usize> = (0..n).collect();
            round.push(grower.grow(&mut idx, 0));
        }
        for i in 0..n {
            let z = x.row(i);
            for (c, tree) in round.iter().enumerate() {
                raw[i * k + c] += tree.evaluate(z)[0];
            }
        }
        trees.extend(round);
        p = probabilities(&raw);
        history.push(log_loss(&p));
    }

    let model = TreeEnsembleModel {
        kind: EnsembleKind::GradientBoosted,
        trees,
        n_classes: k,
        n_features: x.n_cols(),
        learning_rate: params.learning_rate,
        base_score,
        normalization,
        feature_names: data.feature_names.clone(),
    };
    Ok((model, history))
}

struct RegressionGrower<'a> {
    x: &'a FeatureMatrix,
    grad: &'a [f64],
    hess: &'a [f64],
    params: &'a BoostingParams,
}

impl RegressionGrower<'_> {
    fn score(&self, g: f64, h: f64) -> f64 {
        g * g / (h + self.params.reg_lambda)
    }

    fn grow(&self, idx: &mut [usize], depth: usize) -> TreeNode {
        let g: f64 = idx.iter().map(|&i| self.grad[i]).sum();
        let h: f64 = idx.iter().map(|&i| self.hess[i]).sum();
        let weight = -g / (h + self.params.reg_lambda);
        if depth >= self.params.max_depth || idx.len() < 2 {
            return TreeNode::leaf(vec![weight]);
        }
        let Some((feature, threshold)) = self.best_split(idx, g, h) else {
            return TreeNode::leaf(vec![weight]);
        };
        let mid = partition(idx, |i| self.x.get(i, feature) <= threshold);
        let (left_idx, right_idx) = idx.split_at_mut(mid);
        TreeNode::Split {
            feature,
            threshold,
            left: Box::new(self.grow(left_idx, depth + 1)),
            right: Box::new(self.grow(right_idx, depth + 1)),
        }
    }

    fn best_split(&self, idx: &[usize], g: f64, h: f64) -> Option<(usize, f64)> {
        let parent = self.score(g, h);
        let mcw = self.params.min_child_weight;
        let mut best: Option<(f64, usize, f64)> = None;
        let mut sorted: Vec<usize> = idx.to_vec();
        for feature in 0..self.x.n_cols() {
            sorted.sort_by(|&a, &b| self.x.get(a, feature).total_cmp(&self.x.get(b, feature)));
            let (mut gl, mut hl) = (0.0, 0.0);
            for w in 0..sorted.len() - 1 {
                let i = sorted[w];
                gl += self.grad[i];
                hl += self.hess[i];
                let v = self.x.get(i, feature);
                let next = self.x.get(sorted[w + 1], feature);
                if v == next {
                    continue;
                }
                let (gr, hr) = (g - gl, h - hl);
                if hl < mcw || hr < mcw {
                    continue;
                }
                let gain = self.score(gl, hl) + self.score(gr, hr) - parent;
                if gain > 0.0 && best.is_none_or(|(b, _, _)| gain > b) {
                    best = Some((gain, feature, midpoint(v, next)));
                }
            }
        }
        best.map(|(_, f, t)| (f, t))
    }
}
