//! Multinomial logistic regression and one-vs-rest linear SVM.

use crate::dataset::{EmotionLabel, FeatureMatrix, NormalizationParams};
use crate::Dataset;

use super::persist::{self, Writer};
use super::{distinct_classes, normalized, softmax_in_place, InferenceModel, ModelError, ModelKind, Prediction};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinearKind {
    LogisticSoftmax,
    SvmOvr,
}

/// `scores = W x + b` over normalized features. Logistic scores are softmax
/// logits; SVM scores are one-vs-rest margins, and their softmax is an
/// uncalibrated confidence.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub kind: LinearKind,
    /// Row-major `n_classes × n_features`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub n_features: usize,
    pub normalization: NormalizationParams,
    pub feature_names: Vec<String>,
}

impl LinearModel {
    pub fn n_classes(&self) -> usize {
        self.bias.len()
    }

    pub fn model_kind(&self) -> ModelKind {
        match self.kind {
            LinearKind::LogisticSoftmax => ModelKind::Logistic,
            LinearKind::SvmOvr => ModelKind::LinearSvm,
        }
    }

    /// Raw scores on an already-normalized vector.
    pub fn scores(&self, z: &[f64]) -> Vec<f64> {
        self.bias
            .iter()
            .enumerate()
            .map(|(k, b)| b + dot(&self.weights[k * self.n_features..(k + 1) * self.n_features], z))
            .collect()
    }

    pub(crate) fn encode_body(&self, w: &mut Writer) {
        w.section(persist::TAG_LINEAR, |s| {
            s.u32(self.n_classes() as u32);
            s.u32(self.n_features as u32);
            s.f64s(&self.weights);
            s.f64s(&self.bias);
        });
    }
}

impl InferenceModel for LinearModel {
    fn n_features(&self) -> usize {
        self.n_features
    }

    fn predict(&self, features: &[f64]) -> Result<Prediction, ModelError> {
        self.check_dim(features)?;
        let mut z = vec![0.0; features.len()];
        self.normalization.apply_into(features, &mut z);
        let mut scores = self.scores(&z);
        softmax_in_place(&mut scores);
        Ok(Prediction::from_probabilities(scores))
    }

    fn to_bytes(&self) -> Vec<u8> {
        persist::encode_linear(self)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Upper bound on `‖xᵀx‖ / N` with the bias column appended.
fn mean_sq_norm(x: &FeatureMatrix) -> f64 {
    let n = x.n_rows().max(1) as f64;
    x.rows().map(|r| 1.0 + dot(r, r)).sum::<f64>() / n
}

fn check_labels(data: &Dataset) -> Result<(), ModelError> {
    if data.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    if distinct_classes(&data.y) < 2 {
        return Err(ModelError::DegenerateLabels);
    }
    Ok(())
}

/// Multinomial logistic regression by full-batch gradient descent on the
/// mean cross-entropy plus `l2_strength / 2 · ‖W‖²` (bias unpenalized),
/// starting from zero weights. The step is `1 / L` for the Lipschitz bound
/// `L = ½ · mean(‖x‖² + 1) + l2_strength`.
pub fn train_logistic(data: &Dataset, l2_strength: f64, max_iters: usize) -> Result<LinearModel, ModelError> {
    check_labels(data)?;
    if !(l2_strength.is_finite() && l2_strength >= 0.0) {
        return Err(ModelError::InvalidParams(format!("l2_strength {l2_strength}")));
    }
    let (normalization, x) = normalized(data)?;
    let k = EmotionLabel::COUNT;
    let d = x.n_cols();
    let n = x.n_rows() as f64;
    let step = 1.0 / (0.5 * mean_sq_norm(&x) + l2_strength);

    let mut model = LinearModel {
        kind: LinearKind::LogisticSoftmax,
        weights: vec![0.0; k * d],
        bias: vec![0.0; k],
        n_features: d,
        normalization,
        feature_names: data.feature_names.clone(),
    };
    let mut grad_w = vec![0.0; k * d];
    let mut grad_b = vec![0.0; k];
    for _ in 0..max_iters {
        grad_w.iter_mut().for_each(|g| *g = 0.0);
        grad_b.iter_mut().for_each(|g| *g = 0.0);
        for (row, label) in x.rows().zip(&data.y) {
            let mut p = model.scores(row);
            softmax_in_place(&mut p);
            p[label.index()] -= 1.0;
            for c in 0..k {
                grad_b[c] += p[c];
                for (g, v) in grad_w[c * d..(c + 1) * d].iter_mut().zip(row) {
                    *g += p[c] * v;
                }
            }
        }
        let mut norm_sq = 0.0;
        for (g, w) in grad_w.iter_mut().zip(&model.weights) {
            *g = *g / n + l2_strength * w;
            norm_sq += *g * *g;
        }
        for g in grad_b.iter_mut() {
            *g /= n;
            norm_sq += *g * *g;
        }
        if norm_sq < 1e-20 {
            break;
        }
        for (w, g) in model.weights.iter_mut().zip(&grad_w) {
            *w -= step * g;
        }
        for (b, g) in model.bias.iter_mut().zip(&grad_b) {
            *b -= step * g;
        }
    }
    Ok(model)
}

/// One-vs-rest linear SVM. Each class gets a binary hinge-loss classifier
/// minimizing `λ/2 · ‖w‖² + mean(max(0, 1 − y (w·x + b)))` with `λ = 1/N`,
/// by full-batch subgradient descent with step `η₀ / √t`. The iterate with
/// the lowest objective is kept.
pub fn train_linear_svm(data: &Dataset, max_iters: usize) -> Result<LinearModel, ModelError> {
    check_labels(data)?;
    let (normalization, x) = normalized(data)?;
    let k = EmotionLabel::COUNT;
    let d = x.n_cols();
    let lambda = 1.0 / x.n_rows() as f64;
    let eta0 = 1.0 / mean_sq_norm(&x).sqrt();

    let mut weights = vec![0.0; k * d];
    let mut bias = vec![0.0; k];
    for class in EmotionLabel::ALL {
        let targets: Vec<f64> = data
            .y
            .iter()
            .map(|l| if *l == class { 1.0 } else { -1.0 })
            .collect();
        let (w, b) = fit_hinge(&x, &targets, lambda, eta0, max_iters);
        let c = class.index();
        weights[c * d..(c + 1) * d].copy_from_slice(&w);
        bias[c] = b;
    }
    Ok(LinearModel {
        kind: LinearKind::SvmOvr,
        weights,
        bias,
        n_features: d,
        normalization,
        feature_names: data.feature_names.clone(),
    })
}

pub(crate) fn hinge_objective(x: &FeatureMatrix, y: &[f64], lambda: f64, w: &[f64], b: f64) -> f64 {
    let n = x.n_rows() as f64;
    let loss: f64 = x
        .rows()
        .zip(y)
        .map(|(r, t)| (1.0 - t * (dot(w, r) + b)).max(0.0))
        .sum();
    0.5 * lambda * dot(w, w) + loss / n
}

fn fit_hinge(x: &FeatureMatrix, y: &[f64], lambda: f64, eta0: f64, max_iters: usize) -> (Vec<f64>, f64) {
    let d = x.n_cols();
    let n = x.n_rows() as f64;
    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let mut best = (w.clone(), b, hinge_objective(x, y, lambda, &w, b));
    let mut grad_w = vec![0.0; d];
    for t in 1..=max_iters {
        grad_w.iter_mut().zip(&w).for_each(|(g, wi)| *g = lambda * wi);
        let mut grad_b = 0.0;
        let mut loss = 0.0;
        for (r, &target) in x.rows().zip(y) {
            let margin = 1.0 - target * (dot(&w, r) + b);
            if margin > 0.0 {
                loss += margin;
                grad_b -= target / n;
                for (g, v) in grad_w.iter_mut().zip(r) {
                    *g -= target * v / n;
                }
            }
        }
        // Objective at the current iterate, evaluated alongside its subgradient.
        let objective = 0.5 * lambda * dot(&w, &w) + loss / n;
        if objective < best.2 {
            best = (w.clone(), b, objective);
        }
        let eta = eta0 / (t as f64).sqrt();
        for (wi, g) in w.iter_mut().zip(&grad_w) {
            *wi -= eta * g;
        }
        b -= eta * grad_b;
    }
    let last = hinge_objective(x, y, lambda, &w, b);
    if last < best.2 {
        best = (w, b, last);
    }
    (best.0, best.1)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::dataset::FeatureMatrix;
    use rand::{Rng, SeedableRng};

    /// Three clusters at ±10 on separate axes with unit-scale noise.
    pub(crate) fn clusters(n_per_class: usize, seed: u64) -> Dataset {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let centres = [[10.0, 0.0], [-10.0, 0.0], [0.0, 10.0]];
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for (c, centre) in centres.iter().enumerate() {
            for _ in 0..n_per_class {
                rows.push([
                    centre[0] + rng.random_range(-1.0..1.0),
                    centre[1] + rng.random_range(-1.0..1.0),
                ]);
                y.push(EmotionLabel::ALL[c]);
            }
        }
        Dataset::new(FeatureMatrix::from_rows(&rows).unwrap(), y, vec![]).unwrap()
    }

    fn accuracy(model: &LinearModel, data: &Dataset) -> f64 {
        let hits = data
            .x
            .rows()
            .zip(&data.y)
            .filter(|(r, l)| model.predict(r).unwrap().label == **l)
            .count();
        hits as f64 / data.len() as f64
    }

    #[test]
    fn zero_weights_predict_uniform() {
        let data = clusters(5, 1);
        let model = train_logistic(&data, 0.1, 0).unwrap();
        let p = model.predict(&[3.0, -7.0]).unwrap();
        for v in p.probabilities {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn logistic_separates_clusters() {
        let data = clusters(30, 2);
        let model = train_logistic(&data, 1.0 / 90.0, 1000).unwrap();
        assert_eq!(accuracy(&model, &data), 1.0);
        let p = model.predict(&[10.0, 0.0]).unwrap();
        assert!((p.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn logistic_mirror_symmetry() {
        // Class 0 and class 1 are reflections of each other across x = 0;
        // class 2 sits on the mirror axis.
        let base = [[3.0, 1.0], [4.0, -0.5], [2.5, 0.3], [3.5, 2.0]];
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for p in base {
            rows.push(p);
            y.push(EmotionLabel::Baseline);
            rows.push([-p[0], p[1]]);
            y.push(EmotionLabel::Stress);
        }
        for p in [[0.0, 4.0], [0.0, 5.0], [0.0, 3.0]] {
            rows.push(p);
            y.push(EmotionLabel::Amusement);
        }
        let data = Dataset::new(FeatureMatrix::from_rows(&rows).unwrap(), y, vec![]).unwrap();
        let model = train_logistic(&data, 0.05, 1000).unwrap();
        for probe in [[1.0, 0.5], [2.5, -3.0], [0.3, 4.0]] {
            let a = model.predict(&probe).unwrap().probabilities;
            let b = model.predict(&[-probe[0], probe[1]]).unwrap().probabilities;
            assert!((a[0] - b[1]).abs() < 1e-6, "{a:?} vs {b:?}");
            assert!((a[1] - b[0]).abs() < 1e-6, "{a:?} vs {b:?}");
            assert!((a[2] - b[2]).abs() < 1e-6, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn svm_separates_clusters() {
        let data = clusters(30, 3);
        let model = train_linear_svm(&data, 10_000).unwrap();
        assert_eq!(accuracy(&model, &data), 1.0);
    }

    #[test]
    fn svm_identical_rows_predict_bias_optimum() {
        use EmotionLabel::*;
        let mut y = vec![Stress; 12];
        y.extend(vec![Baseline; 5]);
        y.extend(vec![Amusement; 3]);
        let rows = vec![[1.5, -2.0]; y.len()];
        let data = Dataset::new(FeatureMatrix::from_rows(&rows).unwrap(), y.clone(), vec![]).unwrap();

        // Bias-only oracle: every row is identical, so each one-vs-rest
        // problem reduces to a 1-D hinge objective in the bias.
        let n = y.len() as f64;
        let optimum = |class: EmotionLabel| {
            (-2000..=2000)
                .map(|i| i as f64 / 1000.0)
                .map(|b| {
                    let loss: f64 = y
                        .iter()
                        .map(|l| {
                            let t = if *l == class { 1.0 } else { -1.0 };
                            (1.0 - t * b).max(0.0)
                        })
                        .sum();
                    (b, loss / n)
                })
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .unwrap()
                .0
        };
        let biases: Vec<f64> = EmotionLabel::ALL.iter().map(|&c| optimum(c)).collect();
        let oracle = crate::dataset::argmax_label(&biases);
        assert_eq!(oracle, Stress);

        let model = train_linear_svm(&data, 10_000).unwrap();
        assert_eq!(model.predict(&[1.5, -2.0]).unwrap().label, oracle);
        for (got, want) in model.bias.iter().zip(&biases) {
            assert!((got - want).abs() < 0.05, "{got} vs {want}");
        }
    }

    #[test]
    fn svm_argmax_invariant_to_input_scale() {
        let data = clusters(20, 4);
        let scaled = Dataset::new(
            data.x.map_rows(|s, d| d.iter_mut().zip(s).for_each(|(o, v)| *o = v * 7.5)),
            data.y.clone(),
            vec![],
        )
        .unwrap();
        let a = train_linear_svm(&data, 10_000).unwrap();
        let b = train_linear_svm(&scaled, 10_000).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let p = [rng.random_range(-12.0..12.0), rng.random_range(-2.0..12.0)];
            let q = [p[0] * 7.5, p[1] * 7.5];
            assert_eq!(a.predict(&p).unwrap().label, b.predict(&q).unwrap().label);
        }
    }

    #[test]
    fn degenerate_labels_rejected() {
        let rows = vec![[1.0, 2.0], [2.0, 3.0]];
        let data = Dataset::new(
            FeatureMatrix::from_rows(&rows).unwrap(),
            vec![EmotionLabel::Stress; 2],
            vec![],
        )
        .unwrap();
        assert!(matches!(train_logistic(&data, 0.1, 10), Err(ModelError::DegenerateLabels)));
        assert!(matches!(train_linear_svm(&data, 10), Err(ModelError::DegenerateLabels)));
    }

    #[test]
    fn dimension_checked() {
        let model = train_logistic(&clusters(5, 5), 0.1, 10).unwrap();
        assert!(matches!(
            model.predict(&[1.0]),
            Err(ModelError::DimensionMismatch { expected: 2, got: 1 })
        ));
    }
}
