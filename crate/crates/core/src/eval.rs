//! Classification metrics.
//!
//! Precision, recall and F1 are 0 whenever their denominator is 0; every
//! such case sets `zero_division` on the class so it can be told apart from
//! a genuine 0.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::EmotionLabel;

const K: usize = EmotionLabel::COUNT;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{predictions} predictions for {truths} labels")]
    LengthMismatch { predictions: usize, truths: usize },
    #[error("no predictions to evaluate")]
    Empty,
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: std::path::PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: EmotionLabel,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
    pub zero_division: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Rows are true classes, columns predicted classes.
    pub confusion: [[u64; K]; K],
    pub accuracy: f64,
    pub per_class: Vec<ClassMetrics>,
    pub macro_f1: f64,
    pub support: [u64; K],
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

pub fn evaluate(predictions: &[EmotionLabel], truths: &[EmotionLabel]) -> Result<EvalReport, EvalError> {
    if predictions.len() != truths.len() {
        return Err(EvalError::LengthMismatch {
            predictions: predictions.len(),
            truths: truths.len(),
        });
    }
    if truths.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut confusion = [[0u64; K]; K];
    for (p, t) in predictions.iter().zip(truths) {
        confusion[t.index()][p.index()] += 1;
    }
    let support: [u64; K] = std::array::from_fn(|c| confusion[c].iter().sum());
    let per_class: Vec<ClassMetrics> = EmotionLabel::ALL
        .iter()
        .map(|&label| {
            let c = label.index();
            let tp = confusion[c][c];
            let predicted: u64 = (0..K).map(|r| confusion[r][c]).sum();
            let (precision, zp) = ratio(tp, predicted);
            let (recall, zr) = ratio(tp, support[c]);
            let (f1, zf) = if precision + recall == 0.0 {
                (0.0, true)
            } else {
                (2.0 * precision * recall / (precision + recall), false)
            };
            ClassMetrics {
                label,
                precision,
                recall,
                f1,
                support: support[c],
                zero_division: zp || zr || zf,
            }
        })
        .collect();
    let trace: u64 = (0..K).map(|c| confusion[c][c]).sum();
    Ok(EvalReport {
        confusion,
        accuracy: trace as f64 / truths.len() as f64,
        macro_f1: per_class.iter().map(|m| m.f1).sum::<f64>() / K as f64,
        per_class,
        support,
    })
}

impl EvalReport {
    pub fn total(&self) -> u64 {
        self.support.iter().sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<(), EvalError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|source| EvalError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self, EvalError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| EvalError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text).map_err(|source| EvalError::Json {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// Plain-text report: per-class table, summary lines and confusion matrix.
impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<10} {:>9} {:>9} {:>9} {:>8}", "class", "precision", "recall", "f1", "support")?;
        for m in &self.per_class {
            writeln!(
                f,
                "{:<10} {:>9.4} {:>9.4} {:>9.4} {:>8}{}",
                m.label.name(),
                m.precision,
                m.recall,
                m.f1,
                m.support,
                if m.zero_division { "  *" } else { "" }
            )?;
        }
        writeln!(f)?;
        writeln!(f, "accuracy  {:.4}", self.accuracy)?;
        writeln!(f, "macro_f1  {:.4}", self.macro_f1)?;
        writeln!(f)?;
        write!(f, "{:<10}", "true\\pred")?;
        for l in EmotionLabel::ALL {
            write!(f, " {:>9}", l.name())?;
        }
        writeln!(f)?;
        for (l, row) in EmotionLabel::ALL.iter().zip(&self.confusion) {
            write!(f, "{:<10}", l.name())?;
            for v in row {
                write!(f, " {v:>9}")?;
            }
            writeln!(f)?;
        }
        if self.per_class.iter().any(|m| m.zero_division) {
            writeln!(f, "* zero denominator, metric set to 0")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use EmotionLabel::*;

    #[test]
    fn perfect_predictions() {
        let y = [Baseline, Stress, Stress, Amusement, Baseline];
        let r = evaluate(&y, &y).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.macro_f1, 1.0);
        assert_eq!(r.confusion, [[2, 0, 0], [0, 2, 0], [0, 0, 1]]);
    }

    #[test]
    fn always_majority_on_balanced_truths() {
        let n = 7;
        let truths: Vec<_> = EmotionLabel::ALL.iter().flat_map(|&l| std::iter::repeat_n(l, n)).collect();
        let preds = vec![Baseline; truths.len()];
        let r = evaluate(&preds, &truths).unwrap();
        assert!((r.per_class[0].precision - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.per_class[0].recall, 1.0);
        assert!((r.per_class[0].f1 - 0.5).abs() < 1e-15);
        assert_eq!(r.per_class[1].f1, 0.0);
        assert_eq!(r.per_class[2].f1, 0.0);
        assert!(r.per_class[1].zero_division);
        assert!((r.macro_f1 - 1.0 / 6.0).abs() < 1e-15);
        assert!((r.accuracy - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn absent_class_scores_zero_with_flag() {
        let r = evaluate(&[Baseline, Stress], &[Baseline, Stress]).unwrap();
        assert_eq!(r.per_class[2].f1, 0.0);
        assert!(r.per_class[2].zero_division);
        assert!(!r.per_class[0].zero_division);
        assert!((r.macro_f1 - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn errors() {
        assert!(matches!(evaluate(&[], &[]), Err(EvalError::Empty)));
        assert!(matches!(
            evaluate(&[Baseline], &[]),
            Err(EvalError::LengthMismatch { predictions: 1, truths: 0 })
        ));
    }

    #[test]
    fn json_round_trip() {
        let r = evaluate(&[Baseline, Stress, Amusement, Stress], &[Baseline, Amusement, Amusement, Stress]).unwrap();
        assert_eq!(EvalReport::from_json(&r.to_json()).unwrap(), r);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.json");
        r.save_json(&path).unwrap();
        assert_eq!(EvalReport::load_json(&path).unwrap(), r);
        let table = r.to_string();
        assert!(table.contains("macro_f1"));
        assert!(table.contains("Amusement"));
    }
}
