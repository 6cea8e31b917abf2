//! Classification and rating metrics, significance tests and the repeated
//! random-split experiment protocol.

mod experiment;
mod stats;

pub use experiment::{
    rating_learning_curve, run_experiment, CurvePoint, ExperimentConfig, Method, MethodMetrics, MethodSummary,
    RatingCurveConfig, TrialReport, TrialResult, Tuning,
};
pub use stats::{inc_beta, ln_gamma, paired_t_test, t_two_sided_p, TTest};

use serde::{Deserialize, Serialize};
use std::collections::HashMap;

use crate::error::{Error, Result};

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub labels: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn from_indices(labels: &[String], preds: &[usize], truths: &[usize]) -> Result<Self> {
        if preds.len() != truths.len() {
            return Err(Error::DimensionMismatch {
                expected: truths.len(),
                actual: preds.len(),
            });
        }
        let c = labels.len();
        let mut counts = vec![vec![0u64; c]; c];
        for (&p, &t) in preds.iter().zip(truths) {
            if p >= c || t >= c {
                return Err(Error::UnknownLabel(format!("class index {}", p.max(t))));
            }
            counts[t][p] += 1;
        }
        Ok(ConfusionMatrix {
            labels: labels.to_vec(),
            counts,
        })
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn n_classes(&self) -> usize {
        self.labels.len()
    }
}

/// Tallies predictions against truths over the given label set.
pub fn confusion<S: AsRef<str>>(labels: &[String], preds: &[S], truths: &[S]) -> Result<ConfusionMatrix> {
    let index: HashMap<&str, usize> = labels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
    let lookup = |s: &S| {
        index
            .get(s.as_ref())
            .copied()
            .ok_or_else(|| Error::UnknownLabel(s.as_ref().to_string()))
    };
    if preds.len() != truths.len() {
        return Err(Error::DimensionMismatch {
            expected: truths.len(),
            actual: preds.len(),
        });
    }
    let p = preds.iter().map(lookup).collect::<Result<Vec<_>>>()?;
    let t = truths.iter().map(lookup).collect::<Result<Vec<_>>>()?;
    ConfusionMatrix::from_indices(labels, &p, &t)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub per_class_f1: Vec<f64>,
    /// Mean F1 over every class of the matrix.
    pub macro_f1: f64,
    /// Mean F1 over the classes that occur in the truth column.
    pub macro_f1_truth: f64,
}

/// Accuracy and F1 scores; a class with `P + R = 0` has F1 = 0.
pub fn metrics(cm: &ConfusionMatrix) -> Result<Metrics> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::InvalidArgument("confusion matrix is empty".into()));
    }
    let c = cm.n_classes();
    let trace: u64 = (0..c).map(|i| cm.counts[i][i]).sum();
    let mut per_class_f1 = Vec::with_capacity(c);
    let mut truth_f1 = Vec::new();
    for k in 0..c {
        let tp = cm.counts[k][k] as f64;
        let predicted: u64 = (0..c).map(|i| cm.counts[i][k]).sum();
        let actual: u64 = cm.counts[k].iter().sum();
        let precision = if predicted > 0 { tp / predicted as f64 } else { 0.0 };
        let recall = if actual > 0 { tp / actual as f64 } else { 0.0 };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        per_class_f1.push(f1);
        if actual > 0 {
            truth_f1.push(f1);
        }
    }
    let mean = |v: &[f64]| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
    Ok(Metrics {
        accuracy: trace as f64 / total as f64,
        macro_f1: mean(&per_class_f1),
        macro_f1_truth: mean(&truth_f1),
        per_class_f1,
    })
}

/// Mean absolute rating error.
pub fn l1_error(preds: &[i64], truths: &[i64]) -> Result<f64> {
    if preds.len() != truths.len() {
        return Err(Error::DimensionMismatch {
            expected: truths.len(),
            actual: preds.len(),
        });
    }
    if preds.is_empty() {
        return Err(Error::InvalidArgument("no ratings to compare".into()));
    }
    let sum: i64 = preds.iter().zip(truths).map(|(p, t)| (p - t).abs()).sum();
    Ok(sum as f64 / preds.len() as f64)
}
