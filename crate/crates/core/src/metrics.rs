//! Confusion matrices, accuracy/F1 and relative improvement against a baseline.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which headline number an experiment tracks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    /// Binary F1 (class 1 positive) for two classes, macro F1 otherwise.
    #[default]
    F1,
    Accuracy,
}

impl MetricKind {
    pub fn name(self) -> &'static str {
        match self {
            MetricKind::F1 => "f1",
            MetricKind::Accuracy => "accuracy",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "f1" => Ok(MetricKind::F1),
            "accuracy" => Ok(MetricKind::Accuracy),
            other => Err(Error::Config(format!("unknown metric `{other}`"))),
        }
    }

    pub fn evaluate(self, predictions: &[usize], labels: &[usize], m: usize) -> Result<f64> {
        let report = confusion_and_metrics(predictions, labels, m)?;
        Ok(match self {
            MetricKind::F1 => report.f1,
            MetricKind::Accuracy => report.accuracy,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassificationReport {
    /// `confusion[label][prediction]`.
    pub confusion: Vec<Vec<usize>>,
    pub accuracy: f64,
    /// Binary F1 with class 1 positive when `M = 2`, macro F1 otherwise.
    pub f1: f64,
    /// Unweighted mean of per-class F1 (always computed).
    pub macro_f1: f64,
}

fn class_f1(confusion: &[Vec<usize>], c: usize) -> f64 {
    let tp = confusion[c][c] as f64;
    let fp: usize = (0..confusion.len())
        .filter(|&r| r != c)
        .map(|r| confusion[r][c])
        .sum();
    let fn_: usize = (0..confusion.len())
        .filter(|&p| p != c)
        .map(|p| confusion[c][p])
        .sum();
    let denom = 2.0 * tp + fp as f64 + fn_ as f64;
    if denom == 0.0 {
        0.0
    } else {
        2.0 * tp / denom
    }
}

pub fn confusion_and_metrics(
    predictions: &[usize],
    labels: &[usize],
    m: usize,
) -> Result<ClassificationReport> {
    if predictions.is_empty() {
        return Err(Error::EmptyInput("predictions"));
    }
    if predictions.len() != labels.len() {
        return Err(Error::dim("labels", predictions.len(), labels.len()));
    }
    let mut confusion = vec![vec![0usize; m]; m];
    for (&p, &y) in predictions.iter().zip(labels) {
        if p >= m || y >= m {
            return Err(Error::Domain(format!(
                "class index out of range for {m} classes"
            )));
        }
        confusion[y][p] += 1;
    }
    let correct: usize = (0..m).map(|c| confusion[c][c]).sum();
    let accuracy = correct as f64 / predictions.len() as f64;
    let macro_f1 = (0..m).map(|c| class_f1(&confusion, c)).sum::<f64>() / m as f64;
    let f1 = if m == 2 {
        class_f1(&confusion, 1)
    } else {
        macro_f1
    };
    Ok(ClassificationReport {
        confusion,
        accuracy,
        f1,
        macro_f1,
    })
}

/// Percent change of `metric_model` over `metric_baseline`.
pub fn relative_improvement(metric_model: f64, metric_baseline: f64) -> Result<f64> {
    if !(metric_baseline > 0.0) {
        return Err(Error::Domain(format!(
            "baseline metric must be positive, got {metric_baseline}"
        )));
    }
    Ok(100.0 * (metric_model - metric_baseline) / metric_baseline)
}
