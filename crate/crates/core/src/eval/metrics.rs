//! Binary classification metrics and their aggregation over folds.

use serde::{Deserialize, Serialize};

use crate::error::{GateError, Result};

pub const METRIC_NAMES: [&str; 5] = ["accuracy", "auc", "precision", "recall", "f1"];

/// One evaluation unit (a fold of a repeat). Positive class is 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinaryMetrics {
    pub accuracy: f64,
    /// `None` when the labels hold a single class.
    pub auc: Option<f64>,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl BinaryMetrics {
    pub fn get(&self, name: &str) -> Option<f64> {
        match name {
            "accuracy" => Some(self.accuracy),
            "auc" => self.auc,
            "precision" => Some(self.precision),
            "recall" => Some(self.recall),
            "f1" => Some(self.f1),
            _ => None,
        }
    }
}

fn check_labels(labels: &[usize]) -> Result<()> {
    if labels.is_empty() {
        return Err(GateError::Label("empty label vector".into()));
    }
    match labels.iter().find(|&&l| l > 1) {
        Some(l) => Err(GateError::Label(format!("label {l} not in {{0,1}}"))),
        None => Ok(()),
    }
}

/// Probability that a random positive outscores a random negative, ties
/// counted half. Rank-based, O(n log n).
pub fn roc_auc(scores: &[f64], labels: &[usize]) -> Result<f64> {
    check_labels(labels)?;
    if scores.len() != labels.len() {
        return Err(GateError::Shape(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(GateError::Numerical("NaN score".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(GateError::UndefinedMetric("AUC needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // midranks, 1-based
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum_pos += mid * order[i..=j].iter().filter(|&&k| labels[k] == 1).count() as f64;
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * n))
}

/// Confusion-matrix metrics with 0/0 := 0, plus AUC of `scores` (the
/// probability of class 1).
pub fn binary_metrics(scores: &[f64], predicted: &[usize], labels: &[usize]) -> Result<BinaryMetrics> {
    check_labels(labels)?;
    if predicted.len() != labels.len() {
        return Err(GateError::Shape(format!("{} predictions for {} labels", predicted.len(), labels.len())));
    }
    check_labels(predicted)?;
    let (mut tp, mut fp, mut tn, mut fneg) = (0usize, 0usize, 0usize, 0usize);
    for (&p, &y) in predicted.iter().zip(labels) {
        match (p, y) {
            (1, 1) => tp += 1,
            (1, _) => fp += 1,
            (_, 0) => tn += 1,
            _ => fneg += 1,
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fneg);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    let auc = match roc_auc(scores, labels) {
        Ok(a) => Some(a),
        Err(GateError::UndefinedMetric(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(BinaryMetrics {
        accuracy: ratio(tp + tn, labels.len()),
        auc,
        precision,
        recall,
        f1,
    })
}

/// Mean, sample standard deviation and raw values of one metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub values: Vec<f64>,
}

impl Summary {
    pub fn of(values: Vec<f64>) -> Self {
        let n = values.len() as f64;
        if values.is_empty() {
            return Self {
                mean: f64::NAN,
                std: f64::NAN,
                values,
            };
        }
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self { mean, std, values }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: Summary,
    pub auc: Summary,
    pub precision: Summary,
    pub recall: Summary,
    pub f1: Summary,
    /// Mean of the five metric means.
    pub avg: f64,
}

impl MetricsReport {
    /// Folds with an undefined AUC are left out of the AUC summary only.
    pub fn from_units(units: &[BinaryMetrics]) -> Self {
        let pick = |f: fn(&BinaryMetrics) -> Option<f64>| Summary::of(units.iter().filter_map(f).collect());
        let accuracy = pick(|m| Some(m.accuracy));
        let auc = pick(|m| m.auc);
        let precision = pick(|m| Some(m.precision));
        let recall = pick(|m| Some(m.recall));
        let f1 = pick(|m| Some(m.f1));
        let avg = (accuracy.mean + auc.mean + precision.mean + recall.mean + f1.mean) / 5.0;
        Self {
            accuracy,
            auc,
            precision,
            recall,
            f1,
            avg,
        }
    }

    pub fn summary(&self, name: &str) -> Option<&Summary> {
        match name {
            "accuracy" => Some(&self.accuracy),
            "auc" => Some(&self.auc),
            "precision" => Some(&self.precision),
            "recall" => Some(&self.recall),
            "f1" => Some(&self.f1),
            _ => None,
        }
    }
}
