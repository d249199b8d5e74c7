use serde::{Deserialize, Serialize};

use super::{EvalError, Result};
use crate::dataset::BinaryLabel;

/// Binary confusion counts with COPD as the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn merge(&self, other: &ConfusionMatrix) -> ConfusionMatrix {
        ConfusionMatrix {
            tp: self.tp + other.tp,
            fp: self.fp + other.fp,
            tn: self.tn + other.tn,
            fn_: self.fn_ + other.fn_,
        }
    }
}

/// Count outcomes; classes are indices with `1 = copd`.
pub fn confusion(predictions: &[usize], labels: &[usize]) -> Result<ConfusionMatrix> {
    if predictions.len() != labels.len() {
        return Err(EvalError::LengthMismatch(predictions.len(), labels.len()));
    }
    if predictions.is_empty() {
        return Err(EvalError::Empty);
    }
    let pos = BinaryLabel::Copd.class_index();
    let mut cm = ConfusionMatrix::default();
    for (&p, &l) in predictions.iter().zip(labels) {
        match (p == pos, l == pos) {
            (true, true) => cm.tp += 1,
            (true, false) => cm.fp += 1,
            (false, false) => cm.tn += 1,
            (false, true) => cm.fn_ += 1,
        }
    }
    Ok(cm)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub weighted_f1: f64,
    pub auc: Option<f64>,
    pub non_copd: ClassMetrics,
    pub copd: ClassMetrics,
    pub confusion: ConfusionMatrix,
    /// Metrics whose denominator was zero and were reported as 0.
    pub degenerate: Vec<String>,
}

fn ratio(num: u64, den: u64, name: &str, flags: &mut Vec<String>) -> f64 {
    if den == 0 {
        flags.push(name.to_string());
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Accuracy, precision, recall, and F1 for the COPD class, the same for the
/// non-COPD class, and support-weighted F1. AUC is left unset.
pub fn metrics(cm: &ConfusionMatrix) -> Result<MetricsReport> {
    let n = cm.total();
    if n == 0 {
        return Err(EvalError::EmptyMatrix);
    }
    let mut flags = Vec::new();
    let precision = ratio(cm.tp, cm.tp + cm.fp, "precision", &mut flags);
    let recall = ratio(cm.tp, cm.tp + cm.fn_, "recall", &mut flags);
    let f1 = harmonic(precision, recall);
    let accuracy = (cm.tp + cm.tn) as f64 / n as f64;

    let np = ratio(cm.tn, cm.tn + cm.fn_, "non_copd_precision", &mut flags);
    let nr = ratio(cm.tn, cm.tn + cm.fp, "non_copd_recall", &mut flags);
    let non_copd = ClassMetrics {
        precision: np,
        recall: nr,
        f1: harmonic(np, nr),
        support: cm.tn + cm.fp,
    };
    let copd = ClassMetrics {
        precision,
        recall,
        f1,
        support: cm.tp + cm.fn_,
    };
    let weighted_f1 = (copd.support as f64 * copd.f1 + non_copd.support as f64 * non_copd.f1) / n as f64;
    Ok(MetricsReport {
        accuracy,
        precision,
        recall,
        f1,
        weighted_f1,
        auc: None,
        non_copd,
        copd,
        confusion: *cm,
        degenerate: flags,
    })
}

/// Mann-Whitney AUC: the probability that a random positive scores above a
/// random negative, ties counting one half.
pub fn roc_auc(scores: &[f64], labels: &[usize]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(EvalError::LengthMismatch(scores.len(), labels.len()));
    }
    let pos = BinaryLabel::Copd.class_index();
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Average ranks over tie groups, then the rank-sum statistic.
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            if labels[k] == pos {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let n_pos = labels.iter().filter(|&&l| l == pos).count() as f64;
    let n_neg = labels.len() as f64 - n_pos;
    if n_pos == 0.0 || n_neg == 0.0 {
        return Err(EvalError::SingleClass);
    }
    Ok((rank_sum_pos - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg))
}

/// Metrics from per-item COPD probabilities: class = copd when `p > 0.5`.
pub fn evaluate_scores(scores: &[f64], labels: &[usize]) -> Result<MetricsReport> {
    let preds: Vec<usize> = scores
        .iter()
        .map(|&p| {
            if p > 0.5 {
                BinaryLabel::Copd.class_index()
            } else {
                BinaryLabel::NonCopd.class_index()
            }
        })
        .collect();
    let mut report = metrics(&confusion(&preds, labels)?)?;
    report.auc = roc_auc(scores, labels).ok();
    Ok(report)
}
