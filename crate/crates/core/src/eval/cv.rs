use serde::{Deserialize, Serialize};

use super::metrics::{evaluate_scores, metrics, ConfusionMatrix, MetricsReport};
use super::{EvalError, Result};
use crate::dataset::{make_folds, DatasetIndex, Fold};

/// What one fold's model produced on its validation subset, in the order of
/// `Fold::validation`.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldOutcome {
    pub labels: Vec<usize>,
    pub p_copd: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub seed: u64,
    pub n_train: usize,
    pub n_validation: usize,
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub weighted_f1: f64,
    /// Over the folds where AUC was defined; `None` if it never was.
    pub auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub k: usize,
    pub folds: Vec<FoldReport>,
    pub mean: MetricSummary,
    /// Population standard deviation across folds.
    pub std: MetricSummary,
    pub pooled: ConfusionMatrix,
    pub pooled_metrics: MetricsReport,
}

fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}

fn summarize(folds: &[FoldReport]) -> (MetricSummary, MetricSummary) {
    let pick = |f: fn(&MetricsReport) -> f64| -> (f64, f64) {
        let v: Vec<f64> = folds.iter().map(|r| f(&r.metrics)).collect();
        mean_std(&v).expect("at least one fold")
    };
    let acc = pick(|m| m.accuracy);
    let prec = pick(|m| m.precision);
    let rec = pick(|m| m.recall);
    let f1 = pick(|m| m.f1);
    let wf1 = pick(|m| m.weighted_f1);
    let aucs: Vec<f64> = folds.iter().filter_map(|r| r.metrics.auc).collect();
    let auc = mean_std(&aucs);
    (
        MetricSummary {
            accuracy: acc.0,
            precision: prec.0,
            recall: rec.0,
            f1: f1.0,
            weighted_f1: wf1.0,
            auc: auc.map(|a| a.0),
        },
        MetricSummary {
            accuracy: acc.1,
            precision: prec.1,
            recall: rec.1,
            f1: f1.1,
            weighted_f1: wf1.1,
            auc: auc.map(|a| a.1),
        },
    )
}

/// k-fold cross-validation over the training index only.
///
/// `run_fold(fold_number, fold, fold_seed)` trains a fresh model on
/// `fold.train` and scores `fold.validation`; the fold seed is `seed + fold_number`.
/// The test split never enters this function.
pub fn cross_validate<F>(train_index: &DatasetIndex, k: usize, seed: u64, mut run_fold: F) -> Result<CvReport>
where
    F: FnMut(usize, &Fold, u64) -> Result<FoldOutcome>,
{
    let folds = make_folds(train_index, k, seed)?;
    let mut reports = Vec::with_capacity(k);
    let mut pooled = ConfusionMatrix::default();
    for (i, fold) in folds.iter().enumerate() {
        let fold_seed = seed.wrapping_add(i as u64);
        let out = run_fold(i, fold, fold_seed)?;
        if out.p_copd.len() != fold.validation.len() {
            return Err(EvalError::LengthMismatch(out.p_copd.len(), fold.validation.len()));
        }
        let m = evaluate_scores(&out.p_copd, &out.labels)?;
        pooled = pooled.merge(&m.confusion);
        reports.push(FoldReport {
            fold: i,
            seed: fold_seed,
            n_train: fold.train.len(),
            n_validation: fold.validation.len(),
            metrics: m,
        });
    }
    let (mean, std) = summarize(&reports);
    Ok(CvReport {
        k,
        folds: reports,
        mean,
        std,
        pooled,
        pooled_metrics: metrics(&pooled)?,
    })
}
