//! Binary classification metrics, k-fold aggregation, and report files.

use std::path::PathBuf;

use thiserror::Error;

use crate::dataset::DatasetError;
use crate::features::FeatureError;
use crate::nn::NnError;

mod cv;
mod metrics;
mod report;

pub use cv::{cross_validate, CvReport, FoldOutcome, FoldReport, MetricSummary};
pub use metrics::{
    confusion, evaluate_scores, metrics, roc_auc, ClassMetrics, ConfusionMatrix, MetricsReport,
};
pub use report::{emit_cv_report, emit_history, emit_metrics, history_csv, to_fixed_json, HISTORY_HEADER};

pub type Result<T, E = EvalError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("length mismatch: {0} predictions, {1} labels")]
    LengthMismatch(usize, usize),
    #[error("nothing to evaluate")]
    Empty,
    #[error("confusion matrix is empty")]
    EmptyMatrix,
    #[error("AUC needs both classes present")]
    SingleClass,
    #[error("history has no epochs")]
    EmptyHistory,
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}
