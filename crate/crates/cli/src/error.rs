use std::path::PathBuf;

use copdnet::dataset::DatasetError;
use copdnet::eval::EvalError;
use copdnet::features::FeatureError;
use copdnet::nn::NnError;
use copdnet::segmentation::SegmentationError;
use thiserror::Error;

use crate::config::ConfigError;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Segmentation(#[from] SegmentationError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("cache directory is locked by another run ({0}); remove it if no run is active")]
    Locked(PathBuf),
    #[error("dataset_dir is not set in the config")]
    MissingDatasetDir,
    #[error("model expects input {model:?} but the config produces {config:?}")]
    InputMismatch { model: [usize; 3], config: [usize; 3] },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }
}
