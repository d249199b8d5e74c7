//! A small CNN stack: NHWC tensors, layer ops with hand-written backward
//! passes, Adam, a seeded training loop, and a binary model format.

use std::path::PathBuf;

use thiserror::Error;

mod adam;
pub mod gradcheck;
mod io;
mod model;
pub mod ops;
mod tensor;
mod train;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use io::{decode_model, encode_model, load_model, save_model, MODEL_VERSION};
pub use model::{
    init_params, Architecture, Cache, LayerParams, LayerSpec, ModelConfig, Network, ParamSet, DEFAULT_INPUT,
};
pub use ops::{Mode, Padding};
pub use tensor::{Scalar, Tensor};
pub use train::{
    evaluate, predict_probabilities, train, EpochRecord, Evaluation, LabeledSet, TrainConfig, TrainHistory,
};

pub type Result<T, E = NnError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("batch norm needs at least 2 samples in training mode, got {0}")]
    BatchTooSmall(usize),
    #[error("label {0} is not a valid class")]
    InvalidLabel(usize),
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("input has shape {got:?}, expected {expected:?}")]
    ShapeViolation { expected: Vec<usize>, got: Vec<usize> },
    #[error("corrupt model file: {0}")]
    CorruptModel(String),
    #[error("model file version {found}, expected {expected}")]
    VersionMismatch { found: u16, expected: u16 },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}
