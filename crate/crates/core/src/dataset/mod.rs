//! ICBHI-format dataset ingestion.
//!
//! Recordings are named `patient_index_location_mode_equipment.wav` with a
//! sibling `.txt` file of cycle annotations, and one diagnosis table maps
//! patient ids to a diagnosis. This module decodes those files, builds an
//! index, splits it into train/test and cross-validation folds, and plans
//! augmentation for the minority class.

mod annotations;
mod audio;
mod augment;
mod diagnosis;
mod filename;
mod index;
mod resample;
mod split;

use std::path::PathBuf;

use thiserror::Error;

pub use annotations::{parse_cycle_annotations, parse_cycle_annotations_str, CycleAnnotation};
pub use audio::{load_audio, standardize_duration, write_wav_i16, AudioClip, DEFAULT_SAMPLE_RATE};
pub use augment::{
    augment_clip, plan_balance, AugmentMethod, AugmentationSpec, BalancePlan, BALANCE_TARGET, SHIFT_RANGE_S,
};
pub use diagnosis::{parse_diagnosis_table, parse_diagnosis_table_str, BinaryLabel, Diagnosis};
pub use filename::{AcquisitionMode, ChestLocation, RecordingMeta};
pub use index::{
    build_index, find_diagnosis_table, read_manifest, write_manifest, DatasetIndex, IndexEntry, Provenance,
};
pub use resample::resample;
#[cfg(test)]
pub(crate) use split::tests::synthetic_index;
pub use split::{make_folds, split_train_test, Fold, SplitStrategy, TrainTestSplit};

pub type Result<T, E = DatasetError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("malformed recording filename {stem:?}: {reason}")]
    MalformedFilename { stem: String, reason: String },
    #[error("malformed row at line {line}: {reason}")]
    MalformedRow { line: usize, reason: String },
    #[error("patient {patient} has conflicting diagnoses {first} and {second}")]
    ConflictingDiagnosis {
        patient: u32,
        first: Diagnosis,
        second: Diagnosis,
    },
    #[error("unsupported audio encoding: {0}")]
    UnsupportedEncoding(String),
    #[error("corrupt audio file {path}: {reason}")]
    CorruptFile { path: PathBuf, reason: String },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("too few entries: {0}")]
    TooFewEntries(String),
    #[error("fold count must be at least 2, got {0}")]
    InvalidK(usize),
    #[error("invalid split fraction {0}")]
    InvalidFraction(f64),
    #[error("invalid augmentation spec: {0}")]
    InvalidSpec(String),
    #[error("no diagnosis table found for {0}")]
    MissingDiagnosisTable(PathBuf),
    #[error("no recordings found in {0}")]
    EmptyDataset(PathBuf),
    #[error("patient {0} is missing from the diagnosis table")]
    MissingDiagnosis(u32),
    #[error("invalid audio clip: {0}")]
    InvalidClip(String),
    #[error("manifest line {line}: {reason}")]
    Manifest { line: usize, reason: String },
}

impl DatasetError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DatasetError::Io {
            path: path.into(),
            source,
        }
    }
}
