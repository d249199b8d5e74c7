//! `key = value` run configuration.
//!
//! Lines starting with `#` and trailing `# ...` are comments. Every key is
//! optional; the defaults reproduce the reference training regime, so a file
//! containing only `dataset_dir = ...` is enough for `train`.

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use copdnet::dataset::{SplitStrategy, DEFAULT_SAMPLE_RATE, SHIFT_RANGE_S};
use copdnet::features::{FeatureKind, FeatureParams};
use copdnet::nn::{AdamConfig, Architecture, ModelConfig, TrainConfig, DEFAULT_INPUT};
use copdnet::segmentation::{HeightMode, OffsetPair, SegmentParams};
use serde::Serialize;
use thiserror::Error;

/// Environment variable that overrides `cache_dir`.
pub const CACHE_DIR_ENV: &str = "COPDNET_CACHE_DIR";

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: unknown key {key:?}")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: key {key:?} given twice")]
    DuplicateKey { line: usize, key: String },
    #[error("{key}: cannot parse {value:?}: {reason}")]
    InvalidValue {
        key: String,
        value: String,
        reason: String,
    },
    #[error("{key}: {reason}")]
    OutOfRange { key: String, reason: String },
    #[error("cannot read config {path}: {reason}")]
    Read { path: PathBuf, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub dataset_dir: Option<PathBuf>,
    pub diagnosis_table: Option<PathBuf>,
    pub cache_dir: PathBuf,
    pub out_dir: PathBuf,
    pub feature_kind: FeatureKind,
    pub sample_rate: u32,
    pub duration_seconds: f64,
    /// Band-pass cutoffs in Hz; the filter is off unless both are positive.
    pub bandpass_low_hz: f64,
    pub bandpass_high_hz: f64,
    pub bandpass_order: usize,
    pub test_fraction: f64,
    pub split_strategy: SplitStrategy,
    pub k: usize,
    pub seed: u64,
    pub architecture: Architecture,
    pub gapnet_last_filters: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub micro_batch: usize,
    pub augment: bool,
    pub standardize_input: bool,
    /// Use only the first N recordings in path order; 0 means all.
    pub max_recordings: usize,
    pub segment: SegmentParams,
    pub offset_start_s: f64,
    pub offset_end_s: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset_dir: None,
            diagnosis_table: None,
            cache_dir: PathBuf::from("copdnet-cache"),
            out_dir: PathBuf::from("copdnet-out"),
            feature_kind: FeatureKind::Mfcc,
            sample_rate: DEFAULT_SAMPLE_RATE,
            duration_seconds: 20.0,
            bandpass_low_hz: 0.0,
            bandpass_high_hz: 0.0,
            bandpass_order: 4,
            test_fraction: 0.10,
            split_strategy: SplitStrategy::RecordingLevel,
            k: 10,
            seed: 42,
            architecture: Architecture::Gapnet,
            gapnet_last_filters: 128,
            learning_rate: 1e-3,
            batch_size: 64,
            epochs: 14,
            micro_batch: 16,
            augment: true,
            standardize_input: true,
            max_recordings: 0,
            segment: SegmentParams::default(),
            offset_start_s: 0.0,
            offset_end_s: 0.0,
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::InvalidValue {
        key: key.to_string(),
        value: value.to_string(),
        reason: e.to_string(),
    })
}

fn parse_bool(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(ConfigError::InvalidValue {
            key: key.to_string(),
            value: value.to_string(),
            reason: "expected true or false".into(),
        }),
    }
}

fn parse_strategy(key: &str, value: &str) -> Result<SplitStrategy, ConfigError> {
    match value.to_ascii_lowercase().as_str() {
        "recording_level" | "recording" => Ok(SplitStrategy::RecordingLevel),
        "patient_grouped" | "patient" => Ok(SplitStrategy::PatientGrouped),
        _ => Err(ConfigError::InvalidValue {
            key: key.to_string(),
            value: value.to_string(),
            reason: "expected recording_level or patient_grouped".into(),
        }),
    }
}

fn parse_height_mode(key: &str, value: &str) -> Result<HeightMode, ConfigError> {
    match value.to_ascii_lowercase().as_str() {
        "prominence" => Ok(HeightMode::Prominence),
        "absolute" => Ok(HeightMode::Absolute),
        _ => Err(ConfigError::InvalidValue {
            key: key.to_string(),
            value: value.to_string(),
            reason: "expected prominence or absolute".into(),
        }),
    }
}

fn out_of_range(key: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::OutOfRange {
        key: key.to_string(),
        reason: reason.into(),
    }
}

impl RunConfig {
    /// Parse config text. Relative paths are resolved against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<RunConfig, ConfigError> {
        let mut cfg = RunConfig::default();
        let mut seen = HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or(ConfigError::Syntax { line: line_no })?;
            let key = key.trim();
            let value = value.trim().trim_matches('"');
            if key.is_empty() {
                return Err(ConfigError::Syntax { line: line_no });
            }
            if !seen.insert(key.to_string()) {
                return Err(ConfigError::DuplicateKey {
                    line: line_no,
                    key: key.to_string(),
                });
            }
            let path = || base.join(value);
            match key {
                "dataset_dir" => cfg.dataset_dir = Some(path()),
                "diagnosis_table" => cfg.diagnosis_table = Some(path()),
                "cache_dir" => cfg.cache_dir = path(),
                "out_dir" => cfg.out_dir = path(),
                "feature_kind" => cfg.feature_kind = parse_value(key, value)?,
                "sample_rate" => cfg.sample_rate = parse_value(key, value)?,
                "duration_seconds" => cfg.duration_seconds = parse_value(key, value)?,
                "bandpass_low_hz" => cfg.bandpass_low_hz = parse_value(key, value)?,
                "bandpass_high_hz" => cfg.bandpass_high_hz = parse_value(key, value)?,
                "bandpass_order" => cfg.bandpass_order = parse_value(key, value)?,
                "test_fraction" => cfg.test_fraction = parse_value(key, value)?,
                "split_strategy" => cfg.split_strategy = parse_strategy(key, value)?,
                "k" => cfg.k = parse_value(key, value)?,
                "seed" => cfg.seed = parse_value(key, value)?,
                "architecture" => cfg.architecture = parse_value(key, value)?,
                "gapnet_last_filters" => cfg.gapnet_last_filters = parse_value(key, value)?,
                "learning_rate" => cfg.learning_rate = parse_value(key, value)?,
                "batch_size" => cfg.batch_size = parse_value(key, value)?,
                "epochs" => cfg.epochs = parse_value(key, value)?,
                "micro_batch" => cfg.micro_batch = parse_value(key, value)?,
                "augment" => cfg.augment = parse_bool(key, value)?,
                "standardize_input" => cfg.standardize_input = parse_bool(key, value)?,
                "max_recordings" => cfg.max_recordings = parse_value(key, value)?,
                "envelope_window_s" => cfg.segment.window_seconds = parse_value(key, value)?,
                "gaussian_sigma_s" => cfg.segment.sigma_seconds = parse_value(key, value)?,
                "min_peak_distance_s" => cfg.segment.min_distance_seconds = parse_value(key, value)?,
                "min_prominence_fraction" => cfg.segment.min_prominence_fraction = parse_value(key, value)?,
                "relative_height" => cfg.segment.relative_height = parse_value(key, value)?,
                "height_mode" => cfg.segment.height_mode = parse_height_mode(key, value)?,
                "offset_start_s" => cfg.offset_start_s = parse_value(key, value)?,
                "offset_end_s" => cfg.offset_end_s = parse_value(key, value)?,
                _ => {
                    return Err(ConfigError::UnknownKey {
                        line: line_no,
                        key: key.to_string(),
                    })
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        RunConfig::parse(&text, base)
    }

    /// Apply the cache-root override from `lookup(CACHE_DIR_ENV)`.
    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) {
        if let Some(dir) = lookup(CACHE_DIR_ENV).filter(|d| !d.is_empty()) {
            self.cache_dir = PathBuf::from(dir);
        }
    }

    /// Range checks for every numeric field; run before any file is written.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.sample_rate < 4000 || self.sample_rate > 192_000 {
            return Err(out_of_range("sample_rate", "must be within 4000..=192000 Hz"));
        }
        if !(self.duration_seconds.is_finite()
            && self.duration_seconds > 0.5
            && self.duration_seconds <= 600.0)
        {
            return Err(out_of_range("duration_seconds", "must be within (0.5, 600]"));
        }
        if self.augment && self.duration_seconds < SHIFT_RANGE_S.1 {
            return Err(out_of_range(
                "duration_seconds",
                format!(
                    "augmentation shifts clips by up to {} s; use longer clips or augment = false",
                    SHIFT_RANGE_S.1
                ),
            ));
        }
        let bp = (self.bandpass_low_hz, self.bandpass_high_hz);
        if bp != (0.0, 0.0) {
            let nyquist = self.sample_rate as f64 / 2.0;
            if !(bp.0 > 0.0 && bp.0 < bp.1 && bp.1 < nyquist) {
                return Err(out_of_range(
                    "bandpass_low_hz",
                    format!("need 0 < low < high < {nyquist}, or both 0 to disable"),
                ));
            }
            if !(1..=10).contains(&self.bandpass_order) {
                return Err(out_of_range("bandpass_order", "must be within 1..=10"));
            }
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(out_of_range("test_fraction", "must be within (0, 1)"));
        }
        if self.k < 2 {
            return Err(out_of_range("k", "at least 2 folds"));
        }
        if self.architecture == Architecture::Custom {
            return Err(out_of_range("architecture", "gapnet or blocknet"));
        }
        if self.gapnet_last_filters == 0 {
            return Err(out_of_range("gapnet_last_filters", "must be positive"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0 && self.learning_rate < 1.0) {
            return Err(out_of_range("learning_rate", "must be within (0, 1)"));
        }
        if self.batch_size == 0 {
            return Err(out_of_range("batch_size", "must be positive"));
        }
        if self.epochs == 0 {
            return Err(out_of_range("epochs", "must be positive"));
        }
        if self.micro_batch == 0 {
            return Err(out_of_range("micro_batch", "must be positive"));
        }
        self.segment
            .validate()
            .map_err(|e| out_of_range("segmentation", e.to_string()))?;
        for (key, v) in [
            ("offset_start_s", self.offset_start_s),
            ("offset_end_s", self.offset_end_s),
        ] {
            if !(v.is_finite() && v.abs() <= 2.0) {
                return Err(out_of_range(key, "must be within [-2, 2] s"));
            }
        }
        Ok(())
    }

    pub fn feature_params(&self) -> FeatureParams {
        FeatureParams {
            sample_rate: self.sample_rate,
            duration_seconds: self.duration_seconds,
            bandpass: (self.bandpass_low_hz > 0.0).then_some((
                self.bandpass_low_hz,
                self.bandpass_high_hz,
                self.bandpass_order,
            )),
            ..FeatureParams::default()
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        let (rows, cols) = self.feature_params().shape();
        let input = [rows, cols, DEFAULT_INPUT[2]];
        match self.architecture {
            Architecture::Blocknet => ModelConfig::blocknet(input),
            _ => ModelConfig::gapnet(input, self.gapnet_last_filters),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            adam: AdamConfig {
                lr: self.learning_rate,
                ..AdamConfig::default()
            },
            batch_size: self.batch_size,
            epochs: self.epochs,
            micro_batch: self.micro_batch,
        }
    }

    pub fn offsets(&self) -> OffsetPair {
        OffsetPair {
            delta_start: self.offset_start_s,
            delta_end: self.offset_end_s,
        }
    }
}
