//! Acoustic feature extraction at a fixed 40 x 862 geometry.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{AudioClip, DEFAULT_SAMPLE_RATE};

mod cache;
mod chroma;
mod filter;
mod mel;
mod stft;

pub use cache::{read_feature_file, write_feature_file, FeatureCache, CACHE_VERSION};
pub use chroma::{cens_from_chroma, chroma, pitch_class, pseudo_cqt, ChromaVariant, C1_HZ};
pub use filter::{bandpass_filter, butter_bandpass, log_compress, Sos};
pub use mel::{
    dct_ortho, hz_to_mel, idct_ortho, mel_filterbank, mel_power, mel_spectrogram, mel_to_hz, mfcc,
    FilterBank, LOG_FLOOR,
};
pub use stft::{stft, Spectrogram, StftParams};

pub type Result<T, E = FeatureError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("clip has no samples")]
    EmptyClip,
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("invalid band: {0}")]
    InvalidBand(String),
    #[error("negative input {0}")]
    NegativeInput(f64),
    #[error("clip is not standardized: expected {expected} samples at {rate} Hz, got {got}")]
    NotStandardized { expected: usize, rate: u32, got: usize },
    #[error("{kind} matrix has shape {got:?}, expected {expected:?}")]
    ShapeViolation {
        kind: FeatureKind,
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("{0} matrix contains non-finite values")]
    NonFinite(FeatureKind),
    #[error("corrupt feature file {path}: {reason}")]
    CorruptCache { path: PathBuf, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl FeatureError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        FeatureError::Io {
            path: path.into(),
            source,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Mfcc,
    MelSpectrogram,
    ChromaStft,
    ChromaCqt,
    ChromaCens,
}

impl FeatureKind {
    pub const ALL: [FeatureKind; 5] = [
        FeatureKind::Mfcc,
        FeatureKind::MelSpectrogram,
        FeatureKind::ChromaStft,
        FeatureKind::ChromaCqt,
        FeatureKind::ChromaCens,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            FeatureKind::Mfcc => "mfcc",
            FeatureKind::MelSpectrogram => "mel",
            FeatureKind::ChromaStft => "chroma_stft",
            FeatureKind::ChromaCqt => "chroma_cqt",
            FeatureKind::ChromaCens => "chroma_cens",
        }
    }
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FeatureKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let s = s.trim().to_ascii_lowercase();
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .or(match s.as_str() {
                "mel_spectrogram" | "melspectrogram" => Some(FeatureKind::MelSpectrogram),
                _ => None,
            })
            .ok_or_else(|| format!("unknown feature kind {s:?}"))
    }
}

/// A feature matrix: rows are bands/coefficients/classes, columns are frames.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub kind: FeatureKind,
    pub values: Array2<f32>,
    /// Recording key the matrix was computed from, when known.
    pub source: Option<String>,
}

impl FeatureMatrix {
    pub fn new(kind: FeatureKind, values: Array2<f32>) -> Self {
        FeatureMatrix {
            kind,
            values,
            source: None,
        }
    }

    pub fn with_source(mut self, source: impl Into<String>) -> Self {
        self.source = Some(source.into());
        self
    }

    pub fn shape(&self) -> (usize, usize) {
        self.values.dim()
    }
}

/// Everything that determines a feature matrix besides the audio itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureParams {
    pub sample_rate: u32,
    pub duration_seconds: f64,
    pub n_fft: usize,
    pub hop: usize,
    /// Rows of every feature kind (mel bands, MFCCs, chroma classes).
    pub n_rows: usize,
    /// Optional zero-phase band-pass `(low, high, order)` applied before the DSP.
    pub bandpass: Option<(f64, f64, usize)>,
}

impl Default for FeatureParams {
    fn default() -> Self {
        FeatureParams {
            sample_rate: DEFAULT_SAMPLE_RATE,
            duration_seconds: 20.0,
            n_fft: 2048,
            hop: 512,
            n_rows: 40,
            bandpass: None,
        }
    }
}

impl FeatureParams {
    pub fn stft_params(&self) -> StftParams {
        StftParams {
            n_fft: self.n_fft,
            window_length: self.n_fft,
            hop: self.hop,
            centered: true,
        }
    }

    pub fn expected_samples(&self) -> usize {
        (self.duration_seconds * self.sample_rate as f64).round() as usize
    }

    /// Output shape shared by all kinds.
    pub fn shape(&self) -> (usize, usize) {
        (
            self.n_rows,
            self.stft_params().frame_count(self.expected_samples()),
        )
    }

    /// Stable text form hashed into cache keys.
    pub fn canonical(&self, kind: FeatureKind) -> String {
        let bp = match self.bandpass {
            Some((lo, hi, order)) => format!("{lo:?}-{hi:?}-{order}"),
            None => "none".into(),
        };
        format!(
            "kind={};sr={};dur={:?};n_fft={};hop={};rows={};bandpass={bp};v={}",
            kind.name(),
            self.sample_rate,
            self.duration_seconds,
            self.n_fft,
            self.hop,
            self.n_rows,
            CACHE_VERSION
        )
    }
}

/// Run the pipeline for `kind` on a standardized clip and check the result
/// has the configured shape and only finite values.
pub fn extract_features(
    clip: &AudioClip,
    kind: FeatureKind,
    params: &FeatureParams,
) -> Result<FeatureMatrix> {
    let expected = params.expected_samples();
    if clip.sample_rate() != params.sample_rate || clip.len() != expected {
        return Err(FeatureError::NotStandardized {
            expected,
            rate: params.sample_rate,
            got: clip.len(),
        });
    }
    let filtered;
    let clip = match params.bandpass {
        Some((lo, hi, order)) => {
            filtered = bandpass_filter(clip, lo, hi, order)?;
            &filtered
        }
        None => clip,
    };
    let sp = params.stft_params();
    let n = params.n_rows;
    let m = match kind {
        FeatureKind::Mfcc => mfcc(clip, n, n, &sp)?,
        FeatureKind::MelSpectrogram => mel_spectrogram(clip, n, &sp)?,
        FeatureKind::ChromaStft => chroma(clip, ChromaVariant::Stft, n, &sp)?,
        FeatureKind::ChromaCqt => chroma(clip, ChromaVariant::Cqt, n, &sp)?,
        FeatureKind::ChromaCens => chroma(clip, ChromaVariant::Cens, n, &sp)?,
    };
    if m.shape() != params.shape() {
        return Err(FeatureError::ShapeViolation {
            kind,
            expected: params.shape(),
            got: m.shape(),
        });
    }
    if m.values.iter().any(|v| !v.is_finite()) {
        return Err(FeatureError::NonFinite(kind));
    }
    Ok(m)
}
