use std::path::Path;

use super::{resample, DatasetError, Result};

/// Working sample rate. With a hop of 512 a 20 s clip spans exactly 862 frames.
pub const DEFAULT_SAMPLE_RATE: u32 = 22050;

/// Mono waveform with its sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    samples: Vec<f32>,
    sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(DatasetError::InvalidClip("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(DatasetError::InvalidClip(format!(
                "non-finite sample at index {i}"
            )));
        }
        Ok(AudioClip { samples, sample_rate })
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f32> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub(crate) fn with_samples(&self, samples: Vec<f32>) -> AudioClip {
        AudioClip {
            samples,
            sample_rate: self.sample_rate,
        }
    }
}

/// Decodes a 16- or 24-bit PCM WAV, averages channels to mono, scales to
/// `[-1, 1]` and resamples to `target_sample_rate`.
pub fn load_audio(path: impl AsRef<Path>, target_sample_rate: u32) -> Result<AudioClip> {
    let path = path.as_ref();
    let corrupt = |reason: String| DatasetError::CorruptFile {
        path: path.to_path_buf(),
        reason,
    };
    let reader = hound::WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) => DatasetError::io(path, io),
        hound::Error::Unsupported => DatasetError::UnsupportedEncoding("unsupported WAV".into()),
        other => corrupt(other.to_string()),
    })?;
    let spec = reader.spec();
    if spec.sample_format != hound::SampleFormat::Int
        || !(spec.bits_per_sample == 16 || spec.bits_per_sample == 24)
    {
        return Err(DatasetError::UnsupportedEncoding(format!(
            "{:?} {}-bit",
            spec.sample_format, spec.bits_per_sample
        )));
    }
    if spec.channels == 0 || spec.sample_rate == 0 {
        return Err(corrupt("zero channels or sample rate".into()));
    }
    let scale = 1.0 / (1u32 << (spec.bits_per_sample - 1)) as f64;
    let channels = spec.channels as usize;
    let raw: Vec<i32> = reader
        .into_samples::<i32>()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| corrupt(e.to_string()))?;
    if raw.len() % channels != 0 {
        return Err(corrupt("truncated frame".into()));
    }
    let mono: Vec<f32> = raw
        .chunks_exact(channels)
        .map(|frame| {
            let sum: f64 = frame.iter().map(|&s| s as f64).sum();
            (sum * scale / channels as f64) as f32
        })
        .collect();
    let samples = resample(&mono, spec.sample_rate as f64, target_sample_rate as f64);
    AudioClip::new(samples, target_sample_rate)
}

/// Pads with zeros or truncates at the tail to exactly
/// `round(target_seconds * sample_rate)` samples.
pub fn standardize_duration(clip: &AudioClip, target_seconds: f64) -> AudioClip {
    let target = (target_seconds * clip.sample_rate as f64).round() as usize;
    let mut samples = clip.samples.clone();
    samples.resize(target, 0.0);
    clip.with_samples(samples)
}

/// Writes a mono 16-bit PCM WAV. Samples are clamped to `[-1, 1]`.
pub fn write_wav_i16(path: impl AsRef<Path>, samples: &[f32], sample_rate: u32) -> Result<()> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let to_err = |e: hound::Error| match e {
        hound::Error::IoError(io) => DatasetError::io(path, io),
        other => DatasetError::CorruptFile {
            path: path.to_path_buf(),
            reason: other.to_string(),
        },
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(to_err)?;
    for &s in samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        writer.write_sample(v).map_err(to_err)?;
    }
    writer.finalize().map_err(to_err)
}
