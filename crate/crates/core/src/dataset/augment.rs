//! Label-preserving audio augmentation used to balance the classes.

use std::fmt;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{resample, AudioClip, BinaryLabel, DatasetError, DatasetIndex, Result};

/// After balancing, the minority class holds at least this fraction of the majority.
pub const BALANCE_TARGET: f64 = 0.9;

/// Range of planned time-shift magnitudes in seconds; clips must be at least the upper bound long.
pub const SHIFT_RANGE_S: (f64, f64) = (0.5, 5.0);
const SNR_RANGE_DB: (f64, f64) = (10.0, 40.0);
const STRETCH_RANGE: (f64, f64) = (0.8, 1.2);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentMethod {
    /// Circular shift by `magnitude` seconds.
    TimeShift,
    /// White Gaussian noise at `magnitude` dB SNR.
    AdditiveNoise,
    /// Playback-rate change by factor `magnitude`, re-standardized to the input length.
    TimeStretch,
}

impl AugmentMethod {
    const ROUND_ROBIN: [AugmentMethod; 3] = [
        AugmentMethod::TimeShift,
        AugmentMethod::AdditiveNoise,
        AugmentMethod::TimeStretch,
    ];
}

impl fmt::Display for AugmentMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AugmentMethod::TimeShift => "shift",
            AugmentMethod::AdditiveNoise => "noise",
            AugmentMethod::TimeStretch => "stretch",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentationSpec {
    pub method: AugmentMethod,
    pub magnitude: f64,
    pub seed: u64,
}

impl AugmentationSpec {
    /// Filename-safe token identifying the spec.
    pub fn key(&self) -> String {
        format!("{}{:+.6}-s{}", self.method, self.magnitude, self.seed)
    }

    pub fn validate(&self, clip_seconds: f64) -> Result<()> {
        let m = self.magnitude;
        let ok = m.is_finite()
            && match self.method {
                AugmentMethod::TimeShift => m.abs() < clip_seconds,
                AugmentMethod::AdditiveNoise => (SNR_RANGE_DB.0..=SNR_RANGE_DB.1).contains(&m),
                AugmentMethod::TimeStretch => (STRETCH_RANGE.0..=STRETCH_RANGE.1).contains(&m),
            };
        if ok {
            Ok(())
        } else {
            Err(DatasetError::InvalidSpec(format!(
                "{} magnitude {m} out of range",
                self.method
            )))
        }
    }
}

/// Applies one augmentation. The output has the input's length and rate,
/// and is a pure function of `(clip, spec)`.
pub fn augment_clip(clip: &AudioClip, spec: &AugmentationSpec) -> Result<AudioClip> {
    spec.validate(clip.duration_seconds())?;
    let x = clip.samples();
    let n = x.len();
    if n == 0 {
        return Err(DatasetError::InvalidClip("empty clip".into()));
    }
    let sr = clip.sample_rate() as f64;
    let out = match spec.method {
        AugmentMethod::TimeShift => {
            let shift = ((spec.magnitude * sr).round() as i64).rem_euclid(n as i64) as usize;
            let mut out = x.to_vec();
            out.rotate_right(shift);
            out
        }
        AugmentMethod::AdditiveNoise => {
            let power = x.iter().map(|&s| (s as f64).powi(2)).sum::<f64>() / n as f64;
            let sigma = (power / 10f64.powf(spec.magnitude / 10.0)).sqrt();
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            let normal = Normal::new(0.0, sigma).expect("sigma is finite and >= 0");
            x.iter()
                .map(|&s| (s as f64 + normal.sample(&mut rng)).clamp(-1.0, 1.0) as f32)
                .collect()
        }
        AugmentMethod::TimeStretch => {
            let mut out = resample(x, sr * spec.magnitude, sr);
            out.resize(n, 0.0);
            out
        }
    };
    Ok(clip.with_samples(out))
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BalancePlan {
    /// `(entry index, spec)` pairs; every entry is a minority-class original.
    pub items: Vec<(usize, AugmentationSpec)>,
    /// Set when balancing was impossible (no minority originals).
    pub warning: Option<String>,
}

/// Plans enough augmentations of minority-class originals that the
/// minority reaches [`BALANCE_TARGET`] of the majority. Methods rotate
/// shift → noise → stretch; magnitudes are drawn from `seed`.
pub fn plan_balance(index: &DatasetIndex, seed: u64) -> BalancePlan {
    let mut by_label: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for (i, e) in index.entries().iter().enumerate() {
        if e.provenance.is_original() {
            by_label[e.label.class_index()].push(i);
        }
    }
    let (minority, majority) = if by_label[0].len() <= by_label[1].len() {
        (BinaryLabel::NonCopd, BinaryLabel::Copd)
    } else {
        (BinaryLabel::Copd, BinaryLabel::NonCopd)
    };
    let sources = &by_label[minority.class_index()];
    let major = by_label[majority.class_index()].len();
    let target = (BALANCE_TARGET * major as f64).ceil() as usize;
    if sources.len() >= target {
        return BalancePlan::default();
    }
    if sources.is_empty() {
        return BalancePlan {
            items: Vec::new(),
            warning: Some(format!(
                "no {} originals to augment; classes stay unbalanced",
                minority.name()
            )),
        };
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let items = (0..target - sources.len())
        .map(|i| {
            let method = AugmentMethod::ROUND_ROBIN[i % 3];
            let magnitude = match method {
                AugmentMethod::TimeShift => {
                    let m = rng.random_range(SHIFT_RANGE_S.0..SHIFT_RANGE_S.1);
                    if rng.random::<bool>() {
                        m
                    } else {
                        -m
                    }
                }
                AugmentMethod::AdditiveNoise => rng.random_range(SNR_RANGE_DB.0..SNR_RANGE_DB.1),
                AugmentMethod::TimeStretch => rng.random_range(STRETCH_RANGE.0..STRETCH_RANGE.1),
            };
            let spec = AugmentationSpec {
                method,
                magnitude,
                seed: rng.next_u64(),
            };
            (sources[i % sources.len()], spec)
        })
        .collect();
    BalancePlan { items, warning: None }
}
