//! Breathing-cycle boundaries from a frequency-weighted energy envelope,
//! with a global start/end offset calibrated against annotations.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{AudioClip, CycleAnnotation};
use crate::features::FeatureError;

mod envelope;
mod nelder_mead;
mod peaks;

pub use envelope::{
    energy_envelope, envelope_from_spectrogram, envelope_stft_params, gaussian_kernel, gaussian_smooth,
    Envelope,
};
pub use nelder_mead::{nelder_mead, NelderMeadOptions, NelderMeadResult};
pub use peaks::{detect_peaks, local_maxima, peak_bases, prominence, HeightMode, Peak};

pub type Result<T, E = SegmentationError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum SegmentationError {
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error("no detected peak could be matched to an annotation")]
    NoMatches,
    #[error("invalid segmentation parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentParams {
    pub window_seconds: f64,
    pub sigma_seconds: f64,
    pub min_distance_seconds: f64,
    pub min_prominence_fraction: f64,
    pub relative_height: f64,
    pub height_mode: HeightMode,
}

impl Default for SegmentParams {
    fn default() -> Self {
        SegmentParams {
            window_seconds: 0.05,
            sigma_seconds: 0.25,
            min_distance_seconds: 1.0,
            min_prominence_fraction: 0.1,
            relative_height: 0.8,
            height_mode: HeightMode::Prominence,
        }
    }
}

impl SegmentParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.window_seconds > 0.0
            && self.sigma_seconds > 0.0
            && self.min_distance_seconds >= 0.0
            && (0.0..=1.0).contains(&self.min_prominence_fraction)
            && (0.0..=1.0).contains(&self.relative_height);
        if ok {
            Ok(())
        } else {
            Err(SegmentationError::InvalidParams(format!("{self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct OffsetPair {
    pub delta_start: f64,
    pub delta_end: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CycleBoundary {
    pub start: f64,
    pub end: f64,
}

/// A detected peak, its bases in seconds, and the annotation it was matched to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub peak_time: f64,
    pub left: f64,
    pub right: f64,
    pub annotation_start: f64,
    pub annotation_end: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub delta_start: f64,
    pub delta_end: f64,
    pub objective_before: f64,
    pub objective_after: f64,
    pub n_matches: usize,
}

impl CalibrationReport {
    pub fn offsets(&self) -> OffsetPair {
        OffsetPair {
            delta_start: self.delta_start,
            delta_end: self.delta_end,
        }
    }
}

/// A peak located in time, with its bases in seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimedPeak {
    pub time: f64,
    pub left: f64,
    pub right: f64,
}

/// Envelope, smoothing, peak picking and base estimation; times in seconds.
pub fn detect_cycle_peaks(clip: &AudioClip, params: &SegmentParams) -> Result<Vec<TimedPeak>> {
    params.validate()?;
    let env = gaussian_smooth(
        &energy_envelope(clip, params.window_seconds)?,
        params.sigma_seconds,
    );
    Ok(
        detect_peaks(&env, params.min_distance_seconds, params.min_prominence_fraction)
            .iter()
            .map(|p| {
                let (l, r) = peak_bases(&env, p, params.relative_height, params.height_mode);
                TimedPeak {
                    time: env.time_of(p.index as f64),
                    left: env.time_of(l),
                    right: env.time_of(r),
                }
            })
            .collect(),
    )
}

/// One-to-one matching of peaks to annotation midpoints. Each annotation
/// proposes its nearest peak (earlier peak on ties); a peak proposed more than
/// once keeps the closest annotation (earlier annotation on ties). Returns
/// `(peak, annotation)` index pairs ordered by annotation.
pub fn match_peaks(peak_times: &[f64], annotation_midpoints: &[f64]) -> Vec<(usize, usize)> {
    if peak_times.is_empty() {
        return Vec::new();
    }
    let mut best: Vec<Option<(usize, f64)>> = vec![None; peak_times.len()];
    for (a, &mid) in annotation_midpoints.iter().enumerate() {
        let (p, d) =
            peak_times
                .iter()
                .map(|t| (t - mid).abs())
                .enumerate()
                .fold(
                    (0, f64::INFINITY),
                    |acc, (i, d)| if d < acc.1 { (i, d) } else { acc },
                );
        match best[p] {
            Some((_, bd)) if bd <= d => {}
            _ => best[p] = Some((a, d)),
        }
    }
    let mut pairs: Vec<(usize, usize)> = best
        .iter()
        .enumerate()
        .filter_map(|(p, b)| b.map(|(a, _)| (p, a)))
        .collect();
    pairs.sort_by_key(|&(_, a)| a);
    pairs
}

/// Match one recording's detected peaks to its annotations.
pub fn collect_matches(peaks: &[TimedPeak], annotations: &[CycleAnnotation]) -> Vec<MatchedPair> {
    let times: Vec<f64> = peaks.iter().map(|p| p.time).collect();
    let mids: Vec<f64> = annotations.iter().map(|a| a.midpoint()).collect();
    match_peaks(&times, &mids)
        .into_iter()
        .map(|(p, a)| MatchedPair {
            peak_time: peaks[p].time,
            left: peaks[p].left,
            right: peaks[p].right,
            annotation_start: annotations[a].start,
            annotation_end: annotations[a].end,
        })
        .collect()
}

/// Mean absolute start error plus mean absolute end error.
pub fn calibration_objective(pairs: &[MatchedPair], offsets: OffsetPair) -> f64 {
    let n = pairs.len() as f64;
    let start: f64 = pairs
        .iter()
        .map(|p| (p.left + offsets.delta_start - p.annotation_start).abs())
        .sum();
    let end: f64 = pairs
        .iter()
        .map(|p| (p.right + offsets.delta_end - p.annotation_end).abs())
        .sum();
    start / n + end / n
}

/// Global offsets minimizing [`calibration_objective`] over the pooled pairs.
pub fn calibrate_offsets(pairs: &[MatchedPair]) -> Result<CalibrationReport> {
    if pairs.is_empty() {
        return Err(SegmentationError::NoMatches);
    }
    let objective = |p: &[f64]| {
        calibration_objective(
            pairs,
            OffsetPair {
                delta_start: p[0],
                delta_end: p[1],
            },
        )
    };
    let result = nelder_mead(objective, &[0.0, 0.0], &NelderMeadOptions::default());
    Ok(CalibrationReport {
        delta_start: result.x[0],
        delta_end: result.x[1],
        objective_before: objective(&[0.0, 0.0]),
        objective_after: result.value,
        n_matches: pairs.len(),
    })
}

/// Apply offsets, clamp to the clip, and make boundaries non-crossing:
/// overlapping neighbours are split at the midpoint of the overlap and
/// cycles left with `start >= end` are dropped.
pub fn boundaries_from_peaks(peaks: &[TimedPeak], offsets: OffsetPair, duration: f64) -> Vec<CycleBoundary> {
    let mut cycles: Vec<CycleBoundary> = peaks
        .iter()
        .map(|p| CycleBoundary {
            start: (p.left + offsets.delta_start).clamp(0.0, duration),
            end: (p.right + offsets.delta_end).clamp(0.0, duration),
        })
        .collect();
    cycles.sort_by(|a, b| a.start.total_cmp(&b.start).then(a.end.total_cmp(&b.end)));
    for i in 1..cycles.len() {
        if cycles[i - 1].end > cycles[i].start {
            let mid = 0.5 * (cycles[i - 1].end + cycles[i].start);
            cycles[i - 1].end = mid;
            cycles[i].start = mid;
        }
    }
    cycles.retain(|c| c.start < c.end);
    cycles
}

pub fn segment_cycles(
    clip: &AudioClip,
    offsets: OffsetPair,
    params: &SegmentParams,
) -> Result<Vec<CycleBoundary>> {
    let peaks = detect_cycle_peaks(clip, params)?;
    Ok(boundaries_from_peaks(&peaks, offsets, clip.duration_seconds()))
}
