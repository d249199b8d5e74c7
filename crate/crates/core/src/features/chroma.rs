//! Chroma (pitch-class) features: STFT folding, pseudo constant-Q, and CENS.

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use super::{stft, FeatureKind, FeatureMatrix, Result, StftParams};
use crate::dataset::AudioClip;

/// C1, the reference pitch of class 0.
pub const C1_HZ: f64 = 32.703_195_662_574_764;
/// Semitone resolution of the pseudo constant-Q grid.
const CQT_BINS_PER_OCTAVE: usize = 12;
const CENS_THRESHOLDS: [f64; 4] = [0.05, 0.1, 0.2, 0.4];
const CENS_SMOOTHING: usize = 41;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChromaVariant {
    Stft,
    Cqt,
    Cens,
}

/// Pitch class of `f` among `n_bins` classes per octave, class 0 at C.
pub fn pitch_class(f: f64, n_bins: usize) -> usize {
    let octaves = (f / C1_HZ).log2();
    let pos = (n_bins as f64 * octaves.rem_euclid(1.0)).round() as usize;
    pos % n_bins
}

fn max_normalize(m: &mut Array2<f64>) {
    for mut col in m.axis_iter_mut(Axis(1)) {
        let peak = col.iter().cloned().fold(0.0, f64::max);
        if peak > 0.0 {
            col.mapv_inplace(|v| v / peak);
        }
    }
}

fn norm_columns(m: &mut Array2<f64>, p: u8) {
    for mut col in m.axis_iter_mut(Axis(1)) {
        let norm = match p {
            1 => col.iter().map(|v| v.abs()).sum::<f64>(),
            _ => col.iter().map(|v| v * v).sum::<f64>().sqrt(),
        };
        if norm > 0.0 {
            col.mapv_inplace(|v| v / norm);
        }
    }
}

/// Unnormalized STFT chroma: every non-DC bin's magnitude is added to its pitch class.
fn stft_chroma_raw(clip: &AudioClip, n_bins: usize, params: &StftParams) -> Result<Array2<f64>> {
    let spec = stft(clip, params)?;
    let classes: Vec<usize> = (0..spec.bins())
        .map(|k| pitch_class(spec.bin_frequency(k.max(1)), n_bins))
        .collect();
    let mut out = Array2::<f64>::zeros((n_bins, spec.frames()));
    for k in 1..spec.bins() {
        let c = classes[k];
        for t in 0..spec.frames() {
            out[[c, t]] += spec.magnitudes[[k, t]];
        }
    }
    Ok(out)
}

/// Pseudo constant-Q magnitudes: STFT bins pooled onto semitone-spaced
/// centers from C1 up to the Nyquist frequency.
pub fn pseudo_cqt(clip: &AudioClip, params: &StftParams) -> Result<(Array2<f64>, Vec<f64>)> {
    let spec = stft(clip, params)?;
    let nyquist = clip.sample_rate() as f64 / 2.0;
    let per_oct = CQT_BINS_PER_OCTAVE as f64;
    let n_centers = (per_oct * (nyquist / C1_HZ).log2() - 0.5).floor() as usize + 1;
    let centers: Vec<f64> = (0..n_centers)
        .map(|j| C1_HZ * 2f64.powf(j as f64 / per_oct))
        .collect();
    let mut out = Array2::<f64>::zeros((n_centers, spec.frames()));
    for k in 1..spec.bins() {
        let pos = (per_oct * (spec.bin_frequency(k) / C1_HZ).log2()).round();
        if pos < 0.0 || pos as usize >= n_centers {
            continue;
        }
        let j = pos as usize;
        for t in 0..spec.frames() {
            out[[j, t]] += spec.magnitudes[[k, t]];
        }
    }
    Ok((out, centers))
}

fn cqt_chroma_raw(clip: &AudioClip, n_bins: usize, params: &StftParams) -> Result<Array2<f64>> {
    let (cqt, centers) = pseudo_cqt(clip, params)?;
    let mut out = Array2::<f64>::zeros((n_bins, cqt.ncols()));
    for (j, &f) in centers.iter().enumerate() {
        let c = pitch_class(f, n_bins);
        for t in 0..cqt.ncols() {
            out[[c, t]] += cqt[[j, t]];
        }
    }
    Ok(out)
}

/// CENS post-processing of a chroma matrix: L1 normalization, 4-level
/// quantization, a centered moving average over time, then L2 normalization.
pub fn cens_from_chroma(chroma: &Array2<f64>) -> Array2<f64> {
    let mut m = chroma.clone();
    norm_columns(&mut m, 1);
    m.mapv_inplace(|v| CENS_THRESHOLDS.iter().filter(|&&th| v > th).count() as f64 * 0.25);
    let (rows, frames) = m.dim();
    let half = (CENS_SMOOTHING / 2) as isize;
    let mut smoothed = Array2::<f64>::zeros((rows, frames));
    for r in 0..rows {
        for t in 0..frames as isize {
            let lo = (t - half).max(0) as usize;
            let hi = ((t + half) as usize).min(frames - 1);
            let sum: f64 = (lo..=hi).map(|u| m[[r, u]]).sum();
            smoothed[[r, t as usize]] = sum / CENS_SMOOTHING as f64;
        }
    }
    norm_columns(&mut smoothed, 2);
    smoothed
}

/// Chroma features with `n_bins` pitch classes per octave.
pub fn chroma(
    clip: &AudioClip,
    variant: ChromaVariant,
    n_bins: usize,
    params: &StftParams,
) -> Result<FeatureMatrix> {
    let (kind, values) = match variant {
        ChromaVariant::Stft => {
            let mut m = stft_chroma_raw(clip, n_bins, params)?;
            max_normalize(&mut m);
            (FeatureKind::ChromaStft, m)
        }
        ChromaVariant::Cqt => {
            let mut m = cqt_chroma_raw(clip, n_bins, params)?;
            max_normalize(&mut m);
            (FeatureKind::ChromaCqt, m)
        }
        ChromaVariant::Cens => {
            let raw = cqt_chroma_raw(clip, n_bins, params)?;
            (FeatureKind::ChromaCens, cens_from_chroma(&raw))
        }
    };
    Ok(FeatureMatrix::new(kind, values.mapv(|v| v as f32)))
}
