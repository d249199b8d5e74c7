use std::f64::consts::PI;

use ndarray::Array2;

use super::{stft, FeatureError, FeatureKind, FeatureMatrix, Result, StftParams};
use crate::dataset::AudioClip;

/// Floor added before taking logs of band energies.
pub const LOG_FLOOR: f64 = 1e-10;

/// HTK mel scale.
pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank {
    /// `n_bands x (n_fft/2 + 1)`, each row summing to one.
    pub weights: Array2<f64>,
    pub band_centers: Vec<f64>,
}

/// Triangular filters peaking at `n_bands` points equally spaced in mel
/// between `f_min` and `f_max`. Adjacent triangles overlap; each row is
/// normalized to unit area (sum of weights).
pub fn mel_filterbank(
    sample_rate: u32,
    n_fft: usize,
    n_bands: usize,
    f_min: f64,
    f_max: f64,
) -> Result<FilterBank> {
    let nyquist = sample_rate as f64 / 2.0;
    if !(f_min >= 0.0 && f_min < f_max && f_max <= nyquist) || n_bands == 0 {
        return Err(FeatureError::InvalidBand(format!(
            "mel band [{f_min}, {f_max}] with {n_bands} bands at {sample_rate} Hz"
        )));
    }
    let bins = n_fft / 2 + 1;
    let (m_lo, m_hi) = (hz_to_mel(f_min), hz_to_mel(f_max));
    let edges: Vec<f64> = (0..n_bands + 2)
        .map(|i| mel_to_hz(m_lo + (m_hi - m_lo) * i as f64 / (n_bands + 1) as f64))
        .collect();
    let mut weights = Array2::<f64>::zeros((n_bands, bins));
    for b in 0..n_bands {
        let (lo, center, hi) = (edges[b], edges[b + 1], edges[b + 2]);
        for k in 0..bins {
            let f = k as f64 * sample_rate as f64 / n_fft as f64;
            let rise = (f - lo) / (center - lo);
            let fall = (hi - f) / (hi - center);
            weights[[b, k]] = rise.min(fall).max(0.0);
        }
        let area: f64 = weights.row(b).sum();
        if area <= 0.0 {
            return Err(FeatureError::InvalidBand(format!(
                "mel band {b} ({lo:.1}-{hi:.1} Hz) covers no FFT bin"
            )));
        }
        weights.row_mut(b).mapv_inplace(|w| w / area);
    }
    Ok(FilterBank {
        weights,
        band_centers: edges[1..=n_bands].to_vec(),
    })
}

/// Band powers `filterbank · |X|²` for every frame, before the log.
pub fn mel_power(clip: &AudioClip, n_bands: usize, stft_params: &StftParams) -> Result<Array2<f64>> {
    let spec = stft(clip, stft_params)?;
    let fb = mel_filterbank(
        clip.sample_rate(),
        stft_params.n_fft,
        n_bands,
        0.0,
        clip.sample_rate() as f64 / 2.0,
    )?;
    let power = spec.magnitudes.mapv(|m| m * m);
    Ok(fb.weights.dot(&power))
}

/// Log mel-spectrogram `ln(fb · |X|² + 1e-10)`.
pub fn mel_spectrogram(clip: &AudioClip, n_bands: usize, stft_params: &StftParams) -> Result<FeatureMatrix> {
    let power = mel_power(clip, n_bands, stft_params)?;
    Ok(FeatureMatrix::new(
        FeatureKind::MelSpectrogram,
        power.mapv(|p| (p + LOG_FLOOR).ln() as f32),
    ))
}

/// Orthonormal DCT-II.
pub fn dct_ortho(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    (0..n)
        .map(|k| {
            let scale = if k == 0 {
                (1.0 / n as f64).sqrt()
            } else {
                (2.0 / n as f64).sqrt()
            };
            scale
                * x.iter()
                    .enumerate()
                    .map(|(i, &v)| v * (PI * k as f64 * (2 * i + 1) as f64 / (2 * n) as f64).cos())
                    .sum::<f64>()
        })
        .collect()
}

/// Inverse of [`dct_ortho`] (orthonormal DCT-III).
pub fn idct_ortho(c: &[f64]) -> Vec<f64> {
    let n = c.len();
    (0..n)
        .map(|i| {
            c.iter()
                .enumerate()
                .map(|(k, &v)| {
                    let scale = if k == 0 {
                        (1.0 / n as f64).sqrt()
                    } else {
                        (2.0 / n as f64).sqrt()
                    };
                    scale * v * (PI * k as f64 * (2 * i + 1) as f64 / (2 * n) as f64).cos()
                })
                .sum()
        })
        .collect()
}

/// MFCCs: per-frame orthonormal DCT-II of the log-mel vector, first `n_coeffs` kept.
pub fn mfcc(
    clip: &AudioClip,
    n_bands: usize,
    n_coeffs: usize,
    stft_params: &StftParams,
) -> Result<FeatureMatrix> {
    if n_coeffs == 0 || n_coeffs > n_bands {
        return Err(FeatureError::InvalidParams(format!(
            "{n_coeffs} coefficients from {n_bands} mel bands"
        )));
    }
    let power = mel_power(clip, n_bands, stft_params)?;
    let frames = power.ncols();
    let mut out = Array2::<f32>::zeros((n_coeffs, frames));
    let mut col = vec![0.0; n_bands];
    for t in 0..frames {
        for (b, v) in col.iter_mut().enumerate() {
            *v = (power[[b, t]] + LOG_FLOOR).ln();
        }
        for (k, c) in dct_ortho(&col).into_iter().take(n_coeffs).enumerate() {
            out[[k, t]] = c as f32;
        }
    }
    Ok(FeatureMatrix::new(FeatureKind::Mfcc, out))
}
