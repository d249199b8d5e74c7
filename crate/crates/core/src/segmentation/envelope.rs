use crate::dataset::AudioClip;
use crate::features::{stft, Spectrogram, StftParams};

use super::Result;

/// Per-frame energy curve; frame `t` sits at `origin_time + t * frame_hop_seconds`.
#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    pub values: Vec<f64>,
    pub frame_hop_seconds: f64,
    pub origin_time: f64,
}

impl Envelope {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Time in seconds of a (possibly fractional) frame position.
    pub fn time_of(&self, frame: f64) -> f64 {
        self.origin_time + frame * self.frame_hop_seconds
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(0.0, f64::max)
    }
}

/// STFT geometry for a window of `window_seconds`, hop half the window,
/// FFT size the next power of two.
pub fn envelope_stft_params(sample_rate: u32, window_seconds: f64) -> StftParams {
    let window_length = ((window_seconds * sample_rate as f64).floor() as usize).max(2);
    StftParams {
        n_fft: window_length.next_power_of_two(),
        window_length,
        hop: window_length / 2,
        centered: true,
    }
}

/// `sum_k |X[k, t]| * f_k^2`: magnitude, not power, weighted by squared frequency.
pub fn envelope_from_spectrogram(spec: &Spectrogram) -> Envelope {
    let weights: Vec<f64> = (0..spec.bins()).map(|k| spec.bin_frequency(k).powi(2)).collect();
    let values = (0..spec.frames())
        .map(|t| {
            spec.magnitudes
                .column(t)
                .iter()
                .zip(&weights)
                .map(|(m, w)| m * w)
                .sum()
        })
        .collect();
    Envelope {
        values,
        frame_hop_seconds: spec.frame_hop as f64 / spec.sample_rate as f64,
        origin_time: 0.0,
    }
}

pub fn energy_envelope(clip: &AudioClip, window_seconds: f64) -> Result<Envelope> {
    let params = envelope_stft_params(clip.sample_rate(), window_seconds);
    Ok(envelope_from_spectrogram(&stft(clip, &params)?))
}

/// Symmetric (half-sample) reflection of index `i` into `0..n`:
/// `d c b a | a b c d | d c b a`.
fn reflect_half(i: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - 1 - m) as usize
    }
}

/// Normalized Gaussian kernel of radius `floor(4 sigma + 0.5)` samples.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (4.0 * sigma + 0.5) as isize;
    let raw: Vec<f64> = (-radius..=radius)
        .map(|i| (-0.5 * (i as f64 / sigma).powi(2)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

pub fn gaussian_smooth(env: &Envelope, sigma_seconds: f64) -> Envelope {
    let n = env.len();
    if n == 0 || !(sigma_seconds > 0.0) {
        return env.clone();
    }
    let kernel = gaussian_kernel(sigma_seconds / env.frame_hop_seconds);
    let radius = (kernel.len() / 2) as isize;
    let values = (0..n as isize)
        .map(|i| {
            kernel
                .iter()
                .enumerate()
                .map(|(j, w)| w * env.values[reflect_half(i + j as isize - radius, n)])
                .sum()
        })
        .collect();
    Envelope {
        values,
        ..env.clone()
    }
}
