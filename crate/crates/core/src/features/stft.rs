use std::f64::consts::PI;

use ndarray::Array2;
use rustfft::{num_complex::Complex, FftPlanner};

use super::{FeatureError, Result};
use crate::dataset::AudioClip;

/// STFT framing parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StftParams {
    /// FFT size; must be a power of two.
    pub n_fft: usize,
    /// Hann window length, zero-padded (centered) to `n_fft`.
    pub window_length: usize,
    pub hop: usize,
    pub centered: bool,
}

impl Default for StftParams {
    fn default() -> Self {
        StftParams {
            n_fft: 2048,
            window_length: 2048,
            hop: 512,
            centered: true,
        }
    }
}

impl StftParams {
    pub fn validate(&self) -> Result<()> {
        if !self.n_fft.is_power_of_two()
            || self.window_length == 0
            || self.window_length > self.n_fft
            || self.hop == 0
            || self.hop > self.n_fft
        {
            return Err(FeatureError::InvalidParams(format!("{self:?}")));
        }
        Ok(())
    }

    /// Number of frames for `n` samples.
    pub fn frame_count(&self, n: usize) -> usize {
        if self.centered {
            1 + n / self.hop
        } else if n < self.n_fft {
            0
        } else {
            1 + (n - self.n_fft) / self.hop
        }
    }
}

/// Magnitude spectrogram, `n_fft/2 + 1` rows by frames.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub magnitudes: Array2<f64>,
    pub frame_hop: usize,
    pub window_length: usize,
    pub n_fft: usize,
    pub sample_rate: u32,
}

impl Spectrogram {
    pub fn bins(&self) -> usize {
        self.magnitudes.nrows()
    }

    pub fn frames(&self) -> usize {
        self.magnitudes.ncols()
    }

    pub fn bin_frequency(&self, k: usize) -> f64 {
        k as f64 * self.sample_rate as f64 / self.n_fft as f64
    }
}

/// Periodic Hann window of `len` samples centered inside `n_fft`.
fn padded_hann(len: usize, n_fft: usize) -> Vec<f64> {
    let mut w = vec![0.0; n_fft];
    let offset = (n_fft - len) / 2;
    for i in 0..len {
        w[offset + i] = 0.5 - 0.5 * (2.0 * PI * i as f64 / len as f64).cos();
    }
    w
}

/// Index into a signal of length `n` under reflect padding (`d c b | a b c d | c b a`).
fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// Short-time Fourier magnitude. With centered framing, column `t` is
/// the frame centered on sample `t * hop` and the signal is reflect-padded.
pub fn stft(clip: &AudioClip, params: &StftParams) -> Result<Spectrogram> {
    params.validate()?;
    let x = clip.samples();
    if x.is_empty() {
        return Err(FeatureError::EmptyClip);
    }
    let n = x.len();
    let n_fft = params.n_fft;
    let frames = params.frame_count(n);
    let bins = n_fft / 2 + 1;
    let window = padded_hann(params.window_length, n_fft);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n_fft);
    let mut scratch = vec![Complex::default(); fft.get_inplace_scratch_len()];
    let mut buf = vec![Complex::default(); n_fft];
    let mut mags = Array2::<f64>::zeros((bins, frames));
    let pad = if params.centered { (n_fft / 2) as isize } else { 0 };

    for t in 0..frames {
        let start = (t * params.hop) as isize - pad;
        for (j, slot) in buf.iter_mut().enumerate() {
            let w = window[j];
            let v = if w == 0.0 {
                0.0
            } else {
                let idx = start + j as isize;
                let s = if (0..n as isize).contains(&idx) {
                    x[idx as usize]
                } else {
                    x[reflect(idx, n)]
                };
                s as f64 * w
            };
            *slot = Complex::new(v, 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        for k in 0..bins {
            mags[[k, t]] = buf[k].norm();
        }
    }
    Ok(Spectrogram {
        magnitudes: mags,
        frame_hop: params.hop,
        window_length: params.window_length,
        n_fft,
        sample_rate: clip.sample_rate(),
    })
}
