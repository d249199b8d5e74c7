//! Butterworth band-pass design (second-order sections) with zero-phase
//! filtering, plus the log compression used on spectra.

use std::f64::consts::PI;

use ndarray::Array2;
use rustfft::num_complex::Complex64;

use super::{FeatureError, Result};
use crate::dataset::AudioClip;

/// Biquad cascade; each section is `[b0, b1, b2, a1, a2]` with `a0 = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sos {
    pub sections: Vec<[f64; 5]>,
}

/// Digital Butterworth band-pass of prototype order `order` (the filter has
/// `2 * order` poles), designed by bilinear transform with prewarped edges.
pub fn butter_bandpass(order: usize, low: f64, high: f64, sample_rate: f64) -> Result<Sos> {
    if order == 0 || !(0.0 < low && low < high && high < sample_rate / 2.0) {
        return Err(FeatureError::InvalidBand(format!(
            "band-pass [{low}, {high}] Hz of order {order} at {sample_rate} Hz"
        )));
    }
    let fs2 = 2.0 * sample_rate;
    let w_lo = fs2 * (PI * low / sample_rate).tan();
    let w_hi = fs2 * (PI * high / sample_rate).tan();
    let bw = w_hi - w_lo;
    let w0_sq = w_lo * w_hi;

    let mut analog = Vec::with_capacity(2 * order);
    for k in 0..order {
        let theta = PI * (2 * k + 1 + order) as f64 / (2 * order) as f64;
        let p = Complex64::from_polar(1.0, theta) * (bw / 2.0);
        let root = (p * p - w0_sq).sqrt();
        analog.push(p + root);
        analog.push(p - root);
    }
    let mut gain = Complex64::new(bw.powi(order as i32) * fs2.powi(order as i32), 0.0);
    let mut poles: Vec<Complex64> = Vec::with_capacity(analog.len());
    for s in &analog {
        gain /= fs2 - s;
        poles.push((fs2 + s) / (fs2 - s));
    }

    let mut complex: Vec<Complex64> = poles.iter().copied().filter(|z| z.im > 1e-12).collect();
    let mut real: Vec<f64> = poles
        .iter()
        .filter(|z| z.im.abs() <= 1e-12)
        .map(|z| z.re)
        .collect();
    complex.sort_by(|a, b| a.arg().total_cmp(&b.arg()));
    real.sort_by(f64::total_cmp);
    let mut sections: Vec<[f64; 5]> = complex
        .iter()
        .map(|z| [1.0, 0.0, -1.0, -2.0 * z.re, z.norm_sqr()])
        .collect();
    for pair in real.chunks(2) {
        let (r1, r2) = (pair[0], pair.get(1).copied().unwrap_or(0.0));
        sections.push([1.0, 0.0, -1.0, -(r1 + r2), r1 * r2]);
    }
    let g = gain.re;
    for c in sections[0].iter_mut().take(3) {
        *c *= g;
    }
    Ok(Sos { sections })
}

impl Sos {
    /// Magnitude response at `freq` Hz.
    pub fn magnitude_response(&self, freq: f64, sample_rate: f64) -> f64 {
        let w = 2.0 * PI * freq / sample_rate;
        let z1 = Complex64::from_polar(1.0, -w);
        let z2 = z1 * z1;
        self.sections
            .iter()
            .map(|s| ((s[0] + z1 * s[1] + z2 * s[2]) / (1.0 + z1 * s[3] + z2 * s[4])).norm())
            .product()
    }

    /// Per-section state for a constant input of 1 (steady state).
    fn step_state(&self) -> Vec<[f64; 2]> {
        let mut u = 1.0;
        self.sections
            .iter()
            .map(|s| {
                let y = u * (s[0] + s[1] + s[2]) / (1.0 + s[3] + s[4]);
                let z2 = s[2] * u - s[4] * y;
                let z1 = s[1] * u - s[3] * y + z2;
                u = y;
                [z1, z2]
            })
            .collect()
    }

    /// Direct-form II transposed filtering starting from `state`.
    fn run(&self, x: &mut [f64], mut state: Vec<[f64; 2]>) {
        for v in x.iter_mut() {
            let mut u = *v;
            for (s, z) in self.sections.iter().zip(state.iter_mut()) {
                let y = s[0] * u + z[0];
                z[0] = s[1] * u - s[3] * y + z[1];
                z[1] = s[2] * u - s[4] * y;
                u = y;
            }
            *v = u;
        }
    }

    /// Zero-phase forward-backward filtering with odd-extension padding
    /// and steady-state initial conditions.
    pub fn filtfilt(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        if n == 0 {
            return Vec::new();
        }
        let padlen = (3 * (2 * self.sections.len() + 1)).min(n - 1);
        let mut ext = Vec::with_capacity(n + 2 * padlen);
        ext.extend((1..=padlen).rev().map(|i| 2.0 * x[0] - x[i]));
        ext.extend_from_slice(x);
        ext.extend((1..=padlen).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));

        let zi = self.step_state();
        let scaled = |v: f64| zi.iter().map(|z| [z[0] * v, z[1] * v]).collect::<Vec<_>>();
        let first = ext[0];
        self.run(&mut ext, scaled(first));
        ext.reverse();
        let first = ext[0];
        self.run(&mut ext, scaled(first));
        ext.reverse();
        ext[padlen..padlen + n].to_vec()
    }
}

/// Zero-phase Butterworth band-pass; the output has the input's length.
pub fn bandpass_filter(clip: &AudioClip, low: f64, high: f64, order: usize) -> Result<AudioClip> {
    let sos = butter_bandpass(order, low, high, clip.sample_rate() as f64)?;
    let x: Vec<f64> = clip.samples().iter().map(|&s| s as f64).collect();
    let y: Vec<f32> = sos.filtfilt(&x).into_iter().map(|v| v as f32).collect();
    AudioClip::new(y, clip.sample_rate()).map_err(|e| FeatureError::InvalidParams(e.to_string()))
}

/// Elementwise `ln(1 + x)` for non-negative input.
pub fn log_compress(values: &Array2<f64>) -> Result<Array2<f64>> {
    if let Some(v) = values.iter().find(|v| !(**v >= 0.0)) {
        return Err(FeatureError::NegativeInput(*v));
    }
    Ok(values.mapv(f64::ln_1p))
}
