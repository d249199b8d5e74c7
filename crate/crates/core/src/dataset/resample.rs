//! Band-limited resampling by windowed-sinc interpolation.

use std::f64::consts::PI;
use std::sync::OnceLock;

/// Zero crossings of the sinc kernel on each side, in units of the lower rate.
const ZERO_CROSSINGS: usize = 24;
/// Kernel table resolution (entries per unit of time).
const TABLE_RES: usize = 512;
const KAISER_BETA: f64 = 8.0;

fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let q = x * x / 4.0;
    for k in 1..64 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

/// `sinc(u) * kaiser(u / ZERO_CROSSINGS)` tabulated for `u` in `[0, ZERO_CROSSINGS]`.
fn kernel_table() -> &'static [f64] {
    static TABLE: OnceLock<Vec<f64>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let n = ZERO_CROSSINGS * TABLE_RES + 2;
        let norm = bessel_i0(KAISER_BETA);
        (0..n)
            .map(|i| {
                let u = i as f64 / TABLE_RES as f64;
                if u >= ZERO_CROSSINGS as f64 {
                    return 0.0;
                }
                let sinc = if u == 0.0 { 1.0 } else { (PI * u).sin() / (PI * u) };
                let r = u / ZERO_CROSSINGS as f64;
                let window = bessel_i0(KAISER_BETA * (1.0 - r * r).sqrt()) / norm;
                sinc * window
            })
            .collect()
    })
}

fn kernel(u: f64) -> f64 {
    let u = u.abs() * TABLE_RES as f64;
    let i = u as usize;
    let table = kernel_table();
    if i + 1 >= table.len() {
        return 0.0;
    }
    let frac = u - i as f64;
    table[i] * (1.0 - frac) + table[i + 1] * frac
}

/// Resamples `samples` from `from_rate` to `to_rate` (any positive rates,
/// not necessarily integers). The output has `round(len * to / from)`
/// samples. When downsampling the kernel cutoff follows the output Nyquist
/// frequency.
pub fn resample(samples: &[f32], from_rate: f64, to_rate: f64) -> Vec<f32> {
    assert!(from_rate > 0.0 && to_rate > 0.0, "rates must be positive");
    if from_rate == to_rate {
        return samples.to_vec();
    }
    let n = samples.len();
    let out_len = (n as f64 * to_rate / from_rate).round() as usize;
    let step = from_rate / to_rate;
    let cutoff = (to_rate / from_rate).min(1.0);
    let half_width = ZERO_CROSSINGS as f64 / cutoff;

    (0..out_len)
        .map(|i| {
            let pos = i as f64 * step;
            let lo = ((pos - half_width).ceil().max(0.0)) as usize;
            let hi = ((pos + half_width).floor() as isize).min(n as isize - 1);
            let mut acc = 0.0;
            if hi >= lo as isize {
                for (j, &x) in samples.iter().enumerate().take(hi as usize + 1).skip(lo) {
                    acc += x as f64 * kernel((pos - j as f64) * cutoff);
                }
            }
            (acc * cutoff) as f32
        })
        .collect()
}
