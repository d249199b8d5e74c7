use serde::{Deserialize, Serialize};

use super::Envelope;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub index: usize,
    pub height: f64,
    pub prominence: f64,
    /// Prominence bases until refined by [`peak_bases`].
    pub left_base: f64,
    pub right_base: f64,
}

/// How the evaluation height for [`peak_bases`] is derived.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeightMode {
    /// `height - rel * prominence`
    #[default]
    Prominence,
    /// `height - rel * height`
    Absolute,
}

/// Local maxima; a flat top counts once, at its middle (rounded down).
/// Endpoints never qualify.
pub fn local_maxima(x: &[f64]) -> Vec<usize> {
    let mut out = Vec::new();
    if x.len() < 3 {
        return out;
    }
    let last = x.len() - 1;
    let mut i = 1;
    while i < last {
        if x[i - 1] < x[i] {
            let mut ahead = i + 1;
            while ahead < last && x[ahead] == x[i] {
                ahead += 1;
            }
            if x[ahead] < x[i] {
                out.push((i + ahead - 1) / 2);
                i = ahead;
            }
        }
        i += 1;
    }
    out
}

/// Prominence of the maximum at `p` and the indices of its left/right bases.
pub fn prominence(x: &[f64], p: usize) -> (f64, usize, usize) {
    let h = x[p];
    let (mut left_min, mut left_base) = (h, p);
    let mut i = p as isize;
    while i >= 0 && x[i as usize] <= h {
        if x[i as usize] < left_min {
            left_min = x[i as usize];
            left_base = i as usize;
        }
        i -= 1;
    }
    let (mut right_min, mut right_base) = (h, p);
    let mut i = p;
    while i < x.len() && x[i] <= h {
        if x[i] < right_min {
            right_min = x[i];
            right_base = i;
        }
        i += 1;
    }
    (h - left_min.max(right_min), left_base, right_base)
}

/// Peaks with prominence at least `min_prominence_fraction * max`, thinned so
/// that kept peaks are at least `min_distance_seconds` apart. Higher peaks win
/// conflicts; equal heights keep the earlier one. Sorted by index.
pub fn detect_peaks(env: &Envelope, min_distance_seconds: f64, min_prominence_fraction: f64) -> Vec<Peak> {
    let x = &env.values;
    let threshold = min_prominence_fraction * env.max();
    let candidates: Vec<Peak> = local_maxima(x)
        .into_iter()
        .filter_map(|i| {
            let (prom, lb, rb) = prominence(x, i);
            (prom >= threshold && prom > 0.0).then_some(Peak {
                index: i,
                height: x[i],
                prominence: prom,
                left_base: lb as f64,
                right_base: rb as f64,
            })
        })
        .collect();

    let distance = min_distance_seconds / env.frame_hop_seconds;
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| {
        candidates[b]
            .height
            .total_cmp(&candidates[a].height)
            .then(a.cmp(&b))
    });
    let mut keep = vec![true; candidates.len()];
    for &i in &order {
        if !keep[i] {
            continue;
        }
        let pi = candidates[i].index as f64;
        for (j, k) in keep.iter_mut().enumerate() {
            if j != i && (candidates[j].index as f64 - pi).abs() < distance {
                *k = false;
            }
        }
    }
    candidates
        .into_iter()
        .zip(keep)
        .filter_map(|(p, k)| k.then_some(p))
        .collect()
}

/// Interpolated positions where the curve crosses the evaluation height on
/// each side of the peak, clamped to the peak's prominence bases.
pub fn peak_bases(env: &Envelope, peak: &Peak, relative_height: f64, mode: HeightMode) -> (f64, f64) {
    let x = &env.values;
    let h = match mode {
        HeightMode::Prominence => peak.height - relative_height * peak.prominence,
        HeightMode::Absolute => peak.height - relative_height * peak.height,
    };
    let lo = peak.left_base.max(0.0) as usize;
    let hi = (peak.right_base as usize).min(x.len() - 1);

    let mut i = peak.index;
    while lo < i && x[i] > h {
        i -= 1;
    }
    let mut left = i as f64;
    if x[i] < h {
        left += (h - x[i]) / (x[i + 1] - x[i]);
    }

    let mut i = peak.index;
    while i < hi && x[i] > h {
        i += 1;
    }
    let mut right = i as f64;
    if x[i] < h {
        right -= (h - x[i]) / (x[i - 1] - x[i]);
    }
    (left, right)
}
