//! Synthetic ICBHI-layout corpora for the command tests.

#![allow(dead_code)]

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use copdnet::dataset::write_wav_i16;
use copdnet_cli::RunConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const SR: u32 = 22050;
pub const DIAGNOSIS_FILE: &str = "ICBHI_Challenge_diagnosis.txt";

/// Breathing-cycle centres used for every synthetic recording.
pub fn cycle_centers(seconds: f64) -> Vec<f64> {
    (0..)
        .map(|i| 1.5 + 3.0 * i as f64)
        .take_while(|&c| c + 1.0 < seconds)
        .collect()
}

/// Noise bursts under Gaussian envelopes at the cycle centres, plus a
/// class-specific tone so the two labels are separable.
pub fn synthetic_samples(seconds: f64, copd: bool, seed: u64) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers = cycle_centers(seconds);
    let tone = if copd { 180.0 } else { 1400.0 };
    (0..(seconds * SR as f64) as usize)
        .map(|i| {
            let t = i as f64 / SR as f64;
            let gain: f64 = centers
                .iter()
                .map(|c| (-0.5 * ((t - c) / 0.35).powi(2)).exp())
                .sum();
            let noise = gain * rng.random_range(-0.4..0.4);
            let hum = 0.2 * (2.0 * std::f64::consts::PI * tone * t).sin();
            (noise + hum) as f32
        })
        .collect()
}

/// Writes `n` recordings, two per patient, every third patient COPD.
/// Annotation files mark each burst as one cycle (centre +/- 1 s).
pub fn write_corpus(dir: &Path, n: usize, seconds: f64, annotations: bool) -> PathBuf {
    std::fs::create_dir_all(dir).unwrap();
    let mut table = String::new();
    for p in 0..n.div_ceil(2) {
        let diagnosis = if p % 3 == 0 {
            "COPD"
        } else if p % 3 == 1 {
            "Healthy"
        } else {
            "URTI"
        };
        writeln!(table, "{}\t{diagnosis}", 101 + p).unwrap();
    }
    std::fs::write(dir.join(DIAGNOSIS_FILE), table).unwrap();
    for i in 0..n {
        let patient = i / 2;
        let stem = format!("{}_{}b1_Al_sc_Meditron", 101 + patient, i % 2 + 1);
        let copd = patient % 3 == 0;
        write_wav_i16(
            dir.join(format!("{stem}.wav")),
            &synthetic_samples(seconds, copd, i as u64),
            SR,
        )
        .unwrap();
        if annotations {
            let mut txt = String::new();
            for c in cycle_centers(seconds) {
                writeln!(txt, "{:.3}\t{:.3}\t0\t0", c - 1.0, c + 1.0).unwrap();
            }
            std::fs::write(dir.join(format!("{stem}.txt")), txt).unwrap();
        }
    }
    dir.to_path_buf()
}

/// A small, fast configuration rooted in `root`.
pub fn smoke_config(root: &Path, dataset: &Path) -> RunConfig {
    let text = format!(
        "dataset_dir = {}\ncache_dir = cache\nout_dir = out\nepochs = 2\nk = 3\n",
        dataset.display()
    );
    RunConfig::parse(&text, root).unwrap()
}
