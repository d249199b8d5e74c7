use std::collections::BTreeSet;
use std::f32::consts::PI;
use std::fs;
use std::path::Path;

use copdnet::dataset::{
    augment_clip, build_index, load_audio, plan_balance, read_manifest, split_train_test,
    standardize_duration, write_manifest, write_wav_i16, BinaryLabel, DatasetIndex, SplitStrategy,
};
use copdnet::features::{extract_features, FeatureCache, FeatureKind, FeatureParams};
use copdnet::nn::{evaluate, train, LabeledSet, ModelConfig, TrainConfig};
use copdnet::segmentation::{
    calibrate_offsets, collect_matches, detect_cycle_peaks, segment_cycles, SegmentParams,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SR: u32 = 8000;

/// Noise bursts centred at 1.5 + 3i seconds over a class tone.
fn breathing(seconds: f64, tone_hz: f32, seed: u64) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = (seconds * SR as f64) as usize;
    (0..n)
        .map(|i| {
            let t = i as f64 / SR as f64;
            let phase = (t % 3.0 - 1.5) / 0.5;
            let burst = (-0.5 * phase * phase).exp() as f32;
            let noise: f32 = rng.random_range(-1.0..1.0);
            0.4 * burst * noise + 0.05 * (2.0 * PI * tone_hz * t as f32).sin()
        })
        .collect()
}

/// Six patients, two recordings each; patients 100, 103 are COPD.
fn write_corpus(dir: &Path, seconds: f64) {
    let mut table = String::new();
    for p in 0..6u32 {
        let id = 100 + p;
        let copd = p % 3 == 0;
        table.push_str(&format!("{id}\t{}\n", if copd { "COPD" } else { "Healthy" }));
        for r in 0..2 {
            let stem = format!("{id}_{}b1_Tc_sc_Meditron", r + 1);
            let tone = if copd { 180.0 } else { 1400.0 };
            let samples = breathing(seconds, tone, (id * 10 + r) as u64);
            write_wav_i16(dir.join(format!("{stem}.wav")), &samples, SR).unwrap();
            let mut ann = String::new();
            let mut c = 1.5;
            while c + 1.0 <= seconds {
                ann.push_str(&format!("{:.3}\t{:.3}\t0\t0\n", c - 1.0, c + 1.0));
                c += 3.0;
            }
            fs::write(dir.join(format!("{stem}.txt")), ann).unwrap();
        }
    }
    fs::write(dir.join("ICBHI_Challenge_diagnosis.txt"), table).unwrap();
}

fn params(seconds: f64) -> FeatureParams {
    FeatureParams {
        sample_rate: SR,
        duration_seconds: seconds,
        ..FeatureParams::default()
    }
}

#[test]
fn index_survives_manifest_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path(), 6.0);
    let index = build_index(dir.path(), None).unwrap();
    assert_eq!(index.len(), 12);
    assert_eq!(index.label_counts()[&BinaryLabel::Copd], 4);
    assert!(index.entries().iter().all(|e| e.annotation_path.is_some()));

    let manifest = dir.path().join("manifest.jsonl");
    write_manifest(&index, &manifest).unwrap();
    assert_eq!(read_manifest(&manifest).unwrap(), index);
}

#[test]
fn patient_grouped_split_keeps_patients_apart() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path(), 6.0);
    let index = build_index(dir.path(), None).unwrap();
    let split = split_train_test(&index, 0.34, 3, SplitStrategy::PatientGrouped).unwrap();
    let patients =
        |ix: &DatasetIndex| -> BTreeSet<u32> { ix.entries().iter().map(|e| e.meta.patient_id).collect() };
    assert!(patients(&split.train).is_disjoint(&patients(&split.test)));
    assert_eq!(split.train.len() + split.test.len(), 12);
    // One COPD patient of two, each with two recordings.
    assert_eq!(split.test.label_counts()[&BinaryLabel::Copd], 2);
}

#[test]
fn augmented_variants_extract_and_cache_separately() {
    let dir = tempfile::tempdir().unwrap();
    let cache_dir = tempfile::tempdir().unwrap();
    let seconds = 6.0;
    write_corpus(dir.path(), seconds);
    let index = build_index(dir.path(), None).unwrap();
    let plan = plan_balance(&index, 11);
    assert!(plan.warning.is_none());
    assert!(!plan.items.is_empty());

    let p = params(seconds);
    let cache = FeatureCache::new(cache_dir.path());
    let (i, spec) = plan.items[0];
    let entry = index.get(i);
    assert_eq!(entry.label, BinaryLabel::Copd);
    let clip = standardize_duration(&load_audio(&entry.audio_path, SR).unwrap(), seconds);
    let aug = entry.augmented(spec);

    let original = cache
        .get_or_compute(&entry.key(), FeatureKind::Mfcc, &p, || {
            extract_features(&clip, FeatureKind::Mfcc, &p)
        })
        .unwrap();
    let augmented = cache
        .get_or_compute(&aug.key(), FeatureKind::Mfcc, &p, || {
            let a = augment_clip(&clip, &spec).unwrap();
            extract_features(&a, FeatureKind::Mfcc, &p)
        })
        .unwrap();
    assert_eq!(original.shape(), p.shape());
    assert_eq!(augmented.shape(), p.shape());
    assert_ne!(original.values, augmented.values);

    let again = cache
        .load(&aug.key(), FeatureKind::Mfcc, &p)
        .unwrap()
        .expect("cached");
    assert_eq!(again.values, augmented.values);
}

#[test]
fn segmentation_finds_bursts_and_calibration_tightens() {
    let seconds = 12.0;
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path(), seconds);
    let index = build_index(dir.path(), None).unwrap();
    let seg = SegmentParams::default();

    let mut pairs = Vec::new();
    for e in index.entries().iter().take(4) {
        let clip = load_audio(&e.audio_path, SR).unwrap();
        let peaks = detect_cycle_peaks(&clip, &seg).unwrap();
        assert_eq!(peaks.len(), 4, "{}", e.stem());
        for (k, p) in peaks.iter().enumerate() {
            assert!((p.time - (1.5 + 3.0 * k as f64)).abs() < 0.2);
        }
        let ann = copdnet::dataset::parse_cycle_annotations(e.annotation_path.as_ref().unwrap()).unwrap();
        pairs.extend(collect_matches(&peaks, &ann));
    }
    assert_eq!(pairs.len(), 16);
    let report = calibrate_offsets(&pairs).unwrap();
    assert!(report.objective_after <= report.objective_before);

    let clip = load_audio(&index.get(0).audio_path, SR).unwrap();
    let cycles = segment_cycles(&clip, report.offsets(), &seg).unwrap();
    assert_eq!(cycles.len(), 4);
    for w in cycles.windows(2) {
        assert!(w[0].end <= w[1].start);
    }
}

#[test]
fn chroma_separates_the_two_tones() {
    let seconds = 3.0;
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path(), seconds);
    let index = build_index(dir.path(), None).unwrap();
    let p = params(seconds);

    let mut feats = Vec::new();
    let mut labels = Vec::new();
    for e in index.entries() {
        let clip = standardize_duration(&load_audio(&e.audio_path, SR).unwrap(), seconds);
        feats.push(extract_features(&clip, FeatureKind::ChromaStft, &p).unwrap());
        labels.push(e.label.class_index());
    }
    let set = LabeledSet::from_features(&feats, labels).unwrap();
    let (h, w) = p.shape();
    let config = ModelConfig::gapnet([h, w, 1], 16);
    let hyper = TrainConfig {
        epochs: 30,
        batch_size: 12,
        ..TrainConfig::default()
    };
    let (net, history) = train(&config, &set, None, &hyper, 5).unwrap();
    let first = history.epochs.first().unwrap().train_loss;
    let last = history.epochs.last().unwrap().train_loss;
    assert!(last < first, "loss {first} -> {last}");
    assert!(evaluate(&net, &set, 12).unwrap().accuracy >= 0.75);
}
