//! One function per subcommand. Each takes a validated [`RunConfig`] and a
//! log sink for progress lines; results go to files under `out_dir` and are
//! also returned so callers and tests can inspect them.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use copdnet::dataset::{
    augment_clip, build_index, load_audio, parse_cycle_annotations, plan_balance, split_train_test,
    standardize_duration, write_manifest, BinaryLabel, DatasetIndex, IndexEntry, Provenance, TrainTestSplit,
};
use copdnet::eval::{
    cross_validate, emit_cv_report, emit_history, evaluate_scores, to_fixed_json, CvReport, EvalError,
    FoldOutcome, MetricsReport,
};
use copdnet::features::{
    extract_features, FeatureCache, FeatureError, FeatureKind, FeatureMatrix, FeatureParams,
};
use copdnet::nn::{
    evaluate, load_model, save_model, train, Architecture, LabeledSet, ModelConfig, Network, Tensor,
};
use copdnet::segmentation::{
    calibrate_offsets, collect_matches, detect_cycle_peaks, segment_cycles, CycleBoundary,
};
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::lock::CacheLock;

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const SEGMENTS_FILE: &str = "segments.json";
pub const CALIBRATION_FILE: &str = "calibration.json";
pub const MODEL_FILE: &str = "model.cpdm";
pub const HISTORY_FILE: &str = "history.csv";
pub const METRICS_FILE: &str = "metrics.json";
pub const CV_REPORT_FILE: &str = "cv_report.json";

/// Samples per forward pass when only predictions are needed.
const EVAL_CHUNK: usize = 16;

macro_rules! log {
    ($log:expr, $($arg:tt)*) => {
        let _ = writeln!($log, $($arg)*);
    };
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// Index of the configured dataset, cut to `max_recordings` when set.
pub fn load_index(cfg: &RunConfig) -> Result<DatasetIndex> {
    let dir = cfg.dataset_dir.as_deref().ok_or(CliError::MissingDatasetDir)?;
    let index = build_index(dir, cfg.diagnosis_table.as_deref())?;
    Ok(if cfg.max_recordings > 0 {
        index.truncated(cfg.max_recordings)
    } else {
        index
    })
}

/// `index` plus the augmented copies that balance it, when augmentation is on.
pub fn balanced(index: &DatasetIndex, seed: u64, augment: bool) -> Result<(DatasetIndex, Option<String>)> {
    if !augment {
        return Ok((index.clone(), None));
    }
    let plan = plan_balance(index, seed);
    let extra = plan
        .items
        .iter()
        .map(|&(i, spec)| index.get(i).augmented(spec))
        .collect();
    Ok((index.with_augmented(extra)?, plan.warning))
}

/// Decode, fix the duration, apply the entry's augmentation, and extract.
pub fn compute_features(
    entry: &IndexEntry,
    kind: FeatureKind,
    params: &FeatureParams,
) -> Result<FeatureMatrix> {
    let clip = load_audio(&entry.audio_path, params.sample_rate)?;
    let mut clip = standardize_duration(&clip, params.duration_seconds);
    if let Provenance::Augmented { spec } = &entry.provenance {
        clip = augment_clip(&clip, spec)?;
    }
    Ok(extract_features(&clip, kind, params)?)
}

/// Cached features for `entry`; a missing or corrupt cache file is
/// recomputed and rewritten. The flag is true when computation ran.
pub fn entry_features(
    cache: &FeatureCache,
    entry: &IndexEntry,
    kind: FeatureKind,
    params: &FeatureParams,
) -> Result<(FeatureMatrix, bool)> {
    let key = entry.key();
    match cache.load(&key, kind, params) {
        Ok(Some(m)) => return Ok((m, false)),
        Ok(None) | Err(FeatureError::CorruptCache { .. }) => {}
        Err(e) => return Err(e.into()),
    }
    let m = compute_features(entry, kind, params)?.with_source(key.as_str());
    cache.store(&key, params, &m)?;
    Ok((m, true))
}

fn labeled_set(cfg: &RunConfig, cache: &FeatureCache, index: &DatasetIndex) -> Result<LabeledSet> {
    let params = cfg.feature_params();
    let features = index
        .entries()
        .iter()
        .map(|e| entry_features(cache, e, cfg.feature_kind, &params).map(|(m, _)| m))
        .collect::<Result<Vec<_>>>()?;
    let labels = index.entries().iter().map(|e| e.label.class_index()).collect();
    Ok(LabeledSet::from_features(&features, labels)?)
}

/// Global mean and population std of every input value. A constant input
/// gets std 1 so the standardization layer stays well defined.
pub fn input_stats(set: &LabeledSet) -> (f64, f64) {
    let n = set.data.len() as f64;
    let mean = set.data.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = set.data.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    (mean, if std > 0.0 && std.is_finite() { std } else { 1.0 })
}

fn model_for(cfg: &RunConfig, train_set: &LabeledSet) -> (ModelConfig, Option<(f64, f64)>) {
    let base = cfg.model_config();
    if cfg.standardize_input {
        let (mean, std) = input_stats(train_set);
        (base.with_standardization(mean, std), Some((mean, std)))
    } else {
        (base, None)
    }
}

fn split(cfg: &RunConfig, index: &DatasetIndex) -> Result<TrainTestSplit> {
    Ok(split_train_test(
        index,
        cfg.test_fraction,
        cfg.seed,
        cfg.split_strategy,
    )?)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IndexSummary {
    pub entries: usize,
    pub by_diagnosis: BTreeMap<String, usize>,
    pub by_label: BTreeMap<String, usize>,
    pub manifest: PathBuf,
}

pub fn cmd_index(cfg: &RunConfig, log: &mut dyn Write) -> Result<IndexSummary> {
    let index = load_index(cfg)?;
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| CliError::io(&cfg.out_dir, e))?;
    let manifest = cfg.out_dir.join(MANIFEST_FILE);
    write_manifest(&index, &manifest)?;
    let summary = IndexSummary {
        entries: index.len(),
        by_diagnosis: index
            .diagnosis_counts()
            .into_iter()
            .map(|(d, n)| (d.name().to_string(), n))
            .collect(),
        by_label: index
            .label_counts()
            .into_iter()
            .map(|(l, n)| (l.name().to_string(), n))
            .collect(),
        manifest,
    };
    log!(log, "{} recordings", summary.entries);
    for (d, n) in &summary.by_diagnosis {
        log!(log, "  diagnosis {d}: {n}");
    }
    for (l, n) in &summary.by_label {
        log!(log, "  label {l}: {n}");
    }
    Ok(summary)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeatureSummary {
    pub computed: usize,
    pub cached: usize,
    /// `(entry key, error message)` for every entry that could not be processed.
    pub failed: Vec<(String, String)>,
}

impl FeatureSummary {
    pub fn ok(&self) -> bool {
        self.failed.is_empty()
    }
}

/// Fill the cache for every entry `train` will read: the balanced train
/// split and the test split. Per-entry failures are collected, not fatal.
pub fn cmd_features(cfg: &RunConfig, log: &mut dyn Write) -> Result<FeatureSummary> {
    let _lock = CacheLock::acquire(&cfg.cache_dir)?;
    let index = load_index(cfg)?;
    let parts = split(cfg, &index)?;
    let (train_index, warning) = balanced(&parts.train, cfg.seed, cfg.augment)?;
    if let Some(w) = warning {
        log!(log, "warning: {w}");
    }
    let cache = FeatureCache::new(&cfg.cache_dir);
    let params = cfg.feature_params();
    let entries: Vec<&IndexEntry> = train_index.entries().iter().chain(parts.test.entries()).collect();
    let mut summary = FeatureSummary::default();
    for (i, entry) in entries.iter().enumerate() {
        match entry_features(&cache, entry, cfg.feature_kind, &params) {
            Ok((_, true)) => summary.computed += 1,
            Ok((_, false)) => summary.cached += 1,
            Err(e) => {
                log!(log, "failed {}: {e}", entry.key());
                summary.failed.push((entry.key(), e.to_string()));
            }
        }
        if (i + 1) % 50 == 0 || i + 1 == entries.len() {
            log!(log, "features {}/{}", i + 1, entries.len());
        }
    }
    log!(
        log,
        "{} computed, {} cached, {} failed",
        summary.computed,
        summary.cached,
        summary.failed.len()
    );
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecordingSegments {
    pub recording: String,
    pub cycles: Vec<CycleBoundary>,
}

/// Cycle boundaries for every original recording, with the configured offsets.
pub fn cmd_segment(cfg: &RunConfig, log: &mut dyn Write) -> Result<Vec<RecordingSegments>> {
    let index = load_index(cfg)?.originals();
    let mut out = Vec::with_capacity(index.len());
    for entry in index.entries() {
        let clip = load_audio(&entry.audio_path, cfg.sample_rate)?;
        let cycles = segment_cycles(&clip, cfg.offsets(), &cfg.segment)?;
        out.push(RecordingSegments {
            recording: entry.stem(),
            cycles,
        });
    }
    write_text(&cfg.out_dir.join(SEGMENTS_FILE), &to_fixed_json(&out))?;
    log!(
        log,
        "{} cycles in {} recordings",
        out.iter().map(|r| r.cycles.len()).sum::<usize>(),
        out.len()
    );
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CalibrationOutput {
    pub delta_start: f64,
    pub delta_end: f64,
    pub objective_before: f64,
    pub objective_after: f64,
    pub n_matches: usize,
    pub n_recordings: usize,
}

/// Fit the global start/end offsets against every annotated recording.
pub fn cmd_calibrate(cfg: &RunConfig, log: &mut dyn Write) -> Result<CalibrationOutput> {
    let index = load_index(cfg)?.originals();
    let mut pairs = Vec::new();
    let mut n_recordings = 0;
    for entry in index.entries() {
        let Some(ann_path) = &entry.annotation_path else {
            continue;
        };
        let annotations = parse_cycle_annotations(ann_path)?;
        if annotations.is_empty() {
            continue;
        }
        let clip = load_audio(&entry.audio_path, cfg.sample_rate)?;
        let peaks = detect_cycle_peaks(&clip, &cfg.segment)?;
        pairs.extend(collect_matches(&peaks, &annotations));
        n_recordings += 1;
    }
    let report = calibrate_offsets(&pairs)?;
    let out = CalibrationOutput {
        delta_start: report.delta_start,
        delta_end: report.delta_end,
        objective_before: report.objective_before,
        objective_after: report.objective_after,
        n_matches: report.n_matches,
        n_recordings,
    };
    write_text(&cfg.out_dir.join(CALIBRATION_FILE), &to_fixed_json(&out))?;
    log!(
        log,
        "offsets start {:+.4} s, end {:+.4} s; objective {:.4} -> {:.4} over {} matches",
        out.delta_start,
        out.delta_end,
        out.objective_before,
        out.objective_after,
        out.n_matches
    );
    Ok(out)
}

/// Contents of `metrics.json` written by `train`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainSummary {
    pub feature_kind: FeatureKind,
    pub architecture: Architecture,
    pub seed: u64,
    pub epochs: usize,
    pub n_train: usize,
    pub n_train_augmented: usize,
    pub n_test: usize,
    pub input_mean: Option<f64>,
    pub input_std: Option<f64>,
    pub test: MetricsReport,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: PathBuf,
    pub history: PathBuf,
    pub metrics: PathBuf,
    pub summary: TrainSummary,
}

/// Split, balance the train side, train, and evaluate once on the test
/// split. The test split doubles as the per-epoch monitoring set; it never
/// influences the weights.
pub fn cmd_train(cfg: &RunConfig, log: &mut dyn Write) -> Result<TrainOutcome> {
    let _lock = CacheLock::acquire(&cfg.cache_dir)?;
    let index = load_index(cfg)?;
    let parts = split(cfg, &index)?;
    let (train_index, warning) = balanced(&parts.train, cfg.seed, cfg.augment)?;
    if let Some(w) = warning {
        log!(log, "warning: {w}");
    }
    let cache = FeatureCache::new(&cfg.cache_dir);
    let train_set = labeled_set(cfg, &cache, &train_index)?;
    let test_set = labeled_set(cfg, &cache, &parts.test)?;
    log!(
        log,
        "training {} on {} samples ({} augmented), testing on {}",
        cfg.feature_kind,
        train_set.len(),
        train_index.len() - parts.train.len(),
        test_set.len()
    );
    let (model_cfg, stats) = model_for(cfg, &train_set);
    let (net, history) = train(
        &model_cfg,
        &train_set,
        Some(&test_set),
        &cfg.train_config(),
        cfg.seed,
    )?;
    for r in &history.epochs {
        log!(
            log,
            "epoch {:>2}: loss {:.4} acc {:.4} | test loss {:.4} acc {:.4}",
            r.epoch,
            r.train_loss,
            r.train_acc,
            r.val_loss.unwrap_or(f64::NAN),
            r.val_acc.unwrap_or(f64::NAN)
        );
    }
    let eval = evaluate(&net, &test_set, EVAL_CHUNK)?;
    let report = evaluate_scores(&eval.p_copd, &test_set.labels)?;
    let summary = TrainSummary {
        feature_kind: cfg.feature_kind,
        architecture: cfg.architecture,
        seed: cfg.seed,
        epochs: cfg.epochs,
        n_train: parts.train.len(),
        n_train_augmented: train_index.len() - parts.train.len(),
        n_test: parts.test.len(),
        input_mean: stats.map(|s| s.0),
        input_std: stats.map(|s| s.1),
        test: report,
    };
    let outcome = TrainOutcome {
        model: cfg.out_dir.join(MODEL_FILE),
        history: cfg.out_dir.join(HISTORY_FILE),
        metrics: cfg.out_dir.join(METRICS_FILE),
        summary,
    };
    save_model(&net, cfg.feature_kind, &outcome.model)?;
    emit_history(&history, &outcome.history)?;
    write_text(&outcome.metrics, &to_fixed_json(&outcome.summary))?;
    log!(
        log,
        "test accuracy {:.4}, weighted F1 {:.4}",
        outcome.summary.test.accuracy,
        outcome.summary.test.weighted_f1
    );
    Ok(outcome)
}

/// k-fold cross-validation over the train split only. Each fold balances
/// and standardizes its own training part, so nothing leaks from the
/// validation fold.
pub fn cmd_cv(cfg: &RunConfig, log: &mut dyn Write) -> Result<CvReport> {
    let _lock = CacheLock::acquire(&cfg.cache_dir)?;
    let index = load_index(cfg)?;
    let train_orig = split(cfg, &index)?.train;
    let cache = FeatureCache::new(&cfg.cache_dir);
    let run_fold = |fold_train: &[usize], validation: &[usize], fold_seed: u64| -> Result<FoldOutcome> {
        let (fold_index, _) = balanced(&train_orig.subset(fold_train), fold_seed, cfg.augment)?;
        let train_set = labeled_set(cfg, &cache, &fold_index)?;
        let val_set = labeled_set(cfg, &cache, &train_orig.subset(validation))?;
        let (model_cfg, _) = model_for(cfg, &train_set);
        let (net, _) = train(&model_cfg, &train_set, None, &cfg.train_config(), fold_seed)?;
        let eval = evaluate(&net, &val_set, EVAL_CHUNK)?;
        Ok(FoldOutcome {
            labels: val_set.labels,
            p_copd: eval.p_copd,
        })
    };
    // The fold callback can only return EvalError; keep the real error aside.
    let mut failure = None;
    let result = cross_validate(&train_orig, cfg.k, cfg.seed, |i, fold, fold_seed| match run_fold(
        &fold.train,
        &fold.validation,
        fold_seed,
    ) {
        Ok(out) => {
            let correct = out
                .p_copd
                .iter()
                .zip(&out.labels)
                .filter(|&(&p, &l)| usize::from(p > 0.5) == l)
                .count();
            log!(
                log,
                "fold {}/{}: accuracy {:.4}",
                i + 1,
                cfg.k,
                correct as f64 / out.labels.len() as f64
            );
            Ok(out)
        }
        Err(e) => {
            failure = Some(e);
            Err(EvalError::Empty)
        }
    });
    let report = match (result, failure) {
        (_, Some(e)) => return Err(e),
        (r, None) => r?,
    };
    emit_cv_report(&report, &cfg.out_dir.join(CV_REPORT_FILE))?;
    log!(
        log,
        "{}-fold accuracy {:.4} +/- {:.4}",
        report.k,
        report.mean.accuracy,
        report.std.accuracy
    );
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Prediction {
    pub label: &'static str,
    pub p_copd: f64,
    pub p_non_copd: f64,
}

/// Classify one WAV file. The feature kind comes from the model file; the
/// remaining preprocessing parameters come from the config.
pub fn cmd_predict(cfg: &RunConfig, model_path: &Path, wav_path: &Path) -> Result<Prediction> {
    let (net, kind): (Network<f32>, FeatureKind) = load_model(model_path)?;
    let params = cfg.feature_params();
    let (rows, cols) = params.shape();
    let want = [rows, cols, 1];
    if net.config.input != want {
        return Err(CliError::InputMismatch {
            model: net.config.input,
            config: want,
        });
    }
    let clip = load_audio(wav_path, params.sample_rate)?;
    let clip = standardize_duration(&clip, params.duration_seconds);
    let m = extract_features(&clip, kind, &params)?;
    let x = Tensor::from_vec(&[1, rows, cols, 1], m.values.iter().copied().collect())?;
    let probs = net.predict_proba(&x)?;
    let p_copd = probs[0][1] as f64;
    let p_non_copd = 1.0 - p_copd;
    let label = if p_copd > 0.5 {
        BinaryLabel::Copd
    } else {
        BinaryLabel::NonCopd
    }
    .name();
    Ok(Prediction {
        label,
        p_copd,
        p_non_copd,
    })
}
