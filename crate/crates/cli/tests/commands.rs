mod common;

use std::path::Path;
use std::process::Command;

use copdnet::dataset::{split_train_test, DatasetError};
use copdnet::features::{read_feature_file, FeatureKind};
use copdnet::nn::NnError;
use copdnet::segmentation::SegmentationError;
use copdnet_cli::commands::{load_index, CV_REPORT_FILE, HISTORY_FILE, METRICS_FILE, MODEL_FILE};
use copdnet_cli::lock::LOCK_FILE;
use copdnet_cli::{
    cmd_calibrate, cmd_cv, cmd_features, cmd_index, cmd_predict, cmd_segment, cmd_train, CliError, RunConfig,
};

fn sink() -> std::io::Sink {
    std::io::sink()
}

/// Short clips and a short window keep training cheap.
fn quick_config(root: &Path, dataset: &Path, extra: &str) -> RunConfig {
    let text = format!(
        "dataset_dir = {}\ncache_dir = cache\nout_dir = out\nduration_seconds = 5\n{extra}",
        dataset.display()
    );
    RunConfig::parse(&text, root).unwrap()
}

fn files_in(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    names
}

#[test]
fn index_counts_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = common::write_corpus(&dir.path().join("corpus"), 12, 2.0, false);
    let cfg = common::smoke_config(dir.path(), &corpus);
    let summary = cmd_index(&cfg, &mut sink()).unwrap();
    assert_eq!(summary.entries, 12);
    // Patients 0 and 3 of six are COPD, two recordings each.
    assert_eq!(summary.by_label["copd"], 4);
    assert_eq!(summary.by_label.values().sum::<usize>(), 12);
    assert_eq!(summary.by_diagnosis["COPD"], 4);
    let manifest = std::fs::read_to_string(&summary.manifest).unwrap();
    assert_eq!(manifest.lines().count(), 12);
}

#[test]
fn index_errors() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty");
    std::fs::create_dir_all(&empty).unwrap();
    std::fs::write(empty.join(common::DIAGNOSIS_FILE), "101\tCOPD\n").unwrap();
    let cfg = common::smoke_config(dir.path(), &empty);
    assert!(matches!(
        cmd_index(&cfg, &mut sink()),
        Err(CliError::Dataset(DatasetError::EmptyDataset(_)))
    ));

    let no_table = dir.path().join("nested").join("no_table");
    common::write_corpus(&no_table, 2, 1.0, false);
    std::fs::remove_file(no_table.join(common::DIAGNOSIS_FILE)).unwrap();
    let cfg = common::smoke_config(dir.path(), &no_table);
    assert!(matches!(
        cmd_index(&cfg, &mut sink()),
        Err(CliError::Dataset(DatasetError::MissingDiagnosisTable(_)))
    ));

    let cfg = RunConfig::default();
    assert!(matches!(
        cmd_index(&cfg, &mut sink()),
        Err(CliError::MissingDatasetDir)
    ));
}

#[test]
fn features_are_cached_with_the_network_shape_and_reused() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = common::write_corpus(&dir.path().join("corpus"), 10, 3.0, false);
    let cfg = RunConfig {
        test_fraction: 0.5,
        ..common::smoke_config(dir.path(), &corpus)
    };
    let first = cmd_features(&cfg, &mut sink()).unwrap();
    assert!(first.ok());
    assert!(first.computed >= 10, "{first:?}");
    assert_eq!(first.cached, 0);

    let kind_dir = cfg.cache_dir.join(FeatureKind::Mfcc.name());
    let files = files_in(&kind_dir);
    assert_eq!(files.len(), first.computed);
    for f in &files {
        let (m, sr) = read_feature_file(&kind_dir.join(f)).unwrap();
        assert_eq!(m.shape(), (40, 862));
        assert_eq!(sr, 22050);
    }
    let mtimes: Vec<_> = files
        .iter()
        .map(|f| std::fs::metadata(kind_dir.join(f)).unwrap().modified().unwrap())
        .collect();

    let second = cmd_features(&cfg, &mut sink()).unwrap();
    assert_eq!(second.computed, 0);
    assert_eq!(second.cached, first.computed);
    let after: Vec<_> = files
        .iter()
        .map(|f| std::fs::metadata(kind_dir.join(f)).unwrap().modified().unwrap())
        .collect();
    assert_eq!(mtimes, after);
    assert!(!cfg.cache_dir.join(LOCK_FILE).exists());
}

#[test]
fn corrupt_cache_entry_is_recomputed() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = common::write_corpus(&dir.path().join("corpus"), 10, 2.0, false);
    let cfg = quick_config(dir.path(), &corpus, "augment = false\ntest_fraction = 0.5\n");
    let first = cmd_features(&cfg, &mut sink()).unwrap();
    let kind_dir = cfg.cache_dir.join("mfcc");
    let victim = kind_dir.join(&files_in(&kind_dir)[0]);
    std::fs::write(&victim, b"CPDF garbage").unwrap();
    let second = cmd_features(&cfg, &mut sink()).unwrap();
    assert_eq!(second.computed, 1);
    assert_eq!(second.cached, first.computed - 1);
    assert!(read_feature_file(&victim).is_ok());
}

#[test]
fn one_corrupt_wav_fails_alone() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = common::write_corpus(&dir.path().join("corpus"), 10, 2.0, false);
    let bad = "102_1b1_Al_sc_Meditron";
    std::fs::write(corpus.join(format!("{bad}.wav")), b"RIFF....not audio").unwrap();
    let cfg = quick_config(dir.path(), &corpus, "augment = false\ntest_fraction = 0.5\n");
    let summary = cmd_features(&cfg, &mut sink()).unwrap();
    assert!(!summary.ok());
    assert_eq!(summary.failed.len(), 1);
    assert!(summary.failed[0].0.starts_with(bad));
    assert_eq!(summary.computed, 9);
}

#[test]
fn held_lock_blocks_cache_commands() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = common::write_corpus(&dir.path().join("corpus"), 4, 1.0, false);
    let cfg = common::smoke_config(dir.path(), &corpus);
    let _held = copdnet_cli::CacheLock::acquire(&cfg.cache_dir).unwrap();
    assert!(matches!(
        cmd_features(&cfg, &mut sink()),
        Err(CliError::Locked(_))
    ));
    assert!(matches!(cmd_train(&cfg, &mut sink()), Err(CliError::Locked(_))));
}

#[test]
fn segment_and_calibrate() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = common::write_corpus(&dir.path().join("corpus"), 4, 12.0, true);
    let cfg = common::smoke_config(dir.path(), &corpus);
    let segments = cmd_segment(&cfg, &mut sink()).unwrap();
    assert_eq!(segments.len(), 4);
    for r in &segments {
        // Bursts every 3 s starting at 1.5 s: 1.5, 4.5, 7.5, 10.5.
        assert_eq!(r.cycles.len(), 4, "{r:?}");
        assert!(r.cycles.windows(2).all(|w| w[0].end <= w[1].start));
    }

    let a = cmd_calibrate(&cfg, &mut sink()).unwrap();
    assert!(a.objective_after <= a.objective_before);
    assert_eq!(a.n_recordings, 4);
    assert_eq!(a.n_matches, 16);
    // Annotations span +/-1 s around each burst, wider than the detected bases.
    assert!(a.delta_start < 0.0 && a.delta_end > 0.0, "{a:?}");
    let text = std::fs::read(cfg.out_dir.join("calibration.json")).unwrap();
    let b = cmd_calibrate(&cfg, &mut sink()).unwrap();
    assert_eq!(a, b);
    assert_eq!(text, std::fs::read(cfg.out_dir.join("calibration.json")).unwrap());
}

#[test]
fn calibrate_without_annotations_has_no_matches() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = common::write_corpus(&dir.path().join("corpus"), 2, 4.0, false);
    let cfg = common::smoke_config(dir.path(), &corpus);
    assert!(matches!(
        cmd_calibrate(&cfg, &mut sink()),
        Err(CliError::Segmentation(SegmentationError::NoMatches))
    ));
}

#[test]
fn train_writes_three_artifacts_and_predict_uses_model_kind() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = common::write_corpus(&dir.path().join("corpus"), 20, 5.0, false);
    let cfg = quick_config(
        dir.path(),
        &corpus,
        "feature_kind = chroma_stft\nepochs = 2\ntest_fraction = 0.25\n",
    );
    let out = cmd_train(&cfg, &mut sink()).unwrap();
    assert_eq!(
        files_in(&cfg.out_dir),
        vec![HISTORY_FILE, METRICS_FILE, MODEL_FILE]
    );
    let history = std::fs::read_to_string(&out.history).unwrap();
    assert_eq!(history.lines().count(), 3);
    assert_eq!(out.summary.feature_kind, FeatureKind::ChromaStft);
    assert_eq!(out.summary.n_test, 5);
    let metrics: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&out.metrics).unwrap()).unwrap();
    assert_eq!(metrics["feature_kind"], "chroma_stft");
    assert_eq!(
        metrics["test"]["confusion"]["tp"].as_u64().unwrap()
            + metrics["test"]["confusion"]["fn"].as_u64().unwrap()
            + metrics["test"]["confusion"]["tn"].as_u64().unwrap()
            + metrics["test"]["confusion"]["fp"].as_u64().unwrap(),
        5
    );

    // The config says mfcc; the model file says chroma_stft and wins.
    let predict_cfg = quick_config(dir.path(), &corpus, "feature_kind = mfcc\n");
    let wav = corpus.join("101_1b1_Al_sc_Meditron.wav");
    let p = cmd_predict(&predict_cfg, &out.model, &wav).unwrap();
    assert!((p.p_copd + p.p_non_copd - 1.0).abs() <= 1e-6);
    let argmax = if p.p_copd > p.p_non_copd {
        "copd"
    } else {
        "non_copd"
    };
    assert_eq!(p.label, argmax);

    // A different clip length changes the input shape.
    let long = RunConfig {
        duration_seconds: 20.0,
        ..predict_cfg.clone()
    };
    assert!(matches!(
        cmd_predict(&long, &out.model, &wav),
        Err(CliError::InputMismatch { .. })
    ));

    let broken = dir.path().join("broken.cpdm");
    std::fs::write(&broken, b"CPDM\x01\x00").unwrap();
    assert!(matches!(
        cmd_predict(&predict_cfg, &broken, &wav),
        Err(CliError::Nn(NnError::CorruptModel(_)))
    ));
}

#[test]
fn default_epochs_are_fourteen() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig::parse("dataset_dir = x\n", dir.path()).unwrap();
    assert_eq!(cfg.epochs, 14);
    assert_eq!(cfg.train_config().epochs, 14);
}

#[test]
fn cv_reports_k_folds_over_the_train_split_only() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = common::write_corpus(&dir.path().join("corpus"), 30, 3.0, false);
    let cfg = quick_config(dir.path(), &corpus, "k = 5\naugment = false\nepochs = 1\n");
    let report = cmd_cv(&cfg, &mut sink()).unwrap();
    assert_eq!(report.k, 5);
    assert_eq!(report.folds.len(), 5);
    let index = load_index(&cfg).unwrap();
    let split = split_train_test(&index, cfg.test_fraction, cfg.seed, cfg.split_strategy).unwrap();
    let validated: usize = report.folds.iter().map(|f| f.n_validation).sum();
    assert_eq!(validated, split.train.len());
    assert_eq!(validated + split.test.len(), 30);
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(cfg.out_dir.join(CV_REPORT_FILE)).unwrap()).unwrap();
    assert_eq!(json["folds"].as_array().unwrap().len(), 5);
}

fn copdnet() -> Command {
    Command::new(env!("CARGO_BIN_EXE_copdnet"))
}

#[test]
fn binary_rejects_bad_config_before_writing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "dataset_dir = corpus\nout_dir = out\nlearning_rate = -1\n").unwrap();
    let status = copdnet()
        .args(["train", "--config"])
        .arg(&cfg)
        .env_remove(copdnet_cli::CACHE_DIR_ENV)
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert!(!status.status.success());
    assert!(String::from_utf8_lossy(&status.stderr).contains("learning_rate"));
    assert_eq!(files_in(dir.path()), vec!["run.cfg"]);

    std::fs::write(&cfg, "dataset_dir = corpus\nbogus = 1\n").unwrap();
    let status = copdnet().args(["index", "--config"]).arg(&cfg).output().unwrap();
    assert!(!status.status.success());
    assert!(String::from_utf8_lossy(&status.stderr).contains("bogus"));
}

#[test]
fn binary_index_and_predict_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = common::write_corpus(&dir.path().join("corpus"), 12, 3.0, false);
    let cfg_path = dir.path().join("run.cfg");
    std::fs::write(
        &cfg_path,
        "dataset_dir = corpus\nduration_seconds = 5\nepochs = 1\nmax_recordings = 12\ntest_fraction = 0.25\n",
    )
    .unwrap();
    let cache = dir.path().join("env-cache");
    let out = dir.path().join("cli-out");
    let run = |cmd: &str| {
        copdnet()
            .arg(cmd)
            .arg("--config")
            .arg(&cfg_path)
            .arg("--out")
            .arg(&out)
            .args(["--seed", "3"])
            .env(copdnet_cli::CACHE_DIR_ENV, &cache)
            .output()
            .unwrap()
    };
    let index = run("index");
    assert!(
        index.status.success(),
        "{}",
        String::from_utf8_lossy(&index.stderr)
    );
    assert!(out.join("manifest.jsonl").exists());
    let train = run("train");
    assert!(
        train.status.success(),
        "{}",
        String::from_utf8_lossy(&train.stderr)
    );
    assert!(cache.join("mfcc").is_dir());

    let predict = copdnet()
        .args(["predict", "--config"])
        .arg(&cfg_path)
        .arg("--model")
        .arg(out.join(MODEL_FILE))
        .arg("--wav")
        .arg(corpus.join("101_1b1_Al_sc_Meditron.wav"))
        .output()
        .unwrap();
    assert!(
        predict.status.success(),
        "{}",
        String::from_utf8_lossy(&predict.stderr)
    );
    let stdout = String::from_utf8(predict.stdout).unwrap();
    assert_eq!(stdout.lines().count(), 1);
    let v: serde_json::Value = serde_json::from_str(stdout.trim()).unwrap();
    let (pc, pn) = (v["p_copd"].as_f64().unwrap(), v["p_non_copd"].as_f64().unwrap());
    assert!((pc + pn - 1.0).abs() <= 1e-6);
    assert!(v["label"] == "copd" || v["label"] == "non_copd");
}
