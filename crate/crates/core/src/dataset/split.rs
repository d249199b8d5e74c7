//! Stratified train/test splitting and k-fold partitioning.

use std::collections::{BTreeMap, HashSet};
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{BinaryLabel, DatasetError, DatasetIndex, Result};

/// Maximum allowed gap between a split's COPD fraction and the global one.
const STRATIFY_TOLERANCE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitStrategy {
    #[default]
    RecordingLevel,
    /// Every patient's recordings land on one side only.
    PatientGrouped,
}

#[derive(Debug, Clone)]
pub struct TrainTestSplit {
    pub train: DatasetIndex,
    pub test: DatasetIndex,
}

/// One cross-validation rotation; indices refer to the index passed to [`make_folds`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
}

/// Splits `count` items across classes proportionally, distributing the
/// rounding remainder by largest fractional part (smaller class first on ties).
fn allocate(class_sizes: &[usize], count: usize) -> Vec<usize> {
    let total: usize = class_sizes.iter().sum();
    let exact: Vec<f64> = class_sizes
        .iter()
        .map(|&n| n as f64 * count as f64 / total as f64)
        .collect();
    let mut alloc: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..class_sizes.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.total_cmp(&fa)
            .then(class_sizes[a].cmp(&class_sizes[b]))
            .then(a.cmp(&b))
    });
    let mut remaining = count - alloc.iter().sum::<usize>();
    for c in order {
        if remaining == 0 {
            break;
        }
        if alloc[c] < class_sizes[c] {
            alloc[c] += 1;
            remaining -= 1;
        }
    }
    alloc
}

fn class_groups(index: &DatasetIndex, members: &[usize]) -> BTreeMap<BinaryLabel, Vec<usize>> {
    let mut groups: BTreeMap<BinaryLabel, Vec<usize>> = BTreeMap::new();
    for &i in members {
        groups.entry(index.get(i).label).or_default().push(i);
    }
    groups
}

fn copd_fraction(index: &DatasetIndex, members: &[usize]) -> f64 {
    let copd = members
        .iter()
        .filter(|&&i| index.get(i).label == BinaryLabel::Copd)
        .count();
    copd as f64 / members.len() as f64
}

/// Holds out `test_fraction` of the original recordings, stratified by
/// label. Augmented entries only ever land in the train side, and only
/// when their source recording did.
pub fn split_train_test(
    index: &DatasetIndex,
    test_fraction: f64,
    seed: u64,
    strategy: SplitStrategy,
) -> Result<TrainTestSplit> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(DatasetError::InvalidFraction(test_fraction));
    }
    let originals: Vec<usize> = (0..index.len())
        .filter(|&i| index.get(i).provenance.is_original())
        .collect();
    let n = originals.len();
    let n_test = (n as f64 * test_fraction).round() as usize;
    if n_test == 0 || n_test >= n {
        return Err(DatasetError::TooFewEntries(format!(
            "{n} original entries cannot be split at fraction {test_fraction}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let groups = class_groups(index, &originals);
    let sizes: Vec<usize> = groups.values().map(Vec::len).collect();
    let targets = allocate(&sizes, n_test);

    let mut test: HashSet<usize> = HashSet::new();
    match strategy {
        SplitStrategy::RecordingLevel => {
            for (members, &target) in groups.values().zip(&targets) {
                let mut members = members.clone();
                members.shuffle(&mut rng);
                test.extend(members.into_iter().take(target));
            }
        }
        SplitStrategy::PatientGrouped => {
            for (members, &target) in groups.values().zip(&targets) {
                let mut patients: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
                for &i in members {
                    patients.entry(index.get(i).meta.patient_id).or_default().push(i);
                }
                let mut patients: Vec<Vec<usize>> = patients.into_values().collect();
                patients.shuffle(&mut rng);
                let mut taken = 0usize;
                for group in patients {
                    if taken >= target {
                        break;
                    }
                    let after = taken + group.len();
                    // Take the patient unless that lands further from the target;
                    // ties take, so a class with a positive target is never left out.
                    if after <= target || after - target <= target - taken {
                        taken = after;
                        test.extend(group);
                    }
                }
            }
            // A patient's entries may straddle label groups; pull them all to one side.
            let test_patients: HashSet<u32> = test.iter().map(|&i| index.get(i).meta.patient_id).collect();
            test = originals
                .iter()
                .copied()
                .filter(|&i| test_patients.contains(&index.get(i).meta.patient_id))
                .collect();
        }
    }

    let test_idx: Vec<usize> = originals.iter().copied().filter(|i| test.contains(i)).collect();
    let train_orig: Vec<usize> = originals.iter().copied().filter(|i| !test.contains(i)).collect();
    if test_idx.is_empty() || train_orig.is_empty() {
        return Err(DatasetError::TooFewEntries(
            "split left one side empty".to_string(),
        ));
    }
    let global = copd_fraction(index, &originals);
    for (side, members) in [("test", &test_idx), ("train", &train_orig)] {
        let frac = copd_fraction(index, members);
        if (frac - global).abs() > STRATIFY_TOLERANCE + 1e-12 {
            return Err(DatasetError::TooFewEntries(format!(
                "cannot stratify: {side} COPD fraction {frac:.3} vs global {global:.3}"
            )));
        }
    }

    let train_sources: HashSet<&PathBuf> = train_orig.iter().map(|&i| &index.get(i).audio_path).collect();
    let train_idx: Vec<usize> = (0..index.len())
        .filter(|i| !test.contains(i))
        .filter(|&i| {
            let e = index.get(i);
            e.provenance.is_original() || train_sources.contains(&e.audio_path)
        })
        .collect();
    Ok(TrainTestSplit {
        train: index.subset(&train_idx),
        test: index.subset(&test_idx),
    })
}

/// Deals the original entries into `k` label-stratified validation folds
/// whose sizes differ by at most one. Augmented entries join the training
/// side of every fold that does not validate their source recording.
pub fn make_folds(index: &DatasetIndex, k: usize, seed: u64) -> Result<Vec<Fold>> {
    if k < 2 {
        return Err(DatasetError::InvalidK(k));
    }
    let originals: Vec<usize> = (0..index.len())
        .filter(|&i| index.get(i).provenance.is_original())
        .collect();
    if originals.len() < k {
        return Err(DatasetError::TooFewEntries(format!(
            "{} entries for {k} folds",
            originals.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order = Vec::with_capacity(originals.len());
    for mut members in class_groups(index, &originals).into_values() {
        members.shuffle(&mut rng);
        order.extend(members);
    }
    let mut validation = vec![Vec::new(); k];
    for (pos, i) in order.into_iter().enumerate() {
        validation[pos % k].push(i);
    }
    Ok(validation
        .into_iter()
        .map(|mut val| {
            val.sort_unstable();
            let held: HashSet<&PathBuf> = val.iter().map(|&i| &index.get(i).audio_path).collect();
            let train = (0..index.len())
                .filter(|i| val.binary_search(i).is_err())
                .filter(|&i| {
                    let e = index.get(i);
                    e.provenance.is_original() || !held.contains(&e.audio_path)
                })
                .collect();
            Fold {
                train,
                validation: val,
            }
        })
        .collect())
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::dataset::{
        AcquisitionMode, AugmentMethod, AugmentationSpec, ChestLocation, Diagnosis, IndexEntry, Provenance,
        RecordingMeta,
    };

    pub(crate) fn synthetic_index(n: usize, copd_every: usize, per_patient: usize) -> DatasetIndex {
        let entries = (0..n)
            .map(|i| {
                let patient = 100 + (i / per_patient) as u32;
                let diagnosis = if (i / per_patient) % copd_every == 0 {
                    Diagnosis::Copd
                } else {
                    Diagnosis::Healthy
                };
                let meta = RecordingMeta {
                    patient_id: patient,
                    recording_index: format!("{}b1", i % per_patient + 1),
                    chest_location: ChestLocation::Al,
                    acquisition_mode: AcquisitionMode::SingleChannel,
                    equipment: "Meditron".into(),
                };
                IndexEntry {
                    audio_path: format!("/data/{meta}.wav").into(),
                    annotation_path: None,
                    meta,
                    diagnosis,
                    label: diagnosis.binary_label(),
                    provenance: Provenance::Original,
                }
            })
            .collect();
        DatasetIndex::new(entries).unwrap()
    }

    fn keys(index: &DatasetIndex) -> HashSet<String> {
        index.entries().iter().map(|e| e.key()).collect()
    }

    #[test]
    fn hundred_entries_split_ten_ninety() {
        let index = synthetic_index(100, 2, 1);
        let split = split_train_test(&index, 0.1, 7, SplitStrategy::RecordingLevel).unwrap();
        assert_eq!(split.test.len(), 10);
        assert_eq!(split.train.len(), 90);
        assert!(keys(&split.train).is_disjoint(&keys(&split.test)));
        assert!((split.test.copd_fraction() - 0.5).abs() <= 0.05);
    }

    #[test]
    fn same_seed_same_split() {
        let index = synthetic_index(200, 3, 2);
        for strategy in [SplitStrategy::RecordingLevel, SplitStrategy::PatientGrouped] {
            let a = split_train_test(&index, 0.1, 42, strategy).unwrap();
            let b = split_train_test(&index, 0.1, 42, strategy).unwrap();
            assert_eq!(a.test, b.test);
            assert_eq!(a.train, b.train);
        }
    }

    #[test]
    fn patient_grouped_keeps_patients_whole() {
        let index = synthetic_index(300, 4, 3);
        let split = split_train_test(&index, 0.1, 1, SplitStrategy::PatientGrouped).unwrap();
        let train: HashSet<u32> = split.train.entries().iter().map(|e| e.meta.patient_id).collect();
        let test: HashSet<u32> = split.test.entries().iter().map(|e| e.meta.patient_id).collect();
        assert!(train.is_disjoint(&test));
        assert_eq!(split.train.len() + split.test.len(), 300);
    }

    #[test]
    fn impossible_stratification_rejected() {
        let index = synthetic_index(10, 2, 1);
        assert!(matches!(
            split_train_test(&index, 0.1, 0, SplitStrategy::RecordingLevel),
            Err(DatasetError::TooFewEntries(_))
        ));
        assert!(matches!(
            split_train_test(&index, 1.5, 0, SplitStrategy::RecordingLevel),
            Err(DatasetError::InvalidFraction(_))
        ));
    }

    #[test]
    fn augmented_entries_never_in_test() {
        let index = synthetic_index(100, 2, 1);
        let extra: Vec<IndexEntry> = index
            .entries()
            .iter()
            .map(|e| {
                e.augmented(AugmentationSpec {
                    method: AugmentMethod::TimeShift,
                    magnitude: 1.0,
                    seed: 0,
                })
            })
            .collect();
        let index = index.with_augmented(extra).unwrap();
        let split = split_train_test(&index, 0.1, 3, SplitStrategy::RecordingLevel).unwrap();
        assert!(split.test.entries().iter().all(|e| e.provenance.is_original()));
        let test_paths: HashSet<_> = split.test.entries().iter().map(|e| &e.audio_path).collect();
        assert!(split
            .train
            .entries()
            .iter()
            .all(|e| !test_paths.contains(&e.audio_path)));
        assert_eq!(split.train.len(), 180);
    }

    #[test]
    fn twenty_entries_ten_folds() {
        let index = synthetic_index(20, 2, 1);
        let folds = make_folds(&index, 10, 5).unwrap();
        assert_eq!(folds.len(), 10);
        let mut all: Vec<usize> = Vec::new();
        for f in &folds {
            assert_eq!(f.validation.len(), 2);
            assert_eq!(f.train.len(), 18);
            all.extend(&f.validation);
        }
        all.sort_unstable();
        assert_eq!(all, (0..20).collect::<Vec<_>>());
    }

    #[test]
    fn fold_guards() {
        let index = synthetic_index(5, 2, 1);
        assert!(matches!(make_folds(&index, 1, 0), Err(DatasetError::InvalidK(1))));
        assert!(matches!(
            make_folds(&index, 10, 0),
            Err(DatasetError::TooFewEntries(_))
        ));
    }

    #[test]
    fn folds_never_touch_test_split() {
        let index = synthetic_index(237, 3, 2);
        let split = split_train_test(&index, 0.1, 11, SplitStrategy::RecordingLevel).unwrap();
        let test = keys(&split.test);
        for fold in make_folds(&split.train, 10, 11).unwrap() {
            let sizes = fold.validation.len();
            assert!((21..=22).contains(&sizes), "{sizes}");
            for &i in fold.validation.iter().chain(&fold.train) {
                assert!(!test.contains(&split.train.get(i).key()));
            }
        }
    }

    #[test]
    fn allocation_sums_to_count() {
        assert_eq!(allocate(&[95, 5], 10), vec![9, 1]);
        assert_eq!(allocate(&[50, 50], 10), vec![5, 5]);
        assert_eq!(allocate(&[1, 1, 1], 2).iter().sum::<usize>(), 2);
    }
}
