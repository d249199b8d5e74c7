use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{
    parse_diagnosis_table, AugmentationSpec, BinaryLabel, DatasetError, Diagnosis, RecordingMeta, Result,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Original,
    /// Derived from the entry with the same audio path by applying `spec`.
    Augmented {
        spec: AugmentationSpec,
    },
}

impl Provenance {
    pub fn is_original(&self) -> bool {
        matches!(self, Provenance::Original)
    }

    /// Short token distinguishing variants of the same recording.
    pub fn variant_key(&self) -> String {
        match self {
            Provenance::Original => "orig".to_string(),
            Provenance::Augmented { spec } => spec.key(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub meta: RecordingMeta,
    pub audio_path: PathBuf,
    pub annotation_path: Option<PathBuf>,
    pub diagnosis: Diagnosis,
    pub label: BinaryLabel,
    pub provenance: Provenance,
}

impl IndexEntry {
    pub fn stem(&self) -> String {
        self.meta.stem()
    }

    /// Stable identifier of this entry: stem plus provenance variant.
    pub fn key(&self) -> String {
        format!("{}.{}", self.meta.stem(), self.provenance.variant_key())
    }

    pub fn augmented(&self, spec: AugmentationSpec) -> IndexEntry {
        IndexEntry {
            provenance: Provenance::Augmented { spec },
            ..self.clone()
        }
    }
}

/// Immutable list of recordings with labels and provenance.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetIndex {
    entries: Vec<IndexEntry>,
}

impl DatasetIndex {
    /// Builds an index, checking label consistency and uniqueness of
    /// `(audio path, variant)` pairs.
    pub fn new(entries: Vec<IndexEntry>) -> Result<Self> {
        let mut seen = HashSet::new();
        for e in &entries {
            if e.label != e.diagnosis.binary_label() {
                return Err(DatasetError::InvalidSpec(format!(
                    "{}: label {} does not match diagnosis {}",
                    e.key(),
                    e.label.name(),
                    e.diagnosis
                )));
            }
            if !seen.insert((e.audio_path.clone(), e.provenance.variant_key())) {
                return Err(DatasetError::InvalidSpec(format!("duplicate entry {}", e.key())));
            }
        }
        Ok(DatasetIndex { entries })
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, i: usize) -> &IndexEntry {
        &self.entries[i]
    }

    pub fn subset(&self, indices: &[usize]) -> DatasetIndex {
        DatasetIndex {
            entries: indices.iter().map(|&i| self.entries[i].clone()).collect(),
        }
    }

    pub fn originals(&self) -> DatasetIndex {
        DatasetIndex {
            entries: self
                .entries
                .iter()
                .filter(|e| e.provenance.is_original())
                .cloned()
                .collect(),
        }
    }

    /// First `n` original recordings in path order.
    pub fn truncated(&self, n: usize) -> DatasetIndex {
        let mut entries = self.entries.clone();
        entries.sort_by(|a, b| a.audio_path.cmp(&b.audio_path));
        entries.truncate(n);
        DatasetIndex { entries }
    }

    /// Appends augmented copies; fails on duplicates like [`DatasetIndex::new`].
    pub fn with_augmented(&self, extra: Vec<IndexEntry>) -> Result<DatasetIndex> {
        let mut entries = self.entries.clone();
        entries.extend(extra);
        DatasetIndex::new(entries)
    }

    pub fn label_counts(&self) -> BTreeMap<BinaryLabel, usize> {
        let mut counts = BTreeMap::new();
        for e in &self.entries {
            *counts.entry(e.label).or_insert(0) += 1;
        }
        counts
    }

    pub fn diagnosis_counts(&self) -> BTreeMap<Diagnosis, usize> {
        let mut counts = BTreeMap::new();
        for e in &self.entries {
            *counts.entry(e.diagnosis).or_insert(0) += 1;
        }
        counts
    }

    pub fn copd_fraction(&self) -> f64 {
        if self.entries.is_empty() {
            return 0.0;
        }
        let copd = self
            .entries
            .iter()
            .filter(|e| e.label == BinaryLabel::Copd)
            .count();
        copd as f64 / self.entries.len() as f64
    }

    fn sorted_entries(&self) -> Vec<&IndexEntry> {
        let mut v: Vec<&IndexEntry> = self.entries.iter().collect();
        v.sort_by(|a, b| {
            a.audio_path
                .cmp(&b.audio_path)
                .then_with(|| a.provenance.variant_key().cmp(&b.provenance.variant_key()))
        });
        v
    }
}

/// Looks for a diagnosis table (`*diagnosis*.csv|txt`) in `dir` or its parent.
pub fn find_diagnosis_table(dir: &Path) -> Option<PathBuf> {
    let candidates = |d: &Path| -> Vec<PathBuf> {
        let Ok(rd) = std::fs::read_dir(d) else {
            return Vec::new();
        };
        let mut found: Vec<PathBuf> = rd
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                let name = p
                    .file_name()
                    .and_then(|n| n.to_str())
                    .unwrap_or("")
                    .to_ascii_lowercase();
                p.is_file()
                    && name.contains("diagnosis")
                    && (name.ends_with(".csv") || name.ends_with(".txt"))
            })
            .collect();
        found.sort();
        found
    };
    candidates(dir)
        .into_iter()
        .next()
        .or_else(|| dir.parent().and_then(|p| candidates(p).into_iter().next()))
}

fn collect_wavs(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let rd = std::fs::read_dir(dir).map_err(|e| DatasetError::io(dir, e))?;
    for entry in rd {
        let path = entry.map_err(|e| DatasetError::io(dir, e))?.path();
        if path.is_dir() {
            collect_wavs(&path, out)?;
        } else if path.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")) {
            out.push(path);
        }
    }
    Ok(())
}

/// Scans an ICBHI-layout directory: `*.wav` files, sibling `*.txt`
/// annotations and one diagnosis table.
pub fn build_index(dir: &Path, diagnosis_table: Option<&Path>) -> Result<DatasetIndex> {
    if !dir.is_dir() {
        return Err(DatasetError::EmptyDataset(dir.to_path_buf()));
    }
    let table_path = match diagnosis_table {
        Some(p) => p.to_path_buf(),
        None => {
            find_diagnosis_table(dir).ok_or_else(|| DatasetError::MissingDiagnosisTable(dir.to_path_buf()))?
        }
    };
    if !table_path.is_file() {
        return Err(DatasetError::MissingDiagnosisTable(table_path));
    }
    let table = parse_diagnosis_table(&table_path)?;

    let mut wavs = Vec::new();
    collect_wavs(dir, &mut wavs)?;
    wavs.sort();
    if wavs.is_empty() {
        return Err(DatasetError::EmptyDataset(dir.to_path_buf()));
    }
    let mut entries = Vec::with_capacity(wavs.len());
    for audio_path in wavs {
        let stem = audio_path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or_default();
        let meta = RecordingMeta::parse(stem)?;
        let diagnosis = *table
            .get(&meta.patient_id)
            .ok_or(DatasetError::MissingDiagnosis(meta.patient_id))?;
        let txt = audio_path.with_extension("txt");
        entries.push(IndexEntry {
            meta,
            annotation_path: txt.is_file().then_some(txt),
            audio_path,
            diagnosis,
            label: diagnosis.binary_label(),
            provenance: Provenance::Original,
        });
    }
    DatasetIndex::new(entries)
}

/// Writes one JSON object per line in sorted path order.
pub fn write_manifest(index: &DatasetIndex, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| DatasetError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for entry in index.sorted_entries() {
        let line = serde_json::to_string(entry).expect("index entries serialize");
        writeln!(w, "{line}").map_err(|e| DatasetError::io(path, e))?;
    }
    w.flush().map_err(|e| DatasetError::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<DatasetIndex> {
    let file = std::fs::File::open(path).map_err(|e| DatasetError::io(path, e))?;
    let mut entries = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| DatasetError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: IndexEntry = serde_json::from_str(&line).map_err(|e| DatasetError::Manifest {
            line: i + 1,
            reason: e.to_string(),
        })?;
        entries.push(entry);
    }
    DatasetIndex::new(entries)
}
