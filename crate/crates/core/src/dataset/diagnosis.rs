use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{DatasetError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Diagnosis {
    #[serde(rename = "COPD")]
    Copd,
    Healthy,
    #[serde(rename = "URTI")]
    Urti,
    Bronchiectasis,
    Pneumonia,
    Bronchiolitis,
    #[serde(rename = "LRTI")]
    Lrti,
    Asthma,
}

impl Diagnosis {
    pub const ALL: [Diagnosis; 8] = [
        Diagnosis::Copd,
        Diagnosis::Healthy,
        Diagnosis::Urti,
        Diagnosis::Bronchiectasis,
        Diagnosis::Pneumonia,
        Diagnosis::Bronchiolitis,
        Diagnosis::Lrti,
        Diagnosis::Asthma,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Diagnosis::Copd => "COPD",
            Diagnosis::Healthy => "Healthy",
            Diagnosis::Urti => "URTI",
            Diagnosis::Bronchiectasis => "Bronchiectasis",
            Diagnosis::Pneumonia => "Pneumonia",
            Diagnosis::Bronchiolitis => "Bronchiolitis",
            Diagnosis::Lrti => "LRTI",
            Diagnosis::Asthma => "Asthma",
        }
    }

    pub fn binary_label(self) -> BinaryLabel {
        if self == Diagnosis::Copd {
            BinaryLabel::Copd
        } else {
            BinaryLabel::NonCopd
        }
    }
}

impl fmt::Display for Diagnosis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Diagnosis {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        Self::ALL
            .into_iter()
            .find(|d| d.name().eq_ignore_ascii_case(s))
            .ok_or(())
    }
}

/// The binary target. Class index 0 is non-COPD, 1 is COPD.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinaryLabel {
    NonCopd,
    Copd,
}

impl BinaryLabel {
    pub fn class_index(self) -> usize {
        match self {
            BinaryLabel::NonCopd => 0,
            BinaryLabel::Copd => 1,
        }
    }

    pub fn from_class_index(i: usize) -> Option<Self> {
        match i {
            0 => Some(BinaryLabel::NonCopd),
            1 => Some(BinaryLabel::Copd),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            BinaryLabel::NonCopd => "non_copd",
            BinaryLabel::Copd => "copd",
        }
    }
}

pub fn parse_diagnosis_table(path: impl AsRef<Path>) -> Result<BTreeMap<u32, Diagnosis>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| DatasetError::io(path, e))?;
    parse_diagnosis_table_str(&text)
}

/// Parses `id,diagnosis` or `id<TAB>diagnosis` rows.
pub fn parse_diagnosis_table_str(text: &str) -> Result<BTreeMap<u32, Diagnosis>> {
    let mut table = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let row = raw.trim();
        if row.is_empty() {
            continue;
        }
        let bad = |reason: String| DatasetError::MalformedRow { line, reason };
        let (id, name) = row
            .split_once(',')
            .or_else(|| row.split_once('\t'))
            .ok_or_else(|| bad("expected `id,diagnosis`".into()))?;
        let id: u32 = id
            .trim()
            .parse()
            .map_err(|_| bad(format!("patient id {id:?} is not an integer")))?;
        let diagnosis: Diagnosis = name
            .trim()
            .parse()
            .map_err(|_| bad(format!("unknown diagnosis {:?}", name.trim())))?;
        match table.insert(id, diagnosis) {
            Some(prev) if prev != diagnosis => {
                return Err(DatasetError::ConflictingDiagnosis {
                    patient: id,
                    first: prev,
                    second: diagnosis,
                })
            }
            _ => {}
        }
    }
    Ok(table)
}
