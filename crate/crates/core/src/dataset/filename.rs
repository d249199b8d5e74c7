use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{DatasetError, Result};

/// Chest location token of an ICBHI recording.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ChestLocation {
    Tc,
    Al,
    Ar,
    Pl,
    Pr,
    Ll,
    Lr,
}

impl ChestLocation {
    pub const ALL: [ChestLocation; 7] = [
        ChestLocation::Tc,
        ChestLocation::Al,
        ChestLocation::Ar,
        ChestLocation::Pl,
        ChestLocation::Pr,
        ChestLocation::Ll,
        ChestLocation::Lr,
    ];

    pub fn token(self) -> &'static str {
        match self {
            ChestLocation::Tc => "Tc",
            ChestLocation::Al => "Al",
            ChestLocation::Ar => "Ar",
            ChestLocation::Pl => "Pl",
            ChestLocation::Pr => "Pr",
            ChestLocation::Ll => "Ll",
            ChestLocation::Lr => "Lr",
        }
    }
}

impl FromStr for ChestLocation {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        Self::ALL.into_iter().find(|l| l.token() == s).ok_or(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AcquisitionMode {
    SingleChannel,
    MultiChannel,
}

impl AcquisitionMode {
    pub fn token(self) -> &'static str {
        match self {
            AcquisitionMode::SingleChannel => "sc",
            AcquisitionMode::MultiChannel => "mc",
        }
    }
}

/// Metadata encoded in a recording's filename stem.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RecordingMeta {
    pub patient_id: u32,
    pub recording_index: String,
    pub chest_location: ChestLocation,
    pub acquisition_mode: AcquisitionMode,
    pub equipment: String,
}

impl RecordingMeta {
    /// Parses a stem such as `101_1b1_Al_sc_Meditron`.
    pub fn parse(stem: &str) -> Result<Self> {
        let bad = |reason: &str| DatasetError::MalformedFilename {
            stem: stem.to_string(),
            reason: reason.to_string(),
        };
        let fields: Vec<&str> = stem.split('_').collect();
        if fields.len() != 5 {
            return Err(bad(&format!("expected 5 fields, found {}", fields.len())));
        }
        let patient_id: u32 = fields[0]
            .parse()
            .map_err(|_| bad("patient id is not a positive integer"))?;
        // Leading zeros or a sign would not survive re-serialization.
        if patient_id == 0 || patient_id.to_string() != fields[0] {
            return Err(bad("patient id is not a positive integer"));
        }
        if fields[1].is_empty() || fields[4].is_empty() {
            return Err(bad("empty recording index or equipment token"));
        }
        let chest_location = fields[2]
            .parse()
            .map_err(|_| bad(&format!("unknown chest location {:?}", fields[2])))?;
        let acquisition_mode = match fields[3] {
            "sc" => AcquisitionMode::SingleChannel,
            "mc" => AcquisitionMode::MultiChannel,
            other => return Err(bad(&format!("unknown acquisition mode {other:?}"))),
        };
        Ok(RecordingMeta {
            patient_id,
            recording_index: fields[1].to_string(),
            chest_location,
            acquisition_mode,
            equipment: fields[4].to_string(),
        })
    }

    pub fn stem(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for RecordingMeta {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}_{}_{}_{}_{}",
            self.patient_id,
            self.recording_index,
            self.chest_location.token(),
            self.acquisition_mode.token(),
            self.equipment
        )
    }
}

impl FromStr for RecordingMeta {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Self> {
        RecordingMeta::parse(s)
    }
}
