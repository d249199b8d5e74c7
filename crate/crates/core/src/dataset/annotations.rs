use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DatasetError, Result};

/// One hand-annotated respiratory cycle, times in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CycleAnnotation {
    pub start: f64,
    pub end: f64,
    pub crackles: bool,
    pub wheezes: bool,
}

impl CycleAnnotation {
    pub fn midpoint(&self) -> f64 {
        0.5 * (self.start + self.end)
    }
}

/// Reads an annotation file of whitespace-separated `start end crackles wheezes` rows.
pub fn parse_cycle_annotations(path: impl AsRef<Path>) -> Result<Vec<CycleAnnotation>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| DatasetError::io(path, e))?;
    parse_cycle_annotations_str(&text)
}

pub fn parse_cycle_annotations_str(text: &str) -> Result<Vec<CycleAnnotation>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let row = raw.trim();
        if row.is_empty() {
            continue;
        }
        let bad = |reason: String| DatasetError::MalformedRow { line, reason };
        let fields: Vec<&str> = row.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(bad(format!("expected 4 fields, found {}", fields.len())));
        }
        let time = |s: &str| -> Result<f64> {
            match s.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(bad(format!("{s:?} is not a time"))),
            }
        };
        let flag = |s: &str| -> Result<bool> {
            match s {
                "0" => Ok(false),
                "1" => Ok(true),
                _ => Err(bad(format!("flag {s:?} is not 0 or 1"))),
            }
        };
        let start = time(fields[0])?;
        let end = time(fields[1])?;
        if start < 0.0 || start >= end {
            return Err(bad(format!("start {start} must be >= 0 and < end {end}")));
        }
        out.push(CycleAnnotation {
            start,
            end,
            crackles: flag(fields[2])?,
            wheezes: flag(fields[3])?,
        });
    }
    Ok(out)
}
