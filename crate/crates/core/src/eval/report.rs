use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;
use serde_json::Value;

use super::cv::CvReport;
use super::metrics::MetricsReport;
use super::{EvalError, Result};
use crate::nn::TrainHistory;

pub const HISTORY_HEADER: &str = "epoch,train_loss,val_loss,train_acc,val_acc,val_auc";

fn fixed(v: f64) -> String {
    format!("{v:.6}")
}

fn opt(v: Option<f64>) -> String {
    v.map(fixed).unwrap_or_default()
}

/// Per-epoch curves as CSV. Undefined validation values are empty fields.
pub fn history_csv(history: &TrainHistory) -> Result<String> {
    if history.epochs.is_empty() {
        return Err(EvalError::EmptyHistory);
    }
    let mut s = String::from(HISTORY_HEADER);
    s.push('\n');
    for r in &history.epochs {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.epoch,
            fixed(r.train_loss),
            opt(r.val_loss),
            fixed(r.train_acc),
            opt(r.val_acc),
            opt(r.val_auc)
        );
    }
    Ok(s)
}

fn render(v: &Value, indent: usize, out: &mut String) {
    let pad = |n: usize| "  ".repeat(n);
    match v {
        Value::Number(n) => match (n.as_u64(), n.as_i64()) {
            (Some(u), _) => out.push_str(&u.to_string()),
            (None, Some(i)) => out.push_str(&i.to_string()),
            _ => out.push_str(&fixed(n.as_f64().expect("finite number"))),
        },
        Value::Array(items) if items.is_empty() => out.push_str("[]"),
        Value::Array(items) => {
            out.push_str("[\n");
            for (i, item) in items.iter().enumerate() {
                out.push_str(&pad(indent + 1));
                render(item, indent + 1, out);
                out.push_str(if i + 1 < items.len() { ",\n" } else { "\n" });
            }
            out.push_str(&pad(indent));
            out.push(']');
        }
        Value::Object(map) if map.is_empty() => out.push_str("{}"),
        Value::Object(map) => {
            out.push_str("{\n");
            for (i, (k, item)) in map.iter().enumerate() {
                out.push_str(&pad(indent + 1));
                out.push_str(&Value::String(k.clone()).to_string());
                out.push_str(": ");
                render(item, indent + 1, out);
                out.push_str(if i + 1 < map.len() { ",\n" } else { "\n" });
            }
            out.push_str(&pad(indent));
            out.push('}');
        }
        other => out.push_str(&other.to_string()),
    }
}

/// Pretty JSON in which every floating-point number has six decimals.
/// Integers stay integers; keys are sorted.
pub fn to_fixed_json<T: Serialize>(value: &T) -> String {
    let v = serde_json::to_value(value).expect("report types serialize");
    let mut out = String::new();
    render(&v, 0, &mut out);
    out.push('\n');
    out
}

fn write(path: &Path, text: &str) -> Result<()> {
    let io = |e| EvalError::Io {
        path: path.to_path_buf(),
        source: e,
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io)?;
    }
    fs::write(path, text).map_err(io)
}

/// Write the history CSV; an empty history writes nothing and errors.
pub fn emit_history(history: &TrainHistory, path: &Path) -> Result<()> {
    write(path, &history_csv(history)?)
}

pub fn emit_metrics(report: &MetricsReport, path: &Path) -> Result<()> {
    write(path, &to_fixed_json(report))
}

/// JSON with one entry per fold and the aggregate block.
pub fn emit_cv_report(report: &CvReport, path: &Path) -> Result<()> {
    if report.folds.is_empty() {
        return Err(EvalError::Empty);
    }
    write(path, &to_fixed_json(report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{confusion, metrics};
    use crate::nn::EpochRecord;

    fn history(n: usize) -> TrainHistory {
        TrainHistory {
            epochs: (1..=n)
                .map(|e| EpochRecord {
                    epoch: e,
                    train_loss: 1.0 / e as f64,
                    train_acc: 0.5,
                    val_loss: Some(0.25),
                    val_acc: Some(2.0 / 3.0),
                    val_auc: if e == 1 { None } else { Some(1.0) },
                })
                .collect(),
        }
    }

    #[test]
    fn fourteen_epochs_give_fourteen_rows() {
        let csv = history_csv(&history(14)).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 15);
        assert_eq!(lines[0], HISTORY_HEADER);
        assert_eq!(lines[1], "1,1.000000,0.250000,0.500000,0.666667,");
        assert_eq!(lines[2], "2,0.500000,0.250000,0.500000,0.666667,1.000000");
    }

    #[test]
    fn empty_history_writes_no_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.csv");
        assert!(matches!(
            emit_history(&TrainHistory::default(), &path),
            Err(EvalError::EmptyHistory)
        ));
        assert!(!path.exists());
    }

    #[test]
    fn json_floats_have_six_decimals() {
        let m = metrics(&confusion(&[1, 0, 1], &[1, 0, 0]).unwrap()).unwrap();
        let text = to_fixed_json(&m);
        assert!(text.contains("\"accuracy\": 0.666667"), "{text}");
        assert!(text.contains("\"tp\": 1"));
        assert!(text.contains("\"auc\": null"));
        let back: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(back["confusion"]["fn"], 0);
    }
}
