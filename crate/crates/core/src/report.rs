//! Verification reports and their canonical JSON form.
//!
//! Objects are written with sorted keys and every float as `{:.16e}` (17
//! significant digits), so equal inputs give byte-identical files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;
use serde_json::Value;
use thiserror::Error;

/// Multiplier on the standard error in every statistical comparison.
pub const STDERR_FACTOR: f64 = 3.0;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("report schema error: {0}")]
    SchemaError(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundKind {
    /// `empirical <= analytic + 3·stderr`.
    UpperBound,
    /// `|empirical − analytic| <= 3·stderr`.
    Exact,
    /// `empirical < analytic`, a fixed tolerance.
    Tolerance,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundRecord {
    pub name: String,
    pub kind: BoundKind,
    pub analytic_value: f64,
    pub empirical_value: f64,
    pub stderr: f64,
    pub pass: bool,
}

impl BoundRecord {
    pub fn upper(name: impl Into<String>, analytic: f64, empirical: f64, stderr: f64) -> Self {
        BoundRecord {
            name: name.into(),
            kind: BoundKind::UpperBound,
            analytic_value: analytic,
            empirical_value: empirical,
            stderr,
            pass: empirical <= analytic + STDERR_FACTOR * stderr,
        }
    }

    pub fn exact(name: impl Into<String>, analytic: f64, empirical: f64, stderr: f64) -> Self {
        BoundRecord {
            name: name.into(),
            kind: BoundKind::Exact,
            analytic_value: analytic,
            empirical_value: empirical,
            stderr,
            pass: (empirical - analytic).abs() <= STDERR_FACTOR * stderr,
        }
    }

    pub fn tolerance(name: impl Into<String>, threshold: f64, empirical: f64) -> Self {
        BoundRecord {
            name: name.into(),
            kind: BoundKind::Tolerance,
            analytic_value: threshold,
            empirical_value: empirical,
            stderr: 0.0,
            pass: empirical < threshold,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VerificationReport {
    pub model_digest: String,
    pub quantities: BTreeMap<String, Value>,
    pub bounds: Vec<BoundRecord>,
    pub seeds: BTreeMap<String, u64>,
    pub counts: BTreeMap<String, u64>,
    pub wall_clock_s: Option<f64>,
}

impl VerificationReport {
    pub fn all_passed(&self) -> bool {
        self.bounds.iter().all(|b| b.pass)
    }

    pub fn failed(&self) -> impl Iterator<Item = &BoundRecord> {
        self.bounds.iter().filter(|b| !b.pass)
    }
}

fn write_value(out: &mut String, v: &Value, indent: usize) {
    let pad = |out: &mut String, n: usize| out.extend(std::iter::repeat_n(' ', n));
    match v {
        Value::Null | Value::Bool(_) | Value::String(_) => out.push_str(&v.to_string()),
        Value::Number(n) => match (n.as_u64(), n.as_i64(), n.as_f64()) {
            (Some(u), _, _) => write!(out, "{u}").unwrap(),
            (_, Some(i), _) => write!(out, "{i}").unwrap(),
            (_, _, Some(f)) => write!(out, "{f:.16e}").unwrap(),
            _ => out.push_str(&n.to_string()),
        },
        Value::Array(items) if items.is_empty() => out.push_str("[]"),
        Value::Array(items) => {
            out.push_str("[\n");
            for (idx, item) in items.iter().enumerate() {
                pad(out, indent + 2);
                write_value(out, item, indent + 2);
                out.push_str(if idx + 1 < items.len() { ",\n" } else { "\n" });
            }
            pad(out, indent);
            out.push(']');
        }
        Value::Object(map) if map.is_empty() => out.push_str("{}"),
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push_str("{\n");
            for (idx, key) in keys.iter().enumerate() {
                pad(out, indent + 2);
                out.push_str(&Value::String((*key).clone()).to_string());
                out.push_str(": ");
                write_value(out, &map[*key], indent + 2);
                out.push_str(if idx + 1 < keys.len() { ",\n" } else { "\n" });
            }
            pad(out, indent);
            out.push('}');
        }
    }
}

/// Canonical JSON text of any serializable value.
pub fn canonical_json<T: Serialize>(value: &T) -> Result<String, ReportError> {
    let v = serde_json::to_value(value).map_err(|e| ReportError::SchemaError(e.to_string()))?;
    let mut out = String::new();
    write_value(&mut out, &v, 0);
    out.push('\n');
    Ok(out)
}

pub fn render_report(report: &VerificationReport) -> Result<String, ReportError> {
    if report.bounds.is_empty() {
        return Err(ReportError::SchemaError("a report needs at least one bound record".into()));
    }
    canonical_json(report)
}

pub fn write_report(report: &VerificationReport, path: impl AsRef<Path>) -> Result<(), ReportError> {
    let text = render_report(report)?;
    let path = path.as_ref();
    fs::write(path, text).map_err(|source| ReportError::Io {
        path: path.display().to_string(),
        source,
    })
}
