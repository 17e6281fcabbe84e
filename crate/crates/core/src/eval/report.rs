//! CSV and JSON report files.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::EpisodeMetrics;
use super::protocol::EvalRow;
use crate::error::{Error, Result};

pub const CSV_HEADER: &str = "method,clip_id,trial,push_vel,speed_factor,E_jpe_upper,E_kpe_upper,E_acc_upper,E_action_upper,E_vel,E_ang,E_acc_lower,E_action_lower,E_g,survival";

/// Written in the `trial` column of mean rows.
pub const MEAN_TRIAL: &str = "mean";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    #[default]
    Csv,
    Json,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(Error::Argument(format!("unknown report format '{other}'"))),
        }
    }
}

pub fn rows_to_csv(rows: &[EvalRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        let trial = r.trial.map_or_else(|| MEAN_TRIAL.to_string(), |t| t.to_string());
        let _ = write!(out, "{},{},{},{},{}", r.method, r.clip_id, trial, r.push_vel, r.speed_factor);
        for v in r.metrics.values() {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

/// Parses a CSV written by [`rows_to_csv`].
pub fn rows_from_csv(text: &str) -> Result<Vec<EvalRow>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == CSV_HEADER => {}
        _ => return Err(Error::Schema("report CSV header does not match".into())),
    }
    let num = |s: &str, line: usize| -> Result<f64> {
        s.parse()
            .map_err(|_| Error::Schema(format!("line {line}: '{s}' is not a number")))
    };
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let n = i + 2;
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 15 {
            return Err(Error::Schema(format!("line {n}: expected 15 fields, got {}", f.len())));
        }
        let trial = if f[2] == MEAN_TRIAL {
            None
        } else {
            Some(f[2].parse().map_err(|_| Error::Schema(format!("line {n}: bad trial '{}'", f[2])))?)
        };
        let mut v = [0.0; 10];
        for (k, slot) in v.iter_mut().enumerate() {
            *slot = num(f[5 + k], n)?;
        }
        rows.push(EvalRow {
            method: f[0].to_string(),
            clip_id: f[1].to_string(),
            trial,
            push_vel: num(f[3], n)?,
            speed_factor: num(f[4], n)?,
            metrics: EpisodeMetrics::from_values(v),
        });
    }
    Ok(rows)
}

pub fn rows_to_json(rows: &[EvalRow]) -> String {
    serde_json::to_string_pretty(rows).expect("report rows serialize")
}

pub fn emit_report(rows: &[EvalRow], path: impl AsRef<Path>, format: ReportFormat) -> Result<()> {
    let path = path.as_ref();
    let text = match format {
        ReportFormat::Csv => rows_to_csv(rows),
        ReportFormat::Json => rows_to_json(rows),
    };
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
