use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use super::runner::ResultRecord;
use crate::error::{ForgeError, Result};

/// Column order of the CSV output.
pub const CSV_COLUMNS: [&str; 11] = [
    "config_hash",
    "seed",
    "position",
    "rank",
    "init",
    "scaling",
    "norm",
    "params",
    "val_acc",
    "test_acc",
    "seconds",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Csv,
    Json,
}

impl FromStr for OutputFormat {
    type Err = ForgeError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            other => Err(ForgeError::config(format!("unknown output format `{other}`"))),
        }
    }
}

/// Six significant digits, shortest round-trip rendering of that value.
pub fn format_sig(x: f64) -> String {
    if !x.is_finite() {
        return if x.is_nan() { "nan".into() } else if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let rounded: f64 = format!("{x:.5e}").parse().expect("formatted float parses");
    format!("{rounded}")
}

pub fn records_to_csv(records: &[ResultRecord]) -> String {
    let mut out = CSV_COLUMNS.join(",");
    out.push('\n');
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.config_hash,
            r.seed,
            r.position,
            r.rank,
            r.init,
            r.scaling,
            r.norm,
            r.params,
            format_sig(r.val_acc),
            format_sig(r.test_acc),
            format_sig(r.seconds),
        );
    }
    out
}

fn round_record(r: &ResultRecord) -> ResultRecord {
    let s = |x: f64| format_sig(x).parse().unwrap_or(x);
    ResultRecord {
        val_acc: s(r.val_acc),
        test_acc: s(r.test_acc),
        seconds: s(r.seconds),
        epoch_losses: r.epoch_losses.iter().map(|&x| s(x)).collect(),
        ..r.clone()
    }
}

pub fn records_to_json(records: &[ResultRecord]) -> Result<String> {
    let rounded: Vec<ResultRecord> = records.iter().map(round_record).collect();
    Ok(serde_json::to_string_pretty(&rounded)?)
}

pub fn render_records(records: &[ResultRecord], format: OutputFormat) -> Result<String> {
    match format {
        OutputFormat::Csv => Ok(records_to_csv(records)),
        OutputFormat::Json => records_to_json(records),
    }
}

/// Writes `records` to `path` in the requested format.
pub fn emit_results(records: &[ResultRecord], format: OutputFormat, path: &Path) -> Result<()> {
    std::fs::write(path, render_records(records, format)?)?;
    Ok(())
}
