//! Output plumbing: number formatting, headers, report containers.

use std::fs;
use std::io::Write;
use std::path::PathBuf;

use serde::Serialize;

use crate::config::{config_hash, ExperimentConfig};

/// Nine significant digits, '.' decimal, no separators.
pub fn fmt9(x: f64) -> String {
    format!("{x:.8e}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Csv,
    Json,
}

impl std::str::FromStr for OutputFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            other => Err(format!("unknown format `{other}` (expected csv or json)")),
        }
    }
}

/// Provenance attached to every artifact.
#[derive(Debug, Clone, Serialize)]
pub struct Meta {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub config: ExperimentConfig,
}

impl Meta {
    pub fn new(command: &str, config: &ExperimentConfig, seed: u64) -> Self {
        Meta {
            command: command.to_string(),
            config_hash: format!("{:#018x}", config_hash(config)),
            seed,
            config: config.clone(),
        }
    }

    /// The comment header of CSV artifacts; carries the canonical config so
    /// the run can be reproduced from the file alone.
    pub fn csv_header(&self) -> String {
        format!(
            "# mginf command={} config_hash={} seed={} config={}\n",
            self.command,
            self.config_hash,
            self.seed,
            self.config.canonical_json()
        )
    }
}

pub struct OutputSink {
    dir: Option<PathBuf>,
}

impl OutputSink {
    pub fn new(dir: Option<PathBuf>) -> std::io::Result<Self> {
        if let Some(d) = &dir {
            fs::create_dir_all(d)?;
        }
        Ok(Self { dir })
    }

    pub fn enabled(&self) -> bool {
        self.dir.is_some()
    }

    pub fn path(&self, name: &str) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(name))
    }

    /// Writes a CSV artifact with the provenance header, or echoes it to
    /// stdout when no output directory was given.
    pub fn write_csv(&self, meta: &Meta, name: &str, columns: &str, rows: &[String]) -> std::io::Result<()> {
        let mut body = meta.csv_header();
        body.push_str(columns);
        body.push('\n');
        for r in rows {
            body.push_str(r);
            body.push('\n');
        }
        self.emit(name, &body)
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> std::io::Result<()> {
        let body = serde_json::to_string_pretty(value).expect("report serializes");
        self.emit(name, &body)
    }

    fn emit(&self, name: &str, body: &str) -> std::io::Result<()> {
        match self.path(name) {
            Some(p) => fs::write(p, body),
            None => {
                let mut out = std::io::stdout().lock();
                out.write_all(body.as_bytes())
            }
        }
    }
}

/// One aligned pass/fail line of the human-readable report.
pub fn check_line(name: &str, pass: bool, detail: &str) -> String {
    format!("[{}] {name:<44} {detail}", if pass { "PASS" } else { "FAIL" })
}

/// Sample quantile by linear interpolation on the sorted values.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        let w = pos - lo as f64;
        sorted[lo] * (1.0 - w) + sorted[hi] * w
    }
}

