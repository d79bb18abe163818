//! Run summaries and CSV files.
//!
//! Every CSV starts with a header line; floats are written with 17
//! significant digits. The JSON summary follows `schemas/summary.schema.json`.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Versions {
    pub favsite_core: String,
    pub favsite_cli: String,
}

impl Versions {
    pub fn current() -> Self {
        Versions {
            favsite_core: favsite_core::VERSION.to_string(),
            favsite_cli: env!("CARGO_PKG_VERSION").to_string(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunSummary {
    pub schema_version: u32,
    pub name: String,
    pub kind: String,
    /// SHA-256 of the effective configuration (after overrides), as JSON.
    pub config_hash: String,
    pub seed: u64,
    pub workers: usize,
    pub versions: Versions,
    pub wall_time_s: f64,
    pub config: serde_json::Value,
    pub results: serde_json::Value,
}

pub fn config_hash(cfg: &ExperimentConfig) -> String {
    // the output directory and worker count do not change any record
    let mut c = cfg.clone();
    c.out = None;
    c.workers = 1;
    let bytes = serde_json::to_vec(&c).expect("config serializes");
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn f17(x: f64) -> String {
    format!("{x:.16e}")
}

/// Append-only CSV file; the header is written on creation.
pub struct CsvSink {
    path: PathBuf,
    w: BufWriter<File>,
}

impl CsvSink {
    pub fn create(dir: &Path, name: &str, header: &str) -> anyhow::Result<Self> {
        let path = dir.join(name);
        let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        let mut w = BufWriter::new(f);
        writeln!(w, "{header}")?;
        w.flush()?;
        Ok(CsvSink { path, w })
    }

    /// Reopen an existing file for appending.
    pub fn append(path: &Path) -> anyhow::Result<Self> {
        let f = OpenOptions::new().append(true).open(path)?;
        Ok(CsvSink {
            path: path.to_path_buf(),
            w: BufWriter::new(f),
        })
    }

    pub fn row(&mut self, fields: &[String]) -> anyhow::Result<()> {
        writeln!(self.w, "{}", fields.join(","))?;
        Ok(())
    }

    /// Flush so that completed chunks survive an interruption.
    pub fn checkpoint(&mut self) -> anyhow::Result<()> {
        self.w.flush().with_context(|| format!("writing {}", self.path.display()))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

/// Optional CSV sink: a no-op when the run has no output directory.
pub struct MaybeCsv(pub Option<CsvSink>);

impl MaybeCsv {
    pub fn new(dir: Option<&Path>, name: &str, header: &str) -> anyhow::Result<Self> {
        Ok(MaybeCsv(match dir {
            Some(d) => Some(CsvSink::create(d, name, header)?),
            None => None,
        }))
    }

    pub fn row(&mut self, fields: &[String]) -> anyhow::Result<()> {
        match &mut self.0 {
            Some(s) => s.row(fields),
            None => Ok(()),
        }
    }

    pub fn checkpoint(&mut self) -> anyhow::Result<()> {
        match &mut self.0 {
            Some(s) => s.checkpoint(),
            None => Ok(()),
        }
    }
}

pub fn write_summary(dir: &Path, s: &RunSummary) -> anyhow::Result<PathBuf> {
    let path = dir.join("summary.json");
    let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    serde_json::to_writer_pretty(BufWriter::new(f), s)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_digits_round_trip() {
        for x in [0.1, 1.0 / 3.0, 2.5e-300, 123456789.12345679] {
            let s = f17(x);
            assert_eq!(s.parse::<f64>().unwrap(), x);
        }
    }
}
