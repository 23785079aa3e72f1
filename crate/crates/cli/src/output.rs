//! Output directory handling: CSV files and the run manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use pool_ldp::TimeGrid;
use serde::Serialize;
use serde_json::Value;

use crate::error::CliError;

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub version: String,
    /// Effective configuration with every command-line override folded in.
    pub config: Value,
    pub grid: GridInfo,
    pub seeds: BTreeMap<String, u64>,
    pub started_unix: f64,
    pub wall_clock_secs: f64,
    pub outputs: Vec<String>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub notes: BTreeMap<String, Value>,
}

#[derive(Debug, Serialize)]
pub struct GridInfo {
    pub horizon: f64,
    pub steps: usize,
    pub dt: f64,
}

impl From<TimeGrid> for GridInfo {
    fn from(g: TimeGrid) -> Self {
        GridInfo {
            horizon: g.horizon(),
            steps: g.steps(),
            dt: g.dt(),
        }
    }
}

/// Collects the files written by one subcommand and writes the manifest.
pub struct Run {
    subcommand: &'static str,
    dir: PathBuf,
    started: Instant,
    started_unix: f64,
    outputs: Vec<String>,
    pub seeds: BTreeMap<String, u64>,
    pub notes: BTreeMap<String, Value>,
}

impl Run {
    pub fn start(subcommand: &'static str, dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))?;
        let started_unix = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs_f64())
            .unwrap_or(0.0);
        Ok(Run {
            subcommand,
            dir: dir.to_path_buf(),
            started: Instant::now(),
            started_unix,
            outputs: Vec::new(),
            seeds: BTreeMap::new(),
            notes: BTreeMap::new(),
        })
    }

    /// Writes `name` under the output directory. Numbers are written in
    /// shortest round-trip form.
    pub fn csv(&mut self, name: &str, header: &[String], rows: &[Vec<Cell>]) -> Result<(), CliError> {
        let path = self.dir.join(name);
        let io = |e: csv::Error| CliError::Io(format!("{}: {e}", path.display()));
        let mut w = csv::Writer::from_path(&path).map_err(io)?;
        w.write_record(header).map_err(io)?;
        for row in rows {
            w.write_record(row.iter().map(Cell::render)).map_err(io)?;
        }
        w.flush().map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        self.record(name);
        Ok(())
    }

    pub fn text(&mut self, name: &str, body: &str) -> Result<(), CliError> {
        let path = self.dir.join(name);
        fs::write(&path, body).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        self.record(name);
        Ok(())
    }

    fn record(&mut self, name: &str) {
        if !self.outputs.iter().any(|o| o == name) {
            self.outputs.push(name.to_string());
        }
    }

    pub fn finish(self, config: &impl Serialize, grid: TimeGrid) -> Result<RunManifest, CliError> {
        let manifest = RunManifest {
            subcommand: self.subcommand.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: serde_json::to_value(config).expect("config serializes"),
            grid: grid.into(),
            seeds: self.seeds,
            started_unix: self.started_unix,
            wall_clock_secs: self.started.elapsed().as_secs_f64(),
            outputs: self.outputs,
            notes: self.notes,
        };
        let path = self.dir.join(MANIFEST);
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(&path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Ok(manifest)
    }
}

#[derive(Debug, Clone)]
pub enum Cell {
    F(f64),
    U(usize),
    B(bool),
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::F(v) => format!("{v}"),
            Cell::U(v) => v.to_string(),
            Cell::B(v) => v.to_string(),
        }
    }
}

pub fn header(cols: &[&str]) -> Vec<String> {
    cols.iter().map(|c| c.to_string()).collect()
}
