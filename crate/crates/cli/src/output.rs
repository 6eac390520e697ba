//! CSV tables and run manifests.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use mfcce::Trajectory;
use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

/// Shortest decimal text that parses back to the same `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

/// Column-major table written as CSV with a header row.
#[derive(Debug, Default, Clone)]
pub struct Table {
    columns: Vec<(String, Vec<f64>)>,
}

impl Table {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn rows(&self) -> usize {
        self.columns.first().map_or(0, |c| c.1.len())
    }

    pub fn header(&self) -> Vec<&str> {
        self.columns.iter().map(|c| c.0.as_str()).collect()
    }

    pub fn push(&mut self, name: impl Into<String>, values: Vec<f64>) {
        let name = name.into();
        assert!(
            self.columns.is_empty() || values.len() == self.rows(),
            "column {name} has {} rows, table has {}",
            values.len(),
            self.rows()
        );
        self.columns.push((name, values));
    }

    pub fn scalar(&mut self, name: &str, traj: &Trajectory<f64>) {
        self.push(name, traj.values().to_vec());
    }

    /// One column per component: `name` when `d = 1`, else `name_j`.
    pub fn vector(&mut self, name: &str, traj: &Trajectory<DVector<f64>>) {
        let d = traj.first().len();
        for j in 0..d {
            let col = if d == 1 { name.to_string() } else { format!("{name}_{}", j + 1) };
            self.push(col, traj.iter().map(|v| v[j]).collect());
        }
    }

    /// One column per entry: `name` for 1×1, else `name_i_j`.
    pub fn matrix(&mut self, name: &str, traj: &Trajectory<DMatrix<f64>>) {
        let (r, c) = traj.first().shape();
        for i in 0..r {
            for j in 0..c {
                let col = if r * c == 1 {
                    name.to_string()
                } else {
                    format!("{name}_{}_{}", i + 1, j + 1)
                };
                self.push(col, traj.iter().map(|m| m[(i, j)]).collect());
            }
        }
    }

    pub fn write<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(self.header())?;
        for i in 0..self.rows() {
            w.write_record(self.columns.iter().map(|c| fmt_f64(c.1[i])))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write(&mut buf)?;
        Ok(String::from_utf8(buf)?)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Single-row CSV of named fields.
pub fn record_csv(fields: &[(&str, String)]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(fields.iter().map(|f| f.0))?;
    w.write_record(fields.iter().map(|f| f.1.as_str()))?;
    Ok(String::from_utf8(w.into_inner()?)?)
}

#[derive(Debug, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct GridInfo {
    pub horizon: f64,
    pub steps: usize,
}

/// Everything needed to rerun a command and check its outputs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub params: Map<String, Value>,
    pub inputs: Vec<FileDigest>,
    pub grid: Option<GridInfo>,
    pub seed: Option<u64>,
    pub outputs: Vec<FileDigest>,
    pub version: String,
    pub wall_clock_seconds: f64,
}

/// Collects the outputs of one command run and writes a manifest next to
/// each CSV.
pub struct Run {
    command: String,
    started: Instant,
    pub params: Map<String, Value>,
    inputs: Vec<FileDigest>,
    pub grid: Option<GridInfo>,
    pub seed: Option<u64>,
    dir: Option<PathBuf>,
    written: Vec<(PathBuf, String)>,
}

impl Run {
    pub fn new(command: &str, dir: Option<&Path>) -> Result<Self> {
        if let Some(d) = dir {
            fs::create_dir_all(d).with_context(|| format!("creating {}", d.display()))?;
        }
        Ok(Self {
            command: command.to_string(),
            started: Instant::now(),
            params: Map::new(),
            inputs: Vec::new(),
            grid: None,
            seed: None,
            dir: dir.map(Path::to_path_buf),
            written: Vec::new(),
        })
    }

    pub fn param(&mut self, key: &str, value: impl Into<Value>) {
        self.params.insert(key.to_string(), value.into());
    }

    pub fn input(&mut self, path: &Path, contents: &str) {
        self.inputs.push(FileDigest {
            path: path.display().to_string(),
            sha256: sha256_hex(contents.as_bytes()),
        });
    }

    pub fn has_dir(&self) -> bool {
        self.dir.is_some()
    }

    pub fn emit(&mut self, name: &str, table: &Table) -> Result<()> {
        self.emit_text(name, table.to_csv_string()?)
    }

    /// Writes `text` as `name` under the output directory, or to stdout
    /// when there is none.
    pub fn emit_text(&mut self, name: &str, text: String) -> Result<()> {
        match &self.dir {
            Some(d) => {
                let path = d.join(name);
                fs::write(&path, &text).with_context(|| format!("writing {}", path.display()))?;
                self.written.push((path, sha256_hex(text.as_bytes())));
            }
            None => print!("{text}"),
        }
        Ok(())
    }

    /// One `<csv>.manifest.json` per CSV, each listing every output of the run.
    pub fn finish(self) -> Result<Vec<PathBuf>> {
        let outputs: Vec<FileDigest> = self
            .written
            .iter()
            .map(|(p, h)| FileDigest {
                path: p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
                sha256: h.clone(),
            })
            .collect();
        let manifest = RunManifest {
            command: self.command,
            argv: std::env::args().collect(),
            params: self.params,
            inputs: self.inputs,
            grid: self.grid,
            seed: self.seed,
            outputs,
            version: env!("CARGO_PKG_VERSION").to_string(),
            wall_clock_seconds: self.started.elapsed().as_secs_f64(),
        };
        let json = serde_json::to_string_pretty(&manifest)?;
        let mut paths = Vec::new();
        for (p, _) in &self.written {
            let mut name = p.file_name().unwrap_or_default().to_os_string();
            name.push(".manifest.json");
            let mp = p.with_file_name(name);
            fs::write(&mp, &json).with_context(|| format!("writing {}", mp.display()))?;
            paths.push(mp);
        }
        Ok(paths)
    }
}
