//! Output directory with a manifest of content digests.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::LabResult;
use crate::scenario::Scenario;

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, Serialize)]
pub struct FileEntry {
    pub path: String,
    pub bytes: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct StageTime {
    pub stage: String,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub artifact_version: String,
    pub subcommand: String,
    pub scenario: String,
    pub scenario_hash: String,
    pub seed: u64,
    pub stages: Vec<StageTime>,
    pub files: Vec<FileEntry>,
}

/// Fixed-precision decimal for table cells.
pub fn num(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else {
        format!("{x:.12e}")
    }
}

pub fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

pub struct RunDir {
    pub dir: PathBuf,
    subcommand: String,
    files: Vec<FileEntry>,
    stages: Vec<StageTime>,
}

impl RunDir {
    pub fn create(dir: &Path, subcommand: &str) -> LabResult<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self { dir: dir.to_path_buf(), subcommand: subcommand.into(), files: Vec::new(), stages: Vec::new() })
    }

    pub fn stage<T>(&mut self, name: &str, f: impl FnOnce() -> T) -> T {
        let t = Instant::now();
        let out = f();
        self.stages.push(StageTime { stage: name.into(), wall_seconds: t.elapsed().as_secs_f64() });
        out
    }

    fn put(&mut self, name: &str, bytes: Vec<u8>) -> LabResult<()> {
        fs::write(self.dir.join(name), &bytes)?;
        self.files.push(FileEntry { path: name.into(), bytes: bytes.len(), sha256: hex::encode(Sha256::digest(&bytes)) });
        Ok(())
    }

    pub fn csv(&mut self, name: &str, header: &[String], rows: &[Vec<String>]) -> LabResult<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header)?;
        for r in rows {
            w.write_record(r)?;
        }
        let bytes = w.into_inner().map_err(|e| std::io::Error::other(e.to_string()))?;
        self.put(name, bytes)
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> LabResult<()> {
        let mut bytes = serde_json::to_vec_pretty(value).map_err(std::io::Error::other)?;
        bytes.push(b'\n');
        self.put(name, bytes)
    }

    /// Two whitespace-separated columns for plotting.
    pub fn dat(&mut self, name: &str, comment: &str, rows: &[(f64, f64)]) -> LabResult<()> {
        let mut s = format!("# {comment}\n");
        for (x, y) in rows {
            s.push_str(&format!("{} {}\n", num(*x), num(*y)));
        }
        self.put(name, s.into_bytes())
    }

    pub fn finish(mut self, scenario: &Scenario) -> LabResult<RunManifest> {
        self.json("scenario.json", scenario)?;
        let m = RunManifest {
            artifact_version: env!("CARGO_PKG_VERSION").into(),
            subcommand: self.subcommand.clone(),
            scenario: scenario.name.clone(),
            scenario_hash: scenario.digest(),
            seed: scenario.seed,
            stages: self.stages.clone(),
            files: self.files.clone(),
        };
        let bytes = serde_json::to_vec_pretty(&m).map_err(std::io::Error::other)?;
        fs::write(self.dir.join(MANIFEST), bytes)?;
        Ok(m)
    }
}
