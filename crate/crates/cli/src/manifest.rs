//! Per-command run record: what went in, what came out.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::failure::{Failure, Kind};

pub const MANIFEST_FILE: &str = "run_manifest.json";

#[derive(Debug, Serialize)]
pub struct HashedInput {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: Value,
    pub seed: Option<u64>,
    pub tool_version: &'static str,
    pub inputs: Vec<HashedInput>,
    pub outputs: Vec<PathBuf>,
    pub wall_time_s: f64,
    #[serde(skip)]
    started: Option<Instant>,
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

fn files_under(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<_> = fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            files_under(&p, out)?;
        } else {
            out.push(p);
        }
    }
    Ok(())
}

/// Fails with the missing-file class when `path` does not exist.
pub fn require(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Failure::new(Kind::MissingFile, format!("no such file or directory: {}", path.display())).into())
    }
}

impl RunManifest {
    pub fn start(command: &str, seed: Option<u64>) -> Self {
        Self {
            command: command.into(),
            config: Value::Null,
            seed,
            tool_version: env!("CARGO_PKG_VERSION"),
            inputs: Vec::new(),
            outputs: Vec::new(),
            wall_time_s: 0.0,
            started: Some(Instant::now()),
        }
    }

    /// Records and hashes an input file, or every file below a directory.
    pub fn input(&mut self, path: &Path) -> Result<()> {
        require(path)?;
        let mut files = Vec::new();
        if path.is_dir() {
            files_under(path, &mut files)?;
        } else {
            files.push(path.to_path_buf());
        }
        for f in files {
            let sha256 = sha256_file(&f)?;
            self.inputs.push(HashedInput { path: f, sha256 });
        }
        Ok(())
    }

    pub fn output(&mut self, path: impl Into<PathBuf>) {
        self.outputs.push(path.into());
    }

    pub fn config(&mut self, config: &impl Serialize) -> Result<()> {
        self.config = serde_json::to_value(config)?;
        Ok(())
    }

    pub fn finish(mut self, path: &Path) -> Result<PathBuf> {
        if let Some(t) = self.started.take() {
            self.wall_time_s = t.elapsed().as_secs_f64();
        }
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, serde_json::to_string_pretty(&self)? + "\n")
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(path.to_path_buf())
    }
}

/// `<file>.manifest.json` next to a single output file.
pub fn beside(file: &Path) -> PathBuf {
    let mut name = file.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    file.with_file_name(name)
}
