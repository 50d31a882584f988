use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub status: &'static str,
    pub config: Value,
    /// Input path as given on the command line → SHA-256 hex.
    pub inputs: BTreeMap<String, String>,
    /// Artifacts, relative to the output directory.
    pub outputs: Vec<String>,
    pub seed: u64,
    pub threads: usize,
    pub version: &'static str,
    pub wall_clock_secs: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<Value>,
}

/// Output directory plus the bookkeeping that ends up in the manifest.
pub struct Run {
    pub out: PathBuf,
    pub seed: u64,
    pub threads: usize,
    pub subcommand: String,
    pub config: Value,
    inputs: BTreeMap<String, String>,
    outputs: Vec<String>,
    started: Instant,
}

impl Run {
    pub fn new(out: PathBuf, subcommand: &str, seed: u64, threads: usize) -> Self {
        Self {
            out,
            seed,
            threads,
            subcommand: subcommand.to_string(),
            config: Value::Null,
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
            started: Instant::now(),
        }
    }

    pub fn input(&mut self, path: &Path) -> anyhow::Result<()> {
        let digest = checksum(path).with_context(|| format!("reading {}", path.display()))?;
        self.inputs.insert(path.display().to_string(), digest);
        Ok(())
    }

    /// Reserves `name` inside the output directory.
    pub fn output(&mut self, name: &str) -> anyhow::Result<PathBuf> {
        fs::create_dir_all(&self.out)
            .with_context(|| format!("creating {}", self.out.display()))?;
        if !self.outputs.iter().any(|o| o == name) {
            self.outputs.push(name.to_string());
        }
        Ok(self.out.join(name))
    }

    pub fn write_text(&mut self, name: &str, text: &str) -> anyhow::Result<()> {
        let path = self.output(name)?;
        write_atomic(&path, text.as_bytes())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> anyhow::Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write_text(name, &text)
    }

    pub fn finish(self, error: Option<Value>) -> anyhow::Result<()> {
        let manifest = RunManifest {
            subcommand: self.subcommand,
            status: if error.is_some() { "error" } else { "ok" },
            config: self.config,
            inputs: self.inputs,
            outputs: self.outputs,
            seed: self.seed,
            threads: self.threads,
            version: env!("CARGO_PKG_VERSION"),
            wall_clock_secs: self.started.elapsed().as_secs_f64(),
            error,
        };
        fs::create_dir_all(&self.out)?;
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        write_atomic(&self.out.join(MANIFEST_FILE), text.as_bytes())
    }
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("renaming to {}", path.display()))
}

/// SHA-256 of a file, or of a directory's files (names and contents, sorted
/// by name, non-recursive).
pub fn checksum(path: &Path) -> std::io::Result<String> {
    let mut hasher = Sha256::new();
    if path.is_dir() {
        let mut entries: Vec<PathBuf> = fs::read_dir(path)?
            .map(|e| e.map(|e| e.path()))
            .collect::<Result<_, _>>()?;
        entries.sort();
        for entry in entries.iter().filter(|p| p.is_file()) {
            hasher.update(entry.file_name().unwrap_or_default().as_encoded_bytes());
            hasher.update([0u8]);
            hasher.update(fs::read(entry)?);
        }
    } else {
        hasher.update(fs::read(path)?);
    }
    Ok(hex::encode(hasher.finalize()))
}
