//! Output writing with read-back validation and run-metadata records.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn digest_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(sha256_hex(&bytes))
}

/// Fails with the path in the message when a required input is missing.
pub fn require_file(path: &Path) -> Result<()> {
    if !path.is_file() {
        bail!("input file not found: {}", path.display());
    }
    Ok(())
}

/// Everything needed to rerun a command and check its outputs.
#[derive(Debug, Serialize)]
pub struct RunRecord {
    pub command: String,
    pub version: &'static str,
    pub seed: u64,
    pub config: serde_json::Value,
    /// Input path to SHA-256.
    pub inputs: BTreeMap<String, String>,
    /// Output file name to SHA-256 and byte count.
    pub outputs: BTreeMap<String, OutputInfo>,
}

#[derive(Debug, Serialize)]
pub struct OutputInfo {
    pub sha256: String,
    pub bytes: usize,
}

pub struct Run {
    dir: PathBuf,
    record: RunRecord,
}

impl Run {
    pub fn new(command: &str, dir: &Path, seed: u64, config: impl Serialize) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            record: RunRecord {
                command: command.to_string(),
                version: env!("CARGO_PKG_VERSION"),
                seed,
                config: serde_json::to_value(config)?,
                inputs: BTreeMap::new(),
                outputs: BTreeMap::new(),
            },
        })
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        require_file(path)?;
        let digest = digest_file(path)?;
        self.record.inputs.insert(path.display().to_string(), digest);
        Ok(())
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Writes `bytes`, reads them back and records the digest.
    pub fn output(&mut self, name: &str, bytes: &[u8]) -> Result<usize> {
        let path = self.path(name);
        fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        let back = fs::read(&path).with_context(|| format!("reading back {}", path.display()))?;
        if back != bytes {
            bail!("{} did not read back identically", path.display());
        }
        self.record.outputs.insert(
            name.to_string(),
            OutputInfo {
                sha256: sha256_hex(bytes),
                bytes: bytes.len(),
            },
        );
        Ok(bytes.len())
    }

    pub fn json_output(&mut self, name: &str, value: &impl Serialize) -> Result<usize> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.output(name, text.as_bytes())
    }

    pub fn finish(self) -> Result<()> {
        let mut text = serde_json::to_string_pretty(&self.record)?;
        text.push('\n');
        let path = self.dir.join("run.json");
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    }
}
