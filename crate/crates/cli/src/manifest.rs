use anyhow::Context;
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};
use std::fs;
use std::path::{Path, PathBuf};

#[derive(Debug, Serialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

impl FileDigest {
    pub fn of(path: &Path) -> anyhow::Result<Self> {
        let bytes = fs::read(path).with_context(|| format!("hashing {}", path.display()))?;
        Ok(Self {
            path: path.to_path_buf(),
            sha256: format!("{:x}", Sha256::digest(&bytes)),
        })
    }
}

/// Everything needed to re-run one command: its resolved settings plus
/// digests of what it read and wrote. No timestamps, so identical runs
/// produce identical manifests.
#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: &'static str,
    pub tool_version: &'static str,
    pub config: Value,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

impl Manifest {
    pub fn new(command: &'static str, config: impl Serialize) -> anyhow::Result<Self> {
        Ok(Self {
            command,
            tool_version: env!("CARGO_PKG_VERSION"),
            config: serde_json::to_value(config)?,
            inputs: Vec::new(),
            outputs: Vec::new(),
        })
    }

    pub fn input(mut self, path: &Path) -> anyhow::Result<Self> {
        self.inputs.push(FileDigest::of(path)?);
        Ok(self)
    }

    /// Hash the outputs and write `<first output>.manifest.json`.
    pub fn write(mut self, outputs: &[&Path]) -> anyhow::Result<PathBuf> {
        for p in outputs {
            self.outputs.push(FileDigest::of(p)?);
        }
        let primary = outputs.first().context("manifest needs at least one output")?;
        let mut name = primary.as_os_str().to_owned();
        name.push(".manifest.json");
        let path = PathBuf::from(name);
        let mut text = serde_json::to_string_pretty(&self)?;
        text.push('\n');
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}
