//! Per-run provenance record written next to each command's main artifact.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_hash(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("hashing {}", path.display()))?;
    Ok(sha256_hex(&bytes))
}

/// Inputs, outputs, resolved configuration and seed of one command. No
/// timestamps, so identical runs write identical manifests.
#[derive(Serialize)]
pub struct Manifest {
    command: String,
    version: &'static str,
    seed: Option<u64>,
    config_sha256: String,
    config: serde_json::Value,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(command: &str, seed: Option<u64>, config: &impl Serialize) -> Result<Self> {
        let config = serde_json::to_value(config)?;
        Ok(Manifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION"),
            seed,
            config_sha256: sha256_hex(serde_json::to_string(&config)?.as_bytes()),
            config,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        })
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.insert(path.display().to_string(), file_hash(path)?);
        Ok(())
    }

    pub fn inputs<'a>(&mut self, paths: impl IntoIterator<Item = &'a PathBuf>) -> Result<()> {
        for p in paths {
            self.input(p)?;
        }
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> Result<()> {
        self.outputs.insert(path.display().to_string(), file_hash(path)?);
        Ok(())
    }

    /// Writes `<primary>.manifest.json`.
    pub fn write(&self, primary: &Path) -> Result<PathBuf> {
        let mut name = primary.as_os_str().to_owned();
        name.push(".manifest.json");
        let path = PathBuf::from(name);
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}
