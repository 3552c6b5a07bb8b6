//! Layered configuration: defaults, then the TOML file, then `--set`
//! overrides, then dedicated flags. Later layers win.

use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use serde::de::DeserializeOwned;
use toml::{Table, Value};

/// Top-level sections any command understands. One file can configure a
/// whole pipeline; each command reads only its own sections.
pub const SECTIONS: &[&str] = &["model", "stage", "mine", "max_negatives", "perturb", "synth"];

/// A configuration table being assembled from its layers.
pub struct Layers {
    table: Table,
}

impl Layers {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let table = match path {
            None => Table::new(),
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                text.parse::<Table>()
                    .with_context(|| format!("parsing config {}", p.display()))?
            }
        };
        Ok(Layers { table })
    }

    /// Applies `key.path=value` overrides. Values parse as TOML, falling back
    /// to a bare string.
    pub fn apply_sets(&mut self, sets: &[String]) -> Result<()> {
        for s in sets {
            let (key, raw) = s
                .split_once('=')
                .ok_or_else(|| anyhow!("override {s:?} is not of the form key=value"))?;
            let value = format!("v = {raw}")
                .parse::<Table>()
                .ok()
                .and_then(|mut t| t.remove("v"))
                .unwrap_or_else(|| Value::String(raw.to_string()));
            self.set(key.trim(), value)?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: Value) -> Result<()> {
        let parts: Vec<&str> = key.split('.').collect();
        let (last, parents) = parts.split_last().expect("split yields at least one part");
        let mut table = &mut self.table;
        for p in parents {
            let entry = table.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new()));
            table = entry
                .as_table_mut()
                .ok_or_else(|| anyhow!("config key {key}: {p} is not a table"))?;
        }
        table.insert(last.to_string(), value);
        Ok(())
    }

    pub fn contains(&self, key: &str) -> bool {
        let mut table = &self.table;
        let parts: Vec<&str> = key.split('.').collect();
        let (last, parents) = parts.split_last().expect("split yields at least one part");
        for p in parents {
            match table.get(*p).and_then(Value::as_table) {
                Some(t) => table = t,
                None => return false,
            }
        }
        table.contains_key(*last)
    }

    pub fn set_default(&mut self, key: &str, value: Value) -> Result<()> {
        if !self.contains(key) {
            self.set(key, value)?;
        }
        Ok(())
    }

    /// Deserializes the `owned` sections. Sections outside [`SECTIONS`] are
    /// rejected; other commands' sections are ignored.
    pub fn resolve<T: DeserializeOwned>(mut self, owned: &[&str]) -> Result<T> {
        if let Some(k) = self.table.keys().find(|k| !SECTIONS.contains(&k.as_str())) {
            bail!(
                "invalid configuration: unknown section `{k}`, expected one of {}",
                SECTIONS.join(", ")
            );
        }
        self.table.retain(|k, _| owned.contains(&k));
        let text = toml::to_string(&self.table)?;
        match toml::from_str(&text) {
            Ok(v) => Ok(v),
            Err(e) => bail!("invalid configuration: {}", e.message()),
        }
    }
}
