//! Training pairs and corpora: file formats, dataset sampling, hard-negative
//! mining, positive perturbation and synthetic data.

mod mining;
mod perturb;
mod sampler;
pub mod synth;

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use mining::{mine_hard_negatives, select_negatives, MineOutcome, MinerConfig, MiningReport};
pub use perturb::{delete_span_at, perturb_positive, swap_spans_at, PerturbConfig, PerturbMode};
pub use sampler::{dataset_probabilities, BatchSampler, SamplerConfig, SamplerState};

/// One query with its relevant passage and optional hard negatives.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairRecord {
    pub query: String,
    pub positive: String,
    #[serde(default)]
    pub negatives: Vec<String>,
    pub dataset: String,
}

impl PairRecord {
    pub fn validate(&self, max_negatives: usize) -> std::result::Result<(), String> {
        if self.query.trim().is_empty() {
            return Err("empty query".into());
        }
        if self.positive.trim().is_empty() {
            return Err("empty positive".into());
        }
        if self.negatives.len() > max_negatives {
            return Err(format!(
                "{} negatives exceed the limit of {max_negatives}",
                self.negatives.len()
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusDoc {
    pub id: String,
    pub text: String,
}

/// Parses one JSON object per non-blank line.
pub fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: n + 1,
            msg: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r).map_err(|e| Error::Format(e.to_string()))?;
        buf.push(b'\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

/// Reads and validates a pair file; at most `max_negatives` per record.
pub fn read_pairs(path: &Path, max_negatives: usize) -> Result<Vec<PairRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: n + 1,
            msg,
        };
        let rec: PairRecord = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        rec.validate(max_negatives).map_err(parse_err)?;
        out.push(rec);
    }
    Ok(out)
}

pub fn read_corpus(path: &Path) -> Result<Vec<CorpusDoc>> {
    let docs: Vec<CorpusDoc> = read_jsonl(path)?;
    let mut seen = std::collections::HashSet::new();
    for d in &docs {
        if !seen.insert(d.id.as_str()) {
            return Err(Error::Format(format!("duplicate document id {}", d.id)));
        }
    }
    Ok(docs)
}

pub fn format_instruction_query(task: &str, query: &str) -> String {
    format!("Instruct: {task} Query: {query}")
}
