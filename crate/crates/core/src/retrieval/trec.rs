//! Tab-separated judgment and run files.
//!
//! Qrels lines are `query_id<TAB>doc_id<TAB>grade`; run lines are
//! `query_id<TAB>doc_id<TAB>rank<TAB>score` with 1-based ranks. Scores are
//! written in shortest round-trip form, so reading a run back is lossless.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::metrics::Judgments;
use crate::{Error, Result};

pub type Qrels = BTreeMap<String, Judgments>;

/// Query id → `(doc id, score)` in rank order.
pub type Run = BTreeMap<String, Vec<(String, f64)>>;

fn lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i + 1, l.to_string()))
        .collect())
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

pub fn read_qrels(path: &Path) -> Result<Qrels> {
    let mut q = Qrels::new();
    for (n, line) in lines(path)? {
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 3 {
            return Err(parse_err(
                path,
                n,
                format!("expected 3 tab-separated fields, got {}", f.len()),
            ));
        }
        let g: u32 = f[2]
            .trim()
            .parse()
            .map_err(|_| parse_err(path, n, format!("grade {:?} is not a nonnegative integer", f[2])))?;
        q.entry(f[0].to_string()).or_default().insert(f[1].to_string(), g);
    }
    Ok(q)
}

pub fn write_qrels(path: &Path, qrels: &Qrels) -> Result<()> {
    let mut s = String::new();
    for (qid, docs) in qrels {
        for (did, g) in docs {
            writeln!(s, "{qid}\t{did}\t{g}").expect("string write");
        }
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn read_run(path: &Path) -> Result<Run> {
    let mut ranked: BTreeMap<String, Vec<(usize, String, f64)>> = BTreeMap::new();
    for (n, line) in lines(path)? {
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 4 {
            return Err(parse_err(
                path,
                n,
                format!("expected 4 tab-separated fields, got {}", f.len()),
            ));
        }
        let rank: usize = f[2]
            .parse()
            .ok()
            .filter(|&r| r >= 1)
            .ok_or_else(|| parse_err(path, n, format!("rank {:?} is not a positive integer", f[2])))?;
        let score: f64 = f[3]
            .parse()
            .map_err(|_| parse_err(path, n, format!("score {:?} is not a number", f[3])))?;
        ranked
            .entry(f[0].to_string())
            .or_default()
            .push((rank, f[1].to_string(), score));
    }
    Ok(ranked
        .into_iter()
        .map(|(q, mut v)| {
            v.sort_by_key(|e| e.0);
            (q, v.into_iter().map(|(_, d, s)| (d, s)).collect())
        })
        .collect())
}

pub fn format_run(run: &Run) -> String {
    let mut s = String::new();
    for (qid, docs) in run {
        for (r, (did, score)) in docs.iter().enumerate() {
            writeln!(s, "{qid}\t{did}\t{}\t{score}", r + 1).expect("string write");
        }
    }
    s
}

pub fn write_run(path: &Path, run: &Run) -> Result<()> {
    std::fs::write(path, format_run(run)).map_err(|e| Error::io(path, e))
}
