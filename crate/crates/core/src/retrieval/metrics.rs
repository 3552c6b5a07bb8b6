//! Ranked-retrieval metrics over graded judgments.
//!
//! Every per-query function returns `None` when the query has no document
//! with a positive grade; such queries are left out of averages.

use std::collections::BTreeMap;

use serde::Serialize;

use super::trec::{Qrels, Run};

/// Document id → relevance grade for one query.
pub type Judgments = BTreeMap<String, u32>;

fn grade(judged: &Judgments, doc: &str) -> u32 {
    judged.get(doc).copied().unwrap_or(0)
}

fn has_relevant(judged: &Judgments) -> bool {
    judged.values().any(|&g| g > 0)
}

fn gain(g: u32) -> f64 {
    2f64.powi(g as i32) - 1.0
}

/// Graded nDCG with `(2^rel − 1) / log2(rank + 1)` gains.
pub fn ndcg_at_k<S: AsRef<str>>(ranking: &[S], judged: &Judgments, k: usize) -> Option<f64> {
    if !has_relevant(judged) {
        return None;
    }
    // A document listed twice earns its gain only once.
    let mut seen = std::collections::HashSet::new();
    let mut dcg = 0.0;
    for (r, d) in ranking.iter().take(k).enumerate() {
        if seen.insert(d.as_ref()) {
            dcg += gain(grade(judged, d.as_ref())) / (r as f64 + 2.0).log2();
        }
    }
    let mut ideal: Vec<u32> = judged.values().copied().filter(|&g| g > 0).collect();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg: f64 = ideal
        .iter()
        .take(k)
        .enumerate()
        .map(|(r, &g)| gain(g) / (r as f64 + 2.0).log2())
        .sum();
    Some(dcg / idcg)
}

/// Reciprocal rank of the first relevant document within the top `k`.
pub fn mrr_at_k<S: AsRef<str>>(ranking: &[S], judged: &Judgments, k: usize) -> Option<f64> {
    if !has_relevant(judged) {
        return None;
    }
    Some(
        ranking
            .iter()
            .take(k)
            .position(|d| grade(judged, d.as_ref()) > 0)
            .map_or(0.0, |r| 1.0 / (r as f64 + 1.0)),
    )
}

/// Fraction of relevant documents found in the top `k`.
pub fn recall_at_k<S: AsRef<str>>(ranking: &[S], judged: &Judgments, k: usize) -> Option<f64> {
    let relevant = judged.values().filter(|&&g| g > 0).count();
    if relevant == 0 {
        return None;
    }
    let found: std::collections::HashSet<&str> = ranking
        .iter()
        .take(k)
        .map(AsRef::as_ref)
        .filter(|d| grade(judged, d) > 0)
        .collect();
    let found = found.len();
    Some(found as f64 / relevant as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QueryScores {
    pub query_id: String,
    pub ndcg_10: f64,
    pub mrr_5: f64,
    pub recall_10: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub per_query: Vec<QueryScores>,
    /// Means over `per_query`; `None` when no query could be scored.
    pub mean: Option<QueryScores>,
}

/// Scores every judged query with at least one relevant document. Queries
/// in the run but absent from the judgments are skipped with a warning;
/// judged queries missing from the run score zero.
pub fn evaluate(run: &Run, qrels: &Qrels) -> Evaluation {
    for qid in run.keys().filter(|q| !qrels.contains_key(*q)) {
        log::warn!("query {qid} has no judgments; skipped");
    }
    let empty = Vec::new();
    let mut per_query = Vec::new();
    for (qid, judged) in qrels {
        let ranked: Vec<&str> = run.get(qid).unwrap_or(&empty).iter().map(|(d, _)| d.as_str()).collect();
        let (Some(ndcg), Some(mrr), Some(recall)) = (
            ndcg_at_k(&ranked, judged, 10),
            mrr_at_k(&ranked, judged, 5),
            recall_at_k(&ranked, judged, 10),
        ) else {
            continue;
        };
        per_query.push(QueryScores {
            query_id: qid.clone(),
            ndcg_10: ndcg,
            mrr_5: mrr,
            recall_10: recall,
        });
    }
    let n = per_query.len() as f64;
    let mean = (!per_query.is_empty()).then(|| QueryScores {
        query_id: "all".into(),
        ndcg_10: per_query.iter().map(|q| q.ndcg_10).sum::<f64>() / n,
        mrr_5: per_query.iter().map(|q| q.mrr_5).sum::<f64>() / n,
        recall_10: per_query.iter().map(|q| q.recall_10).sum::<f64>() / n,
    });
    Evaluation { per_query, mean }
}
