use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{CorpusDoc, PairRecord};
use crate::encoder::EmbedText;
use crate::tensor::Tensor;
use crate::{par, seed, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MinerConfig {
    pub top_k: usize,
    /// Passages whose cosine to the positive exceeds this are treated as
    /// unlabeled positives and never used as negatives.
    pub false_negative_threshold: f64,
    pub negatives_per_query: usize,
    pub seed: u64,
}

impl Default for MinerConfig {
    fn default() -> Self {
        MinerConfig {
            top_k: 100,
            false_negative_threshold: 0.8,
            negatives_per_query: 1,
            seed: 0,
        }
    }
}

impl MinerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.negatives_per_query == 0 || self.top_k < self.negatives_per_query {
            return Err(Error::Config(format!(
                "need top_k ({}) >= negatives_per_query ({}) >= 1",
                self.top_k, self.negatives_per_query
            )));
        }
        let t = self.false_negative_threshold;
        if !(t > 0.0 && t <= 1.0) {
            return Err(Error::Config(format!(
                "false-negative threshold must be in (0, 1], got {t}"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MineOutcome {
    /// Chosen corpus indices; empty when nothing survived filtering.
    pub negatives: Vec<usize>,
    pub pool: usize,
    pub survivors: usize,
}

/// Picks negatives for one query.
///
/// Candidates are ranked by `query_scores` (ties by index), cut to the
/// `top_k` best non-excluded passages, filtered by `positive_sims`, and
/// sampled uniformly without replacement.
pub fn select_negatives<R: Rng + ?Sized>(
    query_scores: &[f64],
    positive_sims: &[f64],
    excluded: &[bool],
    cfg: &MinerConfig,
    rng: &mut R,
) -> MineOutcome {
    let mut ranked: Vec<usize> = (0..query_scores.len()).filter(|&i| !excluded[i]).collect();
    ranked.sort_by(|&a, &b| query_scores[b].total_cmp(&query_scores[a]).then(a.cmp(&b)));
    ranked.truncate(cfg.top_k);
    let pool = ranked.len();
    let survivors: Vec<usize> = ranked
        .into_iter()
        .filter(|&i| positive_sims[i] <= cfg.false_negative_threshold)
        .collect();
    let take = cfg.negatives_per_query.min(survivors.len());
    let negatives = sample(rng, survivors.len(), take)
        .into_iter()
        .map(|j| survivors[j])
        .collect();
    MineOutcome {
        negatives,
        pool,
        survivors: survivors.len(),
    }
}

fn unit_rows(t: &Tensor, what: &'static str) -> Result<Vec<Vec<f64>>> {
    (0..t.rows())
        .map(|i| {
            let r = t.row(i);
            let n = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n == 0.0 {
                return Err(Error::Degenerate { operand: what, row: i });
            }
            Ok(r.iter().map(|v| v / n).collect())
        })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Clone, Debug, PartialEq)]
pub struct MiningReport {
    /// Records that received at least one negative, in input order.
    pub records: Vec<PairRecord>,
    /// Input indices of records left without survivors.
    pub skipped: Vec<usize>,
}

/// Replaces the negatives of every pair with ones mined from `corpus`.
/// Queries are processed in parallel; each draws from its own stream derived
/// from the seed and its index.
pub fn mine_hard_negatives<E: EmbedText + ?Sized>(
    pairs: &[PairRecord],
    corpus: &[CorpusDoc],
    scorer: &E,
    cfg: &MinerConfig,
) -> Result<MiningReport> {
    cfg.validate()?;
    let texts = |f: &dyn Fn(&PairRecord) -> &String| pairs.iter().map(|p| f(p).clone()).collect::<Vec<_>>();
    let docs = unit_rows(
        &scorer.embed(&corpus.iter().map(|d| d.text.clone()).collect::<Vec<_>>())?,
        "corpus",
    )?;
    let queries = unit_rows(&scorer.embed(&texts(&|p| &p.query))?, "query")?;
    let positives = unit_rows(&scorer.embed(&texts(&|p| &p.positive))?, "positive")?;

    let outcomes = par::map_range(pairs.len(), |i| {
        let qs: Vec<f64> = docs.iter().map(|d| dot(&queries[i], d)).collect();
        let ps: Vec<f64> = docs.iter().map(|d| dot(&positives[i], d)).collect();
        let excluded: Vec<bool> = corpus
            .iter()
            .map(|d| d.text.trim() == pairs[i].positive.trim())
            .collect();
        select_negatives(&qs, &ps, &excluded, cfg, &mut seed::rng(cfg.seed, &[i as u64]))
    });

    let mut report = MiningReport {
        records: Vec::new(),
        skipped: Vec::new(),
    };
    for (i, out) in outcomes.into_iter().enumerate() {
        if out.negatives.is_empty() {
            log::warn!(
                "query {i}: no negatives survived false-negative filtering (pool {})",
                out.pool
            );
            report.skipped.push(i);
            continue;
        }
        let mut rec = pairs[i].clone();
        rec.negatives = out.negatives.iter().map(|&j| corpus[j].text.clone()).collect();
        report.records.push(rec);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn near_duplicates_are_filtered() {
        let cfg = MinerConfig::default();
        let out = select_negatives(
            &[0.9, 0.5],
            &[0.99, 0.2],
            &[false, false],
            &cfg,
            &mut ChaCha8Rng::seed_from_u64(0),
        );
        assert_eq!(out.negatives, vec![1]);
        assert_eq!(out.survivors, 1);
    }

    #[test]
    fn threshold_one_keeps_everything_and_pool_is_clamped() {
        let cfg = MinerConfig {
            false_negative_threshold: 1.0,
            negatives_per_query: 5,
            ..Default::default()
        };
        let scores = [0.1, 0.2, 0.3, 0.4, 0.5];
        let out = select_negatives(&scores, &[1.0; 5], &[false; 5], &cfg, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(out.pool, 5);
        assert_eq!(out.survivors, 5);
        let mut n = out.negatives.clone();
        n.sort();
        assert_eq!(n, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn only_top_k_are_eligible() {
        let cfg = MinerConfig {
            top_k: 2,
            negatives_per_query: 2,
            ..Default::default()
        };
        let out = select_negatives(
            &[0.1, 0.9, 0.8, 0.7],
            &[0.0; 4],
            &[false, false, true, false],
            &cfg,
            &mut ChaCha8Rng::seed_from_u64(1),
        );
        let mut n = out.negatives;
        n.sort();
        assert_eq!(n, vec![1, 3]);
    }

    #[test]
    fn no_survivors_gives_empty() {
        let cfg = MinerConfig::default();
        let out = select_negatives(&[0.5], &[0.95], &[false], &cfg, &mut ChaCha8Rng::seed_from_u64(0));
        assert!(out.negatives.is_empty());
    }

    #[test]
    fn config_validation() {
        assert!(MinerConfig {
            negatives_per_query: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(MinerConfig {
            top_k: 1,
            negatives_per_query: 2,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(MinerConfig {
            false_negative_threshold: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }
}
