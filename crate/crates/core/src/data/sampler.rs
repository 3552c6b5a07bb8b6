use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::PairRecord;
use crate::{seed, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    /// Exponent applied to dataset sizes; 0 is uniform, 1 proportional.
    pub alpha_sampling: f64,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            alpha_sampling: 0.5,
            seed: 0,
        }
    }
}

/// `p_i = |D_i|^α / Σ_j |D_j|^α`.
pub fn dataset_probabilities(sizes: &[usize], alpha: f64) -> Result<Vec<f64>> {
    if sizes.is_empty() {
        return Err(Error::Config("no datasets to sample from".into()));
    }
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::Config(format!(
            "sampling exponent must be finite and nonnegative, got {alpha}"
        )));
    }
    if sizes.contains(&0) {
        return Err(Error::Config("every dataset needs at least one record".into()));
    }
    let w: Vec<f64> = sizes.iter().map(|&s| (s as f64).powf(alpha)).collect();
    let total: f64 = w.iter().sum();
    Ok(w.into_iter().map(|x| x / total).collect())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cursor {
    pub epoch: u64,
    pub pos: usize,
}

/// Everything needed to resume sampling exactly where it stopped.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplerState {
    pub draws: u64,
    pub cursors: Vec<Cursor>,
}

/// Draws single-dataset batches. The dataset for draw `t` depends only on
/// `(seed, t)`; records within a dataset follow a per-epoch shuffle that
/// depends only on `(seed, dataset, epoch)`.
#[derive(Clone, Debug)]
pub struct BatchSampler {
    names: Vec<String>,
    records: Vec<Vec<PairRecord>>,
    cumulative: Vec<f64>,
    seed: u64,
    state: SamplerState,
    orders: Vec<Vec<usize>>,
}

impl BatchSampler {
    pub fn new(records: Vec<PairRecord>, cfg: &SamplerConfig) -> Result<Self> {
        let mut groups: BTreeMap<String, Vec<PairRecord>> = BTreeMap::new();
        for r in records {
            groups.entry(r.dataset.clone()).or_default().push(r);
        }
        let (names, records): (Vec<_>, Vec<_>) = groups.into_iter().unzip();
        let sizes: Vec<usize> = records.iter().map(Vec::len).collect();
        let probs = dataset_probabilities(&sizes, cfg.alpha_sampling)?;
        let mut acc = 0.0;
        let mut cumulative: Vec<f64> = probs
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        *cumulative.last_mut().expect("nonempty") = 1.0;
        let mut s = BatchSampler {
            names,
            records,
            cumulative,
            seed: cfg.seed,
            state: SamplerState::default(),
            orders: Vec::new(),
        };
        s.state.cursors = vec![Cursor::default(); s.records.len()];
        s.orders = (0..s.records.len()).map(|d| s.order(d, 0)).collect();
        Ok(s)
    }

    fn order(&self, dataset: usize, epoch: u64) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.records[dataset].len()).collect();
        idx.shuffle(&mut seed::rng(self.seed, &[1, dataset as u64, epoch]));
        idx
    }

    pub fn dataset_names(&self) -> &[String] {
        &self.names
    }

    pub fn dataset_sizes(&self) -> Vec<usize> {
        self.records.iter().map(Vec::len).collect()
    }

    pub fn probabilities(&self) -> Vec<f64> {
        let mut prev = 0.0;
        self.cumulative
            .iter()
            .map(|&c| {
                let p = c - prev;
                prev = c;
                p
            })
            .collect()
    }

    pub fn state(&self) -> &SamplerState {
        &self.state
    }

    pub fn restore(&mut self, state: SamplerState) -> Result<()> {
        if state.cursors.len() != self.records.len() {
            return Err(Error::Config(format!(
                "sampler state covers {} datasets, data has {}",
                state.cursors.len(),
                self.records.len()
            )));
        }
        self.orders = state
            .cursors
            .iter()
            .enumerate()
            .map(|(d, c)| self.order(d, c.epoch))
            .collect();
        self.state = state;
        Ok(())
    }

    /// Dataset picked by the next draw, without consuming it.
    pub fn choose_dataset(&self, draw: u64) -> usize {
        let u: f64 = seed::rng(self.seed, &[0, draw]).random();
        self.cumulative
            .iter()
            .position(|&c| u < c)
            .unwrap_or(self.cumulative.len() - 1)
    }

    /// Next batch of up to `batch_size` distinct records from one dataset.
    /// The unused tail of an epoch is skipped when it cannot fill a batch.
    pub fn next_batch(&mut self, batch_size: usize) -> (usize, Vec<&PairRecord>) {
        let d = self.choose_dataset(self.state.draws);
        self.state.draws += 1;
        let len = self.records[d].len();
        let b = batch_size.clamp(1, len);
        let cursor = self.state.cursors[d];
        let cursor = if cursor.pos + b > len {
            let next = Cursor {
                epoch: cursor.epoch + 1,
                pos: 0,
            };
            self.orders[d] = self.order(d, next.epoch);
            next
        } else {
            cursor
        };
        self.state.cursors[d] = Cursor {
            epoch: cursor.epoch,
            pos: cursor.pos + b,
        };
        let batch = self.orders[d][cursor.pos..cursor.pos + b]
            .iter()
            .map(|&i| &self.records[d][i])
            .collect();
        (d, batch)
    }
}
