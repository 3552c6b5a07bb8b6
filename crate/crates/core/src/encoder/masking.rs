//! Random token masking for masked-language-model objectives.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::vocab::{is_special, MASK};
use crate::{Error, Result};

/// Range from which each sequence's mask ratio is drawn uniformly.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskSpec {
    pub low: f64,
    pub high: f64,
}

impl MaskSpec {
    pub fn new(low: f64, high: f64) -> Result<Self> {
        let spec = MaskSpec { low, high };
        spec.validate()?;
        Ok(spec)
    }

    /// Moderate masking applied to the encoder input.
    pub fn encoder_default() -> Self {
        MaskSpec { low: 0.15, high: 0.30 }
    }

    /// Aggressive masking applied to the decoder input.
    pub fn decoder_default() -> Self {
        MaskSpec { low: 0.50, high: 0.70 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.low && self.low <= self.high && self.high <= 1.0) {
            return Err(Error::Config(format!(
                "mask ratios must satisfy 0 <= low <= high <= 1, got [{}, {}]",
                self.low, self.high
            )));
        }
        Ok(())
    }

    pub fn draw_ratio<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.low == self.high {
            self.low
        } else {
            rng.random_range(self.low..=self.high)
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MaskedSequence {
    pub ids: Vec<u32>,
    /// `(position, original id)` for every masked position, ascending.
    pub labels: Vec<(usize, u32)>,
    pub ratio: f64,
}

/// Replaces `floor(r · maskable)` non-special tokens by `[MASK]`, with `r`
/// drawn from `spec`.
pub fn apply_mask<R: Rng + ?Sized>(seq: &[u32], spec: &MaskSpec, rng: &mut R) -> MaskedSequence {
    let ratio = spec.draw_ratio(rng);
    mask_with_ratio(seq, ratio, rng)
}

pub fn mask_with_ratio<R: Rng + ?Sized>(seq: &[u32], ratio: f64, rng: &mut R) -> MaskedSequence {
    let maskable: Vec<usize> = (0..seq.len()).filter(|&i| !is_special(seq[i])).collect();
    // The epsilon keeps ratios like 0.3 · 20 from flooring to 5.
    let count = ((ratio * maskable.len() as f64) + 1e-9).floor() as usize;
    let count = count.min(maskable.len());
    let mut chosen: Vec<usize> = rand::seq::index::sample(rng, maskable.len(), count)
        .into_iter()
        .map(|k| maskable[k])
        .collect();
    chosen.sort_unstable();
    let mut ids = seq.to_vec();
    let labels = chosen
        .into_iter()
        .map(|p| {
            ids[p] = MASK;
            (p, seq[p])
        })
        .collect();
    MaskedSequence { ids, labels, ratio }
}
