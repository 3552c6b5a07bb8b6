use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Weighted bag of vocabulary terms: `(term id, weight)` pairs with strictly
/// increasing ids and strictly positive weights.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SparseVector {
    terms: Vec<(u32, f64)>,
}

impl SparseVector {
    pub fn new(terms: Vec<(u32, f64)>) -> Result<Self> {
        for w in terms.windows(2) {
            if w[0].0 >= w[1].0 {
                return Err(Error::Format("sparse term ids must be strictly increasing".into()));
            }
        }
        if let Some(&(t, w)) = terms.iter().find(|(_, w)| !(*w > 0.0 && w.is_finite())) {
            return Err(Error::Format(format!(
                "sparse weight for term {t} must be positive, got {w}"
            )));
        }
        Ok(SparseVector { terms })
    }

    /// Keeps the strictly positive entries of a dense vocabulary-sized vector.
    pub fn from_dense(weights: &[f64]) -> Self {
        SparseVector {
            terms: weights
                .iter()
                .enumerate()
                .filter(|(_, &w)| w > 0.0)
                .map(|(i, &w)| (i as u32, w))
                .collect(),
        }
    }

    pub fn to_dense(&self, dim: usize) -> Vec<f64> {
        let mut out = vec![0.0; dim];
        for &(t, w) in &self.terms {
            out[t as usize] = w;
        }
        out
    }

    pub fn terms(&self) -> &[(u32, f64)] {
        &self.terms
    }

    pub fn nnz(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// L1 norm, i.e. the sum of weights.
    pub fn total_weight(&self) -> f64 {
        self.terms.iter().map(|(_, w)| w).sum()
    }

    pub fn dot(&self, other: &SparseVector) -> f64 {
        let (mut i, mut j, mut acc) = (0, 0, 0.0);
        while i < self.terms.len() && j < other.terms.len() {
            let (a, b) = (self.terms[i], other.terms[j]);
            match a.0.cmp(&b.0) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    acc += a.1 * b.1;
                    i += 1;
                    j += 1;
                }
            }
        }
        acc
    }
}
