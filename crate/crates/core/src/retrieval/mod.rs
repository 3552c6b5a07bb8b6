//! Exact dense and sparse search plus ranking metrics.
//!
//! Both indexes store documents sorted by id, so the internal document
//! number order is the id order and score ties break by ascending id.

mod dense;
mod inverted;
pub mod metrics;
mod sparse_vector;
pub mod trec;

pub use dense::DenseIndex;
pub use inverted::InvertedIndex;
pub use sparse_vector::SparseVector;

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hit {
    /// Internal document number.
    pub doc: usize,
    pub score: f64,
}

fn check_k(k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    Ok(())
}

/// Best `k` hits, score-descending, ties by ascending document number.
fn top_k(mut hits: Vec<Hit>, k: usize) -> Vec<Hit> {
    let order = |a: &Hit, b: &Hit| b.score.total_cmp(&a.score).then(a.doc.cmp(&b.doc));
    if hits.len() > k {
        hits.select_nth_unstable_by(k - 1, order);
        hits.truncate(k);
    }
    hits.sort_unstable_by(order);
    hits
}

/// Sorts `(id, payload)` pairs by id and rejects duplicates.
fn sorted_by_id<T>(ids: Vec<String>, items: Vec<T>) -> Result<(Vec<String>, Vec<T>)> {
    if ids.len() != items.len() {
        return Err(Error::shape(
            "index build",
            format!("{} ids for {} documents", ids.len(), items.len()),
        ));
    }
    let mut pairs: Vec<(String, T)> = ids.into_iter().zip(items).collect();
    pairs.sort_by(|a, b| a.0.cmp(&b.0));
    if let Some(w) = pairs.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(Error::Format(format!("duplicate document id {}", w[0].0)));
    }
    Ok(pairs.into_iter().unzip())
}

fn write_ids(out: &mut Vec<u8>, ids: &[String]) {
    for id in ids {
        out.extend_from_slice(&(id.len() as u32).to_le_bytes());
        out.extend_from_slice(id.as_bytes());
    }
}

fn read_ids(r: &mut crate::encoder::checkpoint::Reader<'_>, n: usize) -> Result<Vec<String>> {
    (0..n)
        .map(|_| {
            let len = r.u32()? as usize;
            String::from_utf8(r.take(len)?.to_vec()).map_err(|_| Error::Format("document id is not UTF-8".into()))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn top_k_orders_and_breaks_ties() {
        let hits = vec![
            Hit { doc: 3, score: 1.0 },
            Hit { doc: 1, score: 2.0 },
            Hit { doc: 0, score: 1.0 },
            Hit { doc: 2, score: 0.5 },
        ];
        let top = top_k(hits.clone(), 3);
        assert_eq!(top.iter().map(|h| h.doc).collect::<Vec<_>>(), vec![1, 0, 3]);
        assert_eq!(top_k(hits, 10).len(), 4);
    }
}
