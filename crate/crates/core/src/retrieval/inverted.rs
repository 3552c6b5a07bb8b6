use std::collections::BTreeMap;
use std::path::Path;

use super::{check_k, read_ids, sorted_by_id, top_k, write_ids, Hit, SparseVector};
use crate::encoder::checkpoint::Reader;
use crate::{par, Error, Result};

const MAGIC: &[u8; 8] = b"EMBKSIDX";

/// Term → `(doc, weight)` postings, sorted by doc.
#[derive(Clone, Debug, PartialEq)]
pub struct InvertedIndex {
    ids: Vec<String>,
    postings: BTreeMap<u32, Vec<(u32, f64)>>,
}

impl InvertedIndex {
    pub fn build(ids: Vec<String>, docs: Vec<SparseVector>) -> Result<Self> {
        let (ids, docs) = sorted_by_id(ids, docs)?;
        if ids.len() > u32::MAX as usize {
            return Err(Error::Config("too many documents for one index".into()));
        }
        let mut postings: BTreeMap<u32, Vec<(u32, f64)>> = BTreeMap::new();
        for (d, doc) in docs.iter().enumerate() {
            for &(t, w) in doc.terms() {
                postings.entry(t).or_default().push((d as u32, w));
            }
        }
        Ok(InvertedIndex { ids, postings })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn id(&self, doc: usize) -> &str {
        &self.ids[doc]
    }

    pub fn term_count(&self) -> usize {
        self.postings.len()
    }

    pub fn postings(&self, term: u32) -> &[(u32, f64)] {
        self.postings.get(&term).map_or(&[], Vec::as_slice)
    }

    /// Average number of terms per document.
    pub fn mean_doc_terms(&self) -> f64 {
        let total: usize = self.postings.values().map(Vec::len).sum();
        total as f64 / self.len().max(1) as f64
    }

    /// Dot-product top-k. Query terms are visited in ascending id order, so
    /// each score accumulates in the same order as a dense dot product.
    /// Documents sharing no term with the query are not returned.
    pub fn search(&self, query: &SparseVector, k: usize) -> Result<Vec<Hit>> {
        check_k(k)?;
        let mut acc = vec![0.0; self.len()];
        let mut touched = vec![false; self.len()];
        for &(t, wq) in query.terms() {
            for &(d, wd) in self.postings(t) {
                acc[d as usize] += wq * wd;
                touched[d as usize] = true;
            }
        }
        let hits = acc
            .into_iter()
            .enumerate()
            .filter(|&(d, s)| touched[d] && s > 0.0)
            .map(|(doc, score)| Hit { doc, score })
            .collect();
        Ok(top_k(hits, k))
    }

    pub fn search_batch(&self, queries: &[SparseVector], k: usize) -> Result<Vec<Vec<Hit>>> {
        par::map(queries, |q| self.search(q, k)).into_iter().collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = MAGIC.to_vec();
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());
        write_ids(&mut out, &self.ids);
        out.extend_from_slice(&(self.postings.len() as u64).to_le_bytes());
        for (&t, list) in &self.postings {
            out.extend_from_slice(&t.to_le_bytes());
            out.extend_from_slice(&(list.len() as u64).to_le_bytes());
            for &(d, w) in list {
                out.extend_from_slice(&d.to_le_bytes());
                out.extend_from_slice(&w.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Format("not a sparse index (bad magic)".into()));
        }
        let n = r.u64()? as usize;
        let ids = read_ids(&mut r, n)?;
        if ids.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Format("sparse index ids are not sorted and unique".into()));
        }
        let terms = r.u64()? as usize;
        let mut postings = BTreeMap::new();
        for _ in 0..terms {
            let t = r.u32()?;
            let len = r.u64()? as usize;
            let list = (0..len)
                .map(|_| Ok((r.u32()?, r.f64()?)))
                .collect::<Result<Vec<(u32, f64)>>>()?;
            let sorted = list.windows(2).all(|w| w[0].0 < w[1].0);
            if !sorted || list.iter().any(|&(d, w)| d as usize >= n || !(w > 0.0)) {
                return Err(Error::Format(format!("invalid posting list for term {t}")));
            }
            if postings.insert(t, list).is_some() {
                return Err(Error::Format(format!("duplicate posting list for term {t}")));
            }
        }
        if r.pos != bytes.len() {
            return Err(Error::Format("trailing bytes after sparse index".into()));
        }
        Ok(InvertedIndex { ids, postings })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        InvertedIndex::from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sv(t: &[(u32, f64)]) -> SparseVector {
        SparseVector::new(t.to_vec()).unwrap()
    }

    #[test]
    fn single_term_score() {
        let idx = InvertedIndex::build(vec!["d".into(), "e".into()], vec![sv(&[(1, 3.0)]), sv(&[(2, 1.0)])]).unwrap();
        let hits = idx.search(&sv(&[(1, 2.0)]), 10).unwrap();
        assert_eq!(hits.len(), 1);
        assert_eq!(idx.id(hits[0].doc), "d");
        assert_eq!(hits[0].score, 6.0);
        assert!(idx.search(&sv(&[(9, 1.0)]), 10).unwrap().is_empty());
    }

    #[test]
    fn postings_sorted_and_round_trip() {
        let idx = InvertedIndex::build(
            vec!["b".into(), "a".into(), "c".into()],
            vec![sv(&[(0, 1.0), (4, 0.5)]), sv(&[(4, 2.0)]), sv(&[(0, 0.25)])],
        )
        .unwrap();
        assert_eq!(idx.postings(4), &[(0, 2.0), (1, 0.5)]);
        assert_eq!(idx.term_count(), 2);
        assert!((idx.mean_doc_terms() - 4.0 / 3.0).abs() < 1e-15);
        let back = InvertedIndex::from_bytes(&idx.to_bytes()).unwrap();
        assert_eq!(back, idx);
        let mut bad = idx.to_bytes();
        bad[0] = b'X';
        assert!(InvertedIndex::from_bytes(&bad).is_err());
    }
}
