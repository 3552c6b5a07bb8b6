use std::path::Path;

use super::{check_k, read_ids, sorted_by_id, top_k, write_ids, Hit};
use crate::encoder::checkpoint::Reader;
use crate::tensor::Tensor;
use crate::{par, Error, Result};

const MAGIC: &[u8; 8] = b"EMBKDIDX";

/// Exact cosine search over stored embeddings.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseIndex {
    ids: Vec<String>,
    dim: usize,
    data: Vec<f64>,
    norms: Vec<f64>,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

impl DenseIndex {
    /// `embeddings` holds one row per id.
    pub fn build(ids: Vec<String>, embeddings: &Tensor) -> Result<Self> {
        if embeddings.shape().len() != 2 {
            return Err(Error::shape("dense index", "embeddings must be N×d"));
        }
        let dim = embeddings.cols();
        let rows: Vec<&[f64]> = (0..embeddings.rows()).map(|i| embeddings.row(i)).collect();
        let (ids, rows) = sorted_by_id(ids, rows)?;
        let data: Vec<f64> = rows.concat();
        DenseIndex::from_parts(ids, dim, data)
    }

    fn from_parts(ids: Vec<String>, dim: usize, data: Vec<f64>) -> Result<Self> {
        let norms: Vec<f64> = data.chunks(dim.max(1)).map(norm).collect();
        if let Some(row) = norms.iter().position(|&n| !(n > 0.0 && n.is_finite())) {
            return Err(Error::Degenerate {
                operand: "document",
                row,
            });
        }
        Ok(DenseIndex { ids, dim, data, norms })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn id(&self, doc: usize) -> &str {
        &self.ids[doc]
    }

    pub fn score(&self, query: &[f64], qnorm: f64, doc: usize) -> f64 {
        let row = &self.data[doc * self.dim..(doc + 1) * self.dim];
        let dot: f64 = query.iter().zip(row).map(|(a, b)| a * b).sum();
        dot / (qnorm * self.norms[doc])
    }

    pub fn search(&self, query: &[f64], k: usize) -> Result<Vec<Hit>> {
        check_k(k)?;
        if self.is_empty() {
            return Ok(Vec::new());
        }
        if query.len() != self.dim {
            return Err(Error::shape(
                "search_dense",
                format!("query width {} vs index {}", query.len(), self.dim),
            ));
        }
        let qn = norm(query);
        if !(qn > 0.0) {
            return Err(Error::Degenerate {
                operand: "query",
                row: 0,
            });
        }
        let hits = (0..self.len())
            .map(|doc| Hit {
                doc,
                score: self.score(query, qn, doc),
            })
            .collect();
        Ok(top_k(hits, k))
    }

    /// Searches every row of `queries`, one query per worker task.
    pub fn search_batch(&self, queries: &Tensor, k: usize) -> Result<Vec<Vec<Hit>>> {
        par::map_range(queries.rows(), |i| self.search(queries.row(i), k))
            .into_iter()
            .collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = MAGIC.to_vec();
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());
        out.extend_from_slice(&(self.dim as u64).to_le_bytes());
        write_ids(&mut out, &self.ids);
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Format("not a dense index (bad magic)".into()));
        }
        let n = r.u64()? as usize;
        let dim = r.u64()? as usize;
        let ids = read_ids(&mut r, n)?;
        let data = (0..n * dim).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        if r.pos != bytes.len() {
            return Err(Error::Format("trailing bytes after dense index".into()));
        }
        if ids.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Format("dense index ids are not sorted and unique".into()));
        }
        DenseIndex::from_parts(ids, dim, data)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        DenseIndex::from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn index() -> DenseIndex {
        let e = Tensor::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.0, 2.0, 0.0], vec![1.0, 1.0, 0.0]]).unwrap();
        DenseIndex::build(vec!["c".into(), "a".into(), "b".into()], &e).unwrap()
    }

    #[test]
    fn exact_match_ranks_first() {
        let idx = index();
        let hits = idx.search(&[0.0, 5.0, 0.0], 3).unwrap();
        assert_eq!(idx.id(hits[0].doc), "a");
        assert!((hits[0].score - 1.0).abs() < 1e-15);
        assert_eq!(idx.search(&[1.0, 0.0, 0.0], 10).unwrap().len(), 3);
    }

    #[test]
    fn ties_break_by_id() {
        let e = Tensor::from_rows(&[vec![1.0, 0.0], vec![2.0, 0.0], vec![3.0, 0.0]]).unwrap();
        let idx = DenseIndex::build(vec!["z".into(), "m".into(), "b".into()], &e).unwrap();
        let ids: Vec<&str> = idx
            .search(&[1.0, 0.0], 3)
            .unwrap()
            .iter()
            .map(|h| idx.id(h.doc))
            .collect();
        assert_eq!(ids, vec!["b", "m", "z"]);
    }

    #[test]
    fn errors() {
        let idx = index();
        assert!(matches!(idx.search(&[0.0; 3], 1), Err(Error::Degenerate { .. })));
        assert!(idx.search(&[1.0; 3], 0).is_err());
        assert!(idx.search(&[1.0; 2], 1).is_err());
        let z = Tensor::zeros(&[1, 2]);
        assert!(DenseIndex::build(vec!["x".into()], &z).is_err());
        let e = Tensor::from_rows(&[vec![1.0], vec![2.0]]).unwrap();
        assert!(DenseIndex::build(vec!["x".into(), "x".into()], &e).is_err());
        let empty = DenseIndex::build(vec![], &Tensor::zeros(&[0, 4])).unwrap();
        assert!(empty.search(&[1.0; 4], 3).unwrap().is_empty());
    }

    #[test]
    fn bytes_round_trip() {
        let idx = index();
        let back = DenseIndex::from_bytes(&idx.to_bytes()).unwrap();
        assert_eq!(back, idx);
        let bytes = idx.to_bytes();
        assert!(DenseIndex::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }
}
