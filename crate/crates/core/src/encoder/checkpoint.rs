//! Named parameter sets and their on-disk format.
//!
//! A checkpoint is a text header followed by binary records:
//!
//! ```text
//! embedkit-checkpoint 1
//! key=value          (zero or more lines)
//! <blank line>
//! u64 record count
//! per record: u32 name length, name bytes, u32 rank, u64 dims..., f64 values
//! ```
//!
//! All integers and floats are little-endian. Records are written in name order.

use std::collections::BTreeMap;
use std::path::Path;

use crate::tensor::Tensor;
use crate::{Error, Result};

const MAGIC: &str = "embedkit-checkpoint 1";

/// Parameters keyed by unique name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Params(BTreeMap<String, Tensor>);

impl Params {
    pub fn new() -> Self {
        Params::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.0.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.0.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.0.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.0.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.0.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.0.keys()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.0.contains_key(name)
    }

    pub fn remove(&mut self, name: &str) -> Option<Tensor> {
        self.0.remove(name)
    }

    pub fn element_count(&self) -> usize {
        self.0.values().map(Tensor::len).sum()
    }

    /// Keeps only the parameters whose names start with `prefix`, stripping it.
    pub fn strip_prefix(&self, prefix: &str) -> Params {
        Params(
            self.0
                .iter()
                .filter_map(|(k, v)| k.strip_prefix(prefix).map(|s| (s.to_string(), v.clone())))
                .collect(),
        )
    }

    pub fn with_prefix(&self, prefix: &str) -> Params {
        Params(
            self.0
                .iter()
                .map(|(k, v)| (format!("{prefix}{k}"), v.clone()))
                .collect(),
        )
    }

    pub fn extend(&mut self, other: Params) {
        self.0.extend(other.0);
    }

    /// Names present in only one set or with differing shapes.
    pub fn layout_mismatches(&self, other: &Params) -> Vec<String> {
        let mut bad = Vec::new();
        for (k, v) in &self.0 {
            match other.0.get(k) {
                None => bad.push(format!("{k} (missing in second)")),
                Some(o) if o.shape() != v.shape() => {
                    bad.push(format!("{k} (shape {:?} vs {:?})", v.shape(), o.shape()))
                }
                _ => {}
            }
        }
        for k in other.0.keys() {
            if !self.0.contains_key(k) {
                bad.push(format!("{k} (missing in first)"));
            }
        }
        bad
    }
}

/// Header key-value pairs plus parameters.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub meta: Vec<(String, String)>,
    pub params: Params,
}

impl Checkpoint {
    pub fn meta_value(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + 8 * self.params.element_count());
        out.extend_from_slice(MAGIC.as_bytes());
        out.push(b'\n');
        for (k, v) in &self.meta {
            out.extend_from_slice(format!("{k}={v}\n").as_bytes());
        }
        out.push(b'\n');
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for (name, t) in self.params.iter() {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0;
        let next_line = |pos: &mut usize| -> Result<String> {
            let rest = &bytes[*pos..];
            let end = rest
                .iter()
                .position(|&b| b == b'\n')
                .ok_or_else(|| Error::Format("checkpoint header is not terminated".into()))?;
            *pos += end + 1;
            String::from_utf8(rest[..end].to_vec()).map_err(|_| Error::Format("checkpoint header is not UTF-8".into()))
        };
        if next_line(&mut pos)? != MAGIC {
            return Err(Error::Format("not an embedkit checkpoint (bad magic)".into()));
        }
        let mut meta = Vec::new();
        loop {
            let line = next_line(&mut pos)?;
            if line.is_empty() {
                break;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("header line without '=': {line:?}")))?;
            meta.push((k.to_string(), v.to_string()));
        }
        let mut r = Reader { bytes, pos };
        let count = r.u64()? as usize;
        let mut params = Params::new();
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| Error::Format("parameter name is not UTF-8".into()))?;
            let rank = r.u32()? as usize;
            let shape = (0..rank)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let data = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            if params.contains(&name) {
                return Err(Error::Format(format!("duplicate parameter {name}")));
            }
            params.insert(name, Tensor::new(shape, data)?);
        }
        if r.pos != bytes.len() {
            return Err(Error::Format("trailing bytes after last parameter".into()));
        }
        Ok(Checkpoint { meta, params })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(&bytes)
    }
}

pub(crate) struct Reader<'a> {
    pub(crate) bytes: &'a [u8],
    pub(crate) pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format("unexpected end of file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut params = Params::new();
        params.insert("b", Tensor::vector(vec![1.5, -0.0, f64::MIN_POSITIVE]));
        params.insert("a.weight", Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        params.insert("s", Tensor::scalar(7.0));
        Checkpoint {
            meta: vec![("format".into(), "1".into()), ("hidden".into(), "2".into())],
            params,
        }
    }

    #[test]
    fn bytes_round_trip() {
        let c = sample();
        let back = Checkpoint::from_bytes(&c.to_bytes()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes(), c.to_bytes());
        assert_eq!(back.meta_value("hidden"), Some("2"));
    }

    #[test]
    fn truncated_and_bad_magic_are_errors() {
        let bytes = sample().to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        assert!(Checkpoint::from_bytes(b"nope\n\n").is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra).is_err());
    }

    #[test]
    fn layout_mismatch_lists_names() {
        let a = sample().params;
        let mut b = a.clone();
        b.insert("b", Tensor::vector(vec![0.0]));
        b.remove("s");
        let bad = a.layout_mismatches(&b);
        assert_eq!(bad.len(), 2);
        assert!(bad[0].starts_with("b "));
    }
}
