use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const LOGIT_MAGIC: &[u8; 4] = b"DFLG";
const VERSION: u32 = 1;

/// Per-clip class logits, keyed and serialized in id order.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitStore {
    k: usize,
    entries: BTreeMap<String, Vec<f32>>,
}

impl LogitStore {
    pub fn new(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidArgument("logit store needs at least one class".into()));
        }
        Ok(LogitStore {
            k,
            entries: BTreeMap::new(),
        })
    }

    pub fn class_count(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Inserts or replaces the logits of one clip.
    pub fn insert(&mut self, id: impl Into<String>, logits: Vec<f32>) -> Result<()> {
        let id = id.into();
        if logits.len() != self.k {
            return Err(Error::ClassCount {
                expected: self.k,
                found: logits.len(),
            });
        }
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: "logit store" });
        }
        if id.len() > u16::MAX as usize {
            return Err(Error::InvalidArgument(format!("clip id of {} bytes is too long", id.len())));
        }
        self.entries.insert(id, logits);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&[f32]> {
        self.entries.get(id).map(|v| v.as_slice())
    }

    pub fn contains(&self, id: &str) -> bool {
        self.entries.contains_key(id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|s| s.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f32])> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(20 + self.entries.len() * (16 + 4 * self.k));
        out.extend_from_slice(LOGIT_MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.k as u32).to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u64).to_le_bytes());
        for (id, logits) in &self.entries {
            out.extend_from_slice(&(id.len() as u16).to_le_bytes());
            out.extend_from_slice(id.as_bytes());
            for v in logits {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |msg: &str| Error::format(path, msg);
        let mut pos = 0usize;
        let mut take = |n: usize| -> Result<&[u8]> {
            let s = bytes.get(pos..pos + n).ok_or_else(|| bad("truncated logit store"))?;
            pos += n;
            Ok(s)
        };
        if take(4)? != LOGIT_MAGIC {
            return Err(bad("bad magic"));
        }
        let version = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let k = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes")) as usize;
        let count = u64::from_le_bytes(take(8)?.try_into().expect("8 bytes"));
        let mut store = LogitStore::new(k).map_err(|_| bad("zero class count"))?;
        let mut prev: Option<String> = None;
        for _ in 0..count {
            let len = u16::from_le_bytes(take(2)?.try_into().expect("2 bytes")) as usize;
            let id = std::str::from_utf8(take(len)?)
                .map_err(|_| bad("clip id is not UTF-8"))?
                .to_string();
            if prev.as_ref().is_some_and(|p| *p >= id) {
                return Err(bad("clip ids not strictly sorted"));
            }
            let logits: Vec<f32> = take(4 * k)?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            if logits.iter().any(|v| !v.is_finite()) {
                return Err(bad("non-finite logit"));
            }
            store.entries.insert(id.clone(), logits);
            prev = Some(id);
        }
        if pos != bytes.len() {
            return Err(bad("trailing bytes"));
        }
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

/// Element-wise mean of the member logits for every clip. All stores must
/// share the class count and the clip id set.
pub fn ensemble_logits(stores: &[LogitStore]) -> Result<LogitStore> {
    let first = stores
        .first()
        .ok_or_else(|| Error::InvalidArgument("ensemble of zero stores".into()))?;
    let k = first.k;
    if let Some(s) = stores.iter().find(|s| s.k != k) {
        return Err(Error::ClassCount { expected: k, found: s.k });
    }
    let all: BTreeSet<&String> = stores.iter().flat_map(|s| s.entries.keys()).collect();
    let missing: Vec<String> = all
        .iter()
        .filter(|id| stores.iter().any(|s| !s.entries.contains_key(id.as_str())))
        .map(|id| id.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::KeyMismatch { missing });
    }
    let n = stores.len() as f64;
    let mut out = LogitStore::new(k)?;
    let mut column = Vec::with_capacity(stores.len());
    for id in first.entries.keys() {
        let rows: Vec<&Vec<f32>> = stores.iter().map(|s| &s.entries[id]).collect();
        let mean = (0..k)
            .map(|j| {
                // sorted summation keeps the result independent of store order
                column.clear();
                column.extend(rows.iter().map(|r| r[j] as f64));
                column.sort_by(f64::total_cmp);
                (column.iter().sum::<f64>() / n) as f32
            })
            .collect();
        out.entries.insert(id.clone(), mean);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(rows: &[(&str, [f32; 2])]) -> LogitStore {
        let mut s = LogitStore::new(2).unwrap();
        for (id, v) in rows {
            s.insert(*id, v.to_vec()).unwrap();
        }
        s
    }

    #[test]
    fn byte_layout_and_round_trip() {
        let s = store(&[("b", [1.0, -2.0]), ("a", [0.5, 0.25])]);
        let bytes = s.to_bytes();
        assert_eq!(&bytes[..4], b"DFLG");
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 2);
        assert_eq!(u64::from_le_bytes(bytes[12..20].try_into().unwrap()), 2);
        assert_eq!(&bytes[22..23], b"a");
        let back = LogitStore::from_bytes(&bytes, Path::new("x")).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn corrupt_stores_rejected() {
        let bytes = store(&[("a", [1.0, 2.0])]).to_bytes();
        let p = Path::new("x");
        assert!(LogitStore::from_bytes(&bytes[..bytes.len() - 1], p).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(LogitStore::from_bytes(&extra, p).is_err());
        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(LogitStore::from_bytes(&magic, p).is_err());
        let mut nan = bytes;
        let at = nan.len() - 4;
        nan[at..].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(LogitStore::from_bytes(&nan, p).is_err());
    }

    #[test]
    fn insert_validates() {
        let mut s = LogitStore::new(2).unwrap();
        assert!(matches!(s.insert("a", vec![1.0]), Err(Error::ClassCount { .. })));
        assert!(s.insert("a", vec![1.0, f32::INFINITY]).is_err());
    }

    #[test]
    fn ensemble_errors() {
        let a = store(&[("a", [1.0, 2.0]), ("b", [0.0, 0.0])]);
        let b = store(&[("a", [1.0, 2.0]), ("c", [0.0, 0.0])]);
        match ensemble_logits(&[a.clone(), b]) {
            Err(Error::KeyMismatch { missing }) => assert_eq!(missing, vec!["b", "c"]),
            other => panic!("{other:?}"),
        }
        let mut k3 = LogitStore::new(3).unwrap();
        k3.insert("a", vec![0.0; 3]).unwrap();
        assert!(matches!(ensemble_logits(&[a, k3]), Err(Error::ClassCount { .. })));
        assert!(ensemble_logits(&[]).is_err());
    }

    #[test]
    fn ensemble_mean() {
        let a = store(&[("x", [1.0, 2.0])]);
        let b = store(&[("x", [3.0, -2.0])]);
        let e = ensemble_logits(&[a.clone(), b]).unwrap();
        assert_eq!(e.get("x").unwrap(), &[2.0, 0.0]);
        assert_eq!(ensemble_logits(std::slice::from_ref(&a)).unwrap(), a);
    }
}
