//! Binary tensor archive.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"MGAN"  u32 version  u32 entry_count
//! per entry:
//!   u32 name_len  name (UTF-8)  u8 dtype  u32 rank  u64 extent × rank  values
//! ```
//!
//! dtype tags: 0 = f32, 1 = f64, 2 = u64, 3 = u8.

use std::fs;
use std::path::Path;

use crate::autodiff::{DType, ParamStore, Real, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"MGAN";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum EntryData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    U64(Vec<u64>),
    U8(Vec<u8>),
}

impl EntryData {
    fn tag(&self) -> u8 {
        match self {
            EntryData::F32(_) => 0,
            EntryData::F64(_) => 1,
            EntryData::U64(_) => 2,
            EntryData::U8(_) => 3,
        }
    }

    fn len(&self) -> usize {
        match self {
            EntryData::F32(v) => v.len(),
            EntryData::F64(v) => v.len(),
            EntryData::U64(v) => v.len(),
            EntryData::U8(v) => v.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: EntryData,
}

impl Entry {
    pub fn bytes(name: impl Into<String>, bytes: Vec<u8>) -> Self {
        Self {
            name: name.into(),
            shape: vec![bytes.len()],
            data: EntryData::U8(bytes),
        }
    }

    pub fn u64s(name: impl Into<String>, values: Vec<u64>) -> Self {
        Self {
            name: name.into(),
            shape: vec![values.len()],
            data: EntryData::U64(values),
        }
    }

    pub fn tensor<T: Real>(name: impl Into<String>, t: &Tensor<T>) -> Self {
        let data = match T::DTYPE {
            DType::F32 => EntryData::F32(t.data().iter().map(|x| x.as_f64() as f32).collect()),
            DType::F64 => EntryData::F64(t.data().iter().map(|x| x.as_f64()).collect()),
        };
        Self {
            name: name.into(),
            shape: t.shape().to_vec(),
            data,
        }
    }

    pub fn to_tensor<T: Real>(&self) -> Result<Tensor<T>> {
        let data: Vec<T> = match (&self.data, T::DTYPE) {
            (EntryData::F32(v), DType::F32) => v.iter().map(|&x| T::lit(x as f64)).collect(),
            (EntryData::F64(v), DType::F64) => v.iter().map(|&x| T::lit(x)).collect(),
            _ => {
                return Err(Error::Checkpoint(format!(
                    "{} has dtype tag {}, expected {:?}",
                    self.name,
                    self.data.tag(),
                    T::DTYPE
                )))
            }
        };
        Tensor::new(self.shape.clone(), data)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", self.name)))
    }

    pub fn as_u64s(&self) -> Result<&[u64]> {
        match &self.data {
            EntryData::U64(v) => Ok(v),
            _ => Err(Error::Checkpoint(format!(
                "{} is not a u64 entry",
                self.name
            ))),
        }
    }

    pub fn as_bytes(&self) -> Result<&[u8]> {
        match &self.data {
            EntryData::U8(v) => Ok(v),
            _ => Err(Error::Checkpoint(format!(
                "{} is not a byte entry",
                self.name
            ))),
        }
    }
}

/// Ordered collection of named entries.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Archive {
    pub entries: Vec<Entry>,
}

impl Archive {
    pub fn push(&mut self, entry: Entry) {
        self.entries.push(entry);
    }

    pub fn get(&self, name: &str) -> Result<&Entry> {
        self.entries
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| Error::Checkpoint(format!("missing entry {name}")))
    }

    /// Adds every parameter as `{prefix}{name}`.
    pub fn push_params<T: Real>(&mut self, prefix: &str, store: &ParamStore<T>) {
        for p in store.iter() {
            self.push(Entry::tensor(format!("{prefix}{}", p.name), &p.value));
        }
    }

    /// Overwrites `store` from entries named `{prefix}{name}`, checking shapes.
    pub fn load_params<T: Real>(&self, prefix: &str, store: &mut ParamStore<T>) -> Result<()> {
        let mut loaded = ParamStore::new();
        for p in store.iter() {
            let e = self.get(&format!("{prefix}{}", p.name))?;
            loaded.add(p.name.clone(), e.to_tensor()?);
        }
        store.load_from(&loaded)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for e in &self.entries {
            out.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
            out.extend_from_slice(e.name.as_bytes());
            out.push(e.data.tag());
            out.extend_from_slice(&(e.shape.len() as u32).to_le_bytes());
            for &d in &e.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            match &e.data {
                EntryData::F32(v) => v
                    .iter()
                    .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                EntryData::F64(v) => v
                    .iter()
                    .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                EntryData::U64(v) => v
                    .iter()
                    .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                EntryData::U8(v) => out.extend_from_slice(v),
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Checkpoint("bad magic, not a checkpoint file".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {version} (expected {VERSION})"
            )));
        }
        let count = r.u32()? as usize;
        let mut entries = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| Error::Checkpoint("entry name is not UTF-8".into()))?;
            let tag = r.take(1)?[0];
            let rank = r.u32()? as usize;
            let mut shape = Vec::with_capacity(rank.min(16));
            for _ in 0..rank {
                shape.push(r.u64()? as usize);
            }
            let n = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| Error::Checkpoint(format!("{name}: extent overflow")))?;
            let data = match tag {
                0 => EntryData::F32(
                    r.chunks(n, 4)?
                        .map(|c| f32::from_le_bytes(c.try_into().expect("4")))
                        .collect(),
                ),
                1 => EntryData::F64(
                    r.chunks(n, 8)?
                        .map(|c| f64::from_le_bytes(c.try_into().expect("8")))
                        .collect(),
                ),
                2 => EntryData::U64(
                    r.chunks(n, 8)?
                        .map(|c| u64::from_le_bytes(c.try_into().expect("8")))
                        .collect(),
                ),
                3 => EntryData::U8(r.take(n)?.to_vec()),
                other => {
                    return Err(Error::Checkpoint(format!(
                        "{name}: unknown dtype tag {other}"
                    )))
                }
            };
            debug_assert_eq!(data.len(), n);
            entries.push(Entry { name, shape, data });
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes after last entry".into()));
        }
        Ok(Self { entries })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint("truncated checkpoint".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn chunks(&mut self, n: usize, width: usize) -> Result<std::slice::ChunksExact<'a, u8>> {
        let total = n
            .checked_mul(width)
            .ok_or_else(|| Error::Checkpoint("entry size overflow".into()))?;
        Ok(self.take(total)?.chunks_exact(width))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Archive {
        let mut a = Archive::default();
        a.push(Entry::tensor(
            "w",
            &Tensor::<f32>::new(vec![2, 3], vec![1.0, -2.5, 3.25, 0.0, 1e-7, -0.0]).unwrap(),
        ));
        a.push(Entry::tensor(
            "x",
            &Tensor::<f64>::scalar(std::f64::consts::PI),
        ));
        a.push(Entry::u64s("step", vec![42]));
        a.push(Entry::bytes("meta", b"{\"k\":1}".to_vec()));
        a
    }

    #[test]
    fn round_trip_is_exact() {
        let a = sample();
        let b = Archive::from_bytes(&a.to_bytes()).unwrap();
        assert_eq!(a, b);
        let w: Tensor<f32> = b.get("w").unwrap().to_tensor().unwrap();
        assert_eq!(w.data()[4].to_bits(), 1e-7f32.to_bits());
        assert_eq!(w.data()[5].to_bits(), (-0.0f32).to_bits());
    }

    #[test]
    fn header_layout() {
        let bytes = sample().to_bytes();
        assert_eq!(&bytes[..4], b"MGAN");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), VERSION);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 4);
        // first entry: name "w", f32, rank 2, extents 2 and 3, then six values
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 1);
        assert_eq!(bytes[16], b'w');
        assert_eq!(bytes[17], 0);
        assert_eq!(u32::from_le_bytes(bytes[18..22].try_into().unwrap()), 2);
        assert_eq!(u64::from_le_bytes(bytes[22..30].try_into().unwrap()), 2);
        assert_eq!(f32::from_le_bytes(bytes[38..42].try_into().unwrap()), 1.0);
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let bytes = sample().to_bytes();
        assert!(Archive::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Archive::from_bytes(&bad).is_err());
        let mut v2 = bytes.clone();
        v2[4] = 2;
        let err = Archive::from_bytes(&v2).unwrap_err();
        assert!(err.to_string().contains("version 2"));
        let mut extra = bytes;
        extra.push(0);
        assert!(Archive::from_bytes(&extra).is_err());
    }

    #[test]
    fn dtype_mismatch_is_reported() {
        let a = sample();
        assert!(a.get("w").unwrap().to_tensor::<f64>().is_err());
        assert!(a.get("missing").is_err());
        assert!(a.get("step").unwrap().as_bytes().is_err());
    }
}
