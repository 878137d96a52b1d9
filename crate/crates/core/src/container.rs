//! Versioned binary container of named arrays and text entries.
//!
//! Layout (little endian):
//! ```text
//! magic     8 bytes  "FPCGCNTR"
//! version   u32
//! count     u32
//! entry*    u16 name_len, name (utf-8), u8 tag, payload
//!   tag 1   f64 array: u8 ndim, u64 dims[ndim], f64 data (row-major)
//!   tag 2   text:      u64 len, bytes (utf-8)
//! ```
//! Entry names are unique; nesting is by dotted prefixes.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayD, IxDyn};

use crate::error::{FpcgError, Result};

pub const MAGIC: &[u8; 8] = b"FPCGCNTR";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum Entry {
    Array(ArrayD<f64>),
    Text(String),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Container {
    entries: BTreeMap<String, Entry>,
}

fn corrupt(msg: impl Into<String>) -> FpcgError {
    FpcgError::Container(msg.into())
}

impl Container {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn put_array(&mut self, name: impl Into<String>, a: ArrayD<f64>) {
        self.entries.insert(name.into(), Entry::Array(a));
    }

    pub fn put_vec(&mut self, name: impl Into<String>, v: &[f64]) {
        self.put_array(name, Array1::from(v.to_vec()).into_dyn());
    }

    pub fn put_matrix(&mut self, name: impl Into<String>, m: &Array2<f64>) {
        self.put_array(name, m.clone().into_dyn());
    }

    pub fn put_scalar(&mut self, name: impl Into<String>, v: f64) {
        self.put_vec(name, &[v]);
    }

    pub fn put_text(&mut self, name: impl Into<String>, s: impl Into<String>) {
        self.entries.insert(name.into(), Entry::Text(s.into()));
    }

    /// Stores a serde value as JSON text.
    pub fn put_json<T: serde::Serialize>(&mut self, name: impl Into<String>, v: &T) -> Result<()> {
        self.put_text(name, serde_json::to_string(v)?);
        Ok(())
    }

    pub fn array(&self, name: &str) -> Result<&ArrayD<f64>> {
        match self.entries.get(name) {
            Some(Entry::Array(a)) => Ok(a),
            Some(_) => Err(corrupt(format!("entry {name} is not an array"))),
            None => Err(corrupt(format!("missing entry {name}"))),
        }
    }

    pub fn vec(&self, name: &str) -> Result<Vec<f64>> {
        let a = self.array(name)?;
        if a.ndim() != 1 {
            return Err(corrupt(format!("entry {name} has {} dims, expected 1", a.ndim())));
        }
        Ok(a.iter().copied().collect())
    }

    pub fn matrix(&self, name: &str) -> Result<Array2<f64>> {
        self.array(name)?.clone().into_dimensionality().map_err(|_| corrupt(format!("entry {name} is not a matrix")))
    }

    pub fn scalar(&self, name: &str) -> Result<f64> {
        let v = self.vec(name)?;
        if v.len() != 1 {
            return Err(corrupt(format!("entry {name} is not a scalar")));
        }
        Ok(v[0])
    }

    pub fn text(&self, name: &str) -> Result<&str> {
        match self.entries.get(name) {
            Some(Entry::Text(s)) => Ok(s),
            Some(_) => Err(corrupt(format!("entry {name} is not text"))),
            None => Err(corrupt(format!("missing entry {name}"))),
        }
    }

    pub fn json<T: serde::de::DeserializeOwned>(&self, name: &str) -> Result<T> {
        Ok(serde_json::from_str(self.text(name)?)?)
    }

    /// Copies every entry of `other` under `prefix.`.
    pub fn nest(&mut self, prefix: &str, other: Container) {
        for (k, v) in other.entries {
            self.entries.insert(format!("{prefix}.{k}"), v);
        }
    }

    /// Entries under `prefix.`, with the prefix removed.
    pub fn sub(&self, prefix: &str) -> Container {
        let p = format!("{prefix}.");
        Container { entries: self.entries.iter().filter_map(|(k, v)| k.strip_prefix(&p).map(|s| (s.to_string(), v.clone()))).collect() }
    }

    /// Whether any entry lives under `prefix.`.
    pub fn has_sub(&self, prefix: &str) -> bool {
        let p = format!("{prefix}.");
        self.entries.keys().any(|k| k.starts_with(&p))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, entry) in &self.entries {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            match entry {
                Entry::Array(a) => {
                    out.push(1);
                    out.push(a.ndim() as u8);
                    for &d in a.shape() {
                        out.extend_from_slice(&(d as u64).to_le_bytes());
                    }
                    for &v in a.iter() {
                        out.extend_from_slice(&v.to_le_bytes());
                    }
                }
                Entry::Text(s) => {
                    out.push(2);
                    out.extend_from_slice(&(s.len() as u64).to_le_bytes());
                    out.extend_from_slice(s.as_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Container> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(corrupt("bad magic"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(corrupt(format!("unsupported container version {version}")));
        }
        let count = r.u32()?;
        let mut entries = BTreeMap::new();
        for _ in 0..count {
            let name_len = r.u16()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec()).map_err(|_| corrupt("name is not utf-8"))?;
            let entry = match r.u8()? {
                1 => {
                    let ndim = r.u8()? as usize;
                    let dims: Vec<usize> = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<_>>()?;
                    let n = dims
                        .iter()
                        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                        .filter(|&n| n.checked_mul(8).is_some_and(|b| b <= r.remaining()))
                        .ok_or_else(|| corrupt(format!("entry {name}: truncated array")))?;
                    let data: Vec<f64> =
                        r.take(8 * n)?.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
                    Entry::Array(ArrayD::from_shape_vec(IxDyn(&dims), data).map_err(|e| corrupt(e.to_string()))?)
                }
                2 => {
                    let len = r.u64()? as usize;
                    Entry::Text(String::from_utf8(r.take(len)?.to_vec()).map_err(|_| corrupt("text is not utf-8"))?)
                }
                tag => return Err(corrupt(format!("entry {name}: unknown tag {tag}"))),
            };
            if entries.insert(name.clone(), entry).is_some() {
                return Err(corrupt(format!("duplicate entry {name}")));
            }
        }
        if r.remaining() != 0 {
            return Err(corrupt("trailing bytes"));
        }
        Ok(Container { entries })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Container> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(FpcgError::FileNotFound(path.to_path_buf()));
        }
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Container::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if n > self.remaining() {
            return Err(corrupt("unexpected end of data"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Container {
        let mut c = Container::new();
        c.put_vec("w", &[1.0, -2.5, f64::MIN_POSITIVE]);
        c.put_matrix("m", &Array2::from_shape_fn((2, 3), |(i, j)| (i * 3 + j) as f64));
        c.put_text("meta", "héllo");
        c.put_scalar("b", 0.125);
        c
    }

    #[test]
    fn roundtrip_is_exact() {
        let c = sample();
        let back = Container::from_bytes(&c.to_bytes()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.matrix("m").unwrap()[[1, 2]], 5.0);
        assert_eq!(back.text("meta").unwrap(), "héllo");
        assert_eq!(back.scalar("b").unwrap(), 0.125);
        // serialization is canonical
        assert_eq!(back.to_bytes(), c.to_bytes());
    }

    #[test]
    fn nesting() {
        let mut outer = Container::new();
        outer.nest("base.0", sample());
        outer.put_text("kind", "x");
        assert_eq!(outer.sub("base.0"), sample());
        assert!(outer.sub("base.1").is_empty());
    }

    #[test]
    fn corruption_detected() {
        let bytes = sample().to_bytes();
        assert!(Container::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Container::from_bytes(&bad).is_err());
        let mut v2 = bytes.clone();
        v2[8] = 2;
        assert!(Container::from_bytes(&v2).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(Container::from_bytes(&extra).is_err());
        assert!(Container::from_bytes(&[]).is_err());
    }

    #[test]
    fn wrong_kind_is_an_error() {
        let c = sample();
        assert!(c.text("w").is_err());
        assert!(c.array("meta").is_err());
        assert!(c.vec("m").is_err());
        assert!(c.vec("nope").is_err());
    }
}
