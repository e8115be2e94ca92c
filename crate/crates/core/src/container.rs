//! Flat binary container of named `f64` arrays, plus JSON sidecars.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    4 bytes  "PHMA"
//! version  u32      1
//! count    u32
//! count × {
//!     name_len u32, name (UTF-8, name_len bytes)
//!     rank     u32, extents (rank × u64)
//!     payload  product(extents) × f64
//! }
//! ```
//!
//! Values are written with `f64::to_le_bytes`, so a round trip is bit-exact.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{PhmError, Result};
use crate::phm::{PhmMeta, PhmParams};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"PHMA";
pub const VERSION: u32 = 1;

/// Ordered list of named arrays.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct NamedArrays {
    entries: Vec<(String, Tensor)>,
}

impl NamedArrays {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor) {
        self.entries.push((name.into(), t));
    }

    pub fn extend(&mut self, items: impl IntoIterator<Item = (String, Tensor)>) {
        self.entries.extend(items);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn lookup(&self) -> impl Fn(&str) -> Option<Tensor> + '_ {
        move |name| self.get(name).cloned()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &(String, Tensor)> {
        self.entries.iter()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, t) in &self.entries {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for &e in t.shape() {
                out.extend_from_slice(&(e as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(PhmError::Format("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(PhmError::Format(format!("unsupported version {version}")));
        }
        let count = r.u32()?;
        let mut entries = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|e| PhmError::Format(format!("array name: {e}")))?
                .to_owned();
            let rank = r.u32()? as usize;
            let shape = (0..rank)
                .map(|_| r.u64().map(|e| e as usize))
                .collect::<Result<Vec<_>>>()?;
            let numel = shape
                .iter()
                .try_fold(1usize, |acc, &e| acc.checked_mul(e))
                .ok_or_else(|| PhmError::Format(format!("extents of {name} overflow")))?;
            let payload = r.take(numel.checked_mul(8).ok_or_else(|| {
                PhmError::Format(format!("payload of {name} overflows"))
            })?)?;
            let data = payload
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            entries.push((name, Tensor::new(shape, data)?));
        }
        if r.pos != bytes.len() {
            return Err(PhmError::Format("trailing bytes".into()));
        }
        Ok(Self { entries })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::decode(&fs::read(path)?)
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
            .ok_or_else(|| PhmError::Format("unexpected end of container".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

fn sidecar(stem: &Path, ext: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(ext);
    PathBuf::from(s)
}

/// Writes `{stem}.bin` and `{stem}.json`.
pub fn save_layer(stem: &Path, layer: &PhmParams) -> Result<()> {
    let mut arrays = NamedArrays::new();
    arrays.extend(layer.named_tensors(""));
    arrays.write(&sidecar(stem, ".bin"))?;
    write_json(&sidecar(stem, ".json"), &layer.meta())
}

pub fn load_layer(stem: &Path) -> Result<PhmParams> {
    let meta: PhmMeta = read_json(&sidecar(stem, ".json"))?;
    let arrays = NamedArrays::read(&sidecar(stem, ".bin"))?;
    let layer = PhmParams::from_named(&meta, "", &arrays.lookup())?;
    Ok(layer)
}
