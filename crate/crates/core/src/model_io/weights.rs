//! STNT weight files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "STNT"  version:u16  count:u32
//! count x { name_len:u16  name:utf8  rank:u8  dims:u32 x rank  payload:f32 x prod(dims) }
//! ```

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"STNT";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!(
                "dims {dims:?} need {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }
}

/// Named tensors in file order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TensorTable {
    entries: Vec<(String, Tensor)>,
    index: HashMap<String, usize>,
}

impl TensorTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Config(format!("duplicate tensor `{name}`")));
        }
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push((name, tensor));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|i| &self.entries[*i].1)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

pub fn encode_weights(table: &TensorTable) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(table.len() as u32).to_le_bytes());
    for (name, t) in table.iter() {
        let name_len = u16::try_from(name.len())
            .map_err(|_| Error::Config(format!("tensor name too long: `{name}`")))?;
        let rank = u8::try_from(t.dims.len())
            .map_err(|_| Error::Config(format!("tensor `{name}` rank too high")))?;
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(rank);
        for d in &t.dims {
            let d = u32::try_from(*d)
                .map_err(|_| Error::Config(format!("tensor `{name}` dim too large")))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        match self.pos.checked_add(n) {
            Some(end) if end <= self.bytes.len() => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            _ => Err(self.error(format!(
                "truncated {what}: need {n} bytes, {} left",
                self.bytes.len() - self.pos
            ))),
        }
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(
            self.take(2, what)?.try_into().expect("2 bytes"),
        ))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4, what)?.try_into().expect("4 bytes"),
        ))
    }

    fn error(&self, message: String) -> Error {
        Error::WeightFormat {
            offset: self.pos,
            message,
        }
    }
}

pub fn decode_weights(bytes: &[u8]) -> Result<TensorTable> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4, "magic")? != MAGIC {
        return Err(Error::WeightFormat {
            offset: 0,
            message: "bad magic (expected STNT)".into(),
        });
    }
    let version = cur.u16("version")?;
    if version != VERSION {
        return Err(Error::WeightFormat {
            offset: 4,
            message: format!("unsupported version {version}"),
        });
    }
    let count = cur.u32("tensor count")?;
    let mut table = TensorTable::new();
    for i in 0..count {
        let name_at = cur.pos;
        let name_len = cur.u16("name length")? as usize;
        let name = std::str::from_utf8(cur.take(name_len, "name")?)
            .map_err(|_| Error::WeightFormat {
                offset: name_at + 2,
                message: format!("tensor #{i}: name is not UTF-8"),
            })?
            .to_string();
        if table.get(&name).is_some() {
            return Err(Error::WeightFormat {
                offset: name_at,
                message: format!("duplicate tensor `{name}`"),
            });
        }
        let rank = cur.u8(&format!("rank of `{name}`"))? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(cur.u32(&format!("dims of `{name}`"))? as usize);
        }
        let payload_len = dims
            .iter()
            .try_fold(4usize, |acc, d| acc.checked_mul(*d))
            .ok_or_else(|| cur.error(format!("tensor `{name}`: dims {dims:?} overflow")))?;
        let payload = cur.take(payload_len, &format!("payload of tensor `{name}`"))?;
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        table.insert(name, Tensor { dims, data })?;
    }
    if cur.pos != bytes.len() {
        return Err(cur.error(format!("{} trailing bytes", bytes.len() - cur.pos)));
    }
    Ok(table)
}

pub fn load_weights(path: &Path) -> Result<TensorTable> {
    decode_weights(&std::fs::read(path)?)
}

pub fn save_weights(path: &Path, table: &TensorTable) -> Result<()> {
    std::fs::write(path, encode_weights(table)?)?;
    Ok(())
}
