//! Binary parameter store.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "FCDD1"                      5-byte magic
//! u32 blob_count
//! repeat blob_count:
//!     u32 name_len, name (UTF-8)
//!     u32 rank, rank × u64 dims
//!     prod(dims) × f64 values
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 5] = b"FCDD1";

#[derive(Debug, Clone, PartialEq)]
pub struct Blob {
    pub name: String,
    pub dims: Vec<usize>,
    pub values: Vec<f64>,
}

impl Blob {
    pub fn new(name: impl Into<String>, dims: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let name = name.into();
        let expected: usize = dims.iter().product();
        if expected != values.len() {
            return Err(Error::rejected(format!(
                "blob {name}: dims {dims:?} need {expected} values, got {}",
                values.len()
            )));
        }
        Ok(Blob { name, dims, values })
    }

    pub fn scalar(name: impl Into<String>, value: f64) -> Self {
        Blob {
            name: name.into(),
            dims: vec![1],
            values: vec![value],
        }
    }
}

/// Ordered collection of named blobs.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub blobs: Vec<Blob>,
}

impl Checkpoint {
    pub fn push(&mut self, blob: Blob) -> Result<()> {
        if self.get(&blob.name).is_some() {
            return Err(Error::Checkpoint(format!("duplicate blob name {}", blob.name)));
        }
        self.blobs.push(blob);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Blob> {
        self.blobs.iter().find(|b| b.name == name)
    }

    pub fn require(&self, name: &str) -> Result<&Blob> {
        self.get(name)
            .ok_or_else(|| Error::Checkpoint(format!("checkpoint has no blob named {name}")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&(self.blobs.len() as u32).to_le_bytes())?;
        for b in &self.blobs {
            let name = b.name.as_bytes();
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name)?;
            w.write_all(&(b.dims.len() as u32).to_le_bytes())?;
            for &d in &b.dims {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for v in &b.values {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 5];
        read_exact(r, &mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint(format!("bad magic {magic:?}")));
        }
        let count = read_u32(r)? as usize;
        let mut ck = Checkpoint::default();
        for _ in 0..count {
            let name_len = read_u32(r)? as usize;
            let mut name = vec![0u8; name_len];
            read_exact(r, &mut name)?;
            let name = String::from_utf8(name).map_err(|_| Error::Checkpoint("blob name is not UTF-8".into()))?;
            let rank = read_u32(r)? as usize;
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                let mut buf = [0u8; 8];
                read_exact(r, &mut buf)?;
                dims.push(u64::from_le_bytes(buf) as usize);
            }
            let len = dims
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| Error::Checkpoint(format!("blob {name} dims overflow")))?;
            let mut values = Vec::with_capacity(len.min(1 << 24));
            for _ in 0..len {
                let mut buf = [0u8; 8];
                read_exact(r, &mut buf)?;
                values.push(f64::from_le_bytes(buf));
            }
            ck.push(Blob { name, dims, values })?;
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest).map_err(|e| Error::Checkpoint(e.to_string()))? != 0 {
            return Err(Error::Checkpoint("trailing bytes after last blob".into()));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(f);
        self.write_to(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::read_from(&mut BufReader::new(f))
    }
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|e| Error::Checkpoint(format!("truncated checkpoint: {e}")))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    read_exact(r, &mut buf)?;
    Ok(u32::from_le_bytes(buf))
}
