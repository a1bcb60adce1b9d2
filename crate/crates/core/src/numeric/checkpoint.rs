use std::path::Path;

use super::layers::Module;
use super::tensor::Tensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"JIMCKPT\0";
const VERSION: u32 = 1;

/// Named parameter blocks in a versioned little-endian binary container.
///
/// Layout: magic, `u32` version, `u32` block count, then per block a `u32`
/// name length, UTF-8 name, `u32` rank, `u64` dims and `f64` values.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub blocks: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn from_module<M: Module + ?Sized>(m: &M) -> Self {
        let mut blocks = Vec::new();
        m.visit_params(&mut |p| blocks.push((p.name.clone(), p.value.clone())));
        Checkpoint { blocks }
    }

    /// Append the blocks of `m` with names prefixed by `prefix/`.
    pub fn push_module<M: Module + ?Sized>(&mut self, prefix: &str, m: &M) {
        m.visit_params(&mut |p| self.blocks.push((format!("{prefix}/{}", p.name), p.value.clone())));
    }

    /// Copy matching blocks into `m`, checking names and shapes.
    pub fn load_into<M: Module + ?Sized>(&self, prefix: Option<&str>, m: &mut M) -> Result<()> {
        let mut err = None;
        m.visit_params_mut(&mut |p| {
            if err.is_some() {
                return;
            }
            let key = match prefix {
                Some(pre) => format!("{pre}/{}", p.name),
                None => p.name.clone(),
            };
            match self.blocks.iter().find(|(n, _)| *n == key) {
                Some((_, t)) if t.shape() == p.value.shape() => p.value = t.clone(),
                Some((_, t)) => {
                    err = Some(Error::Dimension(format!(
                        "checkpoint block `{key}` has shape {:?}, expected {:?}",
                        t.shape(),
                        p.value.shape()
                    )))
                }
                None => err = Some(Error::Format(format!("checkpoint lacks block `{key}`"))),
            }
        });
        err.map_or(Ok(()), Err)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.blocks.len() as u32).to_le_bytes());
        for (name, t) in &self.blocks {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for d in t.shape() {
                out.extend_from_slice(&(*d as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let count = r.u32()? as usize;
        let mut blocks = Vec::with_capacity(count);
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec())
                .map_err(|_| Error::Format("block name is not UTF-8".into()))?;
            let rank = r.u32()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u64()? as usize);
            }
            let n: usize = shape.iter().product();
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                data.push(f64::from_le_bytes(r.take(8)?.try_into().unwrap()));
            }
            blocks.push((name, Tensor::new(shape, data)?));
        }
        if r.pos != bytes.len() {
            return Err(Error::Format("trailing bytes after checkpoint".into()));
        }
        Ok(Checkpoint { blocks })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Checkpoint::from_bytes(&std::fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format("truncated checkpoint".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
