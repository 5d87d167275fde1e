//! Binary checkpoint container.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic        4 bytes  "SLCK"
//! version      u32      FORMAT_VERSION
//! kind         u32      1 = model, 2 = latency predictor, 3 = optimizer state
//! e, h, f      u32 x 3
//! vocab        u32
//! max_len      u32
//! classes      u32
//! seed         u64
//! extra        u64      kind specific (optimizer step count)
//! count        u32      number of tensors
//! count x {
//!   name_len   u32
//!   name       name_len bytes of UTF-8
//!   rows, cols u32 x 2
//!   data       rows * cols f32
//! }
//! ```
//!
//! Model tensors are written in the canonical parameter order of
//! [`ModelWeights::params`].

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Tensor2D;

use super::arch::{Architecture, ModelDims};
use super::weights::ModelWeights;

pub const MAGIC: &[u8; 4] = b"SLCK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContainerKind {
    Model = 1,
    LatencyPredictor = 2,
    OptimizerState = 3,
}

impl ContainerKind {
    fn from_u32(v: u32) -> Result<Self> {
        match v {
            1 => Ok(Self::Model),
            2 => Ok(Self::LatencyPredictor),
            3 => Ok(Self::OptimizerState),
            other => Err(Error::Checkpoint(format!("unknown container kind {other}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Header {
    pub kind: ContainerKind,
    pub arch: Architecture,
    pub dims: ModelDims,
    pub seed: u64,
    pub extra: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub header: Header,
    pub tensors: Vec<(String, Tensor2D)>,
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Checkpoint(format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint("truncated container".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

impl Container {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let h = &self.header;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(h.kind as u32).to_le_bytes());
        for v in [
            h.arch.e,
            h.arch.h,
            h.arch.f,
            h.dims.vocab,
            h.dims.max_len,
            h.dims.classes,
        ] {
            put_u32(&mut out, v)?;
        }
        out.extend_from_slice(&h.seed.to_le_bytes());
        out.extend_from_slice(&h.extra.to_le_bytes());
        put_u32(&mut out, self.tensors.len())?;
        for (name, t) in &self.tensors {
            put_u32(&mut out, name.len())?;
            out.extend_from_slice(name.as_bytes());
            put_u32(&mut out, t.rows())?;
            put_u32(&mut out, t.cols())?;
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut c = Cursor { buf, pos: 0 };
        if c.take(4)? != MAGIC {
            return Err(Error::Checkpoint(
                "bad magic, not a checkpoint container".into(),
            ));
        }
        let version = c.u32()?;
        if version != FORMAT_VERSION as usize {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {version}"
            )));
        }
        let kind = ContainerKind::from_u32(c.u32()? as u32)?;
        let arch = Architecture::new(c.u32()?, c.u32()?, c.u32()?);
        let dims = ModelDims {
            vocab: c.u32()?,
            max_len: c.u32()?,
            classes: c.u32()?,
        };
        let seed = c.u64()?;
        let extra = c.u64()?;
        let count = c.u32()?;
        let mut tensors = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let name_len = c.u32()?;
            let name = std::str::from_utf8(c.take(name_len)?)
                .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?
                .to_string();
            let rows = c.u32()?;
            let cols = c.u32()?;
            let n = rows
                .checked_mul(cols)
                .ok_or_else(|| Error::Checkpoint("tensor too large".into()))?;
            let raw = c.take(
                n.checked_mul(4)
                    .ok_or_else(|| Error::Checkpoint("tensor too large".into()))?,
            )?;
            let data = raw
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .collect();
            tensors.push((name, Tensor2D::new(rows, cols, data)?));
        }
        if c.pos != buf.len() {
            return Err(Error::Checkpoint("trailing bytes after last tensor".into()));
        }
        Ok(Self {
            header: Header {
                kind,
                arch,
                dims,
                seed,
                extra,
            },
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        // atomic replace
        let tmp = path.with_extension("tmp");
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&bytes)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut buf = Vec::new();
        fs::File::open(path)
            .map_err(|e| match e.kind() {
                std::io::ErrorKind::NotFound => Error::MissingArtifact {
                    path: path.to_path_buf(),
                    what: "checkpoint".into(),
                },
                _ => Error::Io(e),
            })?
            .read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }

    pub fn expect_kind(&self, kind: ContainerKind) -> Result<()> {
        if self.header.kind != kind {
            return Err(Error::Checkpoint(format!(
                "expected a {kind:?} container, found {:?}",
                self.header.kind
            )));
        }
        Ok(())
    }
}

impl ModelWeights<f32> {
    pub fn to_container(&self, seed: u64) -> Container {
        Container {
            header: Header {
                kind: ContainerKind::Model,
                arch: self.arch(),
                dims: self.dims(),
                seed,
                extra: 0,
            },
            tensors: self
                .param_names()
                .into_iter()
                .zip(self.params().into_iter().cloned())
                .collect(),
        }
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        c.expect_kind(ContainerKind::Model)?;
        let arch = c.header.arch;
        let expected = ModelWeights::<f32>::zeros(arch, c.header.dims)?.param_names();
        if expected.len() != c.tensors.len()
            || expected.iter().zip(&c.tensors).any(|(a, (b, _))| a != b)
        {
            return Err(Error::Checkpoint(format!(
                "tensor names do not match the canonical layout of {arch}"
            )));
        }
        ModelWeights::from_params(
            arch,
            c.header.dims,
            c.tensors.iter().map(|(_, t)| t.clone()).collect(),
        )
    }

    pub fn save(&self, path: &Path, seed: u64) -> Result<()> {
        self.to_container(seed).save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::load(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn model_round_trip_through_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let m =
            ModelWeights::<f32>::instantiate(Architecture::new(2, 24, 32), ModelDims::new(3), 9)
                .unwrap();
        m.save(&path, 9).unwrap();
        let c = Container::load(&path).unwrap();
        assert_eq!(c.header.seed, 9);
        assert_eq!(c.header.dims.classes, 3);
        assert_eq!(ModelWeights::load(&path).unwrap(), m);
    }

    #[test]
    fn header_layout_is_fixed() {
        let m = ModelWeights::<f32>::zeros(Architecture::new(1, 12, 4), ModelDims::new(2)).unwrap();
        let bytes = m.to_container(5).to_bytes().unwrap();
        assert_eq!(&bytes[0..4], b"SLCK");
        assert_eq!(
            u32::from_le_bytes(bytes[4..8].try_into().unwrap()),
            FORMAT_VERSION
        );
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[16..20].try_into().unwrap()), 12);
        assert_eq!(u32::from_le_bytes(bytes[20..24].try_into().unwrap()), 4);
        assert_eq!(u64::from_le_bytes(bytes[36..44].try_into().unwrap()), 5);
    }

    #[test]
    fn rejects_corrupt_input() {
        let m = ModelWeights::<f32>::zeros(Architecture::new(1, 12, 4), ModelDims::new(2)).unwrap();
        let bytes = m.to_container(0).to_bytes().unwrap();
        assert!(Container::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Container::from_bytes(&bad).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(Container::from_bytes(&extra).is_err());
    }

    #[test]
    fn missing_file_names_the_path() {
        let err = Container::load(Path::new("/nonexistent/x.ckpt")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/x.ckpt"));
    }
}
