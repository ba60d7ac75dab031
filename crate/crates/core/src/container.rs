//! Binary tensor container for models, checkpoints and exported
//! descriptors.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic  "PTCHFRG1"                      8 bytes
//! version u32                            currently 1
//! arch    u32 length + UTF-8             architecture string ("" for plain tensors)
//! meta    u32 length + UTF-8             free-form run metadata
//! mode    u8                             0 train, 1 eval
//! input   u32 h, u32 w                   model input size (0,0 for plain tensors)
//! tensors u32 count, then per tensor:
//!         name u32 length + UTF-8
//!         rank u32, extents u32 × rank
//!         data f32 × product(extents), little-endian
//! optim   u8 flag; if 1: rho f64, eps f64, lr f64, weight_decay f64,
//!         epoch u64, iteration u64, margin f64, tensors as above
//! crc     u32                            CRC-32 (IEEE) of all preceding bytes
//! ```
//!
//! The format is self-describing so readers in other languages need nothing
//! beyond this table.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"PTCHFRG1";
pub const VERSION: u32 = 1;

/// Optimizer state carried by checkpoints alongside the model tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimSection {
    pub rho: f64,
    pub eps: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub epoch: u64,
    pub iteration: u64,
    pub margin: f64,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub arch: String,
    pub metadata: String,
    pub mode: u8,
    pub input_hw: (u32, u32),
    pub tensors: Vec<(String, Tensor<f32>)>,
    pub optim: Option<OptimSection>,
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new() -> Self {
        Writer {
            buf: Vec::with_capacity(4096),
        }
    }

    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.buf.extend_from_slice(s.as_bytes());
    }

    fn tensor(&mut self, name: &str, t: &Tensor<f32>) {
        self.str(name);
        self.u32(t.shape().len() as u32);
        for &e in t.shape() {
            self.u32(e as u32);
        }
        for &v in t.data() {
            self.buf.extend_from_slice(&v.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format(format!(
                "truncated container: wanted {n} bytes at offset {}, file has {}",
                self.pos,
                self.buf.len()
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        let bytes = self.take(n)?;
        String::from_utf8(bytes.to_vec())
            .map_err(|_| Error::Format("container string is not UTF-8".into()))
    }

    fn tensor(&mut self) -> Result<(String, Tensor<f32>)> {
        let name = self.str()?;
        let rank = self.u32()? as usize;
        if rank > 8 {
            return Err(Error::Format(format!("implausible tensor rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(self.u32()? as usize);
        }
        let n: usize = shape.iter().product();
        let bytes = self.take(n * 4)?;
        let data = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        Ok((name, Tensor::from_vec(&shape, data)?))
    }
}

impl Container {
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = Writer::new();
        w.buf.extend_from_slice(MAGIC);
        w.u32(VERSION);
        w.str(&self.arch);
        w.str(&self.metadata);
        w.u8(self.mode);
        w.u32(self.input_hw.0);
        w.u32(self.input_hw.1);
        w.u32(self.tensors.len() as u32);
        for (name, t) in &self.tensors {
            w.tensor(name, t);
        }
        match &self.optim {
            None => w.u8(0),
            Some(o) => {
                w.u8(1);
                w.f64(o.rho);
                w.f64(o.eps);
                w.f64(o.lr);
                w.f64(o.weight_decay);
                w.u64(o.epoch);
                w.u64(o.iteration);
                w.f64(o.margin);
                w.u32(o.tensors.len() as u32);
                for (name, t) in &o.tensors {
                    w.tensor(name, t);
                }
            }
        }
        let mut hasher = crc32fast::Hasher::new();
        hasher.update(&w.buf);
        let crc = hasher.finalize();
        w.u32(crc);
        fs::write(path, &w.buf)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let buf = fs::read(path)?;
        if buf.len() < MAGIC.len() + 8 {
            return Err(Error::Format(format!(
                "file too short to be a container ({} bytes)",
                buf.len()
            )));
        }
        if &buf[..8] != MAGIC {
            return Err(Error::Format("bad magic bytes; not a model container".into()));
        }
        let body = &buf[..buf.len() - 4];
        let stored_crc = u32::from_le_bytes(buf[buf.len() - 4..].try_into().unwrap());
        let mut hasher = crc32fast::Hasher::new();
        hasher.update(body);
        if hasher.finalize() != stored_crc {
            return Err(Error::Format("checksum mismatch; container corrupted".into()));
        }
        let mut r = Reader { buf: body, pos: 8 };
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!(
                "container format version {version} unsupported; this build reads {VERSION}"
            )));
        }
        let arch = r.str()?;
        let metadata = r.str()?;
        let mode = r.u8()?;
        let input_hw = (r.u32()?, r.u32()?);
        let n = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(n);
        for _ in 0..n {
            tensors.push(r.tensor()?);
        }
        let optim = match r.u8()? {
            0 => None,
            1 => {
                let rho = r.f64()?;
                let eps = r.f64()?;
                let lr = r.f64()?;
                let weight_decay = r.f64()?;
                let epoch = r.u64()?;
                let iteration = r.u64()?;
                let margin = r.f64()?;
                let n = r.u32()? as usize;
                let mut tensors = Vec::with_capacity(n);
                for _ in 0..n {
                    tensors.push(r.tensor()?);
                }
                Some(OptimSection {
                    rho,
                    eps,
                    lr,
                    weight_decay,
                    epoch,
                    iteration,
                    margin,
                    tensors,
                })
            }
            f => return Err(Error::Format(format!("unknown optimizer-section flag {f}"))),
        };
        if r.pos != body.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes after container payload",
                body.len() - r.pos
            )));
        }
        Ok(Container {
            arch,
            metadata,
            mode,
            input_hw,
            tensors,
            optim,
        })
    }
}
