//! Binary checkpoint layout (all integers and floats little-endian):
//!
//! ```text
//! magic      8 bytes  "GLOCALIB"
//! version    u32      1
//! seq_len    u64
//! n_vars     u64
//! d_model    u64
//! hidden     u64
//! layers     u64
//! attention  u8       0 or 1
//! step       u64      optimizer steps taken
//! count      u32      number of named arrays
//! per array:
//!   name_len u32, name (UTF-8)
//!   rank     u32, dims (u64 each)
//!   values   f64 * product(dims)
//! ```
//!
//! Model parameters use the names of [`ModelParams::names`]; trainers may
//! append extra arrays (normalizer statistics, optimizer moments).

use std::io::{Read, Write};
use std::path::Path;

use super::params::{ModelConfig, ModelParams};
use crate::diff::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"GLOCALIB";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub step: u64,
    pub arrays: Vec<(String, Tensor)>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner
            .read_exact(&mut buf)
            .map_err(|e| bad(format!("truncated checkpoint: {e}")))?;
        Ok(buf)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }

    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| bad("dimension overflows usize"))
    }
}

impl Checkpoint {
    pub fn from_params(params: &ModelParams, step: u64) -> Self {
        Self {
            config: params.config,
            step,
            arrays: params.named(),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.arrays.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.arrays.push((name.into(), tensor));
    }

    /// Rebuilds model parameters, checking every name and shape against the
    /// stored config.
    pub fn params(&self) -> Result<ModelParams> {
        let template = ModelParams::zeros(self.config)?;
        let mut missing = None;
        let params = template.map(|name, t| match self.get(name) {
            Some(stored) if stored.shape() == t.shape() => stored.clone(),
            Some(stored) => {
                missing.get_or_insert(format!(
                    "array {name} has shape {:?}, expected {:?}",
                    stored.shape(),
                    t.shape()
                ));
                t.clone()
            }
            None => {
                missing.get_or_insert(format!("array {name} missing"));
                t.clone()
            }
        });
        match missing {
            Some(msg) => Err(bad(msg)),
            None => Ok(params),
        }
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        let c = &self.config;
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        for v in [c.seq_len, c.n_vars, c.d_model, c.hidden, c.layers] {
            w.write_all(&(v as u64).to_le_bytes())?;
        }
        w.write_all(&[u8::from(c.attention)])?;
        w.write_all(&self.step.to_le_bytes())?;
        w.write_all(&(self.arrays.len() as u32).to_le_bytes())?;
        for (name, t) in &self.arrays {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(t.rank() as u32).to_le_bytes())?;
            for &d in t.shape() {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: impl Read) -> Result<Self> {
        let mut r = Reader { inner: r };
        if &r.bytes::<8>()? != MAGIC {
            return Err(bad("not a checkpoint (bad magic)"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(bad(format!("unsupported checkpoint version {version}")));
        }
        let config = ModelConfig {
            seq_len: r.usize()?,
            n_vars: r.usize()?,
            d_model: r.usize()?,
            hidden: r.usize()?,
            layers: r.usize()?,
            attention: match r.bytes::<1>()?[0] {
                0 => false,
                1 => true,
                b => return Err(bad(format!("bad attention flag {b}"))),
            },
        };
        let step = r.u64()?;
        let count = r.u32()?;
        let mut arrays = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let len = r.u32()? as usize;
            let mut name = vec![0u8; len];
            r.inner
                .read_exact(&mut name)
                .map_err(|e| bad(format!("truncated checkpoint: {e}")))?;
            let name = String::from_utf8(name).map_err(|_| bad("array name is not UTF-8"))?;
            let rank = r.u32()? as usize;
            let shape: Vec<usize> = (0..rank).map(|_| r.usize()).collect::<Result<_>>()?;
            let n: usize = shape.iter().product();
            let data: Vec<f64> = (0..n)
                .map(|_| Ok(f64::from_le_bytes(r.bytes()?)))
                .collect::<Result<_>>()?;
            arrays.push((name, Tensor::new(&shape, data)?));
        }
        Ok(Self {
            config,
            step,
            arrays,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read_from(f)
    }
}
