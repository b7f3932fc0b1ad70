//! Versioned binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic "GLAMCKPT" | version u32
//! config      : u64 length + UTF-8 JSON
//! params      : tensor list
//! optimizer   : u8 present flag, then step u64 + tensor list
//! metadata    : u64 length + UTF-8 JSON
//! tensor list : u64 count, then per tensor:
//!               u32 name length + name, u32 rank, u64 dims…, f64 data…
//! ```

use std::fs;
use std::path::Path;

use crate::error::{GlamError, Result};
use crate::numerics::Tensor;
use crate::scalar::Scalar;

use super::config::ModelConfig;
use super::glam::GlamModel;

pub const MAGIC: &[u8; 8] = b"GLAMCKPT";
pub const VERSION: u32 = 1;

pub type NamedTensors = Vec<(String, Tensor<f64>)>;

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerSnapshot {
    pub step: u64,
    pub tensors: NamedTensors,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: NamedTensors,
    pub optimizer: Option<OptimizerSnapshot>,
    pub metadata: serde_json::Value,
}

pub fn to_f64_tensors<T: Scalar>(named: impl IntoIterator<Item = (String, Tensor<T>)>) -> NamedTensors {
    named
        .into_iter()
        .map(|(n, t)| {
            let shape = t.shape().to_vec();
            let data = t.data().iter().map(|x| x.as_f64()).collect();
            (n, Tensor::new(&shape, data).expect("same shape"))
        })
        .collect()
}

pub fn from_f64_tensors<T: Scalar>(named: &NamedTensors) -> Vec<(String, Tensor<T>)> {
    named
        .iter()
        .map(|(n, t)| {
            (n.clone(), Tensor::new(t.shape(), t.data().iter().map(|&x| T::of(x)).collect()).expect("same shape"))
        })
        .collect()
}

impl Checkpoint {
    pub fn from_model<T: Scalar>(model: &GlamModel<T>) -> Self {
        Self {
            config: model.config().clone(),
            params: to_f64_tensors(model.params().iter().map(|p| (p.name.clone(), p.value.clone()))),
            optimizer: None,
            metadata: serde_json::Value::Null,
        }
    }

    pub fn restore_model<T: Scalar>(&self) -> Result<GlamModel<T>> {
        let mut model = GlamModel::build(&self.config, 0)?;
        model.load_values(&from_f64_tensors(&self.params))?;
        Ok(model)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        write_blob(&mut out, serde_json::to_vec(&self.config)?.as_slice());
        write_tensors(&mut out, &self.params);
        match &self.optimizer {
            None => out.push(0),
            Some(opt) => {
                out.push(1);
                out.extend_from_slice(&opt.step.to_le_bytes());
                write_tensors(&mut out, &opt.tensors);
            }
        }
        write_blob(&mut out, serde_json::to_vec(&self.metadata)?.as_slice());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(GlamError::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(GlamError::Checkpoint(format!("unsupported version {version}")));
        }
        let config: ModelConfig = serde_json::from_slice(r.blob()?)?;
        let params = r.tensors()?;
        let optimizer = match r.take(1)?[0] {
            0 => None,
            1 => {
                let step = r.u64()?;
                Some(OptimizerSnapshot { step, tensors: r.tensors()? })
            }
            f => return Err(GlamError::Checkpoint(format!("bad optimizer flag {f}"))),
        };
        let metadata = serde_json::from_slice(r.blob()?)?;
        if r.pos != bytes.len() {
            return Err(GlamError::Checkpoint("trailing bytes".into()));
        }
        Ok(Self { config, params, optimizer, metadata })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

fn write_blob(out: &mut Vec<u8>, blob: &[u8]) {
    out.extend_from_slice(&(blob.len() as u64).to_le_bytes());
    out.extend_from_slice(blob);
}

fn write_tensors(out: &mut Vec<u8>, tensors: &NamedTensors) {
    out.extend_from_slice(&(tensors.len() as u64).to_le_bytes());
    for (name, t) in tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for x in t.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| GlamError::Checkpoint("truncated".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn blob(&mut self) -> Result<&'a [u8]> {
        let n = self.u64()? as usize;
        self.take(n)
    }

    fn tensors(&mut self) -> Result<NamedTensors> {
        let n = self.u64()? as usize;
        let mut out = Vec::with_capacity(n.min(1 << 16));
        for _ in 0..n {
            let len = self.u32()? as usize;
            let name = String::from_utf8(self.take(len)?.to_vec())
                .map_err(|_| GlamError::Checkpoint("tensor name is not UTF-8".into()))?;
            let rank = self.u32()? as usize;
            let shape = (0..rank).map(|_| self.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let count: usize = shape.iter().product();
            let raw =
                self.take(count.checked_mul(8).ok_or_else(|| GlamError::Checkpoint("tensor too large".into()))?)?;
            let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
            out.push((name, Tensor::new(&shape, data)?));
        }
        Ok(out)
    }
}
