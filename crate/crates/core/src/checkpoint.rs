//! Named-tensor checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic   4 bytes  "JNCK"
//! version u32      1
//! count   u32      number of tensors
//! repeated `count` times, in insertion order:
//!   name_len u32, name (UTF-8, name_len bytes)
//!   ndim     u32, dims (ndim x u64)
//!   data     prod(dims) x f64 (IEEE-754 binary64, little-endian)
//! ```
//!
//! Values are always stored as f64 regardless of the in-memory scalar type.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::ranker::RankerModel;
use crate::retrievers::{DenseModel, LexModel, RetrieverModel};
use crate::scalar::Scalar;

const MAGIC: &[u8; 4] = b"JNCK";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new<T: Scalar>(name: &str, shape: Vec<usize>, data: &[T]) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self {
            name: name.to_string(),
            shape,
            data: data.iter().map(|x| x.to_f64_lossy()).collect(),
        }
    }

    pub fn values<T: Scalar>(&self) -> Vec<T> {
        self.data.iter().map(|&x| T::of(x)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub tensors: Vec<Tensor>,
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    fn require(&self, name: &str) -> Result<&Tensor> {
        self.get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{name}`")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
            for &d in &t.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &x in &t.data {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?
                .to_string();
            let ndim = r.u32()? as usize;
            let shape = (0..ndim)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let data = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            tensors.push(Tensor { name, shape, data });
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        Ok(Self { tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
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
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
}

fn expect_rank(t: &Tensor, rank: usize) -> Result<()> {
    if t.shape.len() != rank {
        return Err(Error::Checkpoint(format!(
            "tensor `{}` has rank {}, expected {rank}",
            t.name,
            t.shape.len()
        )));
    }
    Ok(())
}

impl<T: Scalar> From<&RetrieverModel<T>> for Checkpoint {
    fn from(model: &RetrieverModel<T>) -> Self {
        let tensor = match model {
            RetrieverModel::Dense(m) => {
                Tensor::new("embedding", vec![m.dim_hash(), m.dim_emb()], m.embedding())
            }
            RetrieverModel::Lexicon(m) => {
                Tensor::new("term_weight", vec![m.dim_hash()], m.term_weight())
            }
        };
        Checkpoint {
            tensors: vec![tensor],
        }
    }
}

impl<T: Scalar> TryFrom<&Checkpoint> for RetrieverModel<T> {
    type Error = Error;

    fn try_from(ckpt: &Checkpoint) -> Result<Self> {
        if let Some(t) = ckpt.get("embedding") {
            expect_rank(t, 2)?;
            return DenseModel::from_table(t.shape[0], t.shape[1], t.values())
                .map(RetrieverModel::Dense);
        }
        if let Some(t) = ckpt.get("term_weight") {
            expect_rank(t, 1)?;
            return LexModel::from_weights(t.values()).map(RetrieverModel::Lexicon);
        }
        Err(Error::Checkpoint(
            "neither `embedding` nor `term_weight` present".into(),
        ))
    }
}

impl<T: Scalar> From<&RankerModel<T>> for Checkpoint {
    fn from(m: &RankerModel<T>) -> Self {
        Checkpoint {
            tensors: vec![
                Tensor::new("w1", vec![m.feat_dim(), m.hidden()], &m.w1),
                Tensor::new("b1", vec![m.hidden()], &m.b1),
                Tensor::new("w2", vec![m.hidden()], &m.w2),
                Tensor::new("b2", vec![1], &[m.b2]),
            ],
        }
    }
}

impl<T: Scalar> TryFrom<&Checkpoint> for RankerModel<T> {
    type Error = Error;

    fn try_from(ckpt: &Checkpoint) -> Result<Self> {
        let w1 = ckpt.require("w1")?;
        expect_rank(w1, 2)?;
        let b1 = ckpt.require("b1")?;
        let w2 = ckpt.require("w2")?;
        let b2 = ckpt.require("b2")?;
        if b2.data.len() != 1 {
            return Err(Error::Checkpoint("b2 must hold one value".into()));
        }
        RankerModel::from_parts(
            w1.shape[0],
            w1.shape[1],
            w1.values(),
            b1.values(),
            w2.values(),
            T::of(b2.data[0]),
        )
    }
}
