use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::{dot, Scalar};
use crate::text::SparseVector;

/// Hashed-bag-of-words embedding encoder with count-weighted mean pooling.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseModel<T> {
    dim_hash: usize,
    dim_emb: usize,
    /// Row-major `dim_hash x dim_emb` table.
    embedding: Vec<T>,
}

impl<T: Scalar> DenseModel<T> {
    pub fn from_table(dim_hash: usize, dim_emb: usize, embedding: Vec<T>) -> Result<Self> {
        if dim_emb == 0 || dim_hash == 0 {
            return Err(Error::InvalidArgument(
                "dense model dims must be >= 1".into(),
            ));
        }
        if embedding.len() != dim_hash * dim_emb {
            return Err(Error::DimensionMismatch {
                expected: dim_hash * dim_emb,
                got: embedding.len(),
            });
        }
        if embedding.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument(
                "embedding contains non-finite values".into(),
            ));
        }
        Ok(Self {
            dim_hash,
            dim_emb,
            embedding,
        })
    }

    /// Entries drawn uniformly from `[-scale, scale]`.
    pub fn random(dim_hash: usize, dim_emb: usize, scale: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let embedding = (0..dim_hash * dim_emb)
            .map(|_| T::of(rng.gen_range(-scale..=scale)))
            .collect();
        Self::from_table(dim_hash, dim_emb, embedding).expect("valid random table")
    }

    pub fn dim_hash(&self) -> usize {
        self.dim_hash
    }

    pub fn dim_emb(&self) -> usize {
        self.dim_emb
    }

    pub fn embedding(&self) -> &[T] {
        &self.embedding
    }

    pub fn embedding_mut(&mut self) -> &mut [T] {
        &mut self.embedding
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.embedding[i * self.dim_emb..(i + 1) * self.dim_emb]
    }

    fn check(&self, features: &SparseVector<T>) -> Result<()> {
        if features.dim() != self.dim_hash {
            return Err(Error::DimensionMismatch {
                expected: self.dim_hash,
                got: features.dim(),
            });
        }
        Ok(())
    }

    /// Count-weighted mean of the embedding rows; zero for empty input.
    pub fn encode(&self, features: &SparseVector<T>) -> Result<Vec<T>> {
        self.check(features)?;
        let mut out = vec![T::zero(); self.dim_emb];
        let total = features.sum();
        if features.is_empty() {
            return Ok(out);
        }
        for &(i, c) in features.entries() {
            for (o, &e) in out.iter_mut().zip(self.row(i)) {
                *o = *o + c * e;
            }
        }
        for o in &mut out {
            *o = *o / total;
        }
        Ok(out)
    }

    pub fn score(&self, q: &SparseVector<T>, d: &SparseVector<T>) -> Result<T> {
        Ok(dot(&self.encode(q)?, &self.encode(d)?))
    }

    pub(crate) fn accumulate_grad(
        &self,
        q: &SparseVector<T>,
        docs: &[&SparseVector<T>],
        upstream: &[T],
        grad: &mut [T],
    ) -> Result<()> {
        if grad.len() != self.embedding.len() {
            return Err(Error::DimensionMismatch {
                expected: self.embedding.len(),
                got: grad.len(),
            });
        }
        let u = self.encode(q)?;
        let mut grad_u = vec![T::zero(); self.dim_emb];
        for (d, &g) in docs.iter().zip(upstream) {
            if g.is_zero() {
                self.check(d)?;
                continue;
            }
            let v = self.encode(d)?;
            for (gu, &vk) in grad_u.iter_mut().zip(&v) {
                *gu = *gu + g * vk;
            }
            if d.is_empty() {
                continue;
            }
            let total = d.sum();
            for &(i, c) in d.entries() {
                let w = g * c / total;
                let row = &mut grad[i * self.dim_emb..(i + 1) * self.dim_emb];
                for (r, &uk) in row.iter_mut().zip(&u) {
                    *r = *r + w * uk;
                }
            }
        }
        if !q.is_empty() {
            let total = q.sum();
            for &(i, c) in q.entries() {
                let w = c / total;
                let row = &mut grad[i * self.dim_emb..(i + 1) * self.dim_emb];
                for (r, &gk) in row.iter_mut().zip(&grad_u) {
                    *r = *r + w * gk;
                }
            }
        }
        Ok(())
    }
}
