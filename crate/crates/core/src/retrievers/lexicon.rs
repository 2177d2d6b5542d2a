use crate::error::{Error, Result};
use crate::scalar::{sigmoid, softplus, Scalar};
use crate::text::SparseVector;

/// Non-negativity map applied to raw term weights: `ln(1 + e^w)`.
pub fn rectify<T: Scalar>(w: T) -> T {
    softplus(w)
}

/// Lexicon-weighting encoder: one learnable weight per hash bucket.
///
/// `encode(x)_i = rectify(w_i) * x_i`, so
/// `score(q, d) = sum_i rectify(w_i)^2 * q_i * d_i`. Only observed terms get a
/// weight; there is no expansion to unseen terms.
#[derive(Debug, Clone, PartialEq)]
pub struct LexModel<T> {
    term_weight: Vec<T>,
}

impl<T: Scalar> LexModel<T> {
    pub fn from_weights(term_weight: Vec<T>) -> Result<Self> {
        if term_weight.is_empty() {
            return Err(Error::InvalidArgument(
                "lexicon model needs at least one bucket".into(),
            ));
        }
        if term_weight.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument(
                "term weights contain non-finite values".into(),
            ));
        }
        Ok(Self { term_weight })
    }

    /// Every raw weight set so that its rectified value is `effective`.
    pub fn uniform(dim_hash: usize, effective: f64) -> Self {
        assert!(effective > 0.0, "effective weight must be positive");
        let raw = effective.exp_m1().ln();
        Self::from_weights(vec![T::of(raw); dim_hash]).expect("finite uniform weights")
    }

    pub fn dim_hash(&self) -> usize {
        self.term_weight.len()
    }

    pub fn term_weight(&self) -> &[T] {
        &self.term_weight
    }

    pub fn term_weight_mut(&mut self) -> &mut [T] {
        &mut self.term_weight
    }

    fn check(&self, features: &SparseVector<T>) -> Result<()> {
        if features.dim() != self.dim_hash() {
            return Err(Error::DimensionMismatch {
                expected: self.dim_hash(),
                got: features.dim(),
            });
        }
        Ok(())
    }

    pub fn encode(&self, features: &SparseVector<T>) -> Result<SparseVector<T>> {
        self.check(features)?;
        let entries = features
            .entries()
            .iter()
            .map(|&(i, c)| (i, rectify(self.term_weight[i]) * c))
            .collect();
        SparseVector::new(features.dim(), entries)
    }

    pub fn score(&self, q: &SparseVector<T>, d: &SparseVector<T>) -> Result<T> {
        Ok(self.encode(q)?.dot(&self.encode(d)?))
    }

    pub(crate) fn accumulate_grad(
        &self,
        q: &SparseVector<T>,
        docs: &[&SparseVector<T>],
        upstream: &[T],
        grad: &mut [T],
    ) -> Result<()> {
        self.check(q)?;
        if grad.len() != self.dim_hash() {
            return Err(Error::DimensionMismatch {
                expected: self.dim_hash(),
                got: grad.len(),
            });
        }
        let two = T::of(2.0);
        for (d, &g) in docs.iter().zip(upstream) {
            self.check(d)?;
            if g.is_zero() {
                continue;
            }
            for &(i, qc) in q.entries() {
                let dc = d.get(i);
                if dc.is_zero() {
                    continue;
                }
                let w = self.term_weight[i];
                grad[i] = grad[i] + g * two * rectify(w) * sigmoid(w) * qc * dc;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn disjoint_terms_score_zero() {
        let m = LexModel::<f64>::uniform(8, 1.0);
        let q = SparseVector::new(8, vec![(1, 1.0)]).unwrap();
        let d = SparseVector::new(8, vec![(2, 5.0)]).unwrap();
        assert_eq!(m.score(&q, &d).unwrap(), 0.0);
    }

    #[test]
    fn unit_weights_reduce_to_count_product() {
        let m = LexModel::<f64>::uniform(8, 1.0);
        assert!((rectify(m.term_weight()[0]) - 1.0).abs() < 1e-15);
        let q = SparseVector::new(8, vec![(3, 2.0)]).unwrap();
        let d = SparseVector::new(8, vec![(3, 3.0), (5, 1.0)]).unwrap();
        assert!((m.score(&q, &d).unwrap() - 6.0).abs() < 1e-12);
    }

    #[test]
    fn symmetric_and_non_negative() {
        let m = LexModel::from_weights(vec![-3.0, 0.2, 1.5, -0.7]).unwrap();
        let a = SparseVector::new(4, vec![(0, 1.0), (2, 2.0), (3, 1.0)]).unwrap();
        let b = SparseVector::new(4, vec![(0, 2.0), (1, 1.0), (3, 4.0)]).unwrap();
        let ab = m.score(&a, &b).unwrap();
        assert_eq!(ab, m.score(&b, &a).unwrap());
        assert!(ab >= 0.0);
        assert!(m
            .encode(&a)
            .unwrap()
            .entries()
            .iter()
            .all(|&(_, v)| v >= 0.0));
    }

    #[test]
    fn mismatched_dims_rejected() {
        let m = LexModel::<f64>::uniform(4, 1.0);
        assert!(m
            .score(&SparseVector::empty(4), &SparseVector::empty(5))
            .is_err());
    }
}
