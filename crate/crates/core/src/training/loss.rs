use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Max-shifted softmax.
pub fn softmax<T: Scalar>(scores: &[T]) -> Vec<T> {
    let max = scores.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = scores.iter().map(|&s| (s - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Max-shifted log-softmax.
pub fn log_softmax<T: Scalar>(scores: &[T]) -> Vec<T> {
    let max = scores.iter().copied().fold(T::neg_infinity(), T::max);
    let log_z = scores.iter().map(|&s| (s - max).exp()).sum::<T>().ln() + max;
    scores.iter().map(|&s| s - log_z).collect()
}

/// Negative log-likelihood of the positive among `[positive, negatives..]`.
///
/// Returns the loss and its gradient with respect to every score, in the same
/// order (positive first): `softmax(scores) - onehot(0)`.
pub fn contrastive_loss<T: Scalar>(positive: T, negatives: &[T]) -> Result<(T, Vec<T>)> {
    if negatives.is_empty() {
        return Err(Error::InvalidArgument(
            "contrastive loss needs at least one negative".into(),
        ));
    }
    let mut scores = Vec::with_capacity(negatives.len() + 1);
    scores.push(positive);
    scores.extend_from_slice(negatives);
    let loss = -log_softmax(&scores)[0];
    let mut grad = softmax(&scores);
    grad[0] = grad[0] - T::one();
    Ok((loss.max(T::zero()), grad))
}

/// Which way the distillation divergence points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KlDirection {
    /// `KL(teacher || student)`, the usual distillation target.
    #[default]
    Forward,
    /// `KL(student || teacher)`.
    Reverse,
}

impl std::fmt::Display for KlDirection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            KlDirection::Forward => "forward",
            KlDirection::Reverse => "reverse",
        })
    }
}

impl std::str::FromStr for KlDirection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "forward" => Ok(KlDirection::Forward),
            "reverse" => Ok(KlDirection::Reverse),
            other => Err(Error::InvalidArgument(format!(
                "unknown KL direction `{other}`"
            ))),
        }
    }
}

/// KL divergence between softmax distributions over one candidate list and
/// its gradient with respect to the student scores.
pub fn distillation_loss<T: Scalar>(
    teacher: &[T],
    student: &[T],
    direction: KlDirection,
) -> Result<(T, Vec<T>)> {
    if teacher.len() != student.len() {
        return Err(Error::DimensionMismatch {
            expected: teacher.len(),
            got: student.len(),
        });
    }
    if teacher.is_empty() {
        return Err(Error::InvalidArgument(
            "distillation needs at least one candidate".into(),
        ));
    }
    let lt = log_softmax(teacher);
    let ls = log_softmax(student);
    let ps: Vec<T> = ls.iter().map(|x| x.exp()).collect();
    let pt: Vec<T> = lt.iter().map(|x| x.exp()).collect();
    match direction {
        KlDirection::Forward => {
            let kl = pt
                .iter()
                .zip(lt.iter().zip(&ls))
                .fold(T::zero(), |acc, (&p, (&a, &b))| acc + p * (a - b));
            let grad = ps.iter().zip(&pt).map(|(&s, &t)| s - t).collect();
            Ok((kl.max(T::zero()), grad))
        }
        KlDirection::Reverse => {
            let kl = ps
                .iter()
                .zip(ls.iter().zip(&lt))
                .fold(T::zero(), |acc, (&p, (&a, &b))| acc + p * (a - b));
            let grad = ps
                .iter()
                .zip(ls.iter().zip(&lt))
                .map(|(&p, (&a, &b))| p * (a - b - kl))
                .collect();
            Ok((kl.max(T::zero()), grad))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_examples() {
        let p = softmax(&[1.5f64; 5]);
        assert!(p.iter().all(|&x| (x - 0.2).abs() < 1e-15));
        let p = softmax(&[2f64.ln(), 0.0]);
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-15 && (p[1] - 1.0 / 3.0).abs() < 1e-15);
        let s = [0.3f64, -1.2, 4.0, 2.2];
        let shifted: Vec<f64> = s.iter().map(|x| x + 17.5).collect();
        for (a, b) in softmax(&s).iter().zip(softmax(&shifted)) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((softmax(&s).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let f32s = softmax(&[0.0f32, 0.0]);
        assert_eq!(f32s, vec![0.5f32, 0.5]);
    }

    #[test]
    fn contrastive_examples() {
        let (loss, _) = contrastive_loss(0.7f64, &[0.7; 6]).unwrap();
        assert!((loss - 7f64.ln()).abs() < 1e-12);
        let (loss, grad) = contrastive_loss(3f64.ln(), &[0.0]).unwrap();
        assert!((loss - (4.0f64 / 3.0).ln()).abs() < 1e-12);
        assert!((grad[0] + 0.25).abs() < 1e-12 && (grad[1] - 0.25).abs() < 1e-12);
        assert!(contrastive_loss(0.0f64, &[]).is_err());
    }

    #[test]
    fn distillation_minimum_has_zero_gradient() {
        let t = [1.0f64, -0.5, 2.0];
        let s = [3.0f64, 1.5, 4.0]; // same distribution, shifted
        for dir in [KlDirection::Forward, KlDirection::Reverse] {
            let (kl, g) = distillation_loss(&t, &s, dir).unwrap();
            assert!(kl.abs() < 1e-12);
            assert!(g.iter().all(|x| x.abs() < 1e-12));
        }
        assert!(distillation_loss(&t, &s[..2], KlDirection::Forward).is_err());
    }
}
