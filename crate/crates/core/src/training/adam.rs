use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::TrainConfig;

/// First and second moments for a list of parameter groups.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    step: usize,
    total_steps: usize,
}

impl<T: Scalar> AdamState<T> {
    /// `total_steps` drives the warmup/decay schedule; `0` disables it.
    pub fn new(shapes: &[usize], total_steps: usize) -> Self {
        Self {
            m: shapes.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: shapes.iter().map(|&n| vec![T::zero(); n]).collect(),
            step: 0,
            total_steps,
        }
    }

    pub fn step(&self) -> usize {
        self.step
    }
}

/// Learning-rate multiplier for 1-based step `t`: linear warmup over the first
/// `ceil(warmup_fraction * total)` steps, then linear decay that reaches
/// `1 / (total - warmup)` on the final step.
pub fn schedule_factor(t: usize, total: usize, warmup_fraction: f64) -> f64 {
    if total == 0 {
        return 1.0;
    }
    let warmup = (warmup_fraction * total as f64).ceil() as usize;
    if t <= warmup {
        t as f64 / warmup as f64
    } else if total > warmup {
        ((total + 1).saturating_sub(t)) as f64 / (total - warmup) as f64
    } else {
        1.0
    }
}

/// One Adam update with bias correction and decoupled weight decay.
pub fn adam_step<T: Scalar>(
    params: &mut [&mut [T]],
    grads: &[&[T]],
    state: &mut AdamState<T>,
    config: &TrainConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::DimensionMismatch {
            expected: state.m.len(),
            got: params.len().max(grads.len()),
        });
    }
    for ((p, g), m) in params.iter().zip(grads).zip(&state.m) {
        if p.len() != g.len() || p.len() != m.len() {
            return Err(Error::DimensionMismatch {
                expected: m.len(),
                got: p.len().max(g.len()),
            });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let b1 = T::of(config.adam_beta1);
    let b2 = T::of(config.adam_beta2);
    let eps = T::of(config.adam_eps);
    let lr = T::of(
        config.learning_rate
            * schedule_factor(state.step, state.total_steps, config.warmup_fraction),
    );
    let decay = T::one() - lr * T::of(config.weight_decay);
    let c1 = T::one() - b1.powi(t);
    let c2 = T::one() - b2.powi(t);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        for i in 0..p.len() {
            let gi = g[i];
            m[i] = b1 * m[i] + (T::one() - b1) * gi;
            v[i] = b2 * v[i] + (T::one() - b2) * gi * gi;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] = p[i] * decay - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
