//! Bias-corrected Adam.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::Scalar;

pub const DEFAULT_BETA1: f64 = 0.9;
pub const DEFAULT_BETA2: f64 = 0.999;
pub const DEFAULT_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T = f32> {
    pub step: u64,
    /// First moments, one buffer per parameter tensor.
    pub m: Vec<Vec<T>>,
    /// Second moments.
    pub v: Vec<Vec<T>>,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub learning_rate: f64,
}

impl<T: Scalar> AdamState<T> {
    /// Fresh state for parameter tensors of the given lengths.
    pub fn new(learning_rate: f64, lengths: impl IntoIterator<Item = usize>) -> Self {
        let lengths: Vec<usize> = lengths.into_iter().collect();
        Self {
            step: 0,
            m: lengths.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: lengths.iter().map(|&n| vec![T::zero(); n]).collect(),
            beta1: DEFAULT_BETA1,
            beta2: DEFAULT_BETA2,
            epsilon: DEFAULT_EPSILON,
            learning_rate,
        }
    }

    pub fn lengths(&self) -> impl Iterator<Item = usize> + '_ {
        self.m.iter().map(Vec::len)
    }

    /// Applies one update to every parameter tensor and increments `step`.
    pub fn step<P, G>(&mut self, params: &mut [P], grads: &[G]) -> Result<()>
    where
        P: AsMut<[T]>,
        G: AsRef<[T]>,
    {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Length {
                op: "adam_step",
                detail: format!(
                    "state tracks {} tensors, got {} parameters and {} gradients",
                    self.m.len(),
                    params.len(),
                    grads.len()
                ),
            });
        }
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (p, g) = (p.as_mut(), g.as_ref());
            if p.len() != self.m[i].len() || g.len() != self.m[i].len() {
                return Err(Error::Length {
                    op: "adam_step",
                    detail: format!(
                        "tensor {i}: state has {} entries, parameter {}, gradient {}",
                        self.m[i].len(),
                        p.len(),
                        g.len()
                    ),
                });
            }
        }

        self.step += 1;
        let t = self.step as i32;
        let correction1 = 1.0 - num_traits::Float::powi(self.beta1, t);
        let correction2 = 1.0 - num_traits::Float::powi(self.beta2, t);
        let (b1, b2) = (T::from_f64(self.beta1), T::from_f64(self.beta2));
        let (one_b1, one_b2) = (T::from_f64(1.0 - self.beta1), T::from_f64(1.0 - self.beta2));
        let (c1, c2) = (T::from_f64(correction1), T::from_f64(correction2));
        let lr = T::from_f64(self.learning_rate);
        let eps = T::from_f64(self.epsilon);

        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for (((p, &g), m), v) in p
                .as_mut()
                .iter_mut()
                .zip(g.as_ref())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *m = b1 * *m + one_b1 * g;
                *v = b2 * *v + one_b2 * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
