//! Training objectives.
//!
//! Both losses average over the batch axis, so duplicating every patch
//! leaves the value unchanged.

use num_traits::Float;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor4};

pub const BCE_CLAMP: f64 = 1e-7;

/// Background regression loss `1/(2m) * sum_i ||target_i - pred_i||_F^2`
/// over the `m` batch items, with its gradient `(pred - target) / m`.
pub fn frobenius_loss<T: Scalar>(
    target: &Tensor4<T>,
    pred: &Tensor4<T>,
) -> Result<(f64, Tensor4<T>)> {
    pred.expect_shape("frobenius_loss", target.shape())?;
    let m = target.shape().n as f64;
    let sum = target
        .data()
        .iter()
        .zip(pred.data())
        .fold(0.0f64, |acc, (&b, &a)| {
            let d = (b - a).as_f64();
            acc + d * d
        });
    let inv_m = T::from_f64(1.0 / m);
    let grad = pred.zip_map(target, "frobenius_loss", |a, b| (a - b) * inv_m)?;
    Ok((sum / (2.0 * m), grad))
}

/// Mean binary cross-entropy over every pixel of every patch.
///
/// Predictions are clamped to `[1e-7, 1 - 1e-7]` before the logarithms; the
/// gradient `(p - g) / (p (1 - p)) / N` is taken at the clamped value.
pub fn bce_loss<T: Scalar>(target: &Tensor4<T>, pred: &Tensor4<T>) -> Result<(f64, Tensor4<T>)> {
    pred.expect_shape("bce_loss", target.shape())?;
    if let Some((index, &value)) = target
        .data()
        .iter()
        .enumerate()
        .find(|(_, &g)| g != T::zero() && g != T::one())
    {
        return Err(Error::InvalidMask {
            value: value.as_f64(),
            index,
        });
    }
    let total = target.data().len() as f64;
    let lo = T::from_f64(BCE_CLAMP);
    let hi = T::one() - lo;
    let clamp = |p: T| {
        if p < lo {
            lo
        } else if p > hi {
            hi
        } else {
            p
        }
    };
    let sum = target
        .data()
        .iter()
        .zip(pred.data())
        .fold(0.0f64, |acc, (&g, &p)| {
            let p = clamp(p).as_f64();
            let g = g.as_f64();
            acc - (g * Float::ln(p) + (1.0 - g) * Float::ln(1.0 - p))
        });
    let inv_total = T::from_f64(1.0 / total);
    let grad = pred.zip_map(target, "bce_loss", |p, g| {
        let p = clamp(p);
        (p - g) / (p * (T::one() - p)) * inv_total
    })?;
    Ok((sum / total, grad))
}

/// [`bce_loss`] of `sigmoid(z)` with the gradient taken with respect to the
/// logits `z`, given the sigmoid output `pred`: `(p - g) / N`. The loss value
/// is clamped exactly as in `bce_loss`; the gradient is not, so saturated
/// wrong predictions still pull back.
pub fn bce_logit_loss<T: Scalar>(
    target: &Tensor4<T>,
    pred: &Tensor4<T>,
) -> Result<(f64, Tensor4<T>)> {
    let (l, _) = bce_loss(target, pred)?;
    let inv_total = T::from_f64(1.0 / target.data().len() as f64);
    let grad = pred.zip_map(target, "bce_logit_loss", |p, g| (p - g) * inv_total)?;
    Ok((l, grad))
}
