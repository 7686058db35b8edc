//! Per-channel batch normalization over `(n, h, w)`.

use alloc::vec;
use alloc::vec::Vec;

use super::reduce;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor4};

pub const DEFAULT_EPSILON: f64 = 1e-5;
pub const DEFAULT_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Batch statistics; running statistics are updated.
    Train,
    /// Running statistics only.
    Infer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormParams<T = f32> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub epsilon: f64,
    pub momentum: f64,
}

/// Values the backward pass needs from a train-mode forward.
#[derive(Debug, Clone)]
pub struct BatchNormCache<T = f32> {
    pub normalized: Tensor4<T>,
    pub inv_std: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormGrads<T = f32> {
    pub input: Tensor4<T>,
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
}

impl<T: Scalar> BatchNormParams<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: vec![T::one(); channels],
            beta: vec![T::zero(); channels],
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            epsilon: DEFAULT_EPSILON,
            momentum: DEFAULT_MOMENTUM,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    /// Only gamma and beta; running statistics are buffers.
    pub fn trainable_count(&self) -> usize {
        2 * self.channels()
    }

    fn check(&self, op: &'static str, input: &Tensor4<T>) -> Result<()> {
        let s = input.shape();
        if s.c != self.channels() {
            return Err(Error::shape(op, s.with_channels(self.channels()), s));
        }
        Ok(())
    }
}

/// Applies `y = gamma * x_hat + beta` per channel.
fn affine<T: Scalar>(normalized: &Tensor4<T>, params: &BatchNormParams<T>) -> Tensor4<T> {
    let s = normalized.shape();
    let plane = s.plane();
    let mut out = normalized.clone();
    for n in 0..s.n {
        for (c, row) in out.item_mut(n).chunks_exact_mut(plane).enumerate() {
            let (g, b) = (params.gamma[c], params.beta[c]);
            for v in row {
                *v = g * *v + b;
            }
        }
    }
    out
}

/// Inference-mode forward using running statistics.
pub fn batchnorm_infer<T: Scalar>(
    input: &Tensor4<T>,
    params: &BatchNormParams<T>,
) -> Result<Tensor4<T>> {
    params.check("batchnorm_forward", input)?;
    let s = input.shape();
    let plane = s.plane();
    let eps = T::from_f64(params.epsilon);
    let mut out = input.clone();
    for n in 0..s.n {
        for (c, row) in out.item_mut(n).chunks_exact_mut(plane).enumerate() {
            let inv = T::one() / (params.running_var[c] + eps).sqrt();
            let scale = params.gamma[c] * inv;
            let shift = params.beta[c] - params.running_mean[c] * scale;
            for v in row {
                *v = *v * scale + shift;
            }
        }
    }
    Ok(out)
}

/// Train-mode forward: normalizes with batch statistics and folds them into
/// the running estimates (unbiased variance, exponential moving average).
pub fn batchnorm_train<T: Scalar>(
    input: &Tensor4<T>,
    params: &mut BatchNormParams<T>,
) -> Result<(Tensor4<T>, BatchNormCache<T>)> {
    params.check("batchnorm_forward", input)?;
    let s = input.shape();
    let count = s.n * s.plane();
    if count < 2 {
        return Err(Error::DegenerateBatch {
            op: "batchnorm_forward",
            count,
        });
    }
    let plane = s.plane();
    let channels = s.c;
    let inv_count = T::one() / T::from_f64(count as f64);
    let eps = T::from_f64(params.epsilon);
    let momentum = T::from_f64(params.momentum);

    let mut mean = vec![T::zero(); channels];
    for n in 0..s.n {
        for (c, row) in input.item(n).chunks_exact(plane).enumerate() {
            mean[c] = mean[c] + reduce::sum(row);
        }
    }
    for m in &mut mean {
        *m = *m * inv_count;
    }
    let mut var = vec![T::zero(); channels];
    for n in 0..s.n {
        for (c, row) in input.item(n).chunks_exact(plane).enumerate() {
            var[c] = var[c] + reduce::squared_deviation(row, mean[c]);
        }
    }
    for v in &mut var {
        *v = *v * inv_count;
    }
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();

    let mut normalized = input.clone();
    for n in 0..s.n {
        for (c, row) in normalized.item_mut(n).chunks_exact_mut(plane).enumerate() {
            let (mu, is) = (mean[c], inv_std[c]);
            for v in row {
                *v = (*v - mu) * is;
            }
        }
    }

    let unbias = T::from_f64(count as f64 / (count - 1) as f64);
    for c in 0..channels {
        params.running_mean[c] =
            (T::one() - momentum) * params.running_mean[c] + momentum * mean[c];
        params.running_var[c] =
            (T::one() - momentum) * params.running_var[c] + momentum * var[c] * unbias;
    }

    let out = affine(&normalized, params);
    Ok((
        out,
        BatchNormCache {
            normalized,
            inv_std,
        },
    ))
}

pub fn batchnorm_forward<T: Scalar>(
    input: &Tensor4<T>,
    params: &mut BatchNormParams<T>,
    mode: Mode,
) -> Result<Tensor4<T>> {
    match mode {
        Mode::Train => batchnorm_train(input, params).map(|(y, _)| y),
        Mode::Infer => batchnorm_infer(input, params),
    }
}

/// Gradients of a train-mode forward.
///
/// `dx = inv_std / N * (N * dx_hat - sum(dx_hat) - x_hat * sum(dx_hat * x_hat))`
/// with `dx_hat = dy * gamma`.
pub fn batchnorm_backward<T: Scalar>(
    cache: &BatchNormCache<T>,
    params: &BatchNormParams<T>,
    grad_out: &Tensor4<T>,
) -> Result<BatchNormGrads<T>> {
    let s = cache.normalized.shape();
    grad_out.expect_shape("batchnorm_backward", s)?;
    let plane = s.plane();
    let channels = s.c;
    let mut grad_gamma = vec![T::zero(); channels];
    let mut grad_beta = vec![T::zero(); channels];
    for n in 0..s.n {
        let xh = cache.normalized.item(n).chunks_exact(plane);
        let gy = grad_out.item(n).chunks_exact(plane);
        for (c, (xr, gr)) in xh.zip(gy).enumerate() {
            grad_gamma[c] = grad_gamma[c] + reduce::dot(gr, xr);
            grad_beta[c] = grad_beta[c] + reduce::sum(gr);
        }
    }
    let count = T::from_f64((s.n * plane) as f64);
    let mut grad_input = Tensor4::zeros(s);
    for n in 0..s.n {
        let xh = cache.normalized.item(n);
        let gy = grad_out.item(n);
        let gi = grad_input.item_mut(n);
        for c in 0..channels {
            let r = c * plane..(c + 1) * plane;
            let gamma = params.gamma[c];
            let k = gamma * cache.inv_std[c] / count;
            // sum(dx_hat) = gamma * sum(dy); sum(dx_hat * x_hat) = gamma * sum(dy * x_hat)
            let sum_g = grad_beta[c];
            let sum_gx = grad_gamma[c];
            for ((d, &x), &g) in gi[r.clone()].iter_mut().zip(&xh[r.clone()]).zip(&gy[r]) {
                *d = k * (count * g - sum_g - x * sum_gx);
            }
        }
    }
    Ok(BatchNormGrads {
        input: grad_input,
        gamma: grad_gamma,
        beta: grad_beta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape4;

    fn standardized() -> Tensor4<f64> {
        // Two values per channel: -1 and 1 => mean 0, variance 1.
        Tensor4::from_fn(
            Shape4::new(2, 3, 1, 1),
            |n, _, _, _| if n == 0 { -1.0 } else { 1.0 },
        )
    }

    #[test]
    fn standardized_input_passes_through() {
        let x = standardized();
        let mut p = BatchNormParams::<f64>::new(3);
        let y = batchnorm_forward(&x, &mut p, Mode::Train).unwrap();
        for (a, b) in x.data().iter().zip(y.data()) {
            assert!((a - b).abs() < 1e-3);
        }
    }

    #[test]
    fn zero_gamma_gives_beta() {
        let x = Tensor4::<f64>::from_fn(Shape4::new(2, 2, 3, 3), |n, c, y, x| {
            (n * 7 + c * 3 + y * x) as f64
        });
        let mut p = BatchNormParams::<f64>::new(2);
        p.gamma = vec![0.0, 0.0];
        p.beta = vec![0.25, -4.0];
        let y = batchnorm_forward(&x, &mut p, Mode::Train).unwrap();
        for n in 0..2 {
            assert!(y.item(n)[..9].iter().all(|&v| v == 0.25));
            assert!(y.item(n)[9..].iter().all(|&v| v == -4.0));
        }
    }

    #[test]
    fn single_element_batch_is_rejected() {
        let x = Tensor4::<f32>::zeros(Shape4::new(1, 4, 1, 1));
        let mut p = BatchNormParams::<f32>::new(4);
        assert!(matches!(
            batchnorm_forward(&x, &mut p, Mode::Train),
            Err(Error::DegenerateBatch { count: 1, .. })
        ));
        // inference mode has no such restriction
        assert!(batchnorm_forward(&x, &mut p, Mode::Infer).is_ok());
    }

    #[test]
    fn running_stats_follow_momentum() {
        let x = standardized().map(|v| v * 2.0 + 3.0); // mean 3, biased var 4
        let mut p = BatchNormParams::<f64>::new(3);
        batchnorm_forward(&x, &mut p, Mode::Train).unwrap();
        for c in 0..3 {
            assert!((p.running_mean[c] - 0.3).abs() < 1e-12);
            // unbiased var = 8, 0.9 * 1 + 0.1 * 8
            assert!((p.running_var[c] - 1.7).abs() < 1e-12);
        }
    }

    #[test]
    fn infer_uses_running_stats() {
        let x = Tensor4::<f64>::full(Shape4::new(1, 1, 2, 2), 5.0);
        let mut p = BatchNormParams::<f64>::new(1);
        p.running_mean = vec![1.0];
        p.running_var = vec![4.0 - p.epsilon];
        let y = batchnorm_forward(&x, &mut p, Mode::Infer).unwrap();
        assert!(y.data().iter().all(|&v| (v - 2.0).abs() < 1e-12));
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let x = Tensor4::<f64>::from_fn(Shape4::new(2, 2, 2, 2), |n, c, y, x| {
            (n + 2 * c + y + 3 * x) as f64
        });
        let mut p = BatchNormParams::<f64>::new(2);
        let (_, cache) = batchnorm_train(&x, &mut p).unwrap();
        let g = batchnorm_backward(&cache, &p, &Tensor4::zeros(x.shape())).unwrap();
        assert!(g.input.data().iter().all(|&v| v == 0.0));
        assert!(g.gamma.iter().chain(&g.beta).all(|&v| v == 0.0));
    }

    #[test]
    fn gamma_gradient_is_sum_of_upstream_times_normalized() {
        let x = Tensor4::<f64>::from_fn(Shape4::new(3, 2, 2, 2), |n, c, y, x| {
            ((n * 5 + c * 11 + y * 3 + x) % 7) as f64
        });
        let g = Tensor4::<f64>::from_fn(x.shape(), |n, c, y, x| {
            (n as f64 - c as f64) * 0.5 + (y * x) as f64
        });
        let mut p = BatchNormParams::<f64>::new(2);
        let (_, cache) = batchnorm_train(&x, &mut p).unwrap();
        let grads = batchnorm_backward(&cache, &p, &g).unwrap();
        for c in 0..2 {
            let mut expect = 0.0;
            for n in 0..3 {
                for y in 0..2 {
                    for xx in 0..2 {
                        expect += g.get(n, c, y, xx) * cache.normalized.get(n, c, y, xx);
                    }
                }
            }
            assert!((grads.gamma[c] - expect).abs() < 1e-12);
        }
    }
}
