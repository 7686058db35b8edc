//! 3x3 convolution, stride 1, zero padding 1.
//!
//! Each batch item is lowered to a `(in_ch * 9, h * w)` column matrix and
//! multiplied by the `(out_ch, in_ch * 9)` kernel matrix. Wide layers run
//! through Winograd tiles instead, in both directions.

use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::winograd::{self, Filter};
use super::{parallel, reduce};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape4, Tensor4};

pub const KERNEL: usize = 3;
const TAPS: usize = KERNEL * KERNEL;

#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams<T = f32> {
    /// `(out_ch, in_ch, 3, 3)`.
    pub kernel: Tensor4<T>,
    pub bias: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads<T = f32> {
    pub input: Option<Tensor4<T>>,
    pub kernel: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> ConvParams<T> {
    pub fn zeros(in_ch: usize, out_ch: usize) -> Self {
        Self {
            kernel: Tensor4::zeros(Shape4::new(out_ch, in_ch, KERNEL, KERNEL)),
            bias: vec![T::zero(); out_ch],
        }
    }

    /// He fan-in normal kernel, zero bias.
    pub fn he_normal<R: Rng + ?Sized>(in_ch: usize, out_ch: usize, rng: &mut R) -> Self {
        let std = Float::sqrt(2.0 / (in_ch * TAPS) as f64);
        let shape = Shape4::new(out_ch, in_ch, KERNEL, KERNEL);
        let data = (0..shape.len())
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                T::from_f64(z * std)
            })
            .collect();
        Self {
            kernel: Tensor4::from_vec(shape, data).expect("shape is non-empty"),
            bias: vec![T::zero(); out_ch],
        }
    }

    pub fn in_channels(&self) -> usize {
        self.kernel.shape().c
    }

    pub fn out_channels(&self) -> usize {
        self.kernel.shape().n
    }

    pub fn trainable_count(&self) -> usize {
        self.kernel.shape().len() + self.bias.len()
    }

    pub fn output_shape(&self, input: Shape4) -> Shape4 {
        input.with_channels(self.out_channels())
    }

    fn check_input(&self, op: &'static str, input: Shape4) -> Result<()> {
        if input.c != self.in_channels() {
            return Err(Error::shape(
                op,
                input.with_channels(self.in_channels()),
                input,
            ));
        }
        Ok(())
    }
}

/// Writes the column matrix of one batch item: row `i * 9 + dy * 3 + dx`,
/// column `y * w + x` holds `input[i, y + dy - 1, x + dx - 1]` or zero.
fn im2col<T: Scalar>(item: &[T], channels: usize, h: usize, w: usize, cols: &mut [T]) {
    let plane = h * w;
    for i in 0..channels {
        let src = &item[i * plane..(i + 1) * plane];
        for dy in 0..KERNEL {
            for dx in 0..KERNEL {
                let row = (i * TAPS + dy * KERNEL + dx) * plane;
                let dst = &mut cols[row..row + plane];
                for y in 0..h {
                    let sy = y as isize + dy as isize - 1;
                    let out = &mut dst[y * w..(y + 1) * w];
                    if sy < 0 || sy >= h as isize {
                        out.fill(T::zero());
                        continue;
                    }
                    let line = &src[sy as usize * w..(sy as usize + 1) * w];
                    match dx {
                        0 => {
                            out[0] = T::zero();
                            out[1..].copy_from_slice(&line[..w - 1]);
                        }
                        1 => out.copy_from_slice(line),
                        _ => {
                            out[..w - 1].copy_from_slice(&line[1..]);
                            out[w - 1] = T::zero();
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates column gradients back onto the image.
fn col2im<T: Scalar>(cols: &[T], channels: usize, h: usize, w: usize, item: &mut [T]) {
    let plane = h * w;
    item.fill(T::zero());
    for i in 0..channels {
        let dst = &mut item[i * plane..(i + 1) * plane];
        for dy in 0..KERNEL {
            for dx in 0..KERNEL {
                let row = (i * TAPS + dy * KERNEL + dx) * plane;
                let src = &cols[row..row + plane];
                for y in 0..h {
                    let sy = y as isize + dy as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let line = &mut dst[sy as usize * w..(sy as usize + 1) * w];
                    let g = &src[y * w..(y + 1) * w];
                    match dx {
                        0 => {
                            for (d, &s) in line[..w - 1].iter_mut().zip(&g[1..]) {
                                *d = *d + s;
                            }
                        }
                        1 => {
                            for (d, &s) in line.iter_mut().zip(g) {
                                *d = *d + s;
                            }
                        }
                        _ => {
                            for (d, &s) in line[1..].iter_mut().zip(&g[..w - 1]) {
                                *d = *d + s;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Layers narrower than this on either side stay on the column path, where
/// Winograd's transforms would outweigh the saved multiplies.
fn use_winograd(in_ch: usize, out_ch: usize) -> bool {
    in_ch >= 8 && out_ch >= 8
}

pub fn conv2d_forward<T: Scalar>(input: &Tensor4<T>, params: &ConvParams<T>) -> Result<Tensor4<T>> {
    let s = input.shape();
    params.check_input("conv2d_forward", s)?;
    let (in_ch, out_ch, plane) = (s.c, params.out_channels(), s.plane());
    let mut out = Tensor4::zeros(params.output_shape(s));
    let k = in_ch * TAPS;
    let out_item = out_ch * plane;
    let mut tasks: Vec<_> = parallel::blocks(s.n)
        .zip(out.data_mut().chunks_mut(parallel::BLOCK * out_item))
        .collect();
    if use_winograd(in_ch, out_ch) {
        let filter = Filter::new(params.kernel.data(), out_ch, in_ch, false);
        let in_item = in_ch * plane;
        parallel::run(&mut tasks, |(items, dst)| {
            for (o, row) in dst.chunks_exact_mut(plane).enumerate() {
                row.fill(params.bias[o % out_ch]);
            }
            let src = &input.data()[items.start * in_item..items.end * in_item];
            winograd::convolve_add(&filter, src, items.len(), s.h, s.w, dst);
        });
        return Ok(out);
    }
    parallel::run(&mut tasks, |(items, dst)| {
        let mut cols = vec![T::zero(); k * plane];
        for (n, dst) in items.clone().zip(dst.chunks_exact_mut(out_item)) {
            im2col(input.item(n), in_ch, s.h, s.w, &mut cols);
            for (o, row) in dst.chunks_exact_mut(plane).enumerate() {
                row.fill(params.bias[o]);
            }
            T::gemm(
                out_ch,
                k,
                plane,
                T::one(),
                params.kernel.data(),
                k as isize,
                1,
                &cols,
                plane as isize,
                1,
                T::one(),
                dst,
                plane as isize,
                1,
            );
        }
    });
    Ok(out)
}

struct BackwardBlock<'a, T> {
    items: core::ops::Range<usize>,
    grad_input: Option<&'a mut [T]>,
    kernel: Vec<T>,
    bias: Vec<T>,
}

/// Reverse-mode rule for [`conv2d_forward`]. The input gradient is skipped
/// when `need_input` is false (first layer of a network).
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor4<T>,
    params: &ConvParams<T>,
    grad_out: &Tensor4<T>,
    need_input: bool,
) -> Result<ConvGrads<T>> {
    let s = input.shape();
    params.check_input("conv2d_backward", s)?;
    grad_out.expect_shape("conv2d_backward", params.output_shape(s))?;
    let (in_ch, out_ch, plane) = (s.c, params.out_channels(), s.plane());
    let k = in_ch * TAPS;
    let mut grad_input = need_input.then(|| Tensor4::zeros(s));
    let mut input_chunks = grad_input
        .as_mut()
        .map(|g| g.data_mut().chunks_mut(parallel::BLOCK * in_ch * plane));
    let mut tasks: Vec<BackwardBlock<'_, T>> = parallel::blocks(s.n)
        .map(|items| BackwardBlock {
            items,
            grad_input: input_chunks.as_mut().and_then(Iterator::next),
            kernel: Vec::new(),
            bias: Vec::new(),
        })
        .collect();
    let winograd = use_winograd(in_ch, out_ch);
    let adjoint =
        (need_input && winograd).then(|| Filter::new(params.kernel.data(), out_ch, in_ch, true));
    parallel::run(&mut tasks, |task| {
        let mut grad_kernel = vec![T::zero(); out_ch * k];
        let mut grad_bias = vec![T::zero(); out_ch];
        for n in task.items.clone() {
            for (o, row) in grad_out.item(n).chunks_exact(plane).enumerate() {
                grad_bias[o] = grad_bias[o] + reduce::sum(row);
            }
        }
        if winograd {
            let (in_item, out_item) = (in_ch * plane, out_ch * plane);
            let (a, b) = (task.items.start, task.items.end);
            let src = &grad_out.data()[a * out_item..b * out_item];
            winograd::kernel_grad_add(
                &input.data()[a * in_item..b * in_item],
                src,
                b - a,
                in_ch,
                out_ch,
                s.h,
                s.w,
                &mut grad_kernel,
            );
            if let (Some(filter), Some(gi)) = (adjoint.as_ref(), task.grad_input.as_mut()) {
                winograd::convolve_add(filter, src, b - a, s.h, s.w, gi);
            }
            task.kernel = grad_kernel;
            task.bias = grad_bias;
            return;
        }
        let mut cols = vec![T::zero(); k * plane];
        for (j, n) in task.items.clone().enumerate() {
            let g = grad_out.item(n);
            im2col(input.item(n), in_ch, s.h, s.w, &mut cols);
            // dK += dY · colsᵀ
            T::gemm(
                out_ch,
                plane,
                k,
                T::one(),
                g,
                plane as isize,
                1,
                &cols,
                1,
                plane as isize,
                T::one(),
                &mut grad_kernel,
                k as isize,
                1,
            );
            if let Some(gi) = task.grad_input.as_mut() {
                // dcols = Kᵀ · dY
                T::gemm(
                    k,
                    out_ch,
                    plane,
                    T::one(),
                    params.kernel.data(),
                    1,
                    k as isize,
                    g,
                    plane as isize,
                    1,
                    T::zero(),
                    &mut cols,
                    plane as isize,
                    1,
                );
                let item = in_ch * plane;
                col2im(&cols, in_ch, s.h, s.w, &mut gi[j * item..(j + 1) * item]);
            }
        }
        task.kernel = grad_kernel;
        task.bias = grad_bias;
    });
    let mut grad_kernel = vec![T::zero(); out_ch * k];
    let mut grad_bias = vec![T::zero(); out_ch];
    for task in &tasks {
        for (a, &b) in grad_kernel.iter_mut().zip(&task.kernel) {
            *a = *a + b;
        }
        for (a, &b) in grad_bias.iter_mut().zip(&task.bias) {
            *a = *a + b;
        }
    }
    drop(tasks);
    Ok(ConvGrads {
        input: grad_input,
        kernel: grad_kernel,
        bias: grad_bias,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_ones_counts_neighbours() {
        let x = Tensor4::<f32>::full(Shape4::new(1, 1, 3, 3), 1.0);
        let mut p = ConvParams::<f32>::zeros(1, 1);
        p.kernel.data_mut().fill(1.0);
        let y = conv2d_forward(&x, &p).unwrap();
        assert_eq!(y.get(0, 0, 1, 1), 9.0);
        assert_eq!(y.get(0, 0, 0, 0), 4.0);
        assert_eq!(y.get(0, 0, 0, 1), 6.0);
    }

    #[test]
    fn zero_kernel_gives_bias() {
        let x = Tensor4::<f32>::from_fn(Shape4::new(2, 3, 4, 5), |n, c, y, x| {
            (n + c * y) as f32 - x as f32
        });
        let mut p = ConvParams::<f32>::zeros(3, 2);
        p.bias.fill(7.0);
        let y = conv2d_forward(&x, &p).unwrap();
        assert!(y.data().iter().all(|&v| v == 7.0));
    }

    #[test]
    fn channel_mismatch_names_shapes() {
        let x = Tensor4::<f32>::zeros(Shape4::new(1, 2, 3, 3));
        let p = ConvParams::<f32>::zeros(1, 4);
        let err = conv2d_forward(&x, &p).unwrap_err();
        let msg = alloc::format!("{err}");
        assert!(
            msg.contains("(1, 1, 3, 3)") && msg.contains("(1, 2, 3, 3)"),
            "{msg}"
        );
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let x = Tensor4::<f64>::full(Shape4::new(1, 2, 4, 4), 0.3);
        let mut p = ConvParams::<f64>::zeros(2, 3);
        p.kernel.data_mut().fill(0.5);
        let g = Tensor4::zeros(Shape4::new(1, 3, 4, 4));
        let grads = conv2d_backward(&x, &p, &g, true).unwrap();
        assert!(grads.kernel.iter().all(|&v| v == 0.0));
        assert!(grads.bias.iter().all(|&v| v == 0.0));
        assert!(grads.input.unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_pixel_backward() {
        let x = Tensor4::<f64>::full(Shape4::new(1, 1, 1, 1), 2.5);
        let mut p = ConvParams::<f64>::zeros(1, 1);
        p.kernel.data_mut().fill(0.7);
        let g = Tensor4::full(Shape4::new(1, 1, 1, 1), -1.5);
        let grads = conv2d_backward(&x, &p, &g, true).unwrap();
        assert_eq!(grads.bias, vec![-1.5]);
        assert_eq!(grads.kernel[4], 2.5 * -1.5);
        for (i, &v) in grads.kernel.iter().enumerate() {
            if i != 4 {
                assert_eq!(v, 0.0);
            }
        }
        assert_eq!(grads.input.unwrap().data(), &[0.7 * -1.5]);
    }

    #[test]
    fn backward_rejects_wrong_grad_shape() {
        let x = Tensor4::<f32>::zeros(Shape4::new(1, 1, 3, 3));
        let p = ConvParams::<f32>::zeros(1, 2);
        let g = Tensor4::zeros(Shape4::new(1, 1, 3, 3));
        assert!(matches!(
            conv2d_backward(&x, &p, &g, true),
            Err(Error::Shape { .. })
        ));
    }
}
