//! Reductions split over independent accumulators so they vectorize.

use crate::tensor::Scalar;

const LANES: usize = 8;

fn lanes<T: Scalar>(xs: &[T], f: impl Fn(T) -> T) -> T {
    let mut acc = [T::zero(); LANES];
    let mut chunks = xs.chunks_exact(LANES);
    for c in &mut chunks {
        for (a, &v) in acc.iter_mut().zip(c) {
            *a = *a + f(v);
        }
    }
    let tail = chunks.remainder().iter().fold(T::zero(), |a, &v| a + f(v));
    acc.iter().fold(T::zero(), |a, &v| a + v) + tail
}

pub(crate) fn sum<T: Scalar>(xs: &[T]) -> T {
    lanes(xs, |v| v)
}

pub(crate) fn squared_deviation<T: Scalar>(xs: &[T], mean: T) -> T {
    lanes(xs, |v| (v - mean) * (v - mean))
}

pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); LANES];
    let mut ca = a.chunks_exact(LANES);
    let mut cb = b.chunks_exact(LANES);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for i in 0..LANES {
            acc[i] = acc[i] + x[i] * y[i];
        }
    }
    let tail = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .fold(T::zero(), |s, (&x, &y)| s + x * y);
    acc.iter().fold(T::zero(), |s, &v| s + v) + tail
}
