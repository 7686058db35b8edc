use crate::error::Result;
use crate::tensor::{Scalar, Tensor4};

#[inline]
pub fn sigmoid_scalar<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

pub fn relu<T: Scalar>(input: &Tensor4<T>) -> Tensor4<T> {
    input.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Uses the forward output: the gradient passes where the output is positive.
pub fn relu_backward<T: Scalar>(output: &Tensor4<T>, grad_out: &Tensor4<T>) -> Result<Tensor4<T>> {
    output.zip_map(grad_out, "relu_backward", |y, g| {
        if y > T::zero() {
            g
        } else {
            T::zero()
        }
    })
}

pub fn sigmoid<T: Scalar>(input: &Tensor4<T>) -> Tensor4<T> {
    input.map(sigmoid_scalar)
}

/// `dx = dy * y * (1 - y)` from the forward output `y`.
pub fn sigmoid_backward<T: Scalar>(
    output: &Tensor4<T>,
    grad_out: &Tensor4<T>,
) -> Result<Tensor4<T>> {
    output.zip_map(grad_out, "sigmoid_backward", |y, g| g * y * (T::one() - y))
}

pub fn identity<T: Scalar>(input: &Tensor4<T>) -> Tensor4<T> {
    input.clone()
}

pub fn identity_backward<T: Scalar>(grad_out: &Tensor4<T>) -> Tensor4<T> {
    grad_out.clone()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape4;

    fn scalar(v: f64) -> Tensor4<f64> {
        Tensor4::full(Shape4::new(1, 1, 1, 1), v)
    }

    #[test]
    fn pointwise_values() {
        assert_eq!(sigmoid(&scalar(0.0)).data()[0], 0.5);
        assert_eq!(relu(&scalar(-3.0)).data()[0], 0.0);
        assert_eq!(relu(&scalar(3.0)).data()[0], 3.0);
        assert_eq!(identity(&scalar(-2.5)).data()[0], -2.5);
    }

    #[test]
    fn relu_blocks_gradient_where_inactive() {
        let x = Tensor4::from_vec(Shape4::new(1, 1, 1, 3), alloc::vec![-1.0, 0.0, 2.0]).unwrap();
        let y = relu(&x);
        let g = relu_backward(&y, &Tensor4::full(x.shape(), 5.0)).unwrap();
        assert_eq!(g.data(), &[0.0, 0.0, 5.0]);
    }

    #[test]
    fn sigmoid_is_finite_at_extremes() {
        let x =
            Tensor4::from_vec(Shape4::new(1, 1, 1, 2), alloc::vec![-1000.0f32, 1000.0]).unwrap();
        let y = sigmoid(&x);
        assert!(y.all_finite());
        assert_eq!(y.data(), &[0.0, 1.0]);
    }
}
