use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub fn relu<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Passes `grad_out` where the forward input was strictly positive (subgradient 0 at 0).
pub fn relu_backward<T: Scalar>(input: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    if input.shape() != grad_out.shape() {
        return Err(Error::Shape {
            op: "relu_backward",
            expected: input.shape(),
            actual: grad_out.shape(),
        });
    }
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::from_vec(input.shape(), data)
}

pub fn add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.shape() != b.shape() {
        return Err(Error::Shape {
            op: "add",
            expected: a.shape(),
            actual: b.shape(),
        });
    }
    let mut out = a.clone();
    out.add_assign(b);
    Ok(out)
}

/// Softmax over the channel axis at every pixel, stabilized by subtracting the pixel maximum.
pub fn softmax_channels<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    let s = input.shape();
    let plane = s.plane();
    let mut out = Tensor::zeros(s);
    let mut buf = Vec::with_capacity(s.c);
    for n in 0..s.n {
        let src = input.item(n);
        let base = n * s.c * plane;
        for p in 0..plane {
            let max = (0..s.c)
                .map(|c| src[c * plane + p].as_f64())
                .fold(f64::NEG_INFINITY, f64::max);
            buf.clear();
            buf.extend((0..s.c).map(|c| (src[c * plane + p].as_f64() - max).exp()));
            let sum: f64 = buf.iter().sum();
            for (c, e) in buf.iter().enumerate() {
                out.data_mut()[base + c * plane + p] = T::from_f64(e / sum);
            }
        }
    }
    out
}

/// Vector-Jacobian product of [`softmax_channels`] given its output `probs`.
pub fn softmax_backward<T: Scalar>(probs: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    let s = probs.shape();
    if grad_out.shape() != s {
        return Err(Error::Shape {
            op: "softmax_backward",
            expected: s,
            actual: grad_out.shape(),
        });
    }
    let plane = s.plane();
    let mut out = Tensor::zeros(s);
    for n in 0..s.n {
        let base = n * s.c * plane;
        for p in 0..plane {
            let dot: f64 = (0..s.c)
                .map(|c| {
                    probs.data()[base + c * plane + p].as_f64()
                        * grad_out.data()[base + c * plane + p].as_f64()
                })
                .sum();
            for c in 0..s.c {
                let i = base + c * plane + p;
                let pv = probs.data()[i].as_f64();
                out.data_mut()[i] = T::from_f64(pv * (grad_out.data()[i].as_f64() - dot));
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;
    use alloc::vec;

    #[test]
    fn relu_definition() {
        let x = Tensor::<f64>::from_vec(Shape::new(1, 1, 1, 3), vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
        let g = relu_backward(&x, &Tensor::full(x.shape(), 1.0)).unwrap();
        assert_eq!(g.data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn relu_all_negative() {
        let x = Tensor::<f32>::full(Shape::new(1, 2, 2, 2), -0.5);
        assert!(relu(&x).data().iter().all(|&v| v == 0.0));
        let g = relu_backward(&x, &Tensor::full(x.shape(), 3.0)).unwrap();
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn add_zero_and_mismatch() {
        let a = Tensor::<f64>::from_fn(Shape::new(1, 2, 2, 2), |_, c, h, w| {
            (c * 4 + h * 2 + w) as f64
        });
        assert_eq!(add(&a, &Tensor::zeros(a.shape())).unwrap(), a);
        assert!(add(&a, &Tensor::zeros(Shape::new(1, 1, 2, 2))).is_err());
    }

    #[test]
    fn softmax_uniform_and_stable() {
        let z = Tensor::<f64>::zeros(Shape::new(1, 3, 1, 1));
        for &p in softmax_channels(&z).data() {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
        let big = Tensor::<f32>::from_vec(Shape::new(1, 3, 1, 1), vec![1000.0, 0.0, 0.0]).unwrap();
        let p = softmax_channels(&big);
        assert!(p.all_finite());
        assert!((p.data()[0] - 1.0).abs() < 1e-6 && p.data()[1] < 1e-6 && p.data()[2] < 1e-6);
    }
}
