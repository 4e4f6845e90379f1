//! Corner-aligned bilinear resampling.

use alloc::vec::Vec;
#[cfg(not(feature = "std"))]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Copy, Debug)]
struct Tap {
    lo: usize,
    hi: usize,
    frac: f64,
}

fn taps(input: usize, output: usize) -> Vec<Tap> {
    (0..output)
        .map(|o| {
            let src = if output == 1 || input == 1 {
                0.0
            } else {
                o as f64 * (input - 1) as f64 / (output - 1) as f64
            };
            let lo = (src.floor() as usize).min(input - 1);
            let hi = (lo + 1).min(input - 1);
            Tap {
                lo,
                hi,
                frac: src - lo as f64,
            }
        })
        .collect()
}

fn check(input: Shape, out_h: usize, out_w: usize) -> Result<()> {
    if out_h == 0 || out_w == 0 || input.h == 0 || input.w == 0 {
        return Err(Error::Other(alloc::format!(
            "bilinear_resize: cannot resize {input} to {out_h}x{out_w}"
        )));
    }
    Ok(())
}

/// Source coordinate of output index `i` is `i * (in - 1) / (out - 1)`; `out == 1` samples index 0.
pub fn bilinear_resize<T: Scalar>(
    input: &Tensor<T>,
    out_h: usize,
    out_w: usize,
) -> Result<Tensor<T>> {
    let s = input.shape();
    check(s, out_h, out_w)?;
    if (out_h, out_w) == (s.h, s.w) {
        return Ok(input.clone());
    }
    let (ty, tx) = (taps(s.h, out_h), taps(s.w, out_w));
    let mut out = Tensor::zeros(Shape::new(s.n, s.c, out_h, out_w));
    for n in 0..s.n {
        for c in 0..s.c {
            let src = input.plane(n, c);
            let dst = out.plane_mut(n, c);
            for (oy, y) in ty.iter().enumerate() {
                let (r0, r1) = (
                    &src[y.lo * s.w..(y.lo + 1) * s.w],
                    &src[y.hi * s.w..(y.hi + 1) * s.w],
                );
                for (ox, x) in tx.iter().enumerate() {
                    let top = r0[x.lo].as_f64() * (1.0 - x.frac) + r0[x.hi].as_f64() * x.frac;
                    let bottom = r1[x.lo].as_f64() * (1.0 - x.frac) + r1[x.hi].as_f64() * x.frac;
                    dst[oy * out_w + ox] = T::from_f64(top * (1.0 - y.frac) + bottom * y.frac);
                }
            }
        }
    }
    Ok(out)
}

/// Adjoint of [`bilinear_resize`]: scatters each output gradient onto its four source taps.
pub fn bilinear_resize_backward<T: Scalar>(
    input_shape: Shape,
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    let g = grad_out.shape();
    check(input_shape, g.h, g.w)?;
    if (g.n, g.c) != (input_shape.n, input_shape.c) {
        return Err(Error::Shape {
            op: "bilinear_resize_backward",
            expected: input_shape,
            actual: g,
        });
    }
    if (g.h, g.w) == (input_shape.h, input_shape.w) {
        return Ok(grad_out.clone());
    }
    let (ty, tx) = (taps(input_shape.h, g.h), taps(input_shape.w, g.w));
    let w = input_shape.w;
    let mut gi = Tensor::zeros(input_shape);
    let mut acc: Vec<f64> = Vec::new();
    for n in 0..g.n {
        for c in 0..g.c {
            acc.clear();
            acc.resize(input_shape.plane(), 0.0);
            let src = grad_out.plane(n, c);
            for (oy, y) in ty.iter().enumerate() {
                for (ox, x) in tx.iter().enumerate() {
                    let v = src[oy * g.w + ox].as_f64();
                    acc[y.lo * w + x.lo] += v * (1.0 - y.frac) * (1.0 - x.frac);
                    acc[y.lo * w + x.hi] += v * (1.0 - y.frac) * x.frac;
                    acc[y.hi * w + x.lo] += v * y.frac * (1.0 - x.frac);
                    acc[y.hi * w + x.hi] += v * y.frac * x.frac;
                }
            }
            for (d, &a) in gi.plane_mut(n, c).iter_mut().zip(&acc) {
                *d = T::from_f64(a);
            }
        }
    }
    Ok(gi)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_and_constant() {
        let x = Tensor::<f64>::from_fn(Shape::new(1, 2, 3, 4), |_, c, h, w| {
            (c * 12 + h * 4 + w) as f64
        });
        assert_eq!(bilinear_resize(&x, 3, 4).unwrap(), x);
        let k = Tensor::<f64>::full(Shape::new(1, 1, 3, 5), 0.75);
        for &(h, w) in &[(1, 1), (7, 2), (14, 14), (2, 9)] {
            let y = bilinear_resize(&k, h, w).unwrap();
            assert!(y.data().iter().all(|&v| (v - 0.75).abs() < 1e-15));
        }
    }

    #[test]
    fn corner_aligned_upsample() {
        let x = Tensor::<f64>::from_vec(Shape::new(1, 1, 2, 2), alloc::vec![0.0, 1.0, 2.0, 3.0])
            .unwrap();
        let y = bilinear_resize(&x, 3, 3).unwrap();
        assert_eq!(y.data(), &[0.0, 0.5, 1.0, 1.0, 1.5, 2.0, 2.0, 2.5, 3.0]);
    }

    #[test]
    fn odd_targets_round_trip_sizes() {
        let x = Tensor::<f32>::zeros(Shape::new(1, 1, 56, 55));
        assert_eq!(
            bilinear_resize(&x, 111, 110).unwrap().shape(),
            Shape::new(1, 1, 111, 110)
        );
    }

    #[test]
    fn zero_target_rejected() {
        let x = Tensor::<f32>::zeros(Shape::new(1, 1, 2, 2));
        assert!(bilinear_resize(&x, 0, 3).is_err());
    }
}
