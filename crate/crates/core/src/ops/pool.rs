//! 2x2 / stride-2 max pooling with ceiling output size.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// Output extent of one pooled axis: `ceil(len / 2)`.
pub const fn pooled_len(len: usize) -> usize {
    len.div_ceil(2)
}

/// Max pooling result plus the flat input index that won each window.
#[derive(Clone, Debug)]
pub struct Pooled<T: Scalar> {
    pub output: Tensor<T>,
    pub argmax: Vec<u32>,
}

/// Windows overhanging the bottom/right edge are truncated to in-bounds elements.
/// Ties go to the first element in row-major scan order.
pub fn maxpool2<T: Scalar>(input: &Tensor<T>) -> Pooled<T> {
    let s = input.shape();
    let (oh, ow) = (pooled_len(s.h), pooled_len(s.w));
    let out_shape = Shape::new(s.n, s.c, oh, ow);
    let mut output = Tensor::zeros(out_shape);
    let mut argmax = Vec::with_capacity(out_shape.len());
    let plane = s.plane();
    for n in 0..s.n {
        for c in 0..s.c {
            let base = (n * s.c + c) * plane;
            let src = input.plane(n, c);
            let dst = output.plane_mut(n, c);
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = (2 * oy) * s.w + 2 * ox;
                    for y in 2 * oy..(2 * oy + 2).min(s.h) {
                        for x in 2 * ox..(2 * ox + 2).min(s.w) {
                            let i = y * s.w + x;
                            if src[i] > src[best] {
                                best = i;
                            }
                        }
                    }
                    dst[oy * ow + ox] = src[best];
                    argmax.push((base + best) as u32);
                }
            }
        }
    }
    Pooled { output, argmax }
}

/// Routes each output gradient to the element that won its window.
pub fn maxpool2_backward<T: Scalar>(
    input_shape: Shape,
    argmax: &[u32],
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    if grad_out.len() != argmax.len() {
        return Err(Error::Other(alloc::format!(
            "maxpool2_backward: {} gradients for {} windows",
            grad_out.len(),
            argmax.len()
        )));
    }
    let mut gi = Tensor::zeros(input_shape);
    for (&i, &g) in argmax.iter().zip(grad_out.data()) {
        gi.data_mut()[i as usize] += g;
    }
    Ok(gi)
}
