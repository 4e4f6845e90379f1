use crate::error::{Error, Result};
use crate::grid::NUM_CLASSES;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
#[cfg(not(feature = "std"))]
use num_traits::Float;

const LOG_FLOOR: f64 = 1e-12;

/// Clamps from below but lets NaN through, unlike `f64::max`.
fn floor(p: f64) -> f64 {
    if p < LOG_FLOOR {
        LOG_FLOOR
    } else {
        p
    }
}

/// Loss value and its gradient with respect to the pre-softmax logits.
#[derive(Clone, Debug)]
pub struct LossOutput<T: Scalar> {
    pub loss: f64,
    pub grad_logits: Tensor<T>,
}

/// Class-weighted cross entropy averaged over pixels, differentiated through the softmax.
///
/// With `mask_background` the background pixels are dropped from both the sum and the
/// pixel count.
pub fn weighted_cross_entropy<T: Scalar>(
    probs: &Tensor<T>,
    one_hot: &Tensor<T>,
    weights: &[f64; NUM_CLASSES],
    mask_background: bool,
) -> Result<LossOutput<T>> {
    let s = probs.shape();
    if one_hot.shape() != s {
        return Err(Error::Shape {
            op: "weighted_cross_entropy",
            expected: s,
            actual: one_hot.shape(),
        });
    }
    if s.c != NUM_CLASSES {
        return Err(Error::Channels {
            op: "weighted_cross_entropy",
            expected: NUM_CLASSES,
            actual: s.c,
        });
    }
    let plane = s.plane();
    let mut grad = Tensor::zeros(s);
    let mut total = 0.0;
    let mut count = 0usize;
    let mut classes = alloc::vec![0usize; s.n * plane];
    for n in 0..s.n {
        let y = one_hot.item(n);
        for p in 0..plane {
            let class = (0..NUM_CLASSES)
                .find(|&c| y[c * plane + p] > T::zero())
                .unwrap_or(0);
            classes[n * plane + p] = class;
            if !(mask_background && class == 0) {
                count += 1;
            }
        }
    }
    if count == 0 {
        return Ok(LossOutput {
            loss: 0.0,
            grad_logits: grad,
        });
    }
    let scale = 1.0 / count as f64;
    for n in 0..s.n {
        let pr = probs.item(n);
        let base = n * NUM_CLASSES * plane;
        for p in 0..plane {
            let class = classes[n * plane + p];
            if mask_background && class == 0 {
                continue;
            }
            let w = weights[class];
            total += w * -floor(pr[class * plane + p].as_f64()).ln();
            for c in 0..NUM_CLASSES {
                let y = if c == class { 1.0 } else { 0.0 };
                grad.data_mut()[base + c * plane + p] =
                    T::from_f64(w * (pr[c * plane + p].as_f64() - y) * scale);
            }
        }
    }
    Ok(LossOutput {
        loss: total * scale,
        grad_logits: grad,
    })
}
