use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Added to the gradient of decaying parameters as `weight_decay * theta`.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 5e-4,
        }
    }
}

/// Adam moments for every parameter of a store (empty for non-trainable entries).
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<T: Scalar = f32> {
    pub first: Vec<Tensor<T>>,
    pub second: Vec<Tensor<T>>,
    pub step: u64,
    pub lr: f64,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(params: &ParamStore<T>, lr: f64) -> Self {
        let zeros = |p: &crate::params::Param<T>| {
            if p.kind.trainable() {
                Tensor::zeros(p.value.shape())
            } else {
                Tensor::zeros(crate::tensor::Shape::channels(0))
            }
        };
        let first: Vec<Tensor<T>> = params.iter().map(|(_, p)| zeros(p)).collect();
        Self {
            second: first.clone(),
            first,
            step: 0,
            lr,
        }
    }

    /// Checks that the buffers line up with `params`.
    pub fn check(&self, params: &ParamStore<T>) -> Result<()> {
        if self.first.len() != params.len() || self.second.len() != params.len() {
            return Err(Error::Other(
                "optimizer state does not match the model".into(),
            ));
        }
        for ((_, p), (m, v)) in params.iter().zip(self.first.iter().zip(&self.second)) {
            if p.kind.trainable() && (m.shape() != p.value.shape() || v.shape() != p.value.shape())
            {
                return Err(Error::Shape {
                    op: "optimizer state",
                    expected: p.value.shape(),
                    actual: m.shape(),
                });
            }
        }
        Ok(())
    }
}

/// One bias-corrected Adam update. Missing gradients count as zero.
pub fn adam_step<T: Scalar>(
    params: &mut ParamStore<T>,
    grads: &[Option<Tensor<T>>],
    state: &mut OptimizerState<T>,
    config: &AdamConfig,
) -> Result<()> {
    state.check(params)?;
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - config.beta1.powi(t);
    let c2 = 1.0 - config.beta2.powi(t);
    for (id, p) in params.iter_mut() {
        if !p.kind.trainable() {
            continue;
        }
        let i = id.index();
        let g = grads.get(i).and_then(Option::as_ref);
        if let Some(g) = g {
            if g.shape() != p.value.shape() {
                return Err(Error::Shape {
                    op: "adam_step",
                    expected: p.value.shape(),
                    actual: g.shape(),
                });
            }
        }
        let decay = if p.kind.decays() {
            config.weight_decay
        } else {
            0.0
        };
        let m = state.first[i].data_mut();
        let v = state.second[i].data_mut();
        for (k, theta) in p.value.data_mut().iter_mut().enumerate() {
            let th = theta.as_f64();
            let gk = g.map_or(0.0, |g| g.data()[k].as_f64()) + decay * th;
            let mk = config.beta1 * m[k].as_f64() + (1.0 - config.beta1) * gk;
            let vk = config.beta2 * v[k].as_f64() + (1.0 - config.beta2) * gk * gk;
            m[k] = T::from_f64(mk);
            v[k] = T::from_f64(vk);
            *theta = T::from_f64(th - state.lr * (mk / c1) / ((vk / c2).sqrt() + config.epsilon));
        }
    }
    Ok(())
}
