//! Per-channel batch normalization. Statistics are accumulated in `f64`.

use alloc::vec;
use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// Whether normalization uses batch statistics or the running estimates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    Training,
    Inference,
}

/// Learnable affine parameters and running statistics of one normalization layer.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormParams<T: Scalar = f32> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub epsilon: f64,
    pub momentum: f64,
}

impl<T: Scalar> BatchNormParams<T> {
    pub fn new(channels: usize) -> Self {
        let s = Shape::channels(channels);
        Self {
            gamma: Tensor::full(s, T::one()),
            beta: Tensor::zeros(s),
            running_mean: Tensor::zeros(s),
            running_var: Tensor::full(s, T::one()),
            epsilon: DEFAULT_EPSILON,
            momentum: DEFAULT_MOMENTUM,
        }
    }

    /// Normalizes `input` and, in training mode, folds the batch statistics into the
    /// running estimates.
    pub fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let (out, cache) = match mode {
            Mode::Training => batch_norm_train(input, &self.gamma, &self.beta, self.epsilon)?,
            Mode::Inference => batch_norm_infer(
                input,
                &self.gamma,
                &self.beta,
                &self.running_mean,
                &self.running_var,
                self.epsilon,
            )?,
        };
        if mode == Mode::Training {
            update_running(
                &mut self.running_mean,
                &mut self.running_var,
                &cache,
                self.momentum,
            );
        }
        Ok(out)
    }
}

pub const DEFAULT_EPSILON: f64 = 1e-5;
/// Weight of the newest batch in the running-statistic moving average.
pub const DEFAULT_MOMENTUM: f64 = 0.1;

/// Values retained from the forward pass for [`batch_norm_backward`].
#[derive(Clone, Debug)]
pub struct BnCache<T: Scalar> {
    pub xhat: Tensor<T>,
    pub inv_std: Vec<f64>,
    pub mean: Vec<f64>,
    /// Biased batch variance (training) or the running variance (inference).
    pub var: Vec<f64>,
    /// Elements per channel.
    pub count: usize,
    pub mode: Mode,
}

fn check_channels<T: Scalar>(input: &Tensor<T>, p: &Tensor<T>, op: &'static str) -> Result<()> {
    let c = input.shape().c;
    if p.len() != c {
        return Err(Error::Shape {
            op,
            expected: Shape::channels(c),
            actual: p.shape(),
        });
    }
    Ok(())
}

fn apply<T: Scalar>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    mean: Vec<f64>,
    var: Vec<f64>,
    eps: f64,
    mode: Mode,
) -> (Tensor<T>, BnCache<T>) {
    let s = input.shape();
    let plane = s.plane();
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
    let mut out = Tensor::zeros(s);
    let mut xhat = Tensor::zeros(s);
    for n in 0..s.n {
        for c in 0..s.c {
            let (m, is) = (mean[c], inv_std[c]);
            let (g, b) = (gamma.data()[c].as_f64(), beta.data()[c].as_f64());
            let base = (n * s.c + c) * plane;
            let src = &input.data()[base..base + plane];
            for (i, &x) in src.iter().enumerate() {
                let xh = (x.as_f64() - m) * is;
                xhat.data_mut()[base + i] = T::from_f64(xh);
                out.data_mut()[base + i] = T::from_f64(g * xh + b);
            }
        }
    }
    (
        out,
        BnCache {
            xhat,
            inv_std,
            mean,
            var,
            count: s.n * plane,
            mode,
        },
    )
}

/// Normalizes with the statistics of the current batch.
pub fn batch_norm_train<T: Scalar>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: f64,
) -> Result<(Tensor<T>, BnCache<T>)> {
    check_channels(input, gamma, "batch_norm gamma")?;
    check_channels(input, beta, "batch_norm beta")?;
    let s = input.shape();
    let count = s.n * s.plane();
    if count < 2 {
        return Err(Error::Other(alloc::format!(
            "batch_norm in training mode needs at least 2 values per channel, input is {s}"
        )));
    }
    let mut mean = vec![0.0f64; s.c];
    let mut var = vec![0.0f64; s.c];
    for c in 0..s.c {
        let mut sum = 0.0;
        for n in 0..s.n {
            sum += input.plane(n, c).iter().map(|v| v.as_f64()).sum::<f64>();
        }
        let m = sum / count as f64;
        let mut sq = 0.0;
        for n in 0..s.n {
            sq += input
                .plane(n, c)
                .iter()
                .map(|v| (v.as_f64() - m).powi(2))
                .sum::<f64>();
        }
        mean[c] = m;
        var[c] = sq / count as f64;
    }
    Ok(apply(input, gamma, beta, mean, var, eps, Mode::Training))
}

/// Normalizes with stored running statistics.
pub fn batch_norm_infer<T: Scalar>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running_mean: &Tensor<T>,
    running_var: &Tensor<T>,
    eps: f64,
) -> Result<(Tensor<T>, BnCache<T>)> {
    for (p, op) in [
        (gamma, "gamma"),
        (beta, "beta"),
        (running_mean, "running_mean"),
        (running_var, "running_var"),
    ] {
        check_channels(input, p, op)?;
    }
    let mean = running_mean.data().iter().map(|v| v.as_f64()).collect();
    let var = running_var
        .data()
        .iter()
        .map(|v| v.as_f64().max(0.0))
        .collect();
    Ok(apply(input, gamma, beta, mean, var, eps, Mode::Inference))
}

/// Exponential moving average of the batch statistics; the variance is the unbiased estimate.
pub fn update_running<T: Scalar>(
    running_mean: &mut Tensor<T>,
    running_var: &mut Tensor<T>,
    cache: &BnCache<T>,
    momentum: f64,
) {
    let unbias = cache.count as f64 / (cache.count as f64 - 1.0).max(1.0);
    for c in 0..cache.mean.len() {
        let rm = &mut running_mean.data_mut()[c];
        *rm = T::from_f64((1.0 - momentum) * rm.as_f64() + momentum * cache.mean[c]);
        let rv = &mut running_var.data_mut()[c];
        *rv = T::from_f64(
            ((1.0 - momentum) * rv.as_f64() + momentum * cache.var[c] * unbias).max(0.0),
        );
    }
}

/// Returns `(grad_input, grad_gamma, grad_beta)`.
pub fn batch_norm_backward<T: Scalar>(
    cache: &BnCache<T>,
    gamma: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let s = cache.xhat.shape();
    if grad_out.shape() != s {
        return Err(Error::Shape {
            op: "batch_norm_backward",
            expected: s,
            actual: grad_out.shape(),
        });
    }
    let plane = s.plane();
    let count = cache.count as f64;
    let mut gx = Tensor::zeros(s);
    let mut gg = Vec::with_capacity(s.c);
    let mut gb = Vec::with_capacity(s.c);
    for c in 0..s.c {
        let mut sum_dy = 0.0;
        let mut sum_dy_xhat = 0.0;
        for n in 0..s.n {
            let dy = grad_out.plane(n, c);
            let xh = cache.xhat.plane(n, c);
            for (d, x) in dy.iter().zip(xh) {
                sum_dy += d.as_f64();
                sum_dy_xhat += d.as_f64() * x.as_f64();
            }
        }
        gg.push(T::from_f64(sum_dy_xhat));
        gb.push(T::from_f64(sum_dy));
        let g = gamma.data()[c].as_f64();
        let is = cache.inv_std[c];
        for n in 0..s.n {
            let base = (n * s.c + c) * plane;
            for i in 0..plane {
                let dy = grad_out.data()[base + i].as_f64();
                let v = match cache.mode {
                    Mode::Training => {
                        let xh = cache.xhat.data()[base + i].as_f64();
                        g * is * (dy - sum_dy / count - xh * sum_dy_xhat / count)
                    }
                    Mode::Inference => g * is * dy,
                };
                gx.data_mut()[base + i] = T::from_f64(v);
            }
        }
    }
    Ok((
        gx,
        Tensor::from_vec(Shape::channels(s.c), gg)?,
        Tensor::from_vec(Shape::channels(s.c), gb)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn training_output_is_standardized() {
        let x = Tensor::<f64>::from_fn(Shape::new(2, 3, 4, 5), |n, c, h, w| {
            ((n * 7 + c * 13 + h * 3 + w * 11) % 17) as f64 * (c as f64 + 0.5) - 4.0
        });
        let mut bn = BatchNormParams::<f64>::new(3);
        let y = bn.forward(&x, Mode::Training).unwrap();
        for c in 0..3 {
            let vals: Vec<f64> = (0..2).flat_map(|n| y.plane(n, c).to_vec()).collect();
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let v = vals.iter().map(|x| (x - m).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(m.abs() <= 1e-5, "mean {m}");
            assert!((v - 1.0).abs() <= 1e-3, "var {v}");
        }
    }

    #[test]
    fn zero_gamma_outputs_beta() {
        let x = Tensor::<f64>::from_fn(Shape::new(1, 2, 3, 3), |_, c, h, w| (c + h * w) as f64);
        let mut bn = BatchNormParams::<f64>::new(2);
        bn.gamma = Tensor::zeros(Shape::channels(2));
        bn.beta = Tensor::from_vec(Shape::channels(2), vec![0.25, -2.0]).unwrap();
        let y = bn.forward(&x, Mode::Training).unwrap();
        assert!(y.plane(0, 0).iter().all(|&v| v == 0.25));
        assert!(y.plane(0, 1).iter().all(|&v| v == -2.0));
    }

    #[test]
    fn constant_channel_stays_finite() {
        let x = Tensor::<f32>::full(Shape::new(1, 1, 4, 4), 3.0);
        let mut bn = BatchNormParams::<f32>::new(1);
        let y = bn.forward(&x, Mode::Training).unwrap();
        assert!(y.all_finite());
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn running_statistics_track_batches() {
        let x = Tensor::<f64>::from_fn(Shape::new(1, 1, 2, 2), |_, _, h, w| (2 * h + w) as f64);
        let mut bn = BatchNormParams::<f64>::new(1);
        bn.forward(&x, Mode::Training).unwrap();
        // mean 1.5, unbiased variance 5/3
        assert!((bn.running_mean.data()[0] - 0.15).abs() < 1e-12);
        assert!((bn.running_var.data()[0] - (0.9 + 0.1 * 5.0 / 3.0)).abs() < 1e-12);
        let before = bn.running_mean.clone();
        bn.forward(&x, Mode::Inference).unwrap();
        assert_eq!(bn.running_mean, before);
    }

    #[test]
    fn training_mode_rejects_single_value() {
        let x = Tensor::<f32>::zeros(Shape::new(1, 2, 1, 1));
        let mut bn = BatchNormParams::<f32>::new(2);
        assert!(bn.forward(&x, Mode::Training).is_err());
        assert!(bn.forward(&x, Mode::Inference).is_ok());
    }
}
