//! Differentiable primitives: each forward has an exact backward counterpart.

mod activation;
mod batchnorm;
mod conv;
mod pool;
mod resize;

pub use activation::{add, relu, relu_backward, softmax_backward, softmax_channels};
pub use batchnorm::{
    batch_norm_backward, batch_norm_infer, batch_norm_train, update_running, BatchNormParams,
    BnCache, Mode, DEFAULT_EPSILON, DEFAULT_MOMENTUM,
};
pub use conv::{conv2d, conv2d_backward, ConvGrads, ConvParams};
pub use pool::{maxpool2, maxpool2_backward, pooled_len, Pooled};
pub use resize::{bilinear_resize, bilinear_resize_backward};
