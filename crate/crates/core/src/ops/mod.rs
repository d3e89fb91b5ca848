//! Layer primitives with explicit forward and backward passes.

pub mod batchnorm;
pub mod conv;
pub mod linear;
pub mod loss;
pub mod reduce;

use serde::{Deserialize, Serialize};

pub use batchnorm::{batchnorm_backward, batchnorm_forward, BatchNorm, BnHyper, RunningStats};
pub use conv::{conv2d_backward, conv2d_forward, conv2d_forward_im2col, pad_zeros, ConvGeometry};
pub use linear::{linear_backward, linear_forward, Linear};
pub use loss::{argmax_rows, softmax_cross_entropy};
pub use reduce::{
    channel_mean, channel_mean_backward, global_avg_pool, global_avg_pool_backward, relu,
    relu_backward,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}
