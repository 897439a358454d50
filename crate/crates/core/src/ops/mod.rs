//! Numeric kernels.
//!
//! Every kernel is a pure function of its inputs, validates shapes up
//! front, keeps a fixed row-major accumulation order in reference mode,
//! and checks its output for NaN/Inf. Each has a brute-force counterpart
//! in [`crate::oracle`] used by the verification suites.

pub mod activation;
pub mod conv;
pub mod linalg;
pub mod norm;
pub mod pool;
pub mod resize;

pub use activation::{gelu, relu, sigmoid, sigmoid_scalar, softmax_axis, softmax_lastdim};
pub use conv::{conv2d, dwconv2d, laplacian_response, laplacian_stencil, ConvSpec};
pub use linalg::{
    add, add_broadcast, add_scalar, bmm_nn, bmm_nt, concat_channels, matmul, mul, mul_broadcast,
    permute, scale, slice_lastdim, sub, sum_all,
};
pub use norm::{batchnorm2d, layernorm};
pub use pool::{channel_max, channel_mean, global_avg_pool, global_max_pool, pool2d, PoolMode};
pub use resize::{bilinear_resize, nearest_resize};
