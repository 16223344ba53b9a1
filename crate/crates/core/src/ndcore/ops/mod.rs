pub mod conv;
pub mod norm;
pub mod pointwise;
pub mod pool;
pub mod upsample;

pub use conv::{conv2d, conv_param_count, depthwise_conv2d, depthwise_separable_conv, separable_param_count};
pub use norm::batch_norm2d;
pub use pointwise::{
    add, affine, concat_channels, linear, mean, mul, mul_broadcast, relu, sigmoid, sub, sum, tanh,
    weighted_sum,
};
pub use pool::{
    avg_pool2x, channel_avg, channel_max, global_avg_pool, global_max_pool, max_pool2d, pooled_reduction,
    Reduction,
};
pub use upsample::{bilinear_resize, bilinear_upsample_2x, linear_taps};
