//! The layer vocabulary: convolution, batch normalization, ReLU, global
//! average pooling, fully connected, and softmax cross-entropy.

mod activation;
mod batchnorm;
mod conv;
mod linear;
mod loss;
mod pool;

pub use activation::relu;
pub use batchnorm::{batchnorm_eval, batchnorm_train, BatchNormLayer, BatchStats, Mode, BN_EPS, BN_MOMENTUM};
pub use conv::{conv2d, conv_output_size, Conv2dLayer};
pub use linear::{linear, LinearLayer};
pub use loss::{softmax_cross_entropy, softmax_rows};
pub use pool::global_avg_pool;
