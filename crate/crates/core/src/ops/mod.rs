//! Forward operations and their analytic gradients.

mod activation;
mod conv;
mod dropout;
mod linear;
mod norm;
mod optim;
mod pool;

pub use activation::{
    cross_entropy, relu, relu_backward, softmax, softmax_cross_entropy,
    softmax_cross_entropy_backward,
};
pub use conv::{conv2d, conv2d_backward, Conv2dGrads, Conv2dParams};
pub use dropout::{dropout, dropout_backward};
pub use linear::{linear, linear_backward, LinearGrads};
pub use norm::{affine_norm, affine_norm_backward, NormCache, NormGrads, NORM_EPS};
pub use optim::{sgd_step, SgdHyper};
pub use pool::{global_avg_pool, global_avg_pool_backward};
