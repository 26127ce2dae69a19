//! Tensor arithmetic, layers with analytic gradients, and the Adam optimizer.

mod adam;
mod gradcheck;
pub mod layers;
mod loss;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::{grad_check, relative_error, GradCheckReport, RELATIVE_ERROR_FLOOR};
pub use layers::{
    batchnorm2d, batchnorm2d_backward, conv2d, conv2d_backward, global_avg_pool,
    global_avg_pool_backward, linear, linear_backward, maxpool2d, maxpool2d_backward, relu,
    relu_backward, BatchNormCache, BnMode, LayerGradients, RunningStats,
};
pub use loss::{cross_entropy, softmax, softmax_cross_entropy_grad, LOG_FLOOR};
pub use tensor::{argmax, Tensor};
