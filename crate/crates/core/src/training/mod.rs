//! Training DSNet against the rate-distortion surrogate loss.

pub mod adam;
pub mod backprop;
pub mod gradcheck;
pub mod loss;
pub mod train;

pub use adam::{adam_step, AdamConfig, OptimizerState};
pub use backprop::{conv2d_backward, dsnet_backward, leaky_relu_backward, rdb_backward, ConvGrad};
pub use loss::{loss_dsnet, LossOperators, LossTerms, LossWeights};
pub use train::{batch_gradient, evaluate_loss, synthetic_blocks, train, EpochStats, TrainConfig, Trainer};
