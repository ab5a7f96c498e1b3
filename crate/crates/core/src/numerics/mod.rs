//! Dense linear algebra, differentiable primitives, Adam, and gradient checking.

mod adam;
mod gradcheck;
pub mod ops;
mod params;
mod tensor;

pub use adam::{adam_step, AdamConfig};
pub use gradcheck::{gradient_check, BlockCheck, GradCheckConfig, GradCheckReport};
pub use ops::{
    cross_entropy_loss, leaky_relu, leaky_relu_backward, linear_backward, linear_forward, sigmoid, sigmoid_tensor,
    softmax_rows, ClassWeights, LinearGrads, DEFAULT_LEAKY_SLOPE,
};
pub use params::{ParamBlock, ParameterStore, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use tensor::Tensor2;

#[derive(Debug, thiserror::Error)]
pub enum NumericsError {
    #[error("dimension mismatch: {0}")]
    Shape(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("target class {0} is not 0 or 1")]
    InvalidTarget(u8),
    #[error("non-finite gradient in parameter block `{0}`")]
    NonFiniteGradient(String),
    #[error("parameter block `{0}` already exists")]
    DuplicateBlock(String),
    #[error("no parameter block named `{0}`")]
    MissingBlock(String),
    #[error("loss closure is not deterministic: {first} then {second}")]
    NonDeterministic { first: f64, second: f64 },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}
