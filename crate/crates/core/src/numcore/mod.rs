//! Dense tensors, the differentiable op set of the reconstruction model,
//! the InfoNCE loss and the Adam optimizer.

mod adam;
mod gradcheck;
mod infonce;
pub mod kernels;
mod stats;
mod tape;
mod tensor;

pub use adam::AdamState;
pub use gradcheck::{grad_check, GradCheck, GradCheckReport};
pub use infonce::{infonce_loss, infonce_with_grad, NormalizedSeries};
pub use kernels::{conv1d, dropout, gelu, glu, linear};
pub use stats::{center_unit, mean_std, pearson, pearson_checked, Correlation};
pub use tape::{GradTape, Gradients, Var};
pub use tensor::{Real, Tensor};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumError {
    #[error("{op}: shape mismatch, expected {expected}, found {found}")]
    ShapeMismatch {
        op: &'static str,
        expected: String,
        found: String,
    },
    #[error("{op}: need at least {min} elements, found {found}")]
    TooShort {
        op: &'static str,
        min: usize,
        found: usize,
    },
    #[error("convolution kernel size must be odd, got {0}")]
    EvenKernel(usize),
    #[error("dropout rate must lie in [0, 1), got {0}")]
    InvalidRate(f64),
    #[error("temperature must be positive, got {0}")]
    NonPositiveTemperature(f64),
    #[error("contrastive set needs at least 2 candidates, got {0}")]
    TooFewCandidates(usize),
    #[error("non-finite gradient for parameter {param}")]
    NonFiniteGradient { param: usize },
}
