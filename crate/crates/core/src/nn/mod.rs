//! Minimal dense network kernel with hand-derived gradients.

mod embedding;
mod gradcheck;
mod layers;
mod matrix;
mod optim;
mod params;

pub use embedding::{mean_rows, mean_rows_backward};
pub use gradcheck::{grad_check, GradCheckReport};
pub use layers::{
    affine_backward, affine_forward, log_softmax, softmax, softmax_xent, Activation, AffineCache,
    AffineGrads,
};
pub use matrix::DenseMatrix;
pub use optim::{Optimizer, OptimizerKind};
pub use params::{ParamId, ParamStore};
