//! Dense `f64` tensor math: layer kernels with exact backward passes, Adam,
//! finite-difference checking, Jacobi PCA and the SplitMix64 generator.

mod adam;
pub(crate) mod gemm;
mod gradcheck;
mod lstm;
mod ops;
mod param;
mod pca;
mod prng;
mod tensor;

use thiserror::Error;

pub use adam::{adam_step, AdamConfig};
pub use gradcheck::{grad_check, Coords, GradCheckEntry, GradCheckReport, FD_STEPS};
pub use lstm::{lstm_cell_backward, lstm_cell_forward, LstmCellGrads, LstmCellStep, LstmWeights};
pub(crate) use lstm::{lstm_pointwise, lstm_pointwise_backward};
pub use ops::{
    add, avgpool1d, avgpool1d_backward, concat_channels, conv1d, conv1d_backward, conv_geometry, cross_entropy,
    dropout, matmul, relu, relu_backward, scale, softmax, split_channels, Padding,
};
pub(crate) use ops::{cross_entropy_indices, dropout_mask, softmax_rows};
pub use param::{GradBuffer, ParamId, ParamSet, Parameter};
pub use pca::{pca_fit, symmetric_eigen, Pca};
pub use prng::Prng;
pub use tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NumericsError {
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("non-finite value at flat index {index}")]
    NonFinite { index: usize },
    #[error("{0}")]
    Invalid(String),
}
