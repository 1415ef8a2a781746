//! Dense numerical kernel shared by every network in the crate: matrices,
//! parameters with Adam state, seeded randomness and a gradient checker.

mod gradcheck;
mod matrix;
mod param;
mod rng;

pub use gradcheck::{grad_check, relative_error};
pub use matrix::DenseMatrix;
pub(crate) use matrix::{dot, gemm_nn, gemm_nt, gemm_tn};
pub use param::{glorot_init, AdamConfig, ParamTensor, Parameters};
pub use rng::Rng;

/// Row-wise softmax of a length-`n` logit vector, stabilised by max-subtraction.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}
