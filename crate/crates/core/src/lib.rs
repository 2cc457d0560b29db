//! Single-qudit neural network with Hamiltonian co-encoding of features and
//! weights, trained by exact eigendecomposition gradients, plus the
//! classical baselines and attribution metrics used to judge it.

// `!(x >= 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod data;
pub mod error;
pub mod experiment;
pub mod generators;
pub mod gradients;
pub mod linalg;
pub mod metrics;
pub mod qnn;
pub mod record;
pub mod training;

pub use error::{Error, Result};
