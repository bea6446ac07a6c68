//! Bayesian time-varying parameter tensor vector autoregression.
//!
//! Coefficient tensors of a VAR(P) are factorized with a rank-`R` CP
//! decomposition in which at most one loading evolves as a random walk. The
//! crate provides the Gibbs sampler for the four resulting configurations,
//! conditional and marginal DIC variants with knee-point rank selection, a
//! simulation harness, and posterior Granger-causality networks.

// Negated comparisons deliberately reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dist;
pub mod error;
pub mod gibbs;
pub mod granger;
pub mod io;
pub mod model;
pub mod selection;
pub mod state_space;
pub mod tensor;

pub use error::{Error, Result};
pub use model::{LaggedData, Mode, ModelConfig, PriorSpec};
pub use tensor::{CpLoadings, Tensor3};
