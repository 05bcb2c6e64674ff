//! Causal regularization: Ridge and Lasso whose penalty is tuned from an
//! estimate of confounding strength, with simulators and a numerical suite
//! for the observational-versus-interventional loss gap.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod causal_bounds;
pub mod concorr;
pub mod confounding;
pub mod data;
pub mod error;
pub mod regression;
pub mod rng;
pub mod simulation;

pub use error::{Error, Result};
