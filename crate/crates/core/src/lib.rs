//! Personalized real-time risk scoring with mixtures of multi-task Gaussian
//! process experts.
//!
//! The offline pipeline discovers latent patient classes among stable
//! patients with EM over stationary GP experts (the number of classes chosen
//! by a BIC Bayes factor), regresses class responsibilities on admission
//! features, and trains windowed deteriorating-domain experts on a
//! responsibility-driven resampling of the deteriorating patients. The online
//! stage turns each expert pair into a posterior risk and averages the risks
//! with admission-predicted weights.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cohort;
pub mod error;
pub mod eval;
pub mod gp;
pub mod mixture;
pub mod numeric;
pub mod pipeline;
pub mod risk;
pub mod synth;
pub mod transfer;

pub use error::{Error, Result};
