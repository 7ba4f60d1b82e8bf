//! Sharpness-aware optimization toolkit.
//!
//! The crate is organised around a small reverse-mode autodiff tape
//! ([`autodiff`]), a set of built-in objective surfaces ([`landscapes`]),
//! the family of sharpness-aware update rules ([`optimizers`]), loss-surface
//! diagnostics ([`probes`]), closed-form verifiers on quadratics ([`oracle`])
//! and the batch experiment driver ([`harness`]).

// `!(x > 0.0)` is used on purpose so that NaN fails positivity checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod error;
pub mod harness;
pub mod landscapes;
pub mod linalg;
pub mod optimizers;
pub mod oracle;
pub mod param;
pub mod probes;

pub use autodiff::{evaluate, exact_hessian, gradient, value_and_gradient, LossSurface, PassCount};
pub use error::{Error, Result};
pub use param::{GradVector, ParamVector};
