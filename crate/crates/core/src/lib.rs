//! Classification losses of the spherical family, the spherical log-sum-exp
//! bound, an output layer whose exact SGD steps cost O(d²) regardless of the
//! number of classes, and a small MLP trainer to compare them.
//!
//! A spherical loss depends on the pre-activations `o` only through
//! `s = Σ o_i`, `q = Σ o_i²` and the target coordinate `o_c`.

// `!(x > 0.0)` style checks are meant to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bound;
pub mod data;
pub mod error;
pub mod fast_output;
pub mod loss;
pub mod objective;
pub mod trainer;

pub use error::{Error, Result};
pub use objective::LossKind;
