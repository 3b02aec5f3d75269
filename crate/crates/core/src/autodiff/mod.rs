//! Reverse-mode differentiation over dense `f64` tensors.

mod adam;
mod conv;
mod gradcheck;
mod gru;
mod loss;
mod tape;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{grad_check, GradCheckConfig, GradReport, InputReport};
pub use gru::GruParams;
pub use loss::bce_scalar;
pub use tape::{sigmoid_scalar, AutodiffError, Gradients, Tape, Var};
