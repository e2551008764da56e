//! Minimal reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! The engine is define-by-run: every forward pass records onto a fresh
//! [`Tape`], and [`Tape::backward`] replays the record in reverse to produce
//! [`Gradients`]. Parameters live outside the tape as plain [`Tensor`]s and
//! are bound onto it per pass, either as trainable leaves or as constants.

mod conv;
mod rng;
mod tape;
mod tensor;

pub use conv::conv_output_extent;
pub use rng::RngStream;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
