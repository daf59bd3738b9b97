//! Reverse-mode differentiable computation over dense `f64` matrices.
//!
//! The substrate for everything else in the crate: [`Tensor`] holds values,
//! [`Tape`] records operations eagerly and replays them in reverse for
//! gradients, and [`grad_check`] is the finite-difference harness used by
//! the test suites.

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::grad_check;
pub use tape::{NodeId, Tape, LOG_CLAMP};
pub use tensor::Tensor;
