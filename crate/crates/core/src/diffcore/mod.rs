//! Differentiable building blocks: dense value grids, named parameter sets,
//! primitive operations with hand-derived gradients, finite-difference
//! gradient checking and the Adam optimizer.
//!
//! Everything here runs in `f64`. Reductions are written as plain
//! left-to-right loops (or ndarray folds over standard layout) so repeated
//! runs are bit-identical.

mod adam;
mod gradcheck;
mod grid;
pub mod ops;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::{grad_check, GradCheckReport};
pub use grid::{ParamSet, ValueGrid};
