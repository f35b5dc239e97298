//! Numerical optimization primitives.

pub mod fd;
mod nelder_mead;
mod newton;

pub use nelder_mead::{Minimum, NelderMead};
pub use newton::Newton;
