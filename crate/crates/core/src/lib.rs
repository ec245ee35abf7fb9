//! Localized space-time multiscale method for parabolic problems with
//! coefficients oscillating rapidly in space and time.

pub mod analysis;
pub mod assembly;
pub mod coefficient;
pub mod corrector;
pub mod discretization;
pub mod error;
pub mod forcing;
pub mod grid;
pub mod interpolation;
pub mod linalg;
pub mod solver;
pub mod spacetime;

pub use error::{Error, Result};
