//! Combinatorial alpha-curvature of piecewise hyperbolic metrics on closed
//! triangulated surfaces, and solvers for prescribed alpha-curvature.

pub mod curvature;
pub mod error;
pub mod fixtures;
pub mod flows;
pub mod kernel;
pub mod surface;

pub use error::{Error, Result};
