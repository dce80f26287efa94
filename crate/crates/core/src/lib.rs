//! Fourier phase retrieval for Schwarz objects.
//!
//! The solver estimates the winding index of the object from the measured
//! magnitudes, builds an initial guess from the discrete Schwarz transform
//! of `log y`, and refines it with a preconditioned trust-region Newton
//! method on the Wirtinger gradient and Hessian.

pub mod error;
pub mod instance;
pub mod pipeline;
pub mod schwarz;
pub mod tensor;
pub mod trustregion;
pub mod winding;
pub mod wirtinger;

pub use error::{Error, Result};
pub use tensor::{ComplexGrid, Grid, MultiIndex, RealGrid, Shape};
