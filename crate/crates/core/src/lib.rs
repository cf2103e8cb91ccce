//! Numerical tools for aggregation-diffusion equations in the
//! fair-competition regime `N(m-1) + k = 0`.
//!
//! The crate evaluates the homogeneous free energies, the radial
//! interaction kernels of the Riesz potential `|x|^k / k` (with the
//! logarithmic case at `k = 0`), constructs fast-diffusion stationary states
//! by fixed-point iteration, and simulates the one-dimensional gradient flow
//! on the pseudoinverse of the cumulative distribution function.

pub mod domain;
pub mod energy;
pub mod error;
pub mod fastdiff;
pub mod jko1d;
pub mod kernel;
pub mod quad;

pub use domain::{
    bootstrap_exponent, classify, dilate, rescaling_maps, Frame, Params, RadialDensity, RadialGrid, Regime,
    RegimeReport,
};
pub use error::{Error, Result};
