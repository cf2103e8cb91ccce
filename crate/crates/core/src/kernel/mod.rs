//! Interaction kernels: the Riesz potential `W_k`, the sphere-averaged
//! derivative kernel ψ_k and radial convolutions.

pub mod asymptotic;
pub mod convolution;
pub mod hypergeometric;
pub mod psi;

pub use asymptotic::{AsymptoticConstants, Side};
pub use convolution::{
    moment_sandwich_violations, potential_at, radial_force, radial_force_with, radial_potential, AngularKernel,
    ConvolutionMatrix, ForceOptions,
};
pub use hypergeometric::gauss_hypergeometric;
pub use psi::{psi_csv, psi_table, HypergeometricParams, PsiBackend, PsiEvaluator, PsiRow};

/// `W_k(r) = r^k / k`, or `log r` for `k = 0`.
pub fn riesz(k: f64, r: f64) -> f64 {
    if k == 0.0 {
        r.ln()
    } else {
        r.powf(k) / k
    }
}
