//! The sphere-averaged radial derivative kernel
//!
//! ```text
//! ψ_k(s) = σ_{N-1}/σ_N ∫_0^π (1 - s cos θ) sin^{N-2} θ A(s, θ)^{k-2} dθ,
//! A(s, θ) = (1 + s² - 2 s cos θ)^{1/2},
//! ```
//!
//! so that `∂_r (W_k ∗ ρ)(r) = σ_N r^{k-1} ∫ ψ_k(η/r) ρ(η) η^{N-1} dη`.
//!
//! With `t = cos²(θ/2)` and `z = 4s/(1+s)²` one gets
//! `ψ_k = (1+s) h_1 - 2 s h_2`, where `h_i` is proportional to
//! `B(b_i, c_i - b_i) F(a, b_i; c_i; z)` with `a = 1 - k/2`,
//! `b_1 = (N-1)/2`, `c_1 = N-1` and, from the `cos θ = 2t - 1` factor,
//! `b_2 = (N+1)/2`, `c_2 = N`.

use serde::{Deserialize, Serialize};

use super::asymptotic::{AsymptoticConstants, Side};
use super::hypergeometric::{
    connection_parts, gamma_fn, gauss_hypergeometric, hyp2f1_complement, log_negative_parts, rgamma, series,
};
use crate::domain::sphere_area;
use crate::error::{invalid, Error, Result};
use crate::quad::{adaptive, AdaptiveOptions};

/// Evaluation strategy for ψ_k.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PsiBackend {
    /// Hypergeometric evaluation, exact indicator in the Newtonian case.
    Auto,
    Quadrature,
    Hypergeometric,
    AsymptoticNearOne,
    AsymptoticFarField,
    NewtonianExact,
}

impl PsiBackend {
    pub fn name(self) -> &'static str {
        match self {
            PsiBackend::Auto => "auto",
            PsiBackend::Quadrature => "quadrature",
            PsiBackend::Hypergeometric => "hypergeometric",
            PsiBackend::AsymptoticNearOne => "near-one",
            PsiBackend::AsymptoticFarField => "far-field",
            PsiBackend::NewtonianExact => "newtonian",
        }
    }
}

/// Parameters of the two hypergeometric components of ψ_k.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HypergeometricParams {
    pub a: f64,
    pub b1: f64,
    pub c1: f64,
    pub b2: f64,
    pub c2: f64,
}

impl HypergeometricParams {
    pub fn new(n: usize, k: f64) -> Self {
        let nf = n as f64;
        Self { a: 1.0 - k / 2.0, b1: (nf - 1.0) / 2.0, c1: nf - 1.0, b2: (nf + 1.0) / 2.0, c2: nf }
    }

    /// Parameters with `(b_2, c_2)` replaced, for comparing readings of `h_2`.
    pub fn with_h2(n: usize, k: f64, b2: f64, c2: f64) -> Self {
        Self { b2, c2, ..Self::new(n, k) }
    }

    pub fn z(s: f64) -> f64 {
        4.0 * s / ((1.0 + s) * (1.0 + s))
    }

    /// `c - a - b`, shared by both components.
    pub fn exponent(&self) -> f64 {
        self.c1 - self.a - self.b1
    }

    /// `(1+s) h_1(s) - 2 s h_2(s)` evaluated term by term from
    /// `H(a, b; c; z) = B(b, c-b) F(a, b; c; z)`.
    pub fn psi_from_components(&self, n: usize, k: f64, s: f64) -> Result<f64> {
        let ratio = sphere_area(n - 1) / sphere_area(n);
        let z = Self::z(s);
        let h = |b: f64, c: f64| -> Result<f64> {
            Ok(gamma_fn(b) * gamma_fn(c - b) / gamma_fn(c) * gauss_hypergeometric(self.a, b, c, z)?)
        };
        let pre = ratio * (1.0 + s).powf(k - 2.0) * 2f64.powi(n as i32 - 2);
        let h1 = pre * h(self.b1, self.c1)?;
        let h2 = pre * h(self.b2, self.c2)?;
        Ok((1.0 + s) * h1 - 2.0 * s * h2)
    }
}

/// Evaluator of ψ_k for fixed `(N, k)`, `N >= 2`, `-N < k < 2`.
#[derive(Debug, Clone)]
pub struct PsiEvaluator {
    n: usize,
    k: f64,
    backend: PsiBackend,
    /// Relative tolerance of the quadrature backend.
    pub series_tol: f64,
    /// Blend radius for the near-one expansion.
    pub eps1: f64,
    /// Radius beyond which the far-field form is accurate.
    pub s_inf: f64,
    ratio: f64,
    params: HypergeometricParams,
    asymptotics: Option<AsymptoticConstants>,
}

impl PsiEvaluator {
    pub fn new(n: usize, k: f64) -> Result<Self> {
        Self::with_backend(n, k, PsiBackend::Auto)
    }

    pub fn with_backend(n: usize, k: f64, backend: PsiBackend) -> Result<Self> {
        let nf = n as f64;
        if n < 2 {
            return Err(invalid("ψ_k is defined for N >= 2; use the closed forms in one dimension"));
        }
        if !(k > -nf && k < 2.0) {
            return Err(invalid(format!("k = {k} outside (-N, 2) for N = {n}")));
        }
        let newtonian = is_newtonian(n, k);
        if backend == PsiBackend::NewtonianExact && !newtonian {
            return Err(invalid("the Newtonian backend needs k = 2 - N"));
        }
        if backend == PsiBackend::AsymptoticNearOne && k >= 2.0 - nf {
            return Err(invalid("near-one expansions need -N < k < 2 - N"));
        }
        let asymptotics = if k < 2.0 - nf && !newtonian { Some(AsymptoticConstants::new(n, k)?) } else { None };
        Ok(Self {
            n,
            k,
            backend,
            series_tol: 1e-12,
            eps1: 0.05,
            s_inf: 100.0,
            ratio: sphere_area(n - 1) / sphere_area(n),
            params: HypergeometricParams::new(n, k),
            asymptotics,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }
    pub fn k(&self) -> f64 {
        self.k
    }
    pub fn backend(&self) -> PsiBackend {
        self.backend
    }
    pub fn params(&self) -> &HypergeometricParams {
        &self.params
    }
    pub fn asymptotics(&self) -> Option<&AsymptoticConstants> {
        self.asymptotics.as_ref()
    }
    pub fn is_newtonian(&self) -> bool {
        is_newtonian(self.n, self.k)
    }
    /// `-N < k < 2 - N`: ψ_k is singular at `s = 1`.
    pub fn is_sub_newtonian(&self) -> bool {
        self.k < 2.0 - self.n as f64 && !self.is_newtonian()
    }

    /// Limit `s^{2-k} ψ_k(s)` as `s → ∞`.
    pub fn far_field_limit(&self) -> f64 {
        let nf = self.n as f64;
        (nf + self.k - 2.0) / nf
    }

    /// ψ_k(s) with the configured backend.
    pub fn psi(&self, s: f64) -> Result<f64> {
        if s.is_nan() || s < 0.0 {
            return Err(invalid(format!("ψ_k needs s >= 0, got {s}")));
        }
        match self.backend {
            PsiBackend::Auto => {
                if self.is_newtonian() {
                    Ok(newtonian(s))
                } else {
                    self.psi_hypergeometric(s)
                }
            }
            PsiBackend::Hypergeometric => self.psi_hypergeometric(s),
            PsiBackend::Quadrature => self.psi_quadrature(s),
            PsiBackend::NewtonianExact => Ok(newtonian(s)),
            PsiBackend::AsymptoticFarField => Ok(self.psi_far_field(s)),
            PsiBackend::AsymptoticNearOne => {
                let consts = self.asymptotics.as_ref().expect("checked at construction");
                let (eps, side) = if s < 1.0 { (1.0 - s, Side::Below) } else { (s - 1.0, Side::Above) };
                if eps == 0.0 {
                    return Err(self.singular_at_one());
                }
                Ok(consts.psi_near_one(eps, side, 0.0))
            }
        }
    }

    /// ψ_k(1 ∓ ε) with `ε` given separately, so that points very close to the
    /// singularity keep full relative accuracy.
    pub fn psi_offset(&self, eps: f64, side: Side) -> Result<f64> {
        if !(eps >= 0.0) {
            return Err(invalid("offset must be nonnegative"));
        }
        if self.is_newtonian() {
            return Ok(match side {
                _ if eps == 0.0 => 0.5,
                Side::Below => 1.0,
                Side::Above => 0.0,
            });
        }
        let s = match side {
            Side::Below => 1.0 - eps,
            Side::Above => 1.0 + eps,
        };
        if s < 0.0 {
            return Err(invalid("offset below s = 0"));
        }
        if eps == 0.0 {
            return self.value_at_one();
        }
        let z = HypergeometricParams::z(s);
        if z <= 0.9 {
            return self.psi_series(s, z);
        }
        let q = 1.0 + s;
        let x = (eps / q) * (eps / q);
        let one_minus_s = match side {
            Side::Below => eps,
            Side::Above => -eps,
        };
        self.psi_near_one_exact(s, q, z, x, one_minus_s)
    }

    /// Hypergeometric backend.
    pub fn psi_hypergeometric(&self, s: f64) -> Result<f64> {
        if s.is_nan() || s < 0.0 {
            return Err(invalid(format!("ψ_k needs s >= 0, got {s}")));
        }
        if s < 1.0 {
            self.psi_offset(1.0 - s, Side::Below)
        } else {
            self.psi_offset(s - 1.0, Side::Above)
        }
    }

    fn singular_at_one(&self) -> Error {
        Error::Singular(format!("ψ_k is singular at s = 1 for k = {} < 2 - N = {}", self.k, 2.0 - self.n as f64))
    }

    fn value_at_one(&self) -> Result<f64> {
        if self.is_sub_newtonian() {
            return Err(self.singular_at_one());
        }
        if self.is_newtonian() {
            return Ok(0.5);
        }
        Ok(regular_constant(self.n, self.k))
    }

    /// `(1+s)^{k-2} Σ (a)_n (b_1)_n/(c_1)_n [1 - s n/(N-1+n)] z^n/n!`.
    fn psi_series(&self, s: f64, z: f64) -> Result<f64> {
        let HypergeometricParams { a, b1, c1, .. } = self.params;
        let nm1 = self.n as f64 - 1.0;
        let mut coef = 1.0;
        let mut sum = 1.0;
        let mut n = 0usize;
        loop {
            let nf = n as f64;
            coef *= (a + nf) * (b1 + nf) / ((c1 + nf) * (nf + 1.0)) * z;
            n += 1;
            let nf = n as f64;
            let term = coef * (1.0 - s * nf / (nm1 + nf));
            sum += term;
            if coef.abs() * (1.0 + s) <= 1e-17 * sum.abs() || coef == 0.0 {
                break;
            }
            if n > 100_000 {
                return Err(Error::Numerical(format!("ψ_k series did not converge at s = {s}")));
            }
        }
        Ok((1.0 + s).powf(self.k - 2.0) * sum)
    }

    /// Evaluation through the transformation to `x = 1 - z`, with the
    /// singular parts of the two components combined analytically.
    fn psi_near_one_exact(&self, s: f64, q: f64, z: f64, x: f64, one_minus_s: f64) -> Result<f64> {
        let HypergeometricParams { a, b1, c1, b2, c2 } = self.params;
        let e = self.params.exponent();
        let pre = q.powf(self.k - 2.0);
        if !self.is_sub_newtonian() {
            let f1 = hyp2f1_complement(a, b1, c1, z, x)?;
            let f2 = hyp2f1_complement(a, b2, c2, z, x)?;
            return Ok(pre * (q * f1 - s * f2));
        }
        if (e + 1.0).abs() < 1e-7 {
            // logarithmic case k = 1 - N; pole parts combine to (1-s)/x
            let (p1, t1) = log_negative_parts(a, b1, 1, x);
            let (_, t2) = log_negative_parts(a, b2, 1, x);
            // p1 = g0 / x, and the second pole is 2 g0 / x
            let poles = p1 * one_minus_s;
            return Ok(pre * (poles + q * t1 - s * t2));
        }
        let (reg1, _) = connection_parts(a, b1, c1, x)?;
        let (reg2, _) = connection_parts(a, b2, c2, x)?;
        let g = gamma_fn(c1) * gamma_fn(-e) * rgamma(a) * rgamma(b1);
        let p = c1 - a;
        let f_beta = series(p + 1.0, b1, 1.0 + e, x, 1e-17)?;
        // D = F(p, b1; 1+e; x) - F(p+1, b1; 1+e; x), summed without cancellation
        let mut t = b1 / (1.0 + e) * x;
        let mut d = 0.0;
        let mut n = 1usize;
        loop {
            d += t;
            let nf = n as f64;
            t *= (p + nf) * (b1 + nf) / ((1.0 + e + nf) * nf) * x;
            n += 1;
            if t.abs() <= 1e-17 * d.abs() || n > 100_000 {
                break;
            }
        }
        let d = -d;
        let singular = x.powf(e) * g * (q * d + one_minus_s * f_beta);
        Ok(pre * (q * reg1 - s * reg2 + singular))
    }

    /// Adaptive θ-quadrature of the defining integral.
    pub fn psi_quadrature(&self, s: f64) -> Result<f64> {
        if s.is_nan() || s < 0.0 {
            return Err(invalid(format!("ψ_k needs s >= 0, got {s}")));
        }
        if s == 1.0 && self.k <= 2.0 - self.n as f64 {
            if self.is_newtonian() {
                return Ok(0.5);
            }
            return Err(self.singular_at_one());
        }
        quadrature_psi(self.n, self.k, s, self.series_tol.min(1e-12))
    }

    /// `((N+k-2)/N) s^{k-2}`.
    pub fn psi_far_field(&self, s: f64) -> f64 {
        self.far_field_limit() * s.powf(self.k - 2.0)
    }

    /// σ_{N-1}/σ_N.
    pub fn sphere_ratio(&self) -> f64 {
        self.ratio
    }
}

fn is_newtonian(n: usize, k: f64) -> bool {
    (k - (2.0 - n as f64)).abs() < 1e-14
}

fn newtonian(s: f64) -> f64 {
    if s < 1.0 {
        1.0
    } else if s > 1.0 {
        0.0
    } else {
        0.5
    }
}

/// ψ_k(1) for `k > 2 - N`, and the constant term of the expansion at
/// `s = 1` otherwise: `2^{k-1} Γ(e+1) Γ(N-1) / (Γ((N-1)/2) Γ(N/2 + k/2))`
/// with `e = (N+k-3)/2`.
pub fn regular_constant(n: usize, k: f64) -> f64 {
    let nf = n as f64;
    let e = (nf + k - 3.0) / 2.0;
    let b1 = (nf - 1.0) / 2.0;
    let c1 = nf - 1.0;
    let a = 1.0 - k / 2.0;
    2f64.powf(k - 1.0) * gamma_fn(e + 1.0) * gamma_fn(c1) * rgamma(b1) * rgamma(c1 - a + 1.0)
}

/// θ-quadrature of ψ_k with breakpoints graded towards θ = 0 where the
/// integrand peaks for `s` near 1.
pub fn quadrature_psi(n: usize, k: f64, s: f64, rel_tol: f64) -> Result<f64> {
    let ratio = sphere_area(n - 1) / sphere_area(n);
    let d = (1.0 - s).abs();
    let sm = 1.0 - s;
    let integrand = |th: f64| {
        let h = (0.5 * th).sin();
        let h2 = 2.0 * s * h * h;
        let lin = sm + h2;
        let a2 = sm * sm + 2.0 * h2;
        lin * th.sin().powi(n as i32 - 2) * a2.powf(0.5 * (k - 2.0))
    };
    let mut points = vec![0.0];
    if s > 0.0 && d > 0.0 && d < 1.0 {
        let scale = d / s.sqrt();
        let mut p = scale / 64.0;
        while p < std::f64::consts::PI {
            points.push(p);
            p *= 2.0;
        }
    }
    points.push(std::f64::consts::PI);
    let est = adaptive(
        integrand,
        &points,
        AdaptiveOptions { abs_tol: rel_tol * 1e-4 * s.powf(k - 2.0).min(1.0), rel_tol, max_segments: 20_000 },
    )?;
    Ok(ratio * est.value)
}

/// One row of a ψ_k table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PsiRow {
    pub s: f64,
    pub psi: f64,
    pub backend: String,
}

/// Tabulates ψ_k, skipping points where the backend reports an error.
pub fn psi_table(eval: &PsiEvaluator, s_values: &[f64]) -> Vec<PsiRow> {
    s_values
        .iter()
        .filter_map(|&s| eval.psi(s).ok().map(|psi| PsiRow { s, psi, backend: eval.backend().name().to_string() }))
        .collect()
}

/// CSV with header `s,psi,backend`.
pub fn psi_csv(rows: &[PsiRow]) -> String {
    let mut out = String::from("s,psi,backend\n");
    for r in rows {
        out.push_str(&format!("{},{},{}\n", r.s, r.psi, r.backend));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn quad(n: usize, k: f64, s: f64) -> f64 {
        quadrature_psi(n, k, s, 1e-13).unwrap()
    }

    #[test]
    fn psi_at_zero_is_one() {
        for n in [2, 3, 6] {
            for k in [-0.3, -1.5, 1.0 - n as f64 - 0.2, 0.5] {
                if k <= -(n as f64) {
                    continue;
                }
                let ev = PsiEvaluator::new(n, k).unwrap();
                assert!((ev.psi(0.0).unwrap() - 1.0).abs() < 1e-14);
                assert!((quad(n, k, 0.0) - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn newtonian_indicator() {
        let ev = PsiEvaluator::new(3, -1.0).unwrap();
        assert_eq!(ev.psi(0.5).unwrap(), 1.0);
        assert_eq!(ev.psi(2.0).unwrap(), 0.0);
        assert_relative_eq!(quad(3, -1.0, 0.5), 1.0, max_relative = 1e-11);
        assert!(quad(3, -1.0, 2.0).abs() < 1e-11);
    }

    #[test]
    fn corrected_h2_parameters_match_quadrature() {
        let (n, k, s) = (6, -1.5, 0.5);
        let corrected = HypergeometricParams::new(n, k).psi_from_components(n, k, s).unwrap();
        assert_relative_eq!(corrected, quad(n, k, s), max_relative = 1e-10);
        // the reading b2 = b1, c2 = c1 gives a visibly different function
        let literal = HypergeometricParams::with_h2(n, k, 2.5, 5.0).psi_from_components(n, k, s).unwrap();
        assert!((literal - quad(n, k, s)).abs() > 1e-2);
    }

    #[test]
    fn hypergeometric_matches_quadrature_near_and_far() {
        for (n, k) in [(2, -0.3), (3, -2.2), (6, -4.3), (6, -5.0), (6, -5.8), (4, 0.5), (3, 0.0), (6, -3.0)] {
            let ev = PsiEvaluator::new(n, k).unwrap();
            for s in [0.02, 0.3, 0.9, 0.97, 0.999, 1.001, 1.03, 1.2, 3.0, 40.0] {
                let h = ev.psi(s).unwrap();
                let q = quad(n, k, s);
                assert_relative_eq!(h, q, max_relative = 1e-9);
            }
        }
    }

    #[test]
    fn value_at_one_for_super_newtonian() {
        for (n, k) in [(3, -0.5), (6, -3.5), (2, 0.5), (6, -3.0)] {
            let ev = PsiEvaluator::new(n, k).unwrap();
            assert_relative_eq!(ev.psi(1.0).unwrap(), quad(n, k, 1.0), max_relative = 1e-9);
        }
        let ev = PsiEvaluator::new(6, -4.5).unwrap();
        assert!(matches!(ev.psi(1.0), Err(Error::Singular(_))));
    }

    #[test]
    fn far_field_limit() {
        let ev = PsiEvaluator::new(3, -0.5).unwrap();
        assert_relative_eq!(ev.far_field_limit(), 0.5 / 3.0);
        let s: f64 = 1e3;
        let v = s.powf(2.5) * ev.psi(s).unwrap();
        assert!((v - 0.5 / 3.0).abs() < 1e-3);
        let ev = PsiEvaluator::new(3, -1.0).unwrap();
        assert_eq!(ev.far_field_limit(), 0.0);
    }

    #[test]
    fn negative_argument_is_rejected() {
        let ev = PsiEvaluator::new(3, -0.5).unwrap();
        assert!(ev.psi(-0.1).is_err());
        assert!(PsiEvaluator::new(1, -0.5).is_err());
    }

    #[test]
    fn csv_has_header() {
        let ev = PsiEvaluator::new(3, -0.5).unwrap();
        let rows = psi_table(&ev, &[0.0, 0.5, 2.0]);
        let csv = psi_csv(&rows);
        assert!(csv.starts_with("s,psi,backend\n"));
        assert_eq!(csv.lines().count(), 4);
    }
}
