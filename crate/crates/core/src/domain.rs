//! Problem parameters, regime classification, radial grids and densities,
//! and the dilation / self-similar rescaling maps shared by every solver.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{invalid, Error, Result};
use crate::quad::gauss_legendre;

/// Default tolerance on the mass of a probability density.
pub const MASS_TOL: f64 = 1e-10;

/// Variables in which a problem is posed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Frame {
    #[default]
    Original,
    Rescaled,
}

/// A problem instance in the fair-competition regime `N(m-1) + k = 0`.
///
/// The diffusion exponent `m` is always derived from `(N, k)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams", into = "RawParams")]
pub struct Params {
    n: usize,
    k: f64,
    chi: f64,
    frame: Frame,
}

#[derive(Serialize, Deserialize)]
struct RawParams {
    #[serde(rename = "N")]
    n: usize,
    k: f64,
    chi: f64,
    #[serde(default)]
    frame: Frame,
}

impl TryFrom<RawParams> for Params {
    type Error = Error;
    fn try_from(raw: RawParams) -> Result<Self> {
        Params::new(raw.n, raw.k, raw.chi, raw.frame)
    }
}

impl From<Params> for RawParams {
    fn from(p: Params) -> Self {
        RawParams { n: p.n, k: p.k, chi: p.chi, frame: p.frame }
    }
}

impl Params {
    pub fn new(n: usize, k: f64, chi: f64, frame: Frame) -> Result<Self> {
        if n == 0 {
            return Err(invalid("dimension N must be at least 1"));
        }
        let nf = n as f64;
        if !k.is_finite() || k <= -nf || k >= nf {
            return Err(invalid(format!("k = {k} must lie in (-N, N) = (-{n}, {n})")));
        }
        if !chi.is_finite() || chi <= 0.0 {
            return Err(invalid(format!("chi = {chi} must be positive")));
        }
        Ok(Self { n, k, chi, frame })
    }

    /// Like [`Params::new`] but allows `chi = 0` (pure diffusion).
    pub fn without_interaction(n: usize, k: f64, frame: Frame) -> Result<Self> {
        let mut p = Self::new(n, k, 1.0, frame)?;
        p.chi = 0.0;
        Ok(p)
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn dim(&self) -> f64 {
        self.n as f64
    }
    pub fn k(&self) -> f64 {
        self.k
    }
    pub fn chi(&self) -> f64 {
        self.chi
    }
    pub fn frame(&self) -> Frame {
        self.frame
    }

    /// Diffusion exponent `m = 1 - k/N`, exactly 1 for `k = 0`.
    pub fn m(&self) -> f64 {
        if self.k == 0.0 {
            1.0
        } else {
            1.0 - self.k / self.dim()
        }
    }

    pub fn with_chi(&self, chi: f64) -> Result<Self> {
        Self::new(self.n, self.k, chi, self.frame)
    }

    pub fn with_frame(&self, frame: Frame) -> Self {
        Self { frame, ..*self }
    }

    pub fn regime(&self) -> Regime {
        if self.k < 0.0 {
            Regime::PorousMedium
        } else if self.k == 0.0 {
            Regime::Logarithmic
        } else {
            Regime::FastDiffusion
        }
    }

    pub fn sigma(&self) -> f64 {
        sphere_area(self.n)
    }
}

/// Sign class of `k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    PorousMedium,
    Logarithmic,
    FastDiffusion,
}

/// Regime thresholds and the flags derived from them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegimeReport {
    pub regime: Regime,
    pub m: f64,
    pub k_c: f64,
    pub k_star: f64,
    pub k_energy: f64,
    pub stationary_integrable: bool,
    pub kth_moment_finite: bool,
    pub finite_rescaled_energy: bool,
}

/// `k* = -N/2 + sqrt(N^2/4 + 2N)`.
pub fn k_star(n: usize) -> f64 {
    let nf = n as f64;
    -nf / 2.0 + (nf * nf / 4.0 + 2.0 * nf).sqrt()
}

/// `2N / (2 + N)`.
pub fn k_energy(n: usize) -> f64 {
    let nf = n as f64;
    2.0 * nf / (2.0 + nf)
}

pub const K_C: f64 = 2.0;

pub fn classify(params: &Params) -> RegimeReport {
    let k = params.k();
    let ks = k_star(params.n());
    let ke = k_energy(params.n());
    RegimeReport {
        regime: params.regime(),
        m: params.m(),
        k_c: K_C,
        k_star: ks,
        k_energy: ke,
        stationary_integrable: k < K_C,
        kth_moment_finite: k < ks,
        finite_rescaled_energy: k < ke,
    }
}

/// Surface area of the unit sphere in `R^N`, `2 pi^{N/2} / Gamma(N/2)`.
pub fn sphere_area(n: usize) -> f64 {
    match n {
        0 => 0.0,
        1 => 2.0,
        2 => 2.0 * std::f64::consts::PI,
        _ => {
            let h = n as f64 / 2.0;
            2.0 * std::f64::consts::PI.powf(h) / gamma(h)
        }
    }
}

/// `(alpha(t), beta(t))` of the self-similar change of variables.
pub fn rescaling_maps(params: &Params, t: f64) -> Result<(f64, f64)> {
    if t.is_nan() || t < 0.0 {
        return Err(invalid(format!("time t = {t} must be nonnegative")));
    }
    Ok((t.exp(), beta(params.k(), t)))
}

pub(crate) fn beta(k: f64, t: f64) -> f64 {
    let a = 2.0 - k;
    if a == 0.0 {
        t
    } else {
        (a * t).exp_m1() / a
    }
}

/// Inverse of `beta`: the rescaled time reached at original time `tau`.
pub fn beta_inv(params: &Params, tau: f64) -> Result<f64> {
    if tau.is_nan() || tau < 0.0 {
        return Err(invalid(format!("original time tau = {tau} must be nonnegative")));
    }
    let a = 2.0 - params.k();
    if a == 0.0 {
        Ok(tau)
    } else {
        Ok((a * tau).ln_1p() / a)
    }
}

/// Iterate `g^{(n)}(p) = -N + (p + N)/(m-1)^n` of the bootstrap map
/// `g(p) = (p + N + k)/(m - 1)`.
pub fn bootstrap_exponent(p: f64, n: u32, params: &Params) -> Result<f64> {
    if params.k() >= 0.0 {
        return Err(invalid("bootstrap exponent map needs k < 0 (m > 1)"));
    }
    let nf = params.dim();
    if p <= -nf {
        return Err(invalid(format!("exponent p = {p} must exceed -N")));
    }
    let mut x = p;
    let inv = 1.0 / (params.m() - 1.0);
    for _ in 0..n {
        x = -nf + (x + nf) * inv;
    }
    Ok(x)
}

/// Strictly increasing radial nodes with the quadrature weights of
/// `∫ f(r) σ_N r^{N-1} dr` for piecewise-linear `f`.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialGrid {
    n: usize,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl RadialGrid {
    pub fn from_nodes(n: usize, nodes: Vec<f64>) -> Result<Self> {
        if n == 0 {
            return Err(invalid("dimension must be positive"));
        }
        if nodes.len() < 2 {
            return Err(invalid("a radial grid needs at least two nodes"));
        }
        if nodes[0] < 0.0 || nodes.iter().any(|x| !x.is_finite()) {
            return Err(invalid("radial nodes must be finite and nonnegative"));
        }
        if nodes.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("radial nodes must be strictly increasing"));
        }
        let weights = hat_weights(n, &nodes);
        Ok(Self { n, nodes, weights })
    }

    /// `count` equispaced nodes on `[0, r_max]`.
    pub fn uniform(n: usize, r_max: f64, count: usize) -> Result<Self> {
        if count < 2 || r_max <= 0.0 {
            return Err(invalid("uniform grid needs r_max > 0 and at least two nodes"));
        }
        let h = r_max / (count - 1) as f64;
        Self::from_nodes(n, (0..count).map(|i| i as f64 * h).collect())
    }

    /// Nodes starting at 0 with first spacing `h0`, each spacing `ratio`
    /// times the previous one, capped at `h_max`, ending exactly at `r_max`.
    pub fn graded(n: usize, r_max: f64, h0: f64, ratio: f64, h_max: f64) -> Result<Self> {
        if !(r_max > 0.0 && h0 > 0.0 && ratio >= 1.0 && h_max >= h0) {
            return Err(invalid("graded grid needs r_max, h0 > 0, ratio >= 1, h_max >= h0"));
        }
        let mut nodes = vec![0.0];
        let mut h = h0;
        let mut r = 0.0;
        while r + h < r_max {
            r += h;
            nodes.push(r);
            h = (h * ratio).min(h_max);
            if nodes.len() > 1_000_000 {
                return Err(invalid("graded grid would exceed one million nodes"));
            }
        }
        let last = *nodes.last().unwrap();
        if r_max - last < 0.3 * (last - nodes[nodes.len().saturating_sub(2)]) && nodes.len() > 2 {
            nodes.pop();
        }
        nodes.push(r_max);
        Self::from_nodes(n, nodes)
    }

    pub fn dim(&self) -> usize {
        self.n
    }
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
    pub fn len(&self) -> usize {
        self.nodes.len()
    }
    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
    pub fn r_max(&self) -> f64 {
        *self.nodes.last().unwrap()
    }

    /// The grid with every node divided by `lambda`.
    pub fn scaled(&self, lambda: f64) -> Self {
        let nodes: Vec<f64> = self.nodes.iter().map(|r| r / lambda).collect();
        let weights = hat_weights(self.n, &nodes);
        Self { n: self.n, nodes, weights }
    }
}

fn hat_weights(n: usize, nodes: &[f64]) -> Vec<f64> {
    let sigma = sphere_area(n);
    let mut w = vec![0.0; nodes.len()];
    let rule = gauss_legendre(n / 2 + 2);
    for j in 0..nodes.len() - 1 {
        let (a, b) = (nodes[j], nodes[j + 1]);
        let h = b - a;
        for (x, wx) in rule.mapped(a, b) {
            let jac = sigma * x.powi(n as i32 - 1) * wx;
            let t = (x - a) / h;
            w[j] += (1.0 - t) * jac;
            w[j + 1] += t * jac;
        }
    }
    w
}

/// A nonnegative radial profile sampled on a [`RadialGrid`] and interpolated
/// linearly between nodes; it vanishes beyond the last node.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialDensity {
    grid: Arc<RadialGrid>,
    values: Vec<f64>,
    monotone: bool,
}

impl RadialDensity {
    pub fn new(grid: Arc<RadialGrid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(invalid(format!("{} values for a grid of {} nodes", values.len(), grid.len())));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(invalid("density values must be finite and nonnegative"));
        }
        let monotone = values.windows(2).all(|w| w[0] >= w[1]);
        Ok(Self { grid, values, monotone })
    }

    /// Samples `f` at the grid nodes.
    pub fn from_fn(grid: Arc<RadialGrid>, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values = grid.nodes().iter().map(|&r| f(r)).collect();
        Self::new(grid, values)
    }

    pub fn grid(&self) -> &Arc<RadialGrid> {
        &self.grid
    }
    pub fn dim(&self) -> usize {
        self.grid.dim()
    }
    pub fn nodes(&self) -> &[f64] {
        self.grid.nodes()
    }
    pub fn weights(&self) -> &[f64] {
        self.grid.weights()
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn sigma(&self) -> f64 {
        sphere_area(self.dim())
    }
    /// True when the values are non-increasing in `r`.
    pub fn is_monotone(&self) -> bool {
        self.monotone
    }

    pub fn mass(&self) -> f64 {
        self.weights().iter().zip(&self.values).map(|(w, v)| w * v).sum()
    }

    /// `∫ g(ρ(r)) dx` using the nodal weights.
    pub fn integrate_values(&self, g: impl Fn(f64) -> f64) -> f64 {
        self.weights().iter().zip(&self.values).map(|(w, &v)| w * g(v)).sum()
    }

    /// `∫ |x|^p ρ(x) dx` with the linear interpolant integrated cell by cell.
    pub fn moment(&self, p: f64) -> f64 {
        let n = self.dim() as i32;
        let sigma = self.sigma();
        let rule = gauss_legendre(8);
        let r = self.nodes();
        let mut total = 0.0;
        for j in 0..r.len() - 1 {
            let (a, b) = (r[j], r[j + 1]);
            let (va, vb) = (self.values[j], self.values[j + 1]);
            if va == 0.0 && vb == 0.0 {
                continue;
            }
            if a == 0.0 && p + f64::from(n - 1) < 2.0 {
                // graded substitution x = b u^2 absorbs the weak singularity at 0
                for (u, wu) in rule.mapped(0.0, 1.0) {
                    let x = b * u * u;
                    let v = va + (vb - va) * u * u;
                    total += wu * 2.0 * b * u * x.powf(p) * x.powi(n - 1) * v;
                }
            } else {
                for (x, wx) in rule.mapped(a, b) {
                    let t = (x - a) / (b - a);
                    total += wx * x.powf(p) * x.powi(n - 1) * (va + (vb - va) * t);
                }
            }
        }
        sigma * total
    }

    pub fn second_moment(&self) -> f64 {
        self.moment(2.0)
    }

    /// `∫ ρ^q dx` with nodal weights.
    pub fn lq_norm_pow(&self, q: f64) -> f64 {
        self.integrate_values(|v| if v > 0.0 { v.powf(q) } else { 0.0 })
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().cloned().fold(0.0, f64::max)
    }

    /// Linear interpolation at radius `r`; zero beyond the last node.
    pub fn value_at(&self, r: f64) -> f64 {
        let nodes = self.nodes();
        let r = r.abs();
        if r > self.grid.r_max() {
            return 0.0;
        }
        let j = match nodes.partition_point(|&x| x <= r) {
            0 => return self.values[0],
            j => j - 1,
        };
        if j + 1 >= nodes.len() {
            return self.values[nodes.len() - 1];
        }
        let t = (r - nodes[j]) / (nodes[j + 1] - nodes[j]);
        self.values[j] + t * (self.values[j + 1] - self.values[j])
    }

    /// Mass inside the ball of radius `r`, with the interpolant integrated exactly.
    pub fn mass_within(&self, r: f64) -> f64 {
        let nodes = self.nodes();
        let n = self.dim() as i32;
        let rule = gauss_legendre(n as usize / 2 + 2);
        let mut total = 0.0;
        for j in 0..nodes.len() - 1 {
            let (a, b) = (nodes[j], nodes[j + 1].min(r));
            if b <= a {
                break;
            }
            for (x, wx) in rule.mapped(a, b) {
                total += wx * x.powi(n - 1) * self.value_at(x);
            }
        }
        self.sigma() * total
    }

    /// Same density scaled to unit mass.
    pub fn normalized(&self) -> Result<Self> {
        let mass = self.mass();
        if !(mass > 0.0 && mass.is_finite()) {
            return Err(invalid("cannot normalize a density with zero or infinite mass"));
        }
        self.with_values(self.values.iter().map(|v| v / mass).collect())
    }

    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::new(self.grid.clone(), values)
    }

    /// Checks `|mass - 1| <= tol`.
    pub fn check_probability(&self, tol: f64) -> Result<()> {
        let mass = self.mass();
        if (mass - 1.0).abs() > tol {
            return Err(Error::Domain(format!("mass {mass} differs from 1 by more than {tol:e}")));
        }
        Ok(())
    }
}

/// Mass-preserving dilation `ρ_λ(x) = λ^N ρ(λ x)`.
pub fn dilate(rho: &RadialDensity, lambda: f64) -> Result<RadialDensity> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(invalid(format!("dilation factor {lambda} must be positive")));
    }
    if lambda == 1.0 {
        return Ok(rho.clone());
    }
    let scale = lambda.powi(rho.dim() as i32);
    let grid = Arc::new(rho.grid().scaled(lambda));
    RadialDensity::new(grid, rho.values().iter().map(|v| v * scale).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn ball(n: usize) -> RadialDensity {
        let grid = Arc::new(RadialGrid::uniform(n, 2.0, 401).unwrap());
        let vol = sphere_area(n) / n as f64;
        RadialDensity::from_fn(grid, |r| if r <= 1.0 { 1.0 / vol } else { 0.0 }).unwrap()
    }

    #[test]
    fn classify_examples() {
        let p = Params::new(1, -0.5, 1.0, Frame::Original).unwrap();
        let rep = classify(&p);
        assert_eq!(rep.regime, Regime::PorousMedium);
        assert_eq!(rep.m, 1.5);

        let p = Params::new(2, 0.5, 1.0, Frame::Rescaled).unwrap();
        assert_relative_eq!(classify(&p).k_star, 5f64.sqrt() - 1.0, max_relative = 1e-14);

        let p = Params::new(1, 0.95, 0.8, Frame::Rescaled).unwrap();
        let rep = classify(&p);
        assert_eq!(rep.regime, Regime::FastDiffusion);
        assert_relative_eq!(rep.k_energy, 2.0 / 3.0);
        assert!(!rep.finite_rescaled_energy);
    }

    #[test]
    fn logarithmic_case_has_unit_m() {
        let p = Params::new(3, 0.0, 1.0, Frame::Original).unwrap();
        assert_eq!(p.m(), 1.0);
        assert_eq!(p.regime(), Regime::Logarithmic);
    }

    #[test]
    fn params_reject_out_of_range() {
        assert!(Params::new(0, 0.0, 1.0, Frame::Original).is_err());
        assert!(Params::new(2, 2.0, 1.0, Frame::Original).is_err());
        assert!(Params::new(2, -2.0, 1.0, Frame::Original).is_err());
        assert!(Params::new(2, 0.5, 0.0, Frame::Original).is_err());
    }

    #[test]
    fn sphere_areas() {
        assert_relative_eq!(sphere_area(3), 4.0 * std::f64::consts::PI, max_relative = 1e-14);
        assert_relative_eq!(sphere_area(4), 2.0 * std::f64::consts::PI.powi(2), max_relative = 1e-14);
    }

    #[test]
    fn rescaling_examples() {
        let p = Params::new(3, 0.5, 1.0, Frame::Original).unwrap();
        assert_eq!(rescaling_maps(&p, 0.0).unwrap(), (1.0, 0.0));
        let (_, b) = rescaling_maps(&p, 1.0).unwrap();
        assert!((beta_inv(&p, b).unwrap() - 1.0).abs() < 1e-12);
        let p2 = Params::new(3, 2.0, 1.0, Frame::Original).unwrap();
        assert_eq!(rescaling_maps(&p2, 3.0).unwrap().1, 3.0);
    }

    #[test]
    fn bootstrap_examples() {
        let p = Params::new(1, -0.5, 1.0, Frame::Original).unwrap();
        let p0 = -2.0 / 3.0;
        assert_eq!(bootstrap_exponent(p0, 0, &p).unwrap(), p0);
        assert_relative_eq!(bootstrap_exponent(p0, 1, &p).unwrap(), -1.0 / 3.0, max_relative = 1e-14);
        assert_relative_eq!(bootstrap_exponent(p0, 4, &p).unwrap(), 13.0 / 3.0, max_relative = 1e-14);
        let fd = Params::new(1, 0.5, 1.0, Frame::Original).unwrap();
        assert!(bootstrap_exponent(p0, 1, &fd).is_err());
    }

    #[test]
    fn ball_mass_is_exact_for_linear_interpolant() {
        for n in 1..=4 {
            let rho = ball(n);
            // the interpolant is exact except on the cell straddling r = 1
            assert_relative_eq!(rho.mass(), 1.0, max_relative = 1e-2);
            let lin = RadialDensity::from_fn(rho.grid().clone(), |r| 2.0 - r).unwrap();
            let exact =
                sphere_area(n) * (2.0 * 2f64.powi(n as i32) / n as f64 - 2f64.powi(n as i32 + 1) / (n as f64 + 1.0));
            assert_relative_eq!(lin.mass(), exact, max_relative = 1e-13);
        }
    }

    #[test]
    fn dilation_identity_and_mass() {
        let rho = ball(2);
        assert_eq!(dilate(&rho, 1.0).unwrap(), rho);
        assert_relative_eq!(dilate(&rho, 2.0).unwrap().mass(), rho.mass(), max_relative = 1e-14);
        assert!(dilate(&rho, 0.0).is_err());
        assert!(dilate(&rho, -1.0).is_err());
    }

    #[test]
    fn graded_grid_reaches_r_max() {
        let g = RadialGrid::graded(1, 10.0, 1e-3, 1.05, 0.1).unwrap();
        assert_eq!(g.r_max(), 10.0);
        assert_eq!(g.nodes()[0], 0.0);
        let h: Vec<f64> = g.nodes().windows(2).map(|w| w[1] - w[0]).collect();
        assert!(h.iter().all(|&d| d <= 0.1 + 1e-12));
    }

    proptest! {
        #[test]
        fn fair_competition_constraint(n in 1usize..8, frac in -0.99f64..0.99) {
            let k = frac * n as f64;
            let p = Params::new(n, k, 1.0, Frame::Original).unwrap();
            prop_assert!((p.dim() * (p.m() - 1.0) + k).abs() < 1e-14);
        }

        #[test]
        fn dilation_composes(a in 0.2f64..5.0, b in 0.2f64..5.0, n in 1usize..4) {
            let rho = ball(n);
            let lhs = dilate(&dilate(&rho, a).unwrap(), b).unwrap();
            let rhs = dilate(&rho, a * b).unwrap();
            for (x, y) in lhs.nodes().iter().zip(rhs.nodes()) {
                prop_assert!((x - y).abs() <= 1e-14 * x.abs().max(1.0));
            }
            for (x, y) in lhs.values().iter().zip(rhs.values()) {
                prop_assert!((x - y).abs() <= 1e-13 * x.abs().max(1.0));
            }
        }

        #[test]
        fn bootstrap_recursion(n in 0u32..6, p in -0.9f64..3.0, k in -0.95f64..-0.05) {
            let params = Params::new(1, k, 1.0, Frame::Original).unwrap();
            let gn = bootstrap_exponent(p, n, &params).unwrap();
            let g = |x: f64| (x + 1.0 + k) / (params.m() - 1.0);
            let next = bootstrap_exponent(p, n + 1, &params).unwrap();
            prop_assert!((g(gn) - next).abs() <= 1e-12 * next.abs().max(1.0));
        }

        #[test]
        fn beta_round_trip(k in -2.9f64..2.9, t in 0.0f64..3.0) {
            let p = Params::new(3, k, 1.0, Frame::Original).unwrap();
            let (_, b) = rescaling_maps(&p, t).unwrap();
            prop_assert!((beta_inv(&p, b).unwrap() - t).abs() < 1e-10);
        }
    }

    #[test]
    fn threshold_ordering() {
        for n in 2..=10 {
            let ks = k_star(n);
            assert!(k_energy(n) < ks && ks < 2.0 && ks >= 1.0, "N = {n}");
        }
    }
}
