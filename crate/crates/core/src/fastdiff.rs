//! Rescaled stationary states in the fast-diffusion regime `0 < k < N`.
//!
//! Stationary states solve `ρ = (A W_k∗ρ + B|x|² + C)^{-N/k}` with
//! `A = 2χNk/(N-k)`, `B = Nk/(2(N-k))` and `C` fixed by unit mass. They are
//! computed by damped iteration of that map on a radial grid truncated where
//! the upper envelope has negligible tail mass.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::domain::{k_star, sphere_area, Frame, Params, RadialDensity, RadialGrid, MASS_TOL};
use crate::energy::{profile_mass, riesz_moment, EnergyBreakdown, EnergyEvaluator};
use crate::error::{invalid, Error, Result};
use crate::quad::{adaptive, AdaptiveOptions};

/// Settings of the fixed-point iteration.
#[derive(Debug, Clone)]
pub struct TOperatorConfig {
    params: Params,
    a: f64,
    b: f64,
    grid: Arc<RadialGrid>,
    pub fp_tol: f64,
    pub max_iter: usize,
    /// Damping used when the undamped iteration stops contracting.
    pub relaxation: f64,
    /// Mass tolerance when solving for `C`.
    pub mass_tol: f64,
}

/// Grid parameters for [`TOperatorConfig::with_default_grid`].
#[derive(Debug, Clone, Copy)]
pub struct GridSpec {
    /// Tail mass of the upper envelope allowed beyond the truncation radius.
    pub tail_mass: f64,
    pub h0: f64,
    pub ratio: f64,
    /// Largest cell width relative to the truncation radius.
    pub h_max_frac: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { tail_mass: 1e-8, h0: 1e-4, ratio: 1.04, h_max_frac: 0.05 }
    }
}

impl TOperatorConfig {
    pub fn new(params: Params, grid: Arc<RadialGrid>) -> Result<Self> {
        let k = params.k();
        if !(k > 0.0) {
            return Err(invalid("the fixed-point operator needs k > 0"));
        }
        if grid.dim() != params.n() {
            return Err(invalid("grid dimension does not match N"));
        }
        let n = params.dim();
        let a = 2.0 * params.chi() * n * k / (n - k);
        let b = n * k / (2.0 * (n - k));
        Ok(Self {
            params: params.with_frame(Frame::Rescaled),
            a,
            b,
            grid,
            fp_tol: 1e-10,
            max_iter: 5000,
            relaxation: 0.5,
            mass_tol: 1e-12,
        })
    }

    /// Geometric grid from `h0` out to [`truncation_radius`].
    pub fn with_default_grid(params: Params, spec: GridSpec) -> Result<Self> {
        let r_max = truncation_radius(&params, spec.tail_mass)?;
        let grid = RadialGrid::graded(params.n(), r_max, spec.h0, spec.ratio, spec.h_max_frac * r_max)?;
        Self::new(params, Arc::new(grid))
    }

    pub fn a(&self) -> f64 {
        self.a
    }
    pub fn b(&self) -> f64 {
        self.b
    }
    pub fn params(&self) -> &Params {
        &self.params
    }
    pub fn grid(&self) -> &Arc<RadialGrid> {
        &self.grid
    }
    pub fn truncation_radius(&self) -> f64 {
        self.grid.r_max()
    }
}

/// Radius beyond which `∫ (B|x|²)^{-N/k} dx < tail_mass`.
pub fn truncation_radius(params: &Params, tail_mass: f64) -> Result<f64> {
    let n = params.dim();
    let k = params.k();
    if k >= 2.0 {
        return Err(Error::NonIntegrable(format!("tails (B|x|²)^(-N/k) are not integrable for k = {k} >= 2")));
    }
    let b = n * k / (2.0 * (n - k));
    let p = 2.0 * n / k - n;
    // σ B^{-N/k} R^{-p} / p = tail_mass
    let r = (sphere_area(params.n()) * b.powf(-n / k) / (p * tail_mass)).powf(1.0 / p);
    Ok(r)
}

fn radial_integral(n: usize, f: impl Fn(f64) -> f64) -> Result<f64> {
    let sigma = sphere_area(n);
    let pw = n as i32 - 1;
    let opts = AdaptiveOptions { abs_tol: 0.0, rel_tol: 1e-13, max_segments: 20_000 };
    let pts: Vec<f64> = std::iter::once(0.0).chain((-12..=0).map(|e| 10f64.powi(e))).collect();
    let inner = adaptive(|r| f(r) * r.powi(pw), &pts, opts)?;
    // r = 1/t on [1, ∞)
    let outer = adaptive(
        |t| {
            if t == 0.0 {
                0.0
            } else {
                let r = 1.0 / t;
                f(r) * r.powi(pw) / (t * t)
            }
        },
        &pts,
        opts,
    )?;
    Ok(sigma * (inner.value + outer.value))
}

/// `w(α) = ∫ (α + A|x|^k/k + B|x|²)^{-N/k} dx`.
pub fn w_lower(config: &TOperatorConfig, alpha: f64) -> Result<f64> {
    let (a, b) = (config.a, config.b);
    let k = config.params.k();
    let e = -config.params.dim() / k;
    radial_integral(config.params.n(), |r| (alpha + a * r.powf(k) / k + b * r * r).powf(e))
}

/// `W(α) = ∫ (α + B|x|²)^{-N/k} dx`.
pub fn w_upper(config: &TOperatorConfig, alpha: f64) -> Result<f64> {
    let b = config.b;
    let e = -config.params.dim() / config.params.k();
    radial_integral(config.params.n(), |r| (alpha + b * r * r).powf(e))
}

fn solve_decreasing(f: impl Fn(f64) -> Result<f64>, target: f64) -> Result<f64> {
    let (mut lo, mut hi) = (1.0, 1.0);
    while f(lo)? <= target {
        lo *= 0.5;
        if lo < 1e-300 {
            return Err(Error::Consistency("no lower bracket for δ".into()));
        }
    }
    while f(hi)? >= target {
        hi *= 2.0;
        if hi > 1e300 {
            return Err(Error::Consistency("no upper bracket for δ".into()));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid)? > target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-14 * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// `(δ̲, δ̄)` with `w(δ̲) = 1` and `W(δ̄) = 1`.
pub fn delta_bounds(config: &TOperatorConfig) -> Result<(f64, f64)> {
    let k = config.params.k();
    if k >= 2.0 {
        return Err(Error::NonIntegrable(format!("w(α) diverges for k = {k} >= 2: (B|x|²)^(-N/k) is not integrable")));
    }
    let lower = solve_decreasing(|a| w_lower(config, a), 1.0)?;
    let upper = solve_decreasing(|a| w_upper(config, a), 1.0)?;
    Ok((lower, upper))
}

/// Lower and upper envelopes `m(r)`, `M(r)`.
pub fn envelope(config: &TOperatorConfig, deltas: (f64, f64), r: f64) -> (f64, f64) {
    let k = config.params.k();
    let e = -config.params.dim() / k;
    let lower = (deltas.1 + config.a * r.powf(k) / k + config.b * r * r).powf(e);
    let upper = (deltas.0 + config.b * r * r).powf(e);
    (lower, upper)
}

/// Output of one application of the operator.
#[derive(Debug, Clone)]
pub struct TStep {
    pub density: RadialDensity,
    pub c_const: f64,
    pub i_k: f64,
}

/// Finds `C` in `[δ̲ - A I_k, δ̄ - A I_k]` with unit mass.
fn solve_c(config: &TOperatorConfig, base: &[f64], deltas: (f64, f64), i_k: f64) -> Result<f64> {
    let k = config.params.k();
    let grid = &config.grid;
    let mass = |c: f64| profile_mass(grid, base, k, c);
    let slack = 1e-6 * (deltas.1 - deltas.0).abs().max(deltas.0);
    let mut lo = deltas.0 - config.a * i_k - slack;
    let mut hi = deltas.1 - config.a * i_k + slack;
    let bmin = base.iter().cloned().fold(f64::INFINITY, f64::min);
    lo = lo.max(-bmin * (1.0 - 1e-15) + f64::MIN_POSITIVE);
    let (mlo, mhi) = (mass(lo), mass(hi));
    if !(mlo >= 1.0 && mhi <= 1.0) {
        return Err(Error::Consistency(format!(
            "mass is not bracketed by the δ bounds: M(C_lo = {lo}) = {mlo}, M(C_hi = {hi}) = {mhi}"
        )));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let m = mass(mid);
        if (m - 1.0).abs() <= config.mass_tol {
            return Ok(mid);
        }
        if m > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-16 * hi.abs().max(lo.abs()) {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// One application of `T` using a cached evaluator.
pub fn apply_t_with(
    config: &TOperatorConfig,
    evaluator: &EnergyEvaluator,
    rho: &RadialDensity,
    deltas: (f64, f64),
) -> Result<TStep> {
    let k = config.params.k();
    let e = -config.params.dim() / k;
    let pot = evaluator.potential(rho)?;
    let base: Vec<f64> = rho.nodes().iter().zip(&pot).map(|(&r, &p)| config.a * p + config.b * r * r).collect();
    let i_k = riesz_moment(rho, k);
    let c = solve_c(config, &base, deltas, i_k)?;
    let values: Vec<f64> = base.iter().map(|&b| (b + c).powf(e)).collect();
    let density = RadialDensity::new(rho.grid().clone(), values)?;
    Ok(TStep { density, c_const: c, i_k })
}

/// One application of `T`.
pub fn apply_t(rho: &RadialDensity, config: &TOperatorConfig) -> Result<TStep> {
    let ev = EnergyEvaluator::new(config.params, config.grid.clone())?;
    let deltas = delta_bounds(config)?;
    apply_t_with(config, &ev, rho, deltas)
}

/// Result of [`solve_stationary`].
#[derive(Debug, Clone, Serialize)]
pub struct FixedPointReport {
    #[serde(skip)]
    pub density: RadialDensity,
    pub c_const: f64,
    pub delta_lower: f64,
    pub delta_upper: f64,
    pub iterations: usize,
    pub final_residual: f64,
    pub converged: bool,
    pub envelope_ok: bool,
    /// Largest relative envelope violation over the nodes (0 when none).
    pub envelope_violation: f64,
    pub delta_sandwich_ok: bool,
    pub i_k: f64,
    pub max_density: f64,
    pub relaxation: f64,
    pub truncation_radius: f64,
    /// Upper bound on `∫_{|x|>R} ρ^m` from the upper envelope.
    pub entropy_tail_bound: f64,
    pub energy: EnergyBreakdown,
    pub el_residual: f64,
    pub residual_history: Vec<f64>,
    pub warnings: Vec<String>,
}

/// Largest relative violation of `m ≤ ρ ≤ M` over the nodes.
pub fn envelope_violation(config: &TOperatorConfig, deltas: (f64, f64), rho: &RadialDensity) -> f64 {
    rho.nodes()
        .iter()
        .zip(rho.values())
        .map(|(&r, &v)| {
            let (lo, hi) = envelope(config, deltas, r);
            ((lo - v) / lo).max((v - hi) / hi).max(0.0)
        })
        .fold(0.0, f64::max)
}

/// Relative tolerance for the envelope and δ checks, covering quadrature error.
pub const ENVELOPE_TOL: f64 = 1e-6;

fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Damped fixed-point iteration of `T` from `initial`.
pub fn solve_stationary(initial: &RadialDensity, config: &TOperatorConfig) -> Result<FixedPointReport> {
    let p = config.params;
    let k = p.k();
    let mut warnings = Vec::new();
    if k > 1.0 {
        warnings.push(format!("k = {k} > 1 lies outside the range covered by the existence theorem"));
    }
    if k >= k_star(p.n()) {
        warnings.push(format!("k = {k} >= k* = {}: stationary states have unbounded k-th moment", k_star(p.n())));
    }
    if !Arc::ptr_eq(initial.grid(), &config.grid) && initial.nodes() != config.grid.nodes() {
        return Err(invalid("initial density must live on the configured grid"));
    }
    let ev = EnergyEvaluator::new(p, config.grid.clone())?;
    let deltas = delta_bounds(config)?;
    let mut rho = initial.normalized()?;
    let mut theta: f64 = 1.0;
    let mut history: Vec<f64> = Vec::new();
    let mut last = apply_t_with(config, &ev, &rho, deltas)?;
    let mut iterations = 0;
    let mut converged = false;
    let mut residual = f64::INFINITY;
    let mut sandwich_ok = true;
    while iterations < config.max_iter {
        let scale = rho.max_value().max(last.density.max_value());
        residual = sup_diff(last.density.values(), rho.values()) / scale;
        history.push(residual);
        let s = config.a * last.i_k + last.c_const;
        let tol = ENVELOPE_TOL * deltas.1;
        sandwich_ok &= s >= deltas.0 - tol && s <= deltas.1 + tol;
        if residual <= config.fp_tol {
            converged = true;
            break;
        }
        // damp once the undamped residual stops decreasing
        let h = history.len();
        if theta == 1.0 && h >= 3 && history[h - 1] > 0.9 * history[h - 3] {
            theta = config.relaxation;
        }
        let values: Vec<f64> = rho
            .values()
            .iter()
            .zip(last.density.values())
            .map(|(&old, &new)| (1.0 - theta) * old + theta * new)
            .collect();
        rho = rho.with_values(values)?;
        let mass = rho.mass();
        if (mass - 1.0).abs() > MASS_TOL {
            rho = rho.normalized()?;
        }
        last = apply_t_with(config, &ev, &rho, deltas)?;
        iterations += 1;
    }
    // report on the last image of T, which carries the envelope
    let density = last.density.clone();
    let violation = envelope_violation(config, deltas, &density);
    let energy = ev.breakdown(&density)?;
    let el = ev.el_residual(&density)?;
    let n = p.dim();
    let m = p.m();
    let r_max = config.truncation_radius();
    let q = 2.0 * n * m / k - n;
    let entropy_tail_bound =
        if q > 0.0 { sphere_area(p.n()) * config.b.powf(-n * m / k) * r_max.powf(-q) / q } else { f64::INFINITY };
    let keep = history.len().saturating_sub(10);
    Ok(FixedPointReport {
        max_density: density.max_value(),
        density,
        c_const: last.c_const,
        delta_lower: deltas.0,
        delta_upper: deltas.1,
        iterations,
        final_residual: residual,
        converged,
        envelope_ok: violation <= ENVELOPE_TOL,
        envelope_violation: violation,
        delta_sandwich_ok: sandwich_ok,
        i_k: last.i_k,
        relaxation: theta,
        truncation_radius: r_max,
        entropy_tail_bound,
        energy,
        el_residual: el.sup_residual,
        residual_history: history[keep..].to_vec(),
        warnings,
    })
}

/// Which existence statement applies in the fast-diffusion regime.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Diagnosis {
    /// No radial non-increasing stationary states in original variables.
    OriginalVariablesNone,
    /// `k >= 2`: none in rescaled variables either.
    RescaledNone,
    /// `k* <= k < 2`: rescaled stationary states would have unbounded k-th moment.
    RescaledUnboundedKMoment,
    /// `0 < k <= 1`: rescaled stationary states exist.
    RescaledExists,
    /// `1 < k < k*`: not settled.
    RescaledOpen,
}

pub fn check_nonexistence(params: &Params) -> Result<Diagnosis> {
    let k = params.k();
    if !(k > 0.0) {
        return Err(invalid("nonexistence diagnosis applies to k > 0"));
    }
    Ok(match params.frame() {
        Frame::Original => Diagnosis::OriginalVariablesNone,
        Frame::Rescaled if k >= 2.0 => Diagnosis::RescaledNone,
        Frame::Rescaled if k >= k_star(params.n()) => Diagnosis::RescaledUnboundedKMoment,
        Frame::Rescaled if k <= 1.0 => Diagnosis::RescaledExists,
        Frame::Rescaled => Diagnosis::RescaledOpen,
    })
}
