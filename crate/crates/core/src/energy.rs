//! Free energies, first variations, Euler–Lagrange residuals and the
//! critical interaction strength.
//!
//! For `k < 0` the sharp constant of the inequality
//! `|∬ f |x-y|^k f| <= C_* ‖f‖_1^{(N+k)/N} ‖f‖_m^m` gives `χ_c = 1 / C_*`.
//! Only lower bounds on `C_*` can be produced from trial densities.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::domain::{Frame, Params, RadialDensity, RadialGrid};
use crate::error::{invalid, Error, Result};
use crate::kernel::{potential_at, ConvolutionMatrix};
use crate::quad::gauss_legendre;

/// Relative threshold below which a node counts as outside the support.
pub const SUPPORT_THRESHOLD: f64 = 1e-8;

/// Terms of the free energy for one density.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub entropy: f64,
    pub interaction: f64,
    /// `V/2`; zero in the original frame.
    pub confinement: f64,
    pub total: f64,
    /// `∫ W_k(x) ρ(x) dx`.
    pub kth_moment: f64,
    pub chi: f64,
    pub k: f64,
    #[serde(rename = "N")]
    pub n: usize,
    pub frame: Frame,
}

impl EnergyBreakdown {
    /// Entropy plus interaction, without the confinement.
    pub fn original_total(&self) -> f64 {
        self.entropy + self.chi * self.interaction
    }
}

/// `U_m[ρ]`, with `(1/N) ∫ ρ log ρ` at `m = 1`.
pub fn entropy(rho: &RadialDensity, params: &Params) -> f64 {
    let n = params.dim();
    let m = params.m();
    if params.k() == 0.0 {
        rho.integrate_values(|v| if v > 0.0 { v * v.ln() } else { 0.0 }) / n
    } else {
        rho.lq_norm_pow(m) / (n * (m - 1.0))
    }
}

/// `∫ W_k(x) ρ(x) dx`, including the logarithmic case.
pub fn riesz_moment(rho: &RadialDensity, k: f64) -> f64 {
    if k != 0.0 {
        return rho.moment(k) / k;
    }
    let n = rho.dim() as i32;
    let rule = gauss_legendre(12);
    let r = rho.nodes();
    let vals = rho.values();
    let mut total = 0.0;
    for j in 0..r.len() - 1 {
        let (a, b) = (r[j], r[j + 1]);
        let (va, vb) = (vals[j], vals[j + 1]);
        if va == 0.0 && vb == 0.0 {
            continue;
        }
        if a == 0.0 {
            // x = b u^2 tames the logarithm at the origin
            for (u, wu) in rule.mapped(0.0, 1.0) {
                let x = b * u * u;
                let v = va + (vb - va) * u * u;
                total += wu * 2.0 * b * u * x.ln() * x.powi(n - 1) * v;
            }
        } else {
            for (x, wx) in rule.mapped(a, b) {
                let t = (x - a) / (b - a);
                total += wx * x.ln() * x.powi(n - 1) * (va + (vb - va) * t);
            }
        }
    }
    rho.sigma() * total
}

fn check_grid(rho: &RadialDensity, grid: &Arc<RadialGrid>) -> Result<()> {
    if !Arc::ptr_eq(rho.grid(), grid) && rho.nodes() != grid.nodes() {
        return Err(invalid("density is not defined on the evaluator grid"));
    }
    Ok(())
}

/// Energy functionals on a fixed grid, with the convolution matrix cached.
#[derive(Debug, Clone)]
pub struct EnergyEvaluator {
    params: Params,
    grid: Arc<RadialGrid>,
    matrix: ConvolutionMatrix,
}

impl EnergyEvaluator {
    pub fn new(params: Params, grid: Arc<RadialGrid>) -> Result<Self> {
        if grid.dim() != params.n() {
            return Err(invalid(format!("grid dimension {} does not match N = {}", grid.dim(), params.n())));
        }
        let matrix = ConvolutionMatrix::new(&grid, params.k())?;
        Ok(Self { params, grid, matrix })
    }

    /// Reuses the matrix for another interaction strength or frame.
    pub fn with_params(&self, params: Params) -> Result<Self> {
        if params.n() != self.params.n() || params.k() != self.params.k() {
            return Err(invalid("only chi and frame may change on a cached evaluator"));
        }
        Ok(Self { params, ..self.clone() })
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn grid(&self) -> &Arc<RadialGrid> {
        &self.grid
    }

    pub fn matrix(&self) -> &ConvolutionMatrix {
        &self.matrix
    }

    /// `W_k ∗ ρ` at the grid nodes.
    pub fn potential(&self, rho: &RadialDensity) -> Result<Vec<f64>> {
        check_grid(rho, &self.grid)?;
        Ok(self.matrix.apply(rho.values()))
    }

    /// `W_k[ρ] = ∬ W_k(x-y) ρ(x) ρ(y) dx dy`.
    pub fn interaction(&self, rho: &RadialDensity) -> Result<f64> {
        let pot = self.potential(rho)?;
        Ok(weighted_dot(rho, &pot))
    }

    pub fn breakdown(&self, rho: &RadialDensity) -> Result<EnergyBreakdown> {
        let p = &self.params;
        let entropy = entropy(rho, p);
        let interaction = self.interaction(rho)?;
        let confinement = match p.frame() {
            Frame::Original => 0.0,
            Frame::Rescaled => 0.5 * rho.second_moment(),
        };
        let total = entropy + p.chi() * interaction + confinement;
        if !total.is_finite() {
            return Err(Error::Numerical(format!("free energy is not finite: {total}")));
        }
        Ok(EnergyBreakdown {
            entropy,
            interaction,
            confinement,
            total,
            kth_moment: riesz_moment(rho, p.k()),
            chi: p.chi(),
            k: p.k(),
            n: p.n(),
            frame: p.frame(),
        })
    }

    /// First variation at the nodes; `None` where it is undefined (`ρ = 0`, `m <= 1`).
    pub fn first_variation(&self, rho: &RadialDensity) -> Result<Vec<Option<f64>>> {
        let pot = self.potential(rho)?;
        Ok(rho
            .nodes()
            .iter()
            .zip(rho.values())
            .zip(&pot)
            .map(|((&r, &v), &phi)| first_variation_value(&self.params, r, v, phi).ok())
            .collect())
    }

    /// Euler–Lagrange residual of a radial non-increasing density.
    pub fn el_residual(&self, rho: &RadialDensity) -> Result<ElResidual> {
        let pot = self.potential(rho)?;
        el_residual_from_potential(rho, &pot, &self.params, || self.breakdown(rho))
    }

    /// `|∬ ρ |x-y|^k ρ| / (‖ρ‖_1^{(N+k)/N} ‖ρ‖_m^m)`.
    pub fn hls_ratio(&self, rho: &RadialDensity) -> Result<f64> {
        hls_ratio_parts(rho, self.interaction(rho)?, &self.params)
    }
}

fn weighted_dot(rho: &RadialDensity, g: &[f64]) -> f64 {
    rho.weights().iter().zip(rho.values()).zip(g).map(|((w, v), p)| w * v * p).sum()
}

fn first_variation_value(params: &Params, r: f64, value: f64, potential: f64) -> Result<f64> {
    let n = params.dim();
    let m = params.m();
    let diffusion = if params.k() == 0.0 {
        if value <= 0.0 {
            return Err(Error::Domain(format!("log ρ undefined at r = {r}")));
        }
        (value.ln() + 1.0) / n
    } else if m < 1.0 {
        if value <= 0.0 {
            return Err(Error::Domain(format!("ρ^(m-1) undefined at r = {r} for m < 1")));
        }
        m / (n * (m - 1.0)) * value.powf(m - 1.0)
    } else {
        m / (n * (m - 1.0)) * value.max(0.0).powf(m - 1.0)
    };
    let conf = match params.frame() {
        Frame::Original => 0.0,
        Frame::Rescaled => 0.5 * r * r,
    };
    Ok(diffusion + 2.0 * params.chi() * potential + conf)
}

/// Free energy with a freshly built convolution matrix.
pub fn free_energy(rho: &RadialDensity, params: &Params) -> Result<EnergyBreakdown> {
    EnergyEvaluator::new(*params, rho.grid().clone())?.breakdown(rho)
}

/// `T_k[ρ](r)`, plus `r²/2` in the rescaled frame.
pub fn first_variation(rho: &RadialDensity, r: f64, params: &Params) -> Result<f64> {
    if rho.dim() != params.n() {
        return Err(invalid("density and parameters disagree on the dimension"));
    }
    let phi = potential_at(rho, r, params.k())?;
    first_variation_value(params, r, rho.value_at(r), phi)
}

/// Outcome of an Euler–Lagrange check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElResidual {
    /// Largest mismatch on the support, relative to the largest value of the
    /// compared quantity (`ρ^{m-1}` for `k < 0`, `ρ` otherwise).
    pub sup_residual: f64,
    /// Largest node with `ρ > SUPPORT_THRESHOLD · max ρ`.
    pub support_radius: f64,
    /// Least-squares constant of the first variation on the support (`k <= 0`).
    pub d_fitted: Option<f64>,
    /// The same constant from the energy identity (`k <= 0`).
    pub d_energy: Option<f64>,
    /// Additive constant of the fast-diffusion profile (`k > 0`).
    pub c_const: Option<f64>,
    /// Largest relative amount by which the first variation drops below the
    /// fitted constant outside the support (`k < 0`).
    pub outside_violation: f64,
}

pub fn el_residual(rho: &RadialDensity, params: &Params) -> Result<ElResidual> {
    EnergyEvaluator::new(*params, rho.grid().clone())?.el_residual(rho)
}

fn el_residual_from_potential(
    rho: &RadialDensity,
    pot: &[f64],
    params: &Params,
    energy: impl FnOnce() -> Result<EnergyBreakdown>,
) -> Result<ElResidual> {
    let nodes = rho.nodes();
    let vals = rho.values();
    let vmax = rho.max_value();
    if !(vmax > 0.0) {
        return Err(invalid("density vanishes identically"));
    }
    let on_support: Vec<bool> = vals.iter().map(|&v| v > SUPPORT_THRESHOLD * vmax).collect();
    let support_radius = nodes.iter().zip(&on_support).filter(|(_, &s)| s).map(|(&r, _)| r).fold(0.0, f64::max);
    let n = params.dim();
    let m = params.m();
    let k = params.k();
    let conf = |r: f64| match params.frame() {
        Frame::Original => 0.0,
        Frame::Rescaled => 0.5 * r * r,
    };

    if k > 0.0 {
        let nk = n * k / (n - k);
        let a = 2.0 * params.chi() * nk;
        let b = if params.frame() == Frame::Rescaled { nk / 2.0 } else { 0.0 };
        let base: Vec<f64> = nodes.iter().zip(pot).map(|(&r, &p)| a * p + b * r * r).collect();
        let c = normalizing_constant(rho.grid(), &base, k, 1.0)?;
        let mut sup: f64 = 0.0;
        for (i, &bv) in base.iter().enumerate() {
            let target = (bv + c).powf(-n / k);
            sup = sup.max((vals[i] - target).abs());
        }
        return Ok(ElResidual {
            sup_residual: sup / vmax,
            support_radius,
            d_fitted: None,
            d_energy: None,
            c_const: Some(c),
            outside_violation: 0.0,
        });
    }

    let tvals: Vec<Option<f64>> =
        nodes.iter().zip(vals).zip(pot).map(|((&r, &v), &p)| first_variation_value(params, r, v, p).ok()).collect();
    let support_t: Vec<f64> = tvals.iter().zip(&on_support).filter_map(|(t, &s)| if s { *t } else { None }).collect();
    if support_t.is_empty() {
        return Err(invalid("empty support"));
    }
    let d_fit = support_t.iter().sum::<f64>() / support_t.len() as f64;
    let e = energy()?;
    let mass = rho.mass();
    let d_energy = if k == 0.0 {
        // ∫ρ T / ∫ρ with T = (log ρ + 1)/N + 2χΦ + conf
        (e.entropy + mass / n + 2.0 * e.chi * e.interaction + e.confinement) / mass
    } else {
        (2.0 * e.original_total() + (m - 2.0) / (n * (m - 1.0)) * rho.lq_norm_pow(m) + e.confinement) / mass
    };

    let mut sup: f64 = 0.0;
    let mut outside: f64 = 0.0;
    if k == 0.0 {
        for (i, &r) in nodes.iter().enumerate() {
            if !on_support[i] {
                continue;
            }
            let target = (n * (d_fit - 2.0 * params.chi() * pot[i] - conf(r)) - 1.0).exp();
            sup = sup.max((vals[i] - target).abs());
        }
        sup /= vmax;
    } else {
        let scale = vmax.powf(m - 1.0);
        let coef = n * (m - 1.0) / m;
        for (i, &r) in nodes.iter().enumerate() {
            let target = coef * (d_fit - 2.0 * params.chi() * pot[i] - conf(r)).max(0.0);
            if on_support[i] {
                sup = sup.max((vals[i].powf(m - 1.0) - target).abs());
            } else {
                outside = outside.max(target);
            }
        }
        sup /= scale;
        outside /= scale;
    }
    Ok(ElResidual {
        sup_residual: sup,
        support_radius,
        d_fitted: Some(d_fit),
        d_energy: Some(d_energy),
        c_const: None,
        outside_violation: outside,
    })
}

/// Mass of `(base + c)^{-N/k}` on `grid`.
pub fn profile_mass(grid: &RadialGrid, base: &[f64], k: f64, c: f64) -> f64 {
    let e = -(grid.dim() as f64) / k;
    grid.weights().iter().zip(base).map(|(w, &b)| w * (b + c).powf(e)).sum()
}

/// `c` with `profile_mass(base, c) = target`, by bisection; `base` must be
/// nonnegative-shifted so that `base + c > 0` on the bracket.
pub fn normalizing_constant(grid: &RadialGrid, base: &[f64], k: f64, target: f64) -> Result<f64> {
    let bmin = base.iter().cloned().fold(f64::INFINITY, f64::min);
    let mass = |c: f64| profile_mass(grid, base, k, c);
    // mass decreases in c; start just above the pole
    let mut lo = -bmin + 1e-300f64.max(1e-14 * bmin.abs());
    let mut hi = -bmin + 1.0;
    while mass(hi) > target {
        hi = -bmin + 2.0 * (hi + bmin);
        if hi > 1e300 {
            return Err(Error::Consistency("no upper bracket for the normalizing constant".into()));
        }
    }
    if mass(lo) < target {
        return Err(Error::Consistency(format!("profile mass {} at the pole is below the target {target}", mass(lo))));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if mass(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
        if (hi - lo) <= 1e-15 * hi.abs().max(lo.abs()) {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Outcome of [`polish_porous_stationary`].
#[derive(Debug, Clone)]
pub struct PolishReport {
    pub density: RadialDensity,
    pub iterations: usize,
    /// Last relative update `‖ρ_{n+1} - ρ_n‖_∞ / ‖ρ_n‖_∞`.
    pub last_update: f64,
    pub converged: bool,
    pub d_const: f64,
}

/// Rescaled stationary state for `k < 0` by damped iteration of
/// `ρ = (N(m-1)/m (D - 2χ W_k∗ρ - |x|²/2))_+^{1/(m-1)}`, with `D` fixing
/// unit mass. `initial` is resampled onto `grid`, which must extend past the
/// support.
pub fn polish_porous_stationary(
    initial: &RadialDensity,
    params: &Params,
    grid: Arc<RadialGrid>,
    tol: f64,
    max_iter: usize,
) -> Result<PolishReport> {
    if params.k() >= 0.0 || params.frame() != Frame::Rescaled {
        return Err(invalid("polishing needs k < 0 in the rescaled frame"));
    }
    let eval = EnergyEvaluator::new(*params, grid.clone())?;
    let n = params.dim();
    let m = params.m();
    let coef = n * (m - 1.0) / m;
    let q = 1.0 / (m - 1.0);
    let chi = params.chi();
    let nodes = grid.nodes().to_vec();
    let weights = grid.weights().to_vec();
    let mut rho = RadialDensity::from_fn(grid.clone(), |r| initial.value_at(r))?.normalized()?;
    let profile =
        |base: &[f64], d: f64| -> Vec<f64> { base.iter().map(|&b| (coef * (d - b)).max(0.0).powf(q)).collect() };
    let mass_of = |v: &[f64]| -> f64 { weights.iter().zip(v).map(|(w, x)| w * x).sum() };
    let theta = 0.5;
    let mut last_update = f64::INFINITY;
    let mut d_const = 0.0;
    for it in 1..=max_iter {
        let pot = eval.potential(&rho)?;
        let base: Vec<f64> = nodes.iter().zip(&pot).map(|(&r, &p)| 2.0 * chi * p + 0.5 * r * r).collect();
        let mut lo = base.iter().cloned().fold(f64::INFINITY, f64::min);
        let mut width = 1.0;
        while mass_of(&profile(&base, lo + width)) < 1.0 {
            width *= 2.0;
            if width > 1e12 {
                return Err(Error::Numerical("no mass bracket while polishing".into()));
            }
        }
        let mut hi = lo + width;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mass_of(&profile(&base, mid)) < 1.0 {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-15 * hi.abs().max(1.0) {
                break;
            }
        }
        d_const = 0.5 * (lo + hi);
        let target = profile(&base, d_const);
        if *target.last().unwrap() > 0.0 {
            return Err(Error::Domain("stationary support reaches the end of the polishing grid".into()));
        }
        let vmax = rho.max_value();
        last_update = rho.values().iter().zip(&target).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / vmax;
        let next: Vec<f64> = rho.values().iter().zip(&target).map(|(a, b)| (1.0 - theta) * a + theta * b).collect();
        rho = rho.with_values(next)?;
        if last_update <= tol {
            return Ok(PolishReport { density: rho, iterations: it, last_update, converged: true, d_const });
        }
    }
    Ok(PolishReport { density: rho, iterations: max_iter, last_update, converged: false, d_const })
}

fn hls_ratio_parts(rho: &RadialDensity, interaction: f64, params: &Params) -> Result<f64> {
    let k = params.k();
    if k >= 0.0 {
        return Err(invalid("the HLS ratio needs k < 0"));
    }
    let n = params.dim();
    let mass = rho.mass();
    let lm = rho.lq_norm_pow(params.m());
    if !(mass > 0.0 && lm > 0.0) {
        return Err(invalid("HLS ratio of a vanishing density"));
    }
    Ok((k * interaction).abs() / (mass.powf((n + k) / n) * lm))
}

pub fn hls_ratio(rho: &RadialDensity, params: &Params) -> Result<f64> {
    EnergyEvaluator::new(*params, rho.grid().clone())?.hls_ratio(rho)
}

/// Sharp HLS constant for `p = q = 2N/(2N+k)`, an upper bound for `C_*`.
pub fn hls_upper_bound(n: usize, k: f64) -> f64 {
    use crate::kernel::hypergeometric::gamma_fn;
    let nf = n as f64;
    let lambda = -k;
    std::f64::consts::PI.powf(lambda / 2.0) * gamma_fn(nf / 2.0 - lambda / 2.0) / gamma_fn(nf - lambda / 2.0)
        * (gamma_fn(nf / 2.0) / gamma_fn(nf)).powf(-1.0 + lambda / nf)
}

/// Trial families for [`estimate_chi_c`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HlsFamily {
    /// Compact profiles and Gaussians, then gradient refinement.
    #[default]
    Default,
    CompactProfiles,
    Gaussians,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HlsTraceEntry {
    pub stage: String,
    pub parameter: f64,
    pub ratio: f64,
}

/// Lower bound on `C_*` from trial densities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HlsEstimate {
    pub c_star_lower: f64,
    pub chi_c: f64,
    pub c_hls_upper: f64,
    pub optimizer_trace: Vec<HlsTraceEntry>,
    /// The refinement stage ended without improving on the trial families.
    pub exhausted_without_improvement: bool,
}

/// Grid size used by [`estimate_chi_c`].
pub const HLS_GRID_NODES: usize = 241;

/// Maximises the HLS ratio over trial densities: the profiles
/// `(1 - r²)_+^p` and a Gaussian, then projected gradient ascent on the
/// grid values. `budget` bounds the number of ratio evaluations.
pub fn estimate_chi_c(params: &Params, family: HlsFamily, budget: usize) -> Result<HlsEstimate> {
    if params.k() >= 0.0 {
        return Err(invalid("estimate_chi_c needs k < 0"));
    }
    let n = params.n();
    let p = params.with_frame(Frame::Original);
    let mut trace = Vec::new();
    let mut best: Option<(f64, RadialDensity, Arc<EnergyEvaluator>)> = None;
    let mut evals = 0usize;
    let mut record = |stage: &str,
                      par: f64,
                      ratio: f64,
                      rho: &RadialDensity,
                      ev: &Arc<EnergyEvaluator>,
                      trace: &mut Vec<HlsTraceEntry>| {
        let prev = best.as_ref().map_or(f64::NEG_INFINITY, |b| b.0);
        let running = prev.max(ratio);
        trace.push(HlsTraceEntry { stage: stage.to_string(), parameter: par, ratio: running });
        if ratio > prev {
            best = Some((ratio, rho.clone(), ev.clone()));
        }
    };

    if family != HlsFamily::Gaussians {
        let grid = Arc::new(RadialGrid::uniform(n, 1.2, HLS_GRID_NODES)?);
        let ev = Arc::new(EnergyEvaluator::new(p, grid.clone())?);
        let ratio_of = |q: f64| -> Result<(f64, RadialDensity)> {
            let rho = RadialDensity::from_fn(grid.clone(), |r| (1.0 - r * r).max(0.0).powf(q))?;
            Ok((ev.hls_ratio(&rho)?, rho))
        };
        // golden-section search in the exponent
        let g = 0.5 * (5f64.sqrt() - 1.0);
        let (mut a, mut b) = (0.05, 6.0);
        let mut x1 = b - g * (b - a);
        let mut x2 = a + g * (b - a);
        let (mut f1, r1) = ratio_of(x1)?;
        let (mut f2, r2) = ratio_of(x2)?;
        record("compact", x1, f1, &r1, &ev, &mut trace);
        record("compact", x2, f2, &r2, &ev, &mut trace);
        evals += 2;
        let steps = (budget / 4).clamp(4, 40);
        for _ in 0..steps {
            if f1 > f2 {
                b = x2;
                x2 = x1;
                f2 = f1;
                x1 = b - g * (b - a);
                let (f, r) = ratio_of(x1)?;
                f1 = f;
                record("compact", x1, f, &r, &ev, &mut trace);
            } else {
                a = x1;
                x1 = x2;
                f1 = f2;
                x2 = a + g * (b - a);
                let (f, r) = ratio_of(x2)?;
                f2 = f;
                record("compact", x2, f, &r, &ev, &mut trace);
            }
            evals += 1;
        }
    }
    if family != HlsFamily::CompactProfiles {
        let grid = Arc::new(RadialGrid::uniform(n, 7.0, HLS_GRID_NODES)?);
        let ev = Arc::new(EnergyEvaluator::new(p, grid.clone())?);
        let rho = RadialDensity::from_fn(grid, |r| (-0.5 * r * r).exp())?;
        let ratio = ev.hls_ratio(&rho)?;
        record("gaussian", 1.0, ratio, &rho, &ev, &mut trace);
        evals += 1;
    }

    let (family_best, mut rho, ev) = best.expect("at least one family evaluated");
    let mut current = family_best;
    let m = p.m();
    let theta = (p.dim() + p.k()) / p.dim();
    let mut step = 0.05;
    while evals < budget && step > 1e-8 {
        let pot = ev.potential(&rho)?;
        let s = -weighted_dot(&rho, &pot);
        let mass = rho.mass();
        let lm = rho.lq_norm_pow(m);
        let grad: Vec<f64> = rho
            .values()
            .iter()
            .zip(&pot)
            .map(|(&v, &phi)| -2.0 * phi / s - theta / mass - m * v.max(0.0).powf(m - 1.0) / lm)
            .collect();
        let gmax = grad.iter().map(|g| g.abs()).fold(0.0, f64::max);
        if gmax == 0.0 {
            break;
        }
        let vmax = rho.max_value();
        let trial: Vec<f64> =
            rho.values().iter().zip(&grad).map(|(&v, &g)| (v + step * vmax * g / gmax).max(0.0)).collect();
        let cand = rho.with_values(trial)?;
        let r = ev.hls_ratio(&cand)?;
        evals += 1;
        if r > current {
            current = r;
            rho = cand;
            trace.push(HlsTraceEntry { stage: "gradient".into(), parameter: step, ratio: current });
            step *= 1.5;
        } else {
            step *= 0.5;
        }
    }
    let c_star = current;
    Ok(HlsEstimate {
        c_star_lower: c_star,
        chi_c: 1.0 / c_star,
        c_hls_upper: hls_upper_bound(n, p.k()),
        optimizer_trace: trace,
        exhausted_without_improvement: current <= family_best,
    })
}
