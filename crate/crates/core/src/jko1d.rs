//! One-dimensional gradient flow on the pseudoinverse of the cumulative
//! distribution function.
//!
//! The state is the vector of quantile positions `X_i = X(w_i)` at the mass
//! coordinates `w_i = (i + 1/2)/M`. Each time step solves the implicit Euler
//! system `Y - X - h v(Y) = 0` by Newton's method, where `v = -∇F / Δw` is the
//! gradient of the discrete free energy, so accepted steps are steps of the
//! discrete minimizing movement.
//!
//! The interaction sum drops the diagonal. By default a local correction is
//! added to the discrete energy that restores the weakly singular
//! near-diagonal contribution (`-2ζ(-k) Δw^{1+k} |∂_w X|^k / k` per node);
//! without it the Riemann sum carries an `O(Δw^{1+k})` error that is large
//! for negative `k`.
//!
//! In the rescaled frame a step of size `h` advances time by `ln(1 + h)`.
//! The linear confinement is then integrated exactly and the centre of mass
//! decays as `e^{-t}` to rounding.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use statrs::function::beta::{beta, inv_beta_reg};

use crate::domain::{beta_inv, dilate, Frame, Params, RadialDensity, RadialGrid};
use crate::energy::EnergyBreakdown;
use crate::error::{invalid, Error, Result};
use crate::kernel::hypergeometric::riemann_zeta;
use crate::quad::gauss_legendre;

/// Quantile positions of a probability measure on the line.
#[derive(Debug, Clone, PartialEq)]
pub struct Pseudoinverse {
    x: Vec<f64>,
}

impl Pseudoinverse {
    pub fn new(x: Vec<f64>) -> Result<Self> {
        if x.len() < 2 {
            return Err(invalid("a pseudoinverse needs at least two quantiles"));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(invalid("quantile positions must be finite"));
        }
        if !is_increasing(&x) {
            return Err(Error::InvalidState("quantile positions must be strictly increasing".into()));
        }
        Ok(Self { x })
    }

    /// Uniform density on `[center - half_width, center + half_width]`.
    pub fn characteristic(center: f64, half_width: f64, m: usize) -> Result<Self> {
        if !(half_width > 0.0) {
            return Err(invalid("half width must be positive"));
        }
        let dw = 1.0 / m as f64;
        Self::new((0..m).map(|i| center - half_width + 2.0 * half_width * (i as f64 + 0.5) * dw).collect())
    }

    /// Normal density, through the inverse error function.
    pub fn gaussian(center: f64, sigma: f64, m: usize) -> Result<Self> {
        if !(sigma > 0.0) {
            return Err(invalid("standard deviation must be positive"));
        }
        let dw = 1.0 / m as f64;
        let x = (0..m)
            .map(|i| {
                let w = (i as f64 + 0.5) * dw;
                center + sigma * std::f64::consts::SQRT_2 * statrs::function::erf::erf_inv(2.0 * w - 1.0)
            })
            .collect();
        Self::new(x)
    }

    /// Quantiles of a nonnegative density `f` supported in `[a, b]`, which is
    /// normalised first.
    pub fn from_density(f: impl Fn(f64) -> f64, a: f64, b: f64, m: usize) -> Result<Self> {
        if !(b > a) || m < 2 {
            return Err(invalid("need a < b and at least two quantiles"));
        }
        const PIECES: usize = 4096;
        let rule = gauss_legendre(8);
        let h = (b - a) / PIECES as f64;
        let mut cum = vec![0.0; PIECES + 1];
        for s in 0..PIECES {
            let lo = a + s as f64 * h;
            let piece = rule.integrate(lo, lo + h, &f);
            if !(piece >= 0.0) {
                return Err(invalid("density must be nonnegative and finite"));
            }
            cum[s + 1] = cum[s] + piece;
        }
        let total = cum[PIECES];
        if !(total > 0.0) {
            return Err(invalid("density has zero mass"));
        }
        let dw = 1.0 / m as f64;
        let mut x = Vec::with_capacity(m);
        for i in 0..m {
            let target = (i as f64 + 0.5) * dw * total;
            let s = cum.partition_point(|&c| c < target).clamp(1, PIECES) - 1;
            let lo = a + s as f64 * h;
            let (mut l, mut r) = (lo, lo + h);
            for _ in 0..60 {
                let mid = 0.5 * (l + r);
                if cum[s] + rule.integrate(lo, mid, &f) < target {
                    l = mid;
                } else {
                    r = mid;
                }
            }
            x.push(0.5 * (l + r));
        }
        Self::new(x)
    }

    /// Quantiles of the symmetric one-dimensional density `ρ(|x|)`.
    pub fn from_radial(rho: &RadialDensity, m: usize) -> Result<Self> {
        if rho.dim() != 1 {
            return Err(invalid("the pseudoinverse scheme is one-dimensional"));
        }
        let r = rho.nodes();
        let v = rho.values();
        let mut xs: Vec<f64> = r.iter().rev().map(|t| -t).collect();
        let mut vals: Vec<f64> = v.iter().rev().copied().collect();
        let start = if r[0] == 0.0 { 1 } else { 0 };
        if start == 0 {
            // No node at the origin: the interpolant is flat on (-r0, r0).
            xs.extend_from_slice(r);
            vals.extend_from_slice(v);
        } else {
            xs.extend_from_slice(&r[1..]);
            vals.extend_from_slice(&v[1..]);
        }
        Self::from_piecewise_linear(&xs, &vals, m)
    }

    /// Quantiles of the piecewise-linear density through `(xs, vals)`,
    /// normalised first.
    pub fn from_piecewise_linear(xs: &[f64], vals: &[f64], m: usize) -> Result<Self> {
        if xs.len() != vals.len() || xs.len() < 2 || m < 2 {
            return Err(invalid("need matching node and value lists"));
        }
        if !is_increasing(xs) || vals.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(invalid("nodes must increase and values be nonnegative"));
        }
        let mut cum = vec![0.0; xs.len()];
        for j in 0..xs.len() - 1 {
            cum[j + 1] = cum[j] + 0.5 * (vals[j] + vals[j + 1]) * (xs[j + 1] - xs[j]);
        }
        let total = *cum.last().unwrap();
        if !(total > 0.0) {
            return Err(invalid("density has zero mass"));
        }
        let dw = 1.0 / m as f64;
        let mut x = Vec::with_capacity(m);
        for i in 0..m {
            let target = (i as f64 + 0.5) * dw * total;
            let j = cum.partition_point(|&c| c < target).clamp(1, xs.len() - 1) - 1;
            // Solve a + b s + c s^2 = target - cum[j] on the piece, s in [0, len].
            let len = xs[j + 1] - xs[j];
            let slope = (vals[j + 1] - vals[j]) / len;
            let need = target - cum[j];
            let s = if slope.abs() * len < 1e-14 * vals[j].max(1e-300) || vals[j] == vals[j + 1] {
                need / vals[j]
            } else {
                // v0 s + slope s^2 / 2 = need, stable root
                let disc = (vals[j] * vals[j] + 2.0 * slope * need).max(0.0);
                2.0 * need / (vals[j] + disc.sqrt())
            };
            x.push(xs[j] + s.clamp(0.0, len));
        }
        // Quantiles in flat-zero stretches can coincide; spread them minimally.
        for i in 1..m {
            if x[i] <= x[i - 1] {
                x[i] = x[i - 1] + 1e-12 * (1.0 + x[i - 1].abs());
            }
        }
        Self::new(x)
    }

    pub fn positions(&self) -> &[f64] {
        &self.x
    }
    pub fn len(&self) -> usize {
        self.x.len()
    }
    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }
    pub fn dw(&self) -> f64 {
        1.0 / self.x.len() as f64
    }
    pub fn mass_coordinates(&self) -> Vec<f64> {
        let dw = self.dw();
        (0..self.len()).map(|i| (i as f64 + 0.5) * dw).collect()
    }
    pub fn com(&self) -> f64 {
        self.dw() * self.x.iter().sum::<f64>()
    }
    pub fn second_moment(&self) -> f64 {
        self.dw() * self.x.iter().map(|v| v * v).sum::<f64>()
    }
    pub fn cell_widths(&self) -> Vec<f64> {
        self.x.windows(2).map(|p| p[1] - p[0]).collect()
    }
    pub fn min_cell(&self) -> f64 {
        self.cell_widths().into_iter().fold(f64::INFINITY, f64::min)
    }

    /// Cell midpoints and the piecewise-constant density `Δw / ΔX` on them.
    pub fn cell_densities(&self) -> Vec<(f64, f64)> {
        let dw = self.dw();
        self.x.windows(2).map(|p| (0.5 * (p[0] + p[1]), dw / (p[1] - p[0]))).collect()
    }

    pub fn max_density(&self) -> f64 {
        self.dw() / self.min_cell()
    }

    /// Symmetrised profile about the origin on a one-dimensional radial grid,
    /// vanishing just beyond the outermost quantile.
    pub fn to_radial(&self) -> Result<RadialDensity> {
        let cells = self.cell_densities();
        let nc = cells.len();
        let mut nodes = Vec::with_capacity(nc / 2 + 3);
        let mut vals = Vec::with_capacity(nc / 2 + 3);
        let first = nc / 2;
        for c in first..nc {
            let mirror = nc - 1 - c;
            let r = 0.5 * (cells[c].0 - cells[mirror].0);
            let v = 0.5 * (cells[c].1 + cells[mirror].1);
            if nodes.is_empty() && r > 0.0 {
                nodes.push(0.0);
                vals.push(v);
            }
            if nodes.last().is_some_and(|&last| r <= last) {
                continue;
            }
            nodes.push(r.max(0.0));
            vals.push(v);
        }
        // The linear ramp to zero beyond the last midpoint carries the mass
        // Δw of the outermost half cells.
        let outer = 0.5 * ((self.x[self.len() - 1] - self.x[self.len() - 2]) + (self.x[1] - self.x[0]));
        nodes.push(nodes.last().unwrap() + 2.0 * outer);
        vals.push(0.0);
        let grid = Arc::new(RadialGrid::from_nodes(1, nodes)?);
        RadialDensity::new(grid, vals)
    }
}

fn is_increasing(x: &[f64]) -> bool {
    x.windows(2).all(|p| p[1] > p[0])
}

/// Coefficients of the near-diagonal correction `κ Δw^{2+k} D^k / k`.
#[derive(Debug, Clone, Copy)]
struct SelfCorrection {
    interior: f64,
    boundary: f64,
    /// `d κ / d k` at `k = 0`, used by the logarithmic kernel.
    interior_log: f64,
    boundary_log: f64,
}

impl SelfCorrection {
    fn new(k: f64) -> Self {
        let z = riemann_zeta(-k);
        let half = 0.5f64.powf(k + 1.0) / (k + 1.0);
        let ln2pi = (2.0 * std::f64::consts::PI).ln();
        Self {
            interior: -2.0 * z,
            boundary: -z + half,
            interior_log: -ln2pi,
            boundary_log: -0.5 * ln2pi - 0.5 * std::f64::consts::LN_2 - 0.5,
        }
    }
}

/// Discrete free energy and its gradient in quantile variables.
#[derive(Debug, Clone)]
pub struct DiscreteModel {
    params: Params,
    m_exp: f64,
    corr: Option<SelfCorrection>,
    edge_weights: bool,
}

/// Entropy weight of the cell `l` cells away from a free boundary. With it
/// the discrete steady state is exact for a pressure `ρ^m` that vanishes
/// linearly in the mass coordinate, the generic behaviour at the edge of the
/// support for `m > 1`.
fn edge_weight(m: f64, l: usize) -> f64 {
    let th = 1.0 - 1.0 / m;
    let lf = l as f64;
    lf * (((lf + 0.5).powf(th) - (lf - 0.5).powf(th)) / th).powf(m)
}

impl DiscreteModel {
    pub fn new(params: Params, self_correction: bool) -> Result<Self> {
        if params.n() != 1 {
            return Err(invalid("the pseudoinverse scheme is one-dimensional (N = 1)"));
        }
        let k = params.k();
        Ok(Self {
            params,
            m_exp: params.m(),
            corr: (self_correction && params.chi() > 0.0).then(|| SelfCorrection::new(k)),
            edge_weights: params.m() > 1.0,
        })
    }

    /// Enables or disables the free-boundary entropy weights (on by default
    /// for `m > 1`, never used otherwise).
    pub fn with_edge_weights(mut self, on: bool) -> Self {
        self.edge_weights = on && self.m_exp > 1.0;
        self
    }

    fn cell_weights(&self, cells: usize) -> Vec<f64> {
        if !self.edge_weights {
            return vec![1.0; cells];
        }
        let table: Vec<f64> = (1..=cells.div_ceil(2)).map(|l| edge_weight(self.m_exp, l)).collect();
        (0..cells).map(|c| table[(c + 1).min(cells - c) - 1]).collect()
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    fn rescaled(&self) -> bool {
        self.params.frame() == Frame::Rescaled
    }

    /// Local slope `D_i ≈ ∂_w X` and its stencil.
    fn slope(x: &[f64], i: usize, dw: f64) -> (f64, [(usize, f64); 2], bool) {
        let n = x.len();
        if i == 0 {
            ((x[1] - x[0]) / dw, [(1, 1.0 / dw), (0, -1.0 / dw)], true)
        } else if i == n - 1 {
            ((x[n - 1] - x[n - 2]) / dw, [(n - 1, 1.0 / dw), (n - 2, -1.0 / dw)], true)
        } else {
            ((x[i + 1] - x[i - 1]) / (2.0 * dw), [(i + 1, 0.5 / dw), (i - 1, -0.5 / dw)], false)
        }
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() < 2 || x.iter().any(|v| !v.is_finite()) || !is_increasing(x) {
            return Err(Error::InvalidState("quantile positions are not strictly increasing".into()));
        }
        Ok(())
    }

    /// Discrete energy: entropy `Δw Σ (Δw/ΔX)^{m-1} / (N(m-1))`, the double
    /// Riemann sum of `W_k` (plus the near-diagonal correction), and `V/2`.
    pub fn energy(&self, x: &[f64]) -> Result<EnergyBreakdown> {
        self.check(x)?;
        let p = &self.params;
        let k = p.k();
        let n = x.len();
        let dw = 1.0 / n as f64;
        let m = self.m_exp;
        let entropy = if k == 0.0 {
            dw * x.windows(2).map(|c| (dw / (c[1] - c[0])).ln()).sum::<f64>()
        } else {
            let beta = self.cell_weights(n - 1);
            dw / (m - 1.0) * x.windows(2).zip(&beta).map(|(c, b)| b * (dw / (c[1] - c[0])).powf(m - 1.0)).sum::<f64>()
        };
        let mut pairs = 0.0;
        for i in 0..n {
            let xi = x[i];
            let mut row = 0.0;
            for &xj in &x[i + 1..] {
                let r = xj - xi;
                row += if k == 0.0 { r.ln() } else { r.powf(k) };
            }
            pairs += row;
        }
        if k != 0.0 {
            pairs /= k;
        }
        let mut interaction = 2.0 * dw * dw * pairs;
        if let Some(c) = &self.corr {
            for i in 0..n {
                let (d, _, edge) = Self::slope(x, i, dw);
                interaction += if k == 0.0 {
                    let lead = if edge { c.boundary_log } else { c.interior_log };
                    dw * dw * (lead + (dw * d).ln())
                } else {
                    let kappa = if edge { c.boundary } else { c.interior };
                    kappa * dw.powf(2.0 + k) * d.powf(k) / k
                };
            }
        }
        let confinement = if self.rescaled() { 0.5 * dw * x.iter().map(|v| v * v).sum::<f64>() } else { 0.0 };
        let antider = |t: f64| -> f64 {
            if t == 0.0 {
                0.0
            } else if k == 0.0 {
                t * t.abs().ln() - t
            } else {
                t.signum() * t.abs().powf(k + 1.0) / (k * (k + 1.0))
            }
        };
        let kth_moment = x.windows(2).map(|c| dw * (antider(c[1]) - antider(c[0])) / (c[1] - c[0])).sum();
        Ok(EnergyBreakdown {
            entropy,
            interaction,
            confinement,
            total: entropy + p.chi() * interaction + confinement,
            kth_moment,
            chi: p.chi(),
            k,
            n: 1,
            frame: p.frame(),
        })
    }

    /// `v = -(1/Δw) ∂F/∂X`.
    pub fn velocity(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check(x)?;
        Ok(self.velocity_and_jacobian(x, false).0)
    }

    fn velocity_and_jacobian(&self, x: &[f64], want_jac: bool) -> (Vec<f64>, Option<DMatrix<f64>>) {
        let p = &self.params;
        let k = p.k();
        let chi = p.chi();
        let n = x.len();
        let dw = 1.0 / n as f64;
        let m = self.m_exp;
        let mut v = vec![0.0; n];
        let mut jac = want_jac.then(|| DMatrix::<f64>::zeros(n, n));

        // Diffusion: pressures (Δw/d)^m on the cells.
        let beta = self.cell_weights(n - 1);
        for c in 0..n - 1 {
            let d = x[c + 1] - x[c];
            let pc = beta[c] * (dw / d).powf(m);
            v[c] -= pc / dw;
            v[c + 1] += pc / dw;
            if let Some(j) = jac.as_mut() {
                let q = m * pc / d / dw;
                // ∂p_c/∂x_{c+1} = -m p_c / d, ∂p_c/∂x_c = m p_c / d
                j[(c, c)] -= q;
                j[(c, c + 1)] += q;
                j[(c + 1, c)] += q;
                j[(c + 1, c + 1)] -= q;
            }
        }

        if chi > 0.0 {
            let scale = 2.0 * chi * dw;
            for i in 0..n {
                for jdx in i + 1..n {
                    let r = x[jdx] - x[i];
                    let e = r.powf(k - 2.0);
                    let f = scale * e * r;
                    v[i] += f;
                    v[jdx] -= f;
                    if let Some(jm) = jac.as_mut() {
                        let g = scale * (k - 1.0) * e;
                        jm[(i, jdx)] += g;
                        jm[(jdx, i)] += g;
                        jm[(i, i)] -= g;
                        jm[(jdx, jdx)] -= g;
                    }
                }
            }
            if let Some(c) = &self.corr {
                let factor = chi / dw;
                for a in 0..n {
                    let (d, stencil, edge) = Self::slope(x, a, dw);
                    let kappa = if k == 0.0 {
                        1.0
                    } else if edge {
                        c.boundary
                    } else {
                        c.interior
                    };
                    let g1 = kappa * dw.powf(2.0 + k) * d.powf(k - 1.0);
                    for &(idx, coef) in &stencil {
                        v[idx] -= factor * g1 * coef;
                    }
                    if let Some(jm) = jac.as_mut() {
                        let g2 = (k - 1.0) * g1 / d;
                        for &(i1, c1) in &stencil {
                            for &(i2, c2) in &stencil {
                                jm[(i1, i2)] -= factor * g2 * c1 * c2;
                            }
                        }
                    }
                }
            }
        }

        if self.rescaled() {
            for i in 0..n {
                v[i] -= x[i];
                if let Some(j) = jac.as_mut() {
                    j[(i, i)] -= 1.0;
                }
            }
        }
        (v, jac)
    }
}

/// Free function form of [`DiscreteModel::velocity`] with the default
/// near-diagonal correction.
pub fn velocity(x: &Pseudoinverse, params: &Params) -> Result<Vec<f64>> {
    DiscreteModel::new(*params, true)?.velocity(x.positions())
}

/// Numerical settings for [`step_implicit`] and [`run`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct JkoConfig {
    /// Initial implicit step `h`.
    pub dt: f64,
    pub dt_min: f64,
    pub dt_max: f64,
    pub newton_tol: f64,
    pub max_newton: usize,
    pub steady_tol: f64,
    pub steady_steps: usize,
    pub stop_at_steady: bool,
    pub grow_after: usize,
    pub self_correction: bool,
    /// Free-boundary entropy weights for `m > 1`.
    pub edge_correction: bool,
    /// Allowed energy increase per accepted step.
    pub energy_slack: f64,
    pub blowup_width_ratio: f64,
}

impl Default for JkoConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            dt_min: 1e-10,
            dt_max: 0.25,
            newton_tol: 1e-11,
            max_newton: 40,
            steady_tol: 1e-7,
            steady_steps: 10,
            stop_at_steady: true,
            grow_after: 20,
            self_correction: true,
            edge_correction: true,
            energy_slack: 1e-12,
            blowup_width_ratio: 1e-12,
        }
    }
}

/// Result of one implicit solve.
#[derive(Debug, Clone)]
pub struct StepResult {
    pub next: Pseudoinverse,
    pub newton_iterations: usize,
    pub residual: f64,
}

/// Why an implicit solve was rejected.
#[derive(Debug, Clone, PartialEq)]
pub enum StepFailure {
    Stagnation { iterations: usize, residual: f64 },
    Monotonicity,
    EnergyIncrease { before: f64, after: f64 },
}

fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a, b| a.max(b.abs()))
}

/// Solves `Y - X - h v(Y) = 0` by damped Newton iteration.
pub fn solve_implicit(
    model: &DiscreteModel,
    x: &[f64],
    h: f64,
    config: &JkoConfig,
) -> std::result::Result<StepResult, StepFailure> {
    let n = x.len();
    let scale = 1.0 + sup(x);
    let tol = config.newton_tol * scale;
    let residual = |y: &[f64], vy: &[f64]| -> Vec<f64> { (0..n).map(|i| y[i] - x[i] - h * vy[i]).collect() };
    let mut y = x.to_vec();
    let (mut vy, _) = model.velocity_and_jacobian(&y, false);
    let mut g = residual(&y, &vy);
    let mut res = sup(&g);
    let mut iterations = 0;
    while res > tol {
        if iterations == config.max_newton {
            return Err(StepFailure::Stagnation { iterations, residual: res });
        }
        iterations += 1;
        let (_, dv) = model.velocity_and_jacobian(&y, true);
        let mut jac = dv.unwrap();
        jac *= -h;
        for i in 0..n {
            jac[(i, i)] += 1.0;
        }
        let rhs = DVector::from_vec(g.iter().map(|v| -v).collect());
        let delta = match jac.lu().solve(&rhs) {
            Some(d) => d,
            None => return Err(StepFailure::Stagnation { iterations, residual: res }),
        };
        let mut s = 1.0;
        loop {
            let trial: Vec<f64> = (0..n).map(|i| y[i] + s * delta[i]).collect();
            if is_increasing(&trial) && trial.iter().all(|v| v.is_finite()) {
                let (vt, _) = model.velocity_and_jacobian(&trial, false);
                let gt = residual(&trial, &vt);
                let rt = sup(&gt);
                if rt < (1.0 - 1e-4 * s) * res || rt <= tol {
                    y = trial;
                    vy = vt;
                    g = gt;
                    res = rt;
                    break;
                }
            }
            s *= 0.5;
            if s < 1e-8 {
                return if is_increasing(&(0..n).map(|i| y[i] + 1e-8 * delta[i]).collect::<Vec<_>>()) {
                    Err(StepFailure::Stagnation { iterations, residual: res })
                } else {
                    Err(StepFailure::Monotonicity)
                };
            }
        }
    }
    let _ = vy;
    Ok(StepResult { next: Pseudoinverse { x: y }, newton_iterations: iterations, residual: res })
}

/// One accepted implicit step of size `h`, or the reason it was rejected.
pub fn step_implicit(
    x: &Pseudoinverse,
    params: &Params,
    h: f64,
    config: &JkoConfig,
) -> std::result::Result<StepResult, StepFailure> {
    let model = DiscreteModel::new(*params, config.self_correction)
        .map_err(|_| StepFailure::Monotonicity)?
        .with_edge_weights(config.edge_correction);
    let step = solve_implicit(&model, x.positions(), h, config)?;
    let before = model.energy(x.positions()).map(|e| e.total).unwrap_or(f64::INFINITY);
    let after = model.energy(step.next.positions()).map(|e| e.total).unwrap_or(f64::INFINITY);
    if after > before + config.energy_slack * (1.0 + before.abs()) {
        return Err(StepFailure::EnergyIncrease { before, after });
    }
    Ok(step)
}

/// Early termination of a run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlowUp {
    pub time: f64,
    pub min_cell: f64,
    pub max_density: f64,
    pub reason: String,
}

/// Trajectory diagnostics of a run.
#[derive(Debug, Clone, Serialize)]
pub struct JkoRunReport {
    pub times: Vec<f64>,
    pub energies: Vec<EnergyBreakdown>,
    pub com: Vec<f64>,
    /// `V = ∫ |x|² ρ` along the run.
    pub second_moment: Vec<f64>,
    pub min_cell: Vec<f64>,
    pub max_density: Vec<f64>,
    pub velocity_sup: Vec<f64>,
    pub newton_stats: Vec<usize>,
    pub rejected_steps: usize,
    pub converged_to_steady: bool,
    pub blow_up: Option<BlowUp>,
    /// Largest energy increase over an accepted step (negative if the
    /// energy always decreased).
    pub max_energy_increase: f64,
    #[serde(skip)]
    pub final_state: Pseudoinverse,
    #[serde(skip)]
    pub steady_profile: Option<RadialDensity>,
}

impl JkoRunReport {
    pub fn final_time(&self) -> f64 {
        *self.times.last().unwrap()
    }
}

/// Time increment of an implicit step of size `h`.
fn time_increment(frame: Frame, h: f64) -> f64 {
    match frame {
        Frame::Original => h,
        Frame::Rescaled => h.ln_1p(),
    }
}

fn step_for_increment(frame: Frame, dt: f64) -> f64 {
    match frame {
        Frame::Original => dt,
        Frame::Rescaled => dt.exp_m1(),
    }
}

/// Integrates from `initial` up to time `t_end` (or until a steady state is
/// detected, when `config.stop_at_steady`).
pub fn run(initial: &Pseudoinverse, params: &Params, t_end: f64, config: &JkoConfig) -> Result<JkoRunReport> {
    if !(t_end > 0.0) || !(config.dt > 0.0) || !(config.dt_max >= config.dt) || !(config.dt_min > 0.0) {
        return Err(invalid("need t_end > 0 and 0 < dt_min, 0 < dt <= dt_max"));
    }
    let model = DiscreteModel::new(*params, config.self_correction)?.with_edge_weights(config.edge_correction);
    let frame = params.frame();
    let mut x = initial.clone();
    let mut t = 0.0;
    let mut h = config.dt;
    let e0 = model.energy(x.positions())?;
    let initial_min_cell = x.min_cell();
    let mut report = JkoRunReport {
        times: vec![0.0],
        energies: vec![e0],
        com: vec![x.com()],
        second_moment: vec![x.second_moment()],
        min_cell: vec![initial_min_cell],
        max_density: vec![x.max_density()],
        velocity_sup: vec![sup(&model.velocity(x.positions())?)],
        newton_stats: Vec::new(),
        rejected_steps: 0,
        converged_to_steady: false,
        blow_up: None,
        max_energy_increase: f64::NEG_INFINITY,
        final_state: x.clone(),
        steady_profile: None,
    };
    let mut accepted_streak = 0;
    let mut quiet_streak = 0;
    let mut last_failure;
    while t < t_end * (1.0 - 1e-14) {
        let remaining = t_end - t;
        let h_try = h.min(step_for_increment(frame, remaining));
        let outcome = solve_implicit(&model, x.positions(), h_try, config).and_then(|s| {
            let before = report.energies.last().unwrap().total;
            let e = model.energy(s.next.positions()).map_err(|_| StepFailure::Monotonicity)?;
            if e.total > before + config.energy_slack * (1.0 + before.abs()) {
                Err(StepFailure::EnergyIncrease { before, after: e.total })
            } else {
                Ok((s, e))
            }
        });
        match outcome {
            Ok((step, e)) => {
                let before = report.energies.last().unwrap().total;
                report.max_energy_increase = report.max_energy_increase.max(e.total - before);
                let speed = step.next.x.iter().zip(&x.x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / h_try;
                x = step.next;
                t += time_increment(frame, h_try);
                report.times.push(t);
                report.energies.push(e);
                report.com.push(x.com());
                report.second_moment.push(x.second_moment());
                let mc = x.min_cell();
                report.min_cell.push(mc);
                report.max_density.push(x.dw() / mc);
                report.velocity_sup.push(speed);
                report.newton_stats.push(step.newton_iterations);
                if mc < config.blowup_width_ratio * initial_min_cell {
                    report.blow_up = Some(BlowUp {
                        time: t,
                        min_cell: mc,
                        max_density: x.dw() / mc,
                        reason: "cell width collapsed".into(),
                    });
                    break;
                }
                quiet_streak = if speed <= config.steady_tol { quiet_streak + 1 } else { 0 };
                if quiet_streak >= config.steady_steps {
                    report.converged_to_steady = true;
                    if config.stop_at_steady {
                        break;
                    }
                }
                accepted_streak += 1;
                if accepted_streak >= config.grow_after {
                    h = (2.0 * h).min(config.dt_max);
                    accepted_streak = 0;
                }
            }
            Err(fail) => {
                report.rejected_steps += 1;
                accepted_streak = 0;
                last_failure = format!("{fail:?}");
                h = 0.5 * h_try;
                if h < config.dt_min {
                    let mc = x.min_cell();
                    report.blow_up = Some(BlowUp {
                        time: t,
                        min_cell: mc,
                        max_density: x.dw() / mc,
                        reason: format!(
                            "time step below {:e} after {} rejected steps ({last_failure})",
                            config.dt_min, report.rejected_steps
                        ),
                    });
                    break;
                }
            }
        }
    }
    report.steady_profile = x.to_radial().ok();
    report.final_state = x;
    Ok(report)
}

/// The original-variable self-similar solution generated by the rescaled
/// steady state `steady`, at original time `tau`:
/// `ρ(τ, x) = α(t)^{-N} ū(x / α(t))` with `t = β^{-1}(τ)`.
pub fn self_similar_reconstruct(steady: &RadialDensity, params: &Params, tau: f64) -> Result<RadialDensity> {
    let t = beta_inv(params, tau)?;
    dilate(steady, (-t).exp())
}

/// Closed-form rescaled stationary state of `∂_t ρ = Δρ^m + ∂_x(xρ)` in one
/// dimension: `ρ(x) = ((m-1)/m (D - x²/2))_+^{1/(m-1)}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Barenblatt {
    pub m: f64,
    pub d: f64,
}

impl Barenblatt {
    /// `D` from unit mass, found by bisection on a quadrature of the mass.
    pub fn new(m: f64) -> Result<Self> {
        if !(m > 1.0) {
            return Err(invalid("Barenblatt profile needs m > 1"));
        }
        let mass = |d: f64| -> f64 {
            let profile = Self { m, d };
            let r = profile.support_radius();
            // x = r sin θ removes the endpoint singularity of the integrand.
            let rule = gauss_legendre(32);
            let pieces = 16;
            let half = std::f64::consts::FRAC_PI_2;
            (0..pieces)
                .map(|j| {
                    let a = -half + 2.0 * half * j as f64 / pieces as f64;
                    let b = a + 2.0 * half / pieces as f64;
                    rule.integrate(a, b, |th| profile.density(r * th.sin()) * r * th.cos())
                })
                .sum()
        };
        let (mut lo, mut hi) = (1e-12, 1.0);
        while mass(hi) < 1.0 {
            hi *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mass(mid) < 1.0 {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-16 * hi {
                break;
            }
        }
        Ok(Self { m, d: 0.5 * (lo + hi) })
    }

    /// `D` from the Beta-function identity for the mass.
    pub fn closed_form_d(m: f64) -> f64 {
        let q = 1.0 / (m - 1.0);
        let c = (m - 1.0) / m;
        // mass = c^q D^{q+1/2} √2 B(1/2, q+1)
        (1.0 / (c.powf(q) * std::f64::consts::SQRT_2 * beta(0.5, q + 1.0))).powf(1.0 / (q + 0.5))
    }

    pub fn support_radius(&self) -> f64 {
        (2.0 * self.d).sqrt()
    }

    pub fn density(&self, x: f64) -> f64 {
        let base = (self.m - 1.0) / self.m * (self.d - 0.5 * x * x);
        if base <= 0.0 {
            0.0
        } else {
            base.powf(1.0 / (self.m - 1.0))
        }
    }

    /// Quantile at mass coordinate `w`, through the regularised incomplete
    /// Beta function.
    pub fn quantile(&self, w: f64) -> f64 {
        let q = 1.0 / (self.m - 1.0);
        self.support_radius() * (2.0 * inv_beta_reg(q + 1.0, q + 1.0, w) - 1.0)
    }

    pub fn pseudoinverse(&self, m: usize) -> Result<Pseudoinverse> {
        let dw = 1.0 / m as f64;
        Pseudoinverse::new((0..m).map(|i| self.quantile((i as f64 + 0.5) * dw)).collect())
    }
}

/// Rescaled steady state reached from `initial` at one value of χ.
#[derive(Debug, Clone, Serialize)]
pub struct SweepPoint {
    pub chi: f64,
    pub converged: bool,
    pub blow_up: bool,
    /// `F_k`, the free energy without the confinement.
    pub free_energy: f64,
    /// `V = ∫ |x|² ρ`.
    pub second_moment: f64,
    pub max_density: f64,
    pub final_time: f64,
    #[serde(skip)]
    pub profile: Option<RadialDensity>,
}

/// Runs the rescaled flow at `params` to a steady state.
pub fn sweep_point(initial: &Pseudoinverse, params: &Params, t_end: f64, config: &JkoConfig) -> Result<SweepPoint> {
    let params = params.with_frame(Frame::Rescaled);
    let report = run(initial, &params, t_end, config)?;
    let e = report.energies.last().unwrap();
    Ok(SweepPoint {
        chi: params.chi(),
        converged: report.converged_to_steady,
        blow_up: report.blow_up.is_some(),
        free_energy: e.original_total(),
        second_moment: report.final_state.second_moment(),
        max_density: *report.max_density.last().unwrap(),
        final_time: report.final_time(),
        profile: report.steady_profile,
    })
}

/// Least-squares line through `(x, y)`: `(intercept, slope)`.
fn line_fit(points: &[(f64, f64)]) -> Option<(f64, f64)> {
    let n = points.len() as f64;
    if points.len() < 2 {
        return None;
    }
    let (sx, sy) = points.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
    let (mx, my) = (sx / n, sy / n);
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    Some((my - slope * mx, slope))
}

/// Critical interaction strength from sub-critical steady states.
///
/// At a rescaled steady state the virial identity gives `k F_k = -V` for
/// `k < 0` and `V = 1 - χ` for `k = 0`. Along a family of dilations of a
/// fixed profile, `F_k^{(2-k)/2}` is affine in χ and vanishes at `χ_c`; the
/// same holds for `V` in the logarithmic case. The crossing is the root of
/// the least-squares line through the converged points.
pub fn zero_energy_crossing(points: &[SweepPoint], k: f64) -> Option<f64> {
    if k > 0.0 {
        return None;
    }
    let data: Vec<(f64, f64)> = points
        .iter()
        .filter(|p| p.converged && !p.blow_up)
        .map(|p| {
            let q = if k == 0.0 { p.second_moment } else { p.free_energy.max(0.0).powf((2.0 - k) / 2.0) };
            (p.chi, q)
        })
        .collect();
    let (a, b) = line_fit(&data)?;
    (b < 0.0).then(|| -a / b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn rescaled(k: f64, chi: f64) -> Params {
        Params::new(1, k, chi, Frame::Rescaled).unwrap()
    }

    #[test]
    fn velocity_is_minus_scaled_energy_gradient() {
        for &(k, chi, corr) in &[(-0.5, 0.3, true), (0.0, 0.7, true), (0.4, 1.1, true), (0.4, 1.1, false)] {
            let model = DiscreteModel::new(rescaled(k, chi), corr).unwrap();
            let x: Vec<f64> = (0..12).map(|i| -1.0 + 0.17 * i as f64 + 0.01 * (i as f64).sin()).collect();
            let v = model.velocity(&x).unwrap();
            let dw = 1.0 / x.len() as f64;
            for i in 0..x.len() {
                let eps = 1e-6;
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[i] += eps;
                xm[i] -= eps;
                let fd = (model.energy(&xp).unwrap().total - model.energy(&xm).unwrap().total) / (2.0 * eps);
                assert_relative_eq!(v[i], -fd / dw, epsilon = 1e-6, max_relative = 1e-6);
            }
        }
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        for &k in &[-0.5, 0.0, 0.6] {
            let model = DiscreteModel::new(rescaled(k, 0.8), true).unwrap();
            let x: Vec<f64> = (0..9).map(|i| -0.8 + 0.2 * i as f64 + 0.02 * (i as f64 * 1.3).cos()).collect();
            let (_, jac) = model.velocity_and_jacobian(&x, true);
            let jac = jac.unwrap();
            for l in 0..x.len() {
                let eps = 1e-7;
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[l] += eps;
                xm[l] -= eps;
                let vp = model.velocity(&xp).unwrap();
                let vm = model.velocity(&xm).unwrap();
                for i in 0..x.len() {
                    let fd = (vp[i] - vm[i]) / (2.0 * eps);
                    assert_relative_eq!(jac[(i, l)], fd, epsilon = 1e-4, max_relative = 1e-5);
                }
            }
        }
    }

    #[test]
    fn symmetric_state_has_antisymmetric_velocity() {
        let x = Pseudoinverse::gaussian(0.0, 0.4, 40).unwrap();
        let v = velocity(&x, &rescaled(-0.3, 0.5)).unwrap();
        for i in 0..20 {
            assert_relative_eq!(v[i], -v[39 - i], epsilon = 1e-10, max_relative = 1e-10);
        }
        assert!(v.iter().sum::<f64>().abs() < 1e-9);
    }

    #[test]
    fn two_quantiles_attract() {
        let p = Params::new(1, 0.5, 1.0, Frame::Original).unwrap();
        let model = DiscreteModel::new(p, false).unwrap();
        let x = [-0.5, 0.5];
        let (v, _) = model.velocity_and_jacobian(&x, false);
        let diffusion = (0.5f64 / 1.0).powf(0.5) / 0.5;
        // interaction pulls inward by 2χΔw|X_1 - X_0|^{k-1} = 1
        assert_relative_eq!(v[0], -diffusion + 1.0, epsilon = 1e-14);
        assert_relative_eq!(v[1], diffusion - 1.0, epsilon = 1e-14);
    }

    #[test]
    fn near_diagonal_correction_improves_potential() {
        // Interaction energy of the standard normal for k = -0.5 is
        // 2^k Γ((1+k)/2) / (Γ(1/2) k).
        let k = -0.5;
        let exact =
            2f64.powf(k) * statrs::function::gamma::gamma((1.0 + k) / 2.0) / statrs::function::gamma::gamma(0.5) / k;
        let p = rescaled(k, 1.0);
        let x = Pseudoinverse::gaussian(0.0, 1.0, 400).unwrap();
        let plain = DiscreteModel::new(p, false).unwrap().energy(x.positions()).unwrap().interaction;
        let fixed = DiscreteModel::new(p, true).unwrap().energy(x.positions()).unwrap().interaction;
        assert!((fixed - exact).abs() < 1e-3 * exact.abs(), "{fixed} vs {exact}");
        assert!((plain - exact).abs() > 10.0 * (fixed - exact).abs());
    }

    #[test]
    fn log_correction_matches_gaussian_energy() {
        // ∬ log|x-y| dN(x) dN(y) = (ln 4 + ψ(1/2)) / 2
        let exact = 0.5 * (4f64.ln() + statrs::function::gamma::digamma(0.5));
        let p = rescaled(0.0, 1.0);
        let x = Pseudoinverse::gaussian(0.0, 1.0, 400).unwrap();
        let fixed = DiscreteModel::new(p, true).unwrap().energy(x.positions()).unwrap().interaction;
        assert!((fixed - exact).abs() < 2e-3, "{fixed} vs {exact}");
    }

    #[test]
    fn small_step_is_near_identity() {
        let p = rescaled(-0.5, 0.2);
        let x = Pseudoinverse::characteristic(0.1, 0.5, 50).unwrap();
        let cfg = JkoConfig::default();
        let step = step_implicit(&x, &p, 1e-9, &cfg).unwrap();
        let diff = step.next.positions().iter().zip(x.positions()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-5, "{diff}");
    }

    #[test]
    fn one_step_decreases_energy() {
        for &k in &[-0.5, 0.0, 0.5] {
            let p = rescaled(k, 0.3);
            let model = DiscreteModel::new(p, true).unwrap();
            let x = Pseudoinverse::gaussian(0.2, 0.7, 60).unwrap();
            let step = step_implicit(&x, &p, 0.01, &JkoConfig::default()).unwrap();
            let e0 = model.energy(x.positions()).unwrap().total;
            let e1 = model.energy(step.next.positions()).unwrap().total;
            assert!(e1 < e0, "k = {k}: {e1} >= {e0}");
        }
    }

    #[test]
    fn barenblatt_root_find_matches_beta_identity() {
        for &m in &[1.2, 1.5, 2.0, 3.0] {
            let b = Barenblatt::new(m).unwrap();
            assert_relative_eq!(b.d, Barenblatt::closed_form_d(m), max_relative = 1e-10);
        }
        let b = Barenblatt::new(1.5).unwrap();
        assert_relative_eq!(b.quantile(0.5), 0.0, epsilon = 1e-12);
        let x = b.quantile(0.8);
        let rule = gauss_legendre(32);
        let mass = rule.integrate(-b.support_radius(), x, |s| b.density(s));
        assert_relative_eq!(mass, 0.8, epsilon = 1e-6);
    }

    #[test]
    fn quantiles_of_piecewise_linear_density() {
        let x = Pseudoinverse::from_piecewise_linear(&[0.0, 1.0, 2.0], &[0.0, 1.0, 0.0], 4).unwrap();
        // CDF s^2/2 on [0,1]
        assert_relative_eq!(x.positions()[0], (2.0 * 0.125f64).sqrt(), epsilon = 1e-14);
        assert_relative_eq!(x.positions()[3], 2.0 - (2.0 * 0.125f64).sqrt(), epsilon = 1e-14);
        let g = Pseudoinverse::from_density(|s| (-s * s / 2.0).exp(), -9.0, 9.0, 16).unwrap();
        let exact = Pseudoinverse::gaussian(0.0, 1.0, 16).unwrap();
        for (a, b) in g.positions().iter().zip(exact.positions()) {
            assert_relative_eq!(a, b, epsilon = 1e-9);
        }
    }

    #[test]
    fn radial_reconstruction_round_trip() {
        let b = Barenblatt::new(1.5).unwrap();
        let x = b.pseudoinverse(400).unwrap();
        let rho = x.to_radial().unwrap();
        assert_relative_eq!(rho.mass(), 1.0, epsilon = 5e-3);
        assert_relative_eq!(rho.values()[0], b.density(0.0), max_relative = 1e-3);
        let back = Pseudoinverse::from_radial(&rho, 400).unwrap();
        let err = back.positions()[20..380]
            .iter()
            .zip(&x.positions()[20..380])
            .map(|(a, c)| (a - c).abs())
            .fold(0.0, f64::max);
        assert!(err < 3e-3, "{err}");
    }

    #[test]
    fn self_similar_reconstruction_scales() {
        let p = Params::new(1, -0.5, 0.2, Frame::Original).unwrap();
        let b = Barenblatt::new(1.5).unwrap();
        let rho = b.pseudoinverse(200).unwrap().to_radial().unwrap();
        let same = self_similar_reconstruct(&rho, &p, 0.0).unwrap();
        assert_eq!(same.values(), rho.values());
        let tau = 0.7;
        let later = self_similar_reconstruct(&rho, &p, tau).unwrap();
        let t = beta_inv(&p, tau).unwrap();
        assert_relative_eq!(later.mass(), rho.mass(), max_relative = 1e-12);
        assert_relative_eq!(later.second_moment(), rho.second_moment() * (2.0 * t).exp(), max_relative = 1e-12);
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(24))]

        #[test]
        fn runs_dissipate_energy_and_keep_quantiles_ordered(
            kind in 0usize..3,
            chi_frac in 0.1f64..0.8,
            gaps in proptest::collection::vec(0.02f64..0.3, 12..40),
            rescaled_frame in proptest::bool::ANY,
        ) {
            let k = [-0.5, 0.0, 0.5][kind];
            let chi = chi_frac * if k < 0.0 { 0.35 } else { 1.0 };
            let frame = if rescaled_frame { Frame::Rescaled } else { Frame::Original };
            let params = Params::new(1, k, chi, frame).unwrap();
            let mut x = vec![0.0];
            for g in &gaps {
                x.push(x.last().unwrap() + g);
            }
            let x0 = Pseudoinverse::new(x).unwrap();
            let config = JkoConfig { stop_at_steady: false, ..JkoConfig::default() };
            let report = run(&x0, &params, 0.5, &config).unwrap();
            for w in report.energies.windows(2) {
                proptest::prop_assert!(w[1].total <= w[0].total + 1e-10 * (1.0 + w[0].total.abs()));
            }
            proptest::prop_assert!(report.final_state.min_cell() > 0.0);
        }
    }
}
