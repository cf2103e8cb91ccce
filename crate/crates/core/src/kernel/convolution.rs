//! Radial convolutions with the Riesz kernel.
//!
//! The density is the piecewise-linear interpolant of its nodal values, and
//! `W_k ∗ ρ` is integrated exactly in the angular variable and by product
//! quadrature in the radial one. Cells that touch the evaluation radius use
//! tanh–sinh; other cells are split until each piece is no longer than its
//! distance to the evaluation radius and then use an 8-point Gauss rule.

use super::asymptotic::Side;
use super::hypergeometric::{hyp2f1_complement, psi_fn};
use super::psi::PsiEvaluator;
use super::riesz;
use crate::domain::{sphere_area, Params, RadialDensity, RadialGrid};
use crate::error::{invalid, Error, Result};
use crate::quad::{adaptive, gauss_legendre, tanh_sinh, AdaptiveOptions};

const TANH_SINH_LEVELS: u32 = 5;
const LOG_TAIL_LEVELS: u32 = 2;

/// Sphere average `Φ(r, η)` of `W_k(r e - η ω)` over `ω ∈ S^{N-1}`.
#[derive(Debug, Clone)]
pub struct AngularKernel {
    n: usize,
    k: f64,
    b: f64,
    /// `G(1)` for the logarithmic kernel in `N >= 3`.
    log_g1: f64,
}

impl AngularKernel {
    pub fn new(n: usize, k: f64) -> Result<Self> {
        let nf = n as f64;
        if n == 0 || !(k > -nf && k < nf) {
            return Err(invalid(format!("kernel needs N >= 1 and -N < k < N, got N = {n}, k = {k}")));
        }
        let b = (nf - 1.0) / 2.0;
        let log_g1 = if n >= 3 { psi_fn(2.0 * b) - psi_fn(b) } else { 0.0 };
        Ok(Self { n, k, b, log_g1 })
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    /// `Φ(r, η)` with `d = |r - η|` supplied for accuracy near the diagonal.
    pub fn eval(&self, r: f64, eta: f64, d: f64) -> f64 {
        let k = self.k;
        if self.n == 1 {
            return 0.5 * (riesz(k, d) + riesz(k, r + eta));
        }
        let sum = r + eta;
        if r == 0.0 || eta == 0.0 {
            return riesz(k, sum);
        }
        if k == 0.0 && self.n == 2 {
            return r.max(eta).ln();
        }
        let z = 4.0 * r * eta / (sum * sum);
        let x = (d / sum) * (d / sum);
        if k == 0.0 {
            return sum.ln() - 0.5 * self.log_series(z, x);
        }
        let f = hyp2f1_complement(-k / 2.0, self.b, 2.0 * self.b, z, x).unwrap_or(f64::NAN);
        sum.powf(k) / k * f
    }

    /// `G(z) = Σ_{n>=1} (b)_n / ((2b)_n n) z^n`.
    fn log_series(&self, z: f64, x: f64) -> f64 {
        let b = self.b;
        let c = 2.0 * b;
        if z <= 0.9 {
            let mut coef = 1.0;
            let mut sum = 0.0;
            for n in 1..200_000 {
                let nf = n as f64;
                coef *= (b + nf - 1.0) / (c + nf - 1.0) * z;
                let term = coef / nf;
                sum += term;
                if term < 1e-17 * sum {
                    break;
                }
            }
            return sum;
        }
        // G(z) = G(1) - ∫_0^x (F(1, b; c; 1 - v) - 1)/(1 - v) dv
        let tail = tanh_sinh(0.0, x, LOG_TAIL_LEVELS, |v, dv, _| {
            let f = hyp2f1_complement(1.0, b, c, 1.0 - dv, dv).unwrap_or(f64::NAN);
            (f - 1.0) / (1.0 - v)
        });
        self.log_g1 - tail
    }
}

/// Integrals of `Φ(r, η) η^{N-1}` against the two hat functions of the cell
/// `[a, b]`, over the piece `[p, q] ⊂ [a, b]`.
fn piece_moments(ker: &AngularKernel, r: f64, a: f64, b: f64, p: f64, q: f64, acc: &mut (f64, f64)) {
    let h = b - a;
    let pw = ker.n as i32 - 1;
    if p == r || q == r {
        let left = p == r;
        let hat = |wt: fn(f64) -> f64| {
            tanh_sinh(p, q, TANH_SINH_LEVELS, |eta, dp, dq| {
                let d = if left { dp } else { dq };
                ker.eval(r, eta, d) * eta.powi(pw) * wt((eta - a) / h)
            })
        };
        acc.0 += hat(|t| 1.0 - t);
        acc.1 += hat(|t| t);
        return;
    }
    let dist = (r - p).abs().min((r - q).abs());
    if q - p > dist {
        let mid = if r < p {
            p + (q - p).min(2.0 * dist).min(0.5 * (q - p))
        } else {
            q - (q - p).min(2.0 * dist).min(0.5 * (q - p))
        };
        piece_moments(ker, r, a, b, p, mid, acc);
        piece_moments(ker, r, a, b, mid, q, acc);
        return;
    }
    for (eta, w) in gauss_legendre(8).mapped(p, q) {
        let val = w * ker.eval(r, eta, (r - eta).abs()) * eta.powi(pw);
        let t = (eta - a) / h;
        acc.0 += val * (1.0 - t);
        acc.1 += val * t;
    }
}

fn cell_moments(ker: &AngularKernel, r: f64, a: f64, b: f64) -> (f64, f64) {
    let mut acc = (0.0, 0.0);
    if r > a && r < b {
        piece_moments(ker, r, a, b, a, r, &mut acc);
        piece_moments(ker, r, a, b, r, b, &mut acc);
    } else {
        piece_moments(ker, r, a, b, a, b, &mut acc);
    }
    acc
}

/// Dense matrix `K` with `(W_k ∗ ρ)(r_i) = Σ_j K_ij ρ_j` on a fixed grid.
#[derive(Debug, Clone)]
pub struct ConvolutionMatrix {
    size: usize,
    data: Vec<f64>,
}

impl ConvolutionMatrix {
    pub fn new(grid: &RadialGrid, k: f64) -> Result<Self> {
        let ker = AngularKernel::new(grid.dim(), k)?;
        let nodes = grid.nodes();
        let size = nodes.len();
        let sigma = sphere_area(grid.dim());
        let mut data = vec![0.0; size * size];
        for (i, &r) in nodes.iter().enumerate() {
            let row = &mut data[i * size..(i + 1) * size];
            for j in 0..size - 1 {
                let (ml, mr) = cell_moments(&ker, r, nodes[j], nodes[j + 1]);
                row[j] += sigma * ml;
                row[j + 1] += sigma * mr;
            }
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("convolution matrix has non-finite entries for k = {k}")));
        }
        Ok(Self { size, data })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.size..(i + 1) * self.size]
    }

    pub fn apply(&self, values: &[f64]) -> Vec<f64> {
        assert_eq!(values.len(), self.size);
        (0..self.size).map(|i| self.row(i).iter().zip(values).map(|(a, b)| a * b).sum()).collect()
    }
}

fn check_dim(rho: &RadialDensity, params: &Params) -> Result<()> {
    if rho.dim() != params.n() {
        return Err(invalid(format!(
            "density lives in dimension {} but parameters have N = {}",
            rho.dim(),
            params.n()
        )));
    }
    Ok(())
}

/// `(W_k ∗ ρ)(r)` at an arbitrary radius.
pub fn radial_potential(rho: &RadialDensity, r: f64, params: &Params) -> Result<f64> {
    check_dim(rho, params)?;
    potential_at(rho, r, params.k())
}

pub fn potential_at(rho: &RadialDensity, r: f64, k: f64) -> Result<f64> {
    if !(r >= 0.0) {
        return Err(invalid("radius must be nonnegative"));
    }
    let ker = AngularKernel::new(rho.dim(), k)?;
    let nodes = rho.nodes();
    let vals = rho.values();
    let mut total = 0.0;
    for j in 0..nodes.len() - 1 {
        if vals[j] == 0.0 && vals[j + 1] == 0.0 {
            continue;
        }
        let (ml, mr) = cell_moments(&ker, r, nodes[j], nodes[j + 1]);
        total += ml * vals[j] + mr * vals[j + 1];
    }
    let v = rho.sigma() * total;
    if !v.is_finite() {
        return Err(Error::Numerical(format!("potential is not finite at r = {r}")));
    }
    Ok(v)
}

/// Options for [`radial_force_with`].
#[derive(Debug, Clone, Copy)]
pub struct ForceOptions {
    /// Half-width of the symmetric pairing window around `η = r`, relative to `r`.
    pub pairing_cutoff: f64,
    pub rel_tol: f64,
}

impl Default for ForceOptions {
    fn default() -> Self {
        Self { pairing_cutoff: 0.5, rel_tol: 1e-10 }
    }
}

/// Local model of the derivative kernel near `s = 1`:
/// `ψ(1 ∓ ε) ≈ ±k1 ε^β + k23/2 ε^{β+1} + k0 + L log ε`.
#[derive(Debug, Clone, Copy)]
struct LocalModel {
    k1: f64,
    beta: f64,
    k23: f64,
    k0: f64,
    log: f64,
}

enum DerivKernel {
    Line { k: f64 },
    Sphere(PsiEvaluator),
}

impl DerivKernel {
    fn new(n: usize, k: f64) -> Result<Self> {
        if n == 1 {
            if !(k > -1.0 && k < 1.0) {
                return Err(invalid("one-dimensional kernels need -1 < k < 1"));
            }
            Ok(DerivKernel::Line { k })
        } else {
            Ok(DerivKernel::Sphere(PsiEvaluator::new(n, k)?))
        }
    }

    fn psi(&self, s: f64) -> Result<f64> {
        match self {
            DerivKernel::Line { k } => {
                Ok(0.5 * ((1.0 - s).signum() * (1.0 - s).abs().powf(k - 1.0) + (1.0 + s).powf(k - 1.0)))
            }
            DerivKernel::Sphere(ev) => ev.psi(s),
        }
    }

    fn offset(&self, eps: f64, side: Side) -> Result<f64> {
        match self {
            DerivKernel::Line { k } => {
                let sg = if side == Side::Below { 1.0 } else { -1.0 };
                let s = 1.0 - sg * eps;
                Ok(0.5 * (sg * eps.powf(k - 1.0) + (1.0 + s).powf(k - 1.0)))
            }
            DerivKernel::Sphere(ev) => ev.psi_offset(eps, side),
        }
    }

    fn local(&self) -> Option<LocalModel> {
        match self {
            DerivKernel::Line { k } => {
                Some(LocalModel { k1: 0.5, beta: k - 1.0, k23: 0.0, k0: 2f64.powf(k - 2.0), log: 0.0 })
            }
            DerivKernel::Sphere(ev) => ev.asymptotics().map(|c| {
                let beta = ev.dim() as f64 + ev.k() - 2.0;
                match (c.k2(0.0), c.log_terms) {
                    (Some(k2), _) => {
                        LocalModel { k1: c.k1, beta, k23: k2 + c.k3(0.0).unwrap(), k0: c.k0.unwrap(), log: 0.0 }
                    }
                    (None, Some((l, l0))) => LocalModel { k1: c.k1, beta, k23: 0.0, k0: l0, log: l },
                    _ => unreachable!(),
                }
            }),
        }
    }
}

/// `∂_r (W_k ∗ ρ)(r) = σ_N r^{k-1} ∫ ψ_k(η/r) ρ(η) η^{N-1} dη`.
pub fn radial_force(rho: &RadialDensity, r: f64, params: &Params) -> Result<f64> {
    check_dim(rho, params)?;
    radial_force_with(rho, r, params.k(), ForceOptions::default())
}

/// [`radial_force`] with explicit options. When ψ_k is singular at `s = 1`
/// the contributions from `η = r ∓ δ` are added before integrating in `δ`,
/// which realises the principal value for `k <= 1 - N`.
pub fn radial_force_with(rho: &RadialDensity, r: f64, k: f64, opts: ForceOptions) -> Result<f64> {
    if !(r >= 0.0) {
        return Err(invalid("radius must be nonnegative"));
    }
    if r == 0.0 {
        return Ok(0.0);
    }
    let n = rho.dim();
    let kern = DerivKernel::new(n, k)?;
    let pw = n as i32 - 1;
    let f = |eta: f64| rho.value_at(eta) * eta.powi(pw);
    let r_max = rho.grid().r_max();
    let nodes = rho.nodes();
    let opts_q = AdaptiveOptions { abs_tol: 0.0, rel_tol: opts.rel_tol, max_segments: 20_000 };
    let breakpoints = |lo: f64, hi: f64| -> Vec<f64> {
        let mut pts = vec![lo];
        pts.extend(nodes.iter().copied().filter(|&x| x > lo && x < hi));
        pts.push(hi);
        pts
    };
    let mut err: Option<Error> = None;
    let mut integrand = |eta: f64| -> f64 {
        match kern.psi(eta / r) {
            Ok(p) => p * f(eta),
            Err(e) => {
                err.get_or_insert(e);
                0.0
            }
        }
    };

    let Some(model) = kern.local() else {
        // bounded kernel: split at η = r where ψ_k is only continuous
        let mut total = 0.0;
        let upper = r_max;
        if r < upper {
            total += adaptive(&mut integrand, &breakpoints(0.0, r), opts_q)?.value;
            total += adaptive(&mut integrand, &breakpoints(r, upper), opts_q)?.value;
        } else {
            total += adaptive(&mut integrand, &breakpoints(0.0, upper), opts_q)?.value;
        }
        if let Some(e) = err {
            return Err(e);
        }
        return Ok(rho.sigma() * r.powf(k - 1.0) * total);
    };

    let h = (opts.pairing_cutoff * r).min(r);
    let mut total = 0.0;
    if r - h > 0.0 {
        total += adaptive(&mut integrand, &breakpoints(0.0, r - h), opts_q)?.value;
    }
    if r + h < r_max {
        total += adaptive(&mut integrand, &breakpoints(r + h, r_max), opts_q)?.value;
    }
    if let Some(e) = err {
        return Err(e);
    }

    // symmetric window: offsets where r ± δ crosses a node
    let mut kinks: Vec<f64> = nodes.iter().map(|&x| (x - r).abs()).filter(|&d| d > 0.0 && d < h).collect();
    kinks.sort_by(f64::total_cmp);
    kinks.dedup();
    let first = kinks.first().copied().unwrap_or(h).min(h);
    let dm = 1e-6 * first.min(r);

    // analytic part on (0, dm): f linear on each side of r
    let f0 = f(r);
    let slope = |sgn: f64| {
        let dd = 1e-3 * dm;
        sgn * (f(r + sgn * dd) - f0) / dd
    };
    let (fl, fr) = (slope(-1.0), slope(1.0));
    let b2 = model.beta + 2.0;
    let mut window = -model.k1 * (fl + fr) * r.powf(-model.beta) * dm.powf(b2) / b2
        + model.k23 * f0 * r.powf(-model.beta - 1.0) * dm.powf(b2) / b2
        + 2.0 * model.k0 * f0 * dm;
    if model.log != 0.0 {
        window = -model.k1 * r * (fl + fr) * dm + 2.0 * f0 * (model.log * (dm * (dm / r).ln() - dm) + model.k0 * dm);
    }

    let mut pair_err: Option<Error> = None;
    let mut pair = |delta: f64| -> f64 {
        let eps = delta / r;
        let lo = kern.offset(eps, Side::Below).map(|p| p * f(r - delta));
        let hi = if r + delta <= r_max { kern.offset(eps, Side::Above).map(|p| p * f(r + delta)) } else { Ok(0.0) };
        match (lo, hi) {
            (Ok(a), Ok(b)) => a + b,
            (Err(e), _) | (_, Err(e)) => {
                pair_err.get_or_insert(e);
                0.0
            }
        }
    };
    let mut pts = vec![dm];
    let mut p = dm;
    while 2.0 * p < first {
        p *= 2.0;
        pts.push(p);
    }
    pts.push(first);
    pts.extend(kinks.iter().copied().filter(|&d| d > first));
    if h > *pts.last().unwrap() {
        pts.push(h);
    }
    window += adaptive(&mut pair, &pts, opts_q)?.value;
    if let Some(e) = pair_err {
        return Err(e);
    }
    Ok(rho.sigma() * r.powf(k - 1.0) * (total + window))
}

/// Checks of the two-sided bound `I_k ≤ W_k ∗ ρ ≤ η (r^k/k ‖ρ‖_1 + I_k)`,
/// `η = max(1, 2^{k-1})`, for `k ∈ (0, N)` at every node of `potential`.
pub fn moment_sandwich_violations(rho: &RadialDensity, potential: &[f64], k: f64, rel_tol: f64) -> Vec<usize> {
    let ik = rho.moment(k) / k;
    let mass = rho.mass();
    let eta = 1f64.max(2f64.powf(k - 1.0));
    rho.nodes()
        .iter()
        .zip(potential)
        .enumerate()
        .filter(|(_, (&r, &v))| {
            let upper = eta * (r.powf(k) / k * mass + ik);
            let slack = rel_tol * upper.abs().max(ik.abs());
            v < ik - slack || v > upper + slack
        })
        .map(|(i, _)| i)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{Frame, RadialGrid};
    use crate::kernel::psi::quadrature_psi;
    use approx::assert_relative_eq;
    use std::sync::Arc;

    /// Angular average by direct θ-quadrature.
    fn phi_oracle(n: usize, k: f64, r: f64, eta: f64) -> f64 {
        let ratio = sphere_area(n - 1) / sphere_area(n);
        let est = adaptive(
            |th: f64| {
                let d2 = (r - eta).powi(2) + 4.0 * r * eta * (0.5 * th).sin().powi(2);
                riesz(k, d2.sqrt()) * th.sin().powi(n as i32 - 2)
            },
            &[0.0, 1e-3, 1e-2, 0.1, 1.0, std::f64::consts::PI],
            AdaptiveOptions { abs_tol: 1e-15, rel_tol: 1e-13, max_segments: 10_000 },
        )
        .unwrap();
        ratio * est.value
    }

    #[test]
    fn angular_kernel_matches_quadrature() {
        for (n, k) in [(2, -0.5), (3, 0.5), (3, 0.0), (4, 0.0), (6, -3.0), (6, -4.5), (2, 0.0), (3, -1.0)] {
            let ker = AngularKernel::new(n, k).unwrap();
            for (r, eta) in [(1.0, 0.3), (1.0, 0.97), (1.0, 1.02), (0.2, 5.0), (1.0, 0.999)] {
                let v = ker.eval(r, eta, (r - eta).abs());
                assert_relative_eq!(v, phi_oracle(n, k, r, eta), max_relative = 1e-9, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn log_kernel_series_in_three_dimensions() {
        let ker = AngularKernel::new(3, 0.0).unwrap();
        for z in [0.3f64, 0.89, 0.91, 0.99, 1.0 - 1e-6, 1.0 - 1e-12] {
            let x = 1.0 - z;
            let exact = 1.0 + x * x.ln() / z;
            assert_relative_eq!(ker.log_series(z, x), exact, max_relative = 1e-14);
        }
    }

    fn uniform_ball(n: usize, count: usize, r_max: f64) -> RadialDensity {
        // exact step at r = 1 with a node there and the ramp outside
        let mut nodes: Vec<f64> = (0..count).map(|i| i as f64 / (count - 1) as f64).collect();
        let h = 1.0 / (count - 1) as f64;
        let mut r = 1.0 + 1e-9;
        nodes.push(r);
        while r < r_max {
            r += h;
            nodes.push(r);
        }
        let grid = Arc::new(RadialGrid::from_nodes(n, nodes).unwrap());
        let vol = sphere_area(n) / n as f64;
        RadialDensity::from_fn(grid, |r| if r <= 1.0 { 1.0 / vol } else { 0.0 }).unwrap()
    }

    #[test]
    fn one_dimensional_uniform_at_origin() {
        // ρ = 1 on [-1/2, 1/2], k = 0.5: (1/k) ∫ |y|^k = 2 (1/2)^{k+1} / (k (k+1))
        let mut nodes: Vec<f64> = (0..=100).map(|i| 0.5 * i as f64 / 100.0).collect();
        nodes.push(0.5 + 1e-12);
        nodes.push(1.0);
        let grid = Arc::new(RadialGrid::from_nodes(1, nodes).unwrap());
        let rho = RadialDensity::from_fn(grid, |r| if r <= 0.5 { 1.0 } else { 0.0 }).unwrap();
        let p = Params::new(1, 0.5, 1.0, Frame::Original).unwrap();
        let v = radial_potential(&rho, 0.0, &p).unwrap();
        let exact = 2.0 * 0.5f64.powf(1.5) / (0.5 * 1.5);
        assert_relative_eq!(v, exact, max_relative = 1e-9);
        assert_relative_eq!(v, 0.942809, max_relative = 1e-6);
    }

    #[test]
    fn newtonian_shell_theorem() {
        let rho = uniform_ball(3, 81, 1.5);
        let p = Params::new(3, -1.0, 1.0, Frame::Original).unwrap();
        let f = radial_force(&rho, 0.5, &p).unwrap();
        assert_relative_eq!(f, 0.5, max_relative = 1e-8);
    }

    #[test]
    fn matrix_agrees_with_point_evaluation() {
        let grid = Arc::new(RadialGrid::graded(3, 4.0, 0.01, 1.1, 0.2).unwrap());
        let rho = RadialDensity::from_fn(grid.clone(), |r| (-r * r).exp()).unwrap();
        for k in [-1.5, 0.0, 0.5, -2.5] {
            let m = ConvolutionMatrix::new(&grid, k).unwrap();
            let pot = m.apply(rho.values());
            for i in [0, 3, 17, grid.len() - 1] {
                let v = potential_at(&rho, grid.nodes()[i], k).unwrap();
                assert_relative_eq!(pot[i], v, max_relative = 1e-12, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn force_is_derivative_of_potential() {
        let cases = [(1, 0.5), (1, -0.5), (1, 0.0), (3, -1.5), (3, -2.2), (2, 0.5), (6, -4.5), (6, -5.0), (6, -5.5)];
        for (n, k) in cases {
            let grid = Arc::new(RadialGrid::graded(n, 6.0, 0.005, 1.05, 0.05).unwrap());
            let rho = RadialDensity::from_fn(grid, |r| (-r * r).exp()).unwrap();
            for r in [0.37, 1.1] {
                let h = 1e-4;
                let d = (potential_at(&rho, r + h, k).unwrap() - potential_at(&rho, r - h, k).unwrap()) / (2.0 * h);
                let f = radial_force_with(&rho, r, k, ForceOptions::default()).unwrap();
                assert!((f - d).abs() <= 1e-5 * d.abs(), "N={n} k={k} r={r}: {f} vs {d}");
            }
        }
    }

    #[test]
    fn pairing_cutoff_stability() {
        for (n, k) in [(1, -0.5), (3, -2.0), (3, -2.5), (6, -5.5)] {
            let grid = Arc::new(RadialGrid::graded(n, 6.0, 0.005, 1.05, 0.05).unwrap());
            let rho = RadialDensity::from_fn(grid, |r| (-r * r).exp()).unwrap();
            let r = 0.8;
            let a = radial_force_with(&rho, r, k, ForceOptions { pairing_cutoff: 0.5, ..Default::default() }).unwrap();
            let b = radial_force_with(&rho, r, k, ForceOptions { pairing_cutoff: 0.25, ..Default::default() }).unwrap();
            assert!((a - b).abs() <= 1e-6 * a.abs(), "N={n} k={k}: {a} {b}");
        }
    }

    #[test]
    fn fast_diffusion_force_is_positive() {
        let grid = Arc::new(RadialGrid::graded(2, 5.0, 0.01, 1.1, 0.1).unwrap());
        let rho = RadialDensity::from_fn(grid, |r| 1.0 / (1.0 + r * r).powi(3)).unwrap();
        for k in [0.3, 1.0, 1.5] {
            for r in [0.05, 0.5, 2.0, 4.9] {
                assert!(radial_force_with(&rho, r, k, ForceOptions::default()).unwrap() > 0.0);
            }
        }
        assert!(quadrature_psi(2, 0.5, 0.5, 1e-12).unwrap() > 0.0);
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(12))]
        #[test]
        fn moment_sandwich_holds(
            n in 1usize..=3,
            k in proptest::sample::select(vec![0.2, 0.5, 1.0]),
            steps in proptest::collection::vec(0.01f64..1.0, 40),
        ) {
            let grid = Arc::new(RadialGrid::uniform(n, 3.0, 41).unwrap());
            let mut values = vec![0.0; 41];
            for i in (0..40).rev() {
                values[i] = values[i + 1] + steps[i];
            }
            let rho = RadialDensity::new(grid.clone(), values).unwrap().normalized().unwrap();
            let pot = ConvolutionMatrix::new(&grid, k).unwrap().apply(rho.values());
            let bad = moment_sandwich_violations(&rho, &pot, k, 1e-9);
            proptest::prop_assert!(bad.is_empty(), "violations at {:?}", bad);
        }
    }
}
