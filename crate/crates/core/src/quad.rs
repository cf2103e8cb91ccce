//! Quadrature primitives used across the crate.
//!
//! Three rules are provided:
//!
//! * fixed Gauss–Legendre rules, cached per order, for smooth cell integrals;
//! * an adaptive Gauss–Kronrod (7/15) integrator with a global error queue
//!   and user-supplied breakpoints;
//! * a tanh–sinh (double exponential) rule for integrands with algebraic
//!   endpoint singularities.

use std::collections::BinaryHeap;
use std::sync::OnceLock;

use crate::error::{Error, Result};

/// Nodes and weights of a Gauss–Legendre rule on `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    /// Builds an `n`-point rule by Newton iteration on the Legendre polynomial.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "Gauss-Legendre rule needs at least one node");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let nf = n as f64;
        for i in 0..n.div_ceil(2) {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre_with_derivative(n, x);
            dp = if d != 0.0 { d } else { dp };
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        Self { nodes, weights }
    }

    /// Integrates `f` over `[a, b]`.
    pub fn integrate<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, mut f: F) -> f64 {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(mid + half * x)).sum::<f64>() * half
    }

    /// Nodes and weights mapped to `[a, b]`.
    pub fn mapped(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.nodes.iter().zip(&self.weights).map(move |(&x, &w)| (mid + half * x, w * half))
    }
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for j in 2..=n {
        let jf = j as f64;
        let p2 = ((2.0 * jf - 1.0) * x * p1 - (jf - 1.0) * p0) / jf;
        p0 = p1;
        p1 = p2;
    }
    let nf = n as f64;
    let d = nf * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Shared Gauss–Legendre rules of small order.
pub fn gauss_legendre(n: usize) -> &'static GaussLegendre {
    static RULES: OnceLock<Vec<GaussLegendre>> = OnceLock::new();
    let rules = RULES.get_or_init(|| (1..=32).map(GaussLegendre::new).collect());
    assert!((1..=32).contains(&n), "cached rules cover orders 1..=32");
    &rules[n - 1]
}

// Kronrod 15-point abscissae and weights, Gauss 7-point weights (QUADPACK qk15).
const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_3,
    0.949_107_912_342_758_524_526_189_684_047_9,
    0.864_864_423_359_769_072_789_712_788_640_9,
    0.741_531_185_599_394_439_863_864_773_280_8,
    0.586_087_235_467_691_130_294_144_845_693_0,
    0.405_845_151_377_397_166_906_606_412_076_96,
    0.207_784_955_007_898_467_600_689_403_773_2,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_97,
    0.063_092_092_629_978_553_290_700_663_189_2,
    0.104_790_010_322_250_183_839_876_322_541_5,
    0.140_653_259_715_525_918_745_189_590_510_2,
    0.169_004_726_639_267_902_826_583_426_598_6,
    0.190_350_578_064_785_409_913_256_402_421_0,
    0.204_432_940_075_298_892_414_161_999_234_6,
    0.209_482_141_084_727_828_012_999_174_891_7,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_1,
    0.279_705_391_489_276_667_901_467_771_423_8,
    0.381_830_050_505_118_944_950_369_775_489_0,
    0.417_959_183_673_469_387_755_102_040_816_3,
];

fn gk15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> (f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut resk = fc * WGK[7];
    let mut resg = fc * WG[3];
    for j in 0..7 {
        let dx = half * XGK[j];
        let f1 = f(center - dx);
        let f2 = f(center + dx);
        resk += WGK[j] * (f1 + f2);
        if j % 2 == 1 {
            resg += WG[j / 2] * (f1 + f2);
        }
    }
    let val = resk * half;
    let err = ((resk - resg) * half).abs();
    (val, err)
}

#[derive(Debug, Clone, Copy)]
struct Segment {
    a: f64,
    b: f64,
    val: f64,
    err: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.err == other.err
    }
}
impl Eq for Segment {}
impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Segment {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.err.total_cmp(&other.err)
    }
}

/// Result of an adaptive integration.
#[derive(Debug, Clone, Copy)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
    pub evaluations: usize,
}

/// Options for [`adaptive`].
#[derive(Debug, Clone, Copy)]
pub struct AdaptiveOptions {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_segments: usize,
}

impl Default for AdaptiveOptions {
    fn default() -> Self {
        Self { abs_tol: 1e-14, rel_tol: 1e-12, max_segments: 4000 }
    }
}

/// Globally adaptive Gauss–Kronrod integration over the partition given by
/// `points` (sorted, at least two entries).
pub fn adaptive<F: FnMut(f64) -> f64>(mut f: F, points: &[f64], opts: AdaptiveOptions) -> Result<Estimate> {
    if points.len() < 2 {
        return Err(Error::InvalidArgument("need at least two breakpoints".into()));
    }
    let mut heap = BinaryHeap::new();
    let mut total = 0.0;
    let mut total_err = 0.0;
    let mut evals = 0;
    for w in points.windows(2) {
        if w[1] <= w[0] {
            continue;
        }
        let (val, err) = gk15(&mut f, w[0], w[1]);
        evals += 15;
        total += val;
        total_err += err;
        heap.push(Segment { a: w[0], b: w[1], val, err });
    }
    let mut segments = heap.len();
    while total_err > opts.abs_tol.max(opts.rel_tol * total.abs()) {
        if segments >= opts.max_segments {
            if !total.is_finite() {
                return Err(Error::Numerical("adaptive quadrature produced a non-finite value".into()));
            }
            return Err(Error::Numerical(format!(
                "adaptive quadrature did not converge: value {total:e}, error estimate {total_err:e}"
            )));
        }
        let Some(seg) = heap.pop() else { break };
        let mid = 0.5 * (seg.a + seg.b);
        if mid <= seg.a || mid >= seg.b {
            // interval can no longer be split; accept it as is
            heap.push(Segment { err: 0.0, ..seg });
            total_err -= seg.err;
            continue;
        }
        let (v1, e1) = gk15(&mut f, seg.a, mid);
        let (v2, e2) = gk15(&mut f, mid, seg.b);
        evals += 30;
        total += v1 + v2 - seg.val;
        total_err += e1 + e2 - seg.err;
        heap.push(Segment { a: seg.a, b: mid, val: v1, err: e1 });
        heap.push(Segment { a: mid, b: seg.b, val: v2, err: e2 });
        segments += 1;
    }
    // re-sum to limit drift from the incremental updates
    let value: f64 = heap.iter().map(|s| s.val).sum();
    let error: f64 = heap.iter().map(|s| s.err).sum();
    if !value.is_finite() {
        return Err(Error::Numerical("adaptive quadrature produced a non-finite value".into()));
    }
    Ok(Estimate { value, error, evaluations: evals })
}

/// Tanh–sinh rule on `[a, b]`.
///
/// `f` receives `(x, distance to a, distance to b)` so that integrands with
/// endpoint singularities can be evaluated without cancellation. The level
/// count controls refinement: step `h = 2^-levels`.
pub fn tanh_sinh<F: FnMut(f64, f64, f64) -> f64>(a: f64, b: f64, levels: u32, mut f: F) -> f64 {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let h = 0.5f64.powi(levels as i32);
    let pi2 = std::f64::consts::FRAC_PI_2;
    let mut sum = pi2 * f(mid, half, half);
    let mut j = 1usize;
    loop {
        let t = j as f64 * h;
        let s = pi2 * t.sinh();
        let c = pi2 * t.cosh();
        let e = s.exp();
        let ei = 1.0 / e;
        // 1 - tanh(s) = 2 e^{-s} / (e^s + e^{-s})
        let compl = 2.0 * ei / (e + ei);
        let x = 1.0 - compl;
        let sech2 = 4.0 / ((e + ei) * (e + ei));
        let w = c * sech2;
        if w < 1e-300 || compl * half < f64::MIN_POSITIVE {
            break;
        }
        let dist = compl * half;
        let fr = f(b - dist, half * (1.0 + x), dist);
        let fl = f(a + dist, dist, half * (1.0 + x));
        let term = w * (fr + fl);
        sum += term;
        if t > 6.0 || (term.abs() < 1e-18 * sum.abs() && t > 3.0) {
            break;
        }
        j += 1;
    }
    sum * h * half
}
