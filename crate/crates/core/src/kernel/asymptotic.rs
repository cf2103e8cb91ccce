//! Expansions of ψ_k at `s = 1` in the sub-Newtonian range `-N < k < 2 - N`.
//!
//! With `β = N + k - 2`, `C = σ_{N-1}/σ_N`, `e = (N+k-3)/2` and
//! `γ = Γ((N-1)/2) Γ(-e) / Γ(1 - k/2)`:
//!
//! ```text
//! ψ_k(1-ε)(1-ε)^α = K_1 ε^β + K_2[α] ε^{β+1} + K_0 + O(ε^{β+2}) + O(ε)
//! ψ_k(1+ε)(1+ε)^α = -K_1 ε^β + K_3[α] ε^{β+1} + K_0 + O(ε^{β+2}) + O(ε)
//! ```
//!
//! where `K_1 = Cγ/2`, `K_2[α] = K_3[α] = C(γ(N-1) - B_1)/4 - α K_1`,
//! `B_1 = γ(N-1)/(N+k-1)` and `K_0` is the regular part at `s = 1`.
//! At `k = 1 - N` the `ε^{β+1}` and constant terms merge into
//! `L log ε + L_0`.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::digamma;

use super::hypergeometric::{gamma_fn, pochhammer};
use super::psi::regular_constant;
use crate::domain::sphere_area;
use crate::error::{invalid, Result};

/// Side of the singularity at `s = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    Below,
    Above,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticConstants {
    pub n: usize,
    pub k: f64,
    pub gamma: f64,
    pub k1: f64,
    /// `None` at `k = 1 - N`, where the coefficient is infinite.
    pub b1: Option<f64>,
    /// Regular constant; `None` at `k = 1 - N`.
    pub k0: Option<f64>,
    /// `(L, L_0)` at `k = 1 - N`.
    pub log_terms: Option<(f64, f64)>,
    ratio: f64,
}

impl AsymptoticConstants {
    pub fn new(n: usize, k: f64) -> Result<Self> {
        let nf = n as f64;
        if n < 2 || !(k > -nf && k < 2.0 - nf) {
            return Err(invalid(format!("near-one expansions need N >= 2 and -N < k < 2 - N, got N = {n}, k = {k}")));
        }
        let ratio = sphere_area(n - 1) / sphere_area(n);
        let a = 1.0 - k / 2.0;
        let b1p = (nf - 1.0) / 2.0;
        let e = (nf + k - 3.0) / 2.0;
        let gamma = gamma_fn(b1p) * gamma_fn(-e) / gamma_fn(a);
        let k1 = ratio * gamma / 2.0;
        let logarithmic = (e + 1.0).abs() < 1e-7;
        let (b1, k0, log_terms) = if logarithmic {
            let l = |b: f64| digamma(a) + digamma(b) - digamma(1.0) - digamma(2.0);
            let big_l = -ratio * gamma * (a - 1.0) / 2.0;
            let l0 =
                ratio * gamma / 4.0 * (-k + (a - 1.0) * (2.0 * 2f64.ln() + (b1p - 1.0) * l(b1p) - b1p * l(b1p + 1.0)));
            (None, None, Some((big_l, l0)))
        } else {
            (Some(gamma * (nf - 1.0) / (nf + k - 1.0)), Some(regular_constant(n, k)), None)
        };
        Ok(Self { n, k, gamma, k1, b1, k0, log_terms, ratio })
    }

    /// σ_{N-1}/σ_N.
    pub fn sphere_ratio(&self) -> f64 {
        self.ratio
    }

    pub fn k2(&self, alpha: f64) -> Option<f64> {
        let nf = self.n as f64;
        self.b1.map(|b1| self.ratio * (self.gamma * (nf - 1.0) - b1) / 4.0 - alpha * self.k1)
    }

    pub fn k3(&self, alpha: f64) -> Option<f64> {
        self.k2(alpha)
    }

    /// The `ε^{N+k-1}` coefficient above `s = 1` obtained by expanding `δ^β`
    /// with the opposite sign, `-C(B_1 + γ(2k + N - 5 + 2α))/4`; kept for comparison.
    pub fn k3_sign_flipped(&self, alpha: f64) -> Option<f64> {
        let nf = self.n as f64;
        self.b1.map(|b1| -self.ratio * (b1 + self.gamma * (2.0 * self.k + nf - 5.0 + 2.0 * alpha)) / 4.0)
    }

    /// Partial sum of `B_1 = Σ_{n>=1} A_n/(n-1)!` with
    /// `A_n = B(b_1,c_1-b_1)(c_1-a)_n(b_1)_n/(c_1)_n - B(b_2,c_2-b_2)(c_2-a)_n(b_1)_n/(c_2)_n`,
    /// plus an integral estimate of the algebraic tail. Converges for `k < 1 - N` only.
    pub fn b1_series(&self, terms: usize) -> Option<f64> {
        let nf = self.n as f64;
        if self.k >= 1.0 - nf {
            return None;
        }
        let a = 1.0 - self.k / 2.0;
        let b1 = (nf - 1.0) / 2.0;
        let c1 = nf - 1.0;
        let c2 = nf;
        let beta1 = gamma_fn(b1) * gamma_fn(b1) / gamma_fn(c1);
        let beta2 = beta1 / 2.0;
        // log-domain ratios keep the products finite for many terms
        let mut t1 = beta1;
        let mut t2 = beta2;
        let mut sum = 0.0;
        let mut last = 0.0;
        for n in 1..=terms {
            let m = (n - 1) as f64;
            t1 *= (c1 - a + m) * (b1 + m) / (c1 + m);
            t2 *= (c2 - a + m) * (b1 + m) / (c2 + m);
            // divide by (n-1)!: track through ratio n/(n) after the first
            let fact = if n == 1 { 1.0 } else { 1.0 / m };
            t1 *= fact;
            t2 *= fact;
            last = t1 - t2;
            sum += last;
        }
        let _ = pochhammer;
        // terms decay like n^{e}; add ∫_{M}^{∞} c x^{e} dx with c fitted to the last term
        let e = (nf + self.k - 3.0) / 2.0;
        let mf = terms as f64;
        let tail = last * mf / (-e - 1.0);
        Some(sum + tail)
    }

    /// Expansion of `ψ_k(1 ∓ ε)(1 ∓ ε)^α` including the regular constant.
    pub fn psi_near_one(&self, eps: f64, side: Side, alpha: f64) -> f64 {
        let sgn = match side {
            Side::Below => 1.0,
            Side::Above => -1.0,
        };
        let beta = self.n as f64 + self.k - 2.0;
        match (self.k2(alpha), self.log_terms) {
            (Some(k2), _) => sgn * self.k1 * eps.powf(beta) + k2 * eps.powf(beta + 1.0) + self.k0.unwrap(),
            (None, Some((l, l0))) => sgn * self.k1 / eps + l * eps.ln() + l0 - alpha * self.k1,
            _ => unreachable!("one of the two forms is always present"),
        }
    }

    /// The two-term form `±K_1 ε^β + K_{2,3}[α] ε^{β+1}` without the regular constant.
    pub fn two_term(&self, eps: f64, side: Side, alpha: f64) -> Option<f64> {
        let sgn = match side {
            Side::Below => 1.0,
            Side::Above => -1.0,
        };
        let beta = self.n as f64 + self.k - 2.0;
        self.k2(alpha).map(|k2| sgn * self.k1 * eps.powf(beta) + k2 * eps.powf(beta + 1.0))
    }
}
