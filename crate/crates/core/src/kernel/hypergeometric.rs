//! Real Gauss hypergeometric function `F(a, b; c; z)` on `[0, 1]`.
//!
//! The power series is summed directly for `z <= 0.9`. Closer to 1 the
//! linear transformation to `1 - z` is used, including the logarithmic
//! forms when `c - a - b` is an integer.

use statrs::function::gamma::{digamma, gamma};

use crate::error::{Error, Result};

/// Relative tolerance used to stop the power series.
pub const SERIES_TOL: f64 = 1e-16;
const MAX_TERMS: usize = 200_000;
const DIRECT_LIMIT: f64 = 0.9;
/// Distance from an integer below which `c - a - b` is treated as integral.
const INTEGER_SNAP: f64 = 1e-7;

/// `1/Γ(x)`, zero at the poles of Γ.
pub fn rgamma(x: f64) -> f64 {
    if x <= 0.0 && x == x.round() {
        0.0
    } else {
        1.0 / gamma(x)
    }
}

pub fn gamma_fn(x: f64) -> f64 {
    gamma(x)
}

pub fn psi_fn(x: f64) -> f64 {
    digamma(x)
}

/// Pochhammer symbol `(q)_n`.
pub fn pochhammer(q: f64, n: usize) -> f64 {
    (0..n).fold(1.0, |acc, j| acc * (q + j as f64))
}

/// Riemann zeta function for real `s != 1`, by Euler–Maclaurin summation.
pub fn riemann_zeta(s: f64) -> f64 {
    // B_2j / (2j)!
    const B: [f64; 8] = [
        1.0 / 12.0,
        -1.0 / 720.0,
        1.0 / 30_240.0,
        -1.0 / 1_209_600.0,
        1.0 / 47_900_160.0,
        -691.0 / 1_307_674_368_000.0,
        1.0 / 74_724_249_600.0,
        -3617.0 / 10_670_622_842_880_000.0,
    ];
    let n = 16.0f64;
    let mut sum: f64 = (1..16).map(|j| (j as f64).powf(-s)).sum();
    sum += n.powf(1.0 - s) / (s - 1.0) + 0.5 * n.powf(-s);
    // s (s+1) ... (s+2j-2) n^{-s-2j+1}
    let mut rising = s;
    let mut power = n.powf(-s - 1.0);
    for (j, b) in B.iter().enumerate() {
        sum += b * rising * power;
        let jf = j as f64;
        rising *= (s + 2.0 * jf + 1.0) * (s + 2.0 * jf + 2.0);
        power /= n * n;
    }
    sum
}

fn is_nonpositive_integer(c: f64) -> bool {
    c <= 0.0 && c == c.round()
}

/// Partial sums of the power series until the increment falls below
/// `tol` relative to the running sum.
pub fn series(a: f64, b: f64, c: f64, z: f64, tol: f64) -> Result<f64> {
    if is_nonpositive_integer(c) {
        return Err(Error::Domain(format!("c = {c} is a nonpositive integer")));
    }
    let mut term = 1.0;
    let mut sum = 1.0;
    for n in 0..MAX_TERMS {
        let nf = n as f64;
        term *= (a + nf) * (b + nf) / ((c + nf) * (nf + 1.0)) * z;
        sum += term;
        if term == 0.0 {
            return Ok(sum);
        }
        if term.abs() <= tol * sum.abs() && n > 2 {
            return Ok(sum);
        }
    }
    Err(Error::Numerical(format!("hypergeometric series F({a}, {b}; {c}; {z}) did not converge in {MAX_TERMS} terms")))
}

/// `F(a, b; c; z)` for `0 <= z <= 1`.
///
/// At `z = 1` the value is finite only for `c - a - b > 0`.
pub fn gauss_hypergeometric(a: f64, b: f64, c: f64, z: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&z) && !(z > -DIRECT_LIMIT && z < 0.0) {
        return Err(Error::Domain(format!("argument z = {z} outside (-0.9, 1]")));
    }
    hyp2f1_complement(a, b, c, z, 1.0 - z)
}

/// As [`gauss_hypergeometric`] with `1 - z` supplied separately so that
/// arguments extremely close to 1 keep full relative accuracy.
pub fn hyp2f1_complement(a: f64, b: f64, c: f64, z: f64, omz: f64) -> Result<f64> {
    if is_nonpositive_integer(c) {
        return Err(Error::Domain(format!("c = {c} is a nonpositive integer")));
    }
    if a == 0.0 || b == 0.0 || z == 0.0 {
        return Ok(1.0);
    }
    // terminating series
    if is_nonpositive_integer(a) || is_nonpositive_integer(b) {
        return series(a, b, c, z, SERIES_TOL);
    }
    if z <= DIRECT_LIMIT {
        return series(a, b, c, z, SERIES_TOL);
    }
    let e = c - a - b;
    if omz == 0.0 {
        if e > 0.0 {
            return Ok(gamma(c) * gamma(e) * rgamma(c - a) * rgamma(c - b));
        }
        return Err(Error::Domain(format!("F({a}, {b}; {c}; 1) diverges since c - a - b = {e} <= 0")));
    }
    let m = e.round();
    if (e - m).abs() < INTEGER_SNAP {
        let mi = m as i64;
        if mi == 0 {
            Ok(gamma(c) * log_case_zero(a, b, omz)?)
        } else if mi > 0 {
            log_case_positive(a, b, mi as usize, omz)
        } else {
            log_case_negative(a, b, (-mi) as usize, omz)
        }
    } else {
        let (reg, sing) = connection_parts(a, b, c, omz)?;
        Ok(reg + omz.powf(e) * sing)
    }
}

/// Regular and singular parts of the transformation to `1 - z`:
/// `F = reg + (1 - z)^{c-a-b} sing` for non-integral `c - a - b`.
pub fn connection_parts(a: f64, b: f64, c: f64, omz: f64) -> Result<(f64, f64)> {
    let e = c - a - b;
    let gc = gamma(c);
    let reg = gc * gamma(e) * rgamma(c - a) * rgamma(c - b) * series(a, b, 1.0 - e, omz, SERIES_TOL)?;
    let sing = gc * gamma(-e) * rgamma(a) * rgamma(b) * series(c - a, c - b, 1.0 + e, omz, SERIES_TOL)?;
    Ok((reg, sing))
}

fn log_sum<F: Fn(usize) -> f64>(coef0: f64, ratio: F, bracket: impl Fn(usize) -> f64, x: f64) -> f64 {
    let mut coef = coef0;
    let mut xn = 1.0;
    let mut sum = 0.0;
    for n in 0..MAX_TERMS {
        if n > 0 {
            coef *= ratio(n - 1);
            xn *= x;
        }
        let term = coef * xn * bracket(n);
        sum += term;
        if n > 3 && term.abs() <= SERIES_TOL * sum.abs().max(f64::MIN_POSITIVE) {
            break;
        }
        if coef * xn == 0.0 {
            break;
        }
    }
    sum
}

/// `F(a, b; a + b; z) / Γ(a + b)`.
fn log_case_zero(a: f64, b: f64, x: f64) -> Result<f64> {
    let lx = x.ln();
    let s = log_sum(
        1.0,
        |n| {
            let nf = n as f64;
            (a + nf) * (b + nf) / ((nf + 1.0) * (nf + 1.0))
        },
        |n| {
            let nf = n as f64;
            2.0 * digamma(nf + 1.0) - digamma(a + nf) - digamma(b + nf) - lx
        },
        x,
    );
    Ok(rgamma(a) * rgamma(b) * s)
}

/// `F(a, b; a + b + m; z)` for a positive integer `m`.
fn log_case_positive(a: f64, b: f64, m: usize, x: f64) -> Result<f64> {
    let mf = m as f64;
    let c = a + b + mf;
    let gc = gamma(c);
    let mut finite = 0.0;
    let mut t = 1.0;
    for n in 0..m {
        let nf = n as f64;
        if n > 0 {
            t *= (a + nf - 1.0) * (b + nf - 1.0) / (nf * (nf - mf)) * x;
        }
        finite += t;
    }
    finite *= gamma(mf) * gc * rgamma(a + mf) * rgamma(b + mf);
    let lx = x.ln();
    let coef0 = 1.0 / gamma(mf + 1.0);
    let s = log_sum(
        coef0,
        |n| {
            let nf = n as f64;
            (a + mf + nf) * (b + mf + nf) / ((nf + 1.0) * (nf + mf + 1.0))
        },
        |n| {
            let nf = n as f64;
            lx - digamma(nf + 1.0) - digamma(nf + mf + 1.0) + digamma(a + nf + mf) + digamma(b + nf + mf)
        },
        x,
    );
    // (z - 1)^m = (-x)^m
    let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
    Ok(finite - sign * x.powi(m as i32) * gc * rgamma(a) * rgamma(b) * s)
}

/// `F(a, b; a + b - m; z)` for a positive integer `m`.
fn log_case_negative(a: f64, b: f64, m: usize, x: f64) -> Result<f64> {
    let (pole, rest) = log_negative_parts(a, b, m, x);
    Ok(pole + rest)
}

/// Splits `F(a, b; a + b - m; z)`, `m >= 1`, into the part with negative
/// powers of `x = 1 - z` and the logarithmic series that stays `O(log x)`.
pub fn log_negative_parts(a: f64, b: f64, m: usize, x: f64) -> (f64, f64) {
    let mf = m as f64;
    let c = a + b - mf;
    let gc = gamma(c);
    let mut finite = 0.0;
    let mut t = 1.0;
    for n in 0..m {
        let nf = n as f64;
        if n > 0 {
            t *= (a - mf + nf - 1.0) * (b - mf + nf - 1.0) / (nf * (nf - mf)) * x;
        }
        finite += t;
    }
    finite *= gamma(mf) * gc * rgamma(a) * rgamma(b) * x.powi(-(m as i32));
    let lx = x.ln();
    let coef0 = 1.0 / gamma(mf + 1.0);
    let s = log_sum(
        coef0,
        |n| {
            let nf = n as f64;
            (a + nf) * (b + nf) / ((nf + 1.0) * (nf + mf + 1.0))
        },
        |n| {
            let nf = n as f64;
            lx - digamma(nf + 1.0) - digamma(nf + mf + 1.0) + digamma(a + nf) + digamma(b + nf)
        },
        x,
    );
    let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
    (finite, -sign * gc * rgamma(a - mf) * rgamma(b - mf) * s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// Slow direct summation in extended steps, used as an oracle.
    fn brute(a: f64, b: f64, c: f64, z: f64) -> f64 {
        let mut term = 1.0f64;
        let mut sum = 1.0f64;
        let mut comp = 0.0f64;
        for n in 0..5_000_000 {
            let nf = n as f64;
            term *= (a + nf) * (b + nf) / ((c + nf) * (nf + 1.0)) * z;
            // Kahan summation
            let y = term - comp;
            let t = sum + y;
            comp = (t - sum) - y;
            sum = t;
            if term.abs() < 1e-20 * sum.abs() {
                break;
            }
        }
        sum
    }

    #[test]
    fn zeta_reference_values() {
        assert_relative_eq!(riemann_zeta(0.0), -0.5, epsilon = 1e-14);
        assert_relative_eq!(riemann_zeta(-1.0), -1.0 / 12.0, epsilon = 1e-14);
        assert_relative_eq!(riemann_zeta(2.0), std::f64::consts::PI.powi(2) / 6.0, epsilon = 1e-14);
        assert_relative_eq!(riemann_zeta(0.5), -1.460_354_508_809_586_8, epsilon = 1e-13);
        assert_relative_eq!(riemann_zeta(-0.5), -0.207_886_224_977_354_6, epsilon = 1e-13);
    }

    #[test]
    fn value_at_zero() {
        assert_eq!(gauss_hypergeometric(0.3, 1.7, 2.2, 0.0).unwrap(), 1.0);
    }

    #[test]
    fn logarithm_identity() {
        let v = gauss_hypergeometric(1.0, 1.0, 2.0, 0.5).unwrap();
        assert_relative_eq!(v, 2.0 * 2f64.ln(), max_relative = 1e-12);
        assert_relative_eq!(v, brute(1.0, 1.0, 2.0, 0.5), max_relative = 1e-12);
    }

    #[test]
    fn gauss_sum_at_one() {
        let v = gauss_hypergeometric(0.5, 0.5, 2.0, 1.0).unwrap();
        assert_relative_eq!(v, 1.0 / gamma(1.5).powi(2), max_relative = 1e-13);
        assert!(matches!(gauss_hypergeometric(1.0, 1.0, 2.0, 1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn nonpositive_integer_c_is_rejected() {
        assert!(gauss_hypergeometric(0.5, 0.5, -2.0, 0.3).is_err());
    }

    #[test]
    fn connection_matches_brute_force() {
        let cases = [
            (0.3, 0.7, 1.9, 0.95),   // e > 0
            (1.75, 2.5, 3.0, 0.97),  // e < 0
            (1.2, 0.5, 1.0, 0.93),   // e < 0
            (-0.25, 2.5, 5.0, 0.99), // negative a
        ];
        for (a, b, c, z) in cases {
            let v = gauss_hypergeometric(a, b, c, z).unwrap();
            assert_relative_eq!(v, brute(a, b, c, z), max_relative = 1e-11);
        }
    }

    #[test]
    fn integral_exponent_forms_match_brute_force() {
        let cases = [
            (0.5, 0.5, 1.0, 0.95),  // m = 0
            (0.5, 1.5, 3.0, 0.96),  // m = +1
            (0.25, 0.75, 3.0, 0.9), // m = +2
            (3.5, 2.5, 5.0, 0.97),  // m = -1
            (3.5, 3.5, 6.0, 0.92),  // m = -1
            (1.5, 2.5, 2.0, 0.95),  // m = -2
        ];
        for (a, b, c, z) in cases {
            let v = gauss_hypergeometric(a, b, c, z).unwrap();
            assert_relative_eq!(v, brute(a, b, c, z), max_relative = 1e-11);
        }
    }

    #[test]
    fn complement_argument_near_one() {
        // F(a, b; c; z) with c - a - b > 0 approaches the Gauss sum
        let (a, b, c) = (0.4, 0.6, 2.5);
        let x = 1e-14;
        let v = hyp2f1_complement(a, b, c, 1.0 - x, x).unwrap();
        let g = gauss_hypergeometric(a, b, c, 1.0).unwrap();
        assert_relative_eq!(v, g, max_relative = 1e-12);
    }
}
