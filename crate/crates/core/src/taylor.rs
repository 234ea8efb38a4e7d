//! Taylor approximation with the Cauchy remainder and the resulting count bounds.

use crate::maps::{EntireMap, MapError};
use crate::xnum::{xc_sum, LogComplex};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;
use std::f64::consts::TAU;
use thiserror::Error;

const MAX_SAMPLES: usize = 1 << 20;

#[derive(Debug, Error)]
pub enum TaylorError {
    #[error("a must exceed 1 (got {0})")]
    InvalidA(f64),
    #[error("delta must be positive")]
    InvalidDelta,
    #[error("delta = {delta} is not below mu(f, ar)/2 = 2^{half_mu_log2}")]
    DeltaTooLarge { delta: f64, half_mu_log2: f64 },
    #[error("bound does not fit in 128 bits")]
    Overflow,
    #[error("taylor coefficients need a map C -> C")]
    NotOneVariable,
    #[error(transparent)]
    Map(#[from] MapError),
}

/// `log2` of the Cauchy remainder bound `C_a a^-k mu(f, ar)` with `C_a = a/(a-1)`.
pub fn remainder_bound(a: f64, k: u32, log2_mu_ar: f64) -> Result<f64, TaylorError> {
    if !(a > 1.0) {
        return Err(TaylorError::InvalidA(a));
    }
    Ok((a / (a - 1.0)).log2() - k as f64 * a.log2() + log2_mu_ar)
}

/// Minimal `k >= 1` with `C_a a^-k mu < delta/2`.
pub fn choose_degree(a: f64, log2_mu_ar: f64, delta: f64) -> Result<u32, TaylorError> {
    if !(a > 1.0) {
        return Err(TaylorError::InvalidA(a));
    }
    if !(delta > 0.0) {
        return Err(TaylorError::InvalidDelta);
    }
    let target = (delta / 2.0).log2();
    let ok = |k: u32| remainder_bound(a, k, log2_mu_ar).map(|b| b < target);
    let x = ((a / (a - 1.0)).log2() + log2_mu_ar - target) / a.log2();
    let mut k = if x.is_finite() { (x.floor() + 1.0).clamp(1.0, u32::MAX as f64) as u32 } else { 1 };
    while k > 1 && ok(k - 1)? {
        k -= 1;
    }
    while !ok(k)? {
        k += 1;
    }
    Ok(k)
}

fn admissible_degree(a: f64, log2_mu_ar: f64, delta: f64) -> Result<u128, TaylorError> {
    if !(delta > 0.0) {
        return Err(TaylorError::InvalidDelta);
    }
    if !(delta.log2() < log2_mu_ar - 1.0) {
        return Err(TaylorError::DeltaTooLarge { delta, half_mu_log2: log2_mu_ar - 1.0 });
    }
    Ok(choose_degree(a, log2_mu_ar, delta)? as u128)
}

fn pow(b: u128, e: u32) -> Result<u128, TaylorError> {
    b.checked_pow(e).ok_or(TaylorError::Overflow)
}

fn mul(a: u128, b: u128) -> Result<u128, TaylorError> {
    a.checked_mul(b).ok_or(TaylorError::Overflow)
}

/// `k^n + 5k (10k)^(2n-2)` for a given degree.
pub fn bezout_count(n: u32, k: u128) -> Result<u128, TaylorError> {
    let crit = mul(5 * k, pow(10 * k, 2 * n - 2)?)?;
    pow(k, n)?.checked_add(crit).ok_or(TaylorError::Overflow)
}

/// `3k (3 + 2k)^(2n-1)` for a given degree.
pub fn zeta_d_count(n: u32, k: u128) -> Result<u128, TaylorError> {
    mul(3 * k, pow(3 + 2 * k, 2 * n - 1)?)
}

pub fn bezout_bound(n: u32, a: f64, log2_mu_ar: f64, delta: f64) -> Result<u128, TaylorError> {
    bezout_count(n, admissible_degree(a, log2_mu_ar, delta)?)
}

pub fn tau_bound(n: u32, a: f64, log2_mu_ar: f64, delta: f64) -> Result<u128, TaylorError> {
    pow(admissible_degree(a, log2_mu_ar, delta)?, n)
}

pub fn zeta_d_bound(n: u32, a: f64, log2_mu_ar: f64, delta: f64) -> Result<u128, TaylorError> {
    zeta_d_count(n, admissible_degree(a, log2_mu_ar, delta)?)
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundsReport {
    pub n: u32,
    pub a: f64,
    pub log2_mu_ar: f64,
    pub delta: f64,
    pub k: u32,
    pub log2_remainder_bound: f64,
    pub bezout_bound: u128,
    pub tau_bound: u128,
    pub zeta_d_bound: u128,
}

pub fn all_bounds(n: u32, a: f64, log2_mu_ar: f64, delta: f64) -> Result<BoundsReport, TaylorError> {
    let k = admissible_degree(a, log2_mu_ar, delta)?;
    Ok(BoundsReport {
        n,
        a,
        log2_mu_ar,
        delta,
        k: k as u32,
        log2_remainder_bound: remainder_bound(a, k as u32, log2_mu_ar)?,
        bezout_bound: bezout_count(n, k)?,
        tau_bound: pow(k, n)?,
        zeta_d_bound: zeta_d_count(n, k)?,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct TaylorModel {
    pub k: u32,
    pub coeffs: Vec<Complex64>,
    pub a: f64,
    pub log2_remainder_bound: f64,
    pub samples: usize,
    pub drift: f64,
}

fn coeffs_at(map: &EntireMap, k: usize, rho: f64, m: usize) -> Result<Vec<Complex64>, TaylorError> {
    let vals = (0..m)
        .into_par_iter()
        .map(|j| {
            let t = TAU * j as f64 / m as f64;
            Ok(map.eval_c64(&[Complex64::from_polar(rho, t)])?[0])
        })
        .collect::<Result<Vec<LogComplex>, MapError>>()?;
    (0..k)
        .into_par_iter()
        .map(|j| {
            let terms = vals
                .iter()
                .enumerate()
                .map(|(s, v)| {
                    let ph = Complex64::from_polar(1.0, -TAU * ((j * s) % m) as f64 / m as f64);
                    v.mul(&LogComplex::from_c64(ph)?)
                })
                .collect::<Result<Vec<_>, _>>()
                .map_err(MapError::from)?;
            let s = xc_sum(&terms).map_err(MapError::from)?;
            Ok(s.mul_f64(1.0 / m as f64).map_err(MapError::from)?.to_c64() / rho.powi(j as i32))
        })
        .collect()
}

/// First `k` Taylor coefficients at 0 from the trapezoid rule on `|w| = rho`;
/// the sample count doubles until successive estimates of `a_j rho^j` agree to 1e-12 relative.
pub fn taylor_coeffs(map: &EntireMap, k: usize, rho: f64, samples: usize) -> Result<(Vec<Complex64>, usize, f64), TaylorError> {
    if map.n != 1 || map.m != 1 {
        return Err(TaylorError::NotOneVariable);
    }
    let mut m = samples.max(4 * k).max(64);
    let mut prev = coeffs_at(map, k, rho, m)?;
    loop {
        let next = coeffs_at(map, k, rho, 2 * m)?;
        let scaled = |c: &Complex64, j: usize| c.norm() * rho.powi(j as i32);
        let scale = next.iter().enumerate().map(|(j, c)| scaled(c, j)).fold(1.0, f64::max);
        let drift = prev.iter().zip(&next).enumerate().map(|(j, (a, b))| scaled(&(a - b), j)).fold(0.0, f64::max) / scale;
        m *= 2;
        if drift < 1e-12 || 2 * m > MAX_SAMPLES {
            return Ok((next, m, drift));
        }
        prev = next;
    }
}

pub fn taylor_model(map: &EntireMap, k: u32, a: f64, r: f64, log2_mu_ar: f64) -> Result<TaylorModel, TaylorError> {
    let (coeffs, samples, drift) = taylor_coeffs(map, k as usize, r.max(f64::MIN_POSITIVE), 64)?;
    Ok(TaylorModel { k, coeffs, a, log2_remainder_bound: remainder_bound(a, k, log2_mu_ar)?, samples, drift })
}

pub fn eval_poly(coeffs: &[Complex64], z: Complex64) -> Complex64 {
    coeffs.iter().rev().fold(Complex64::new(0.0, 0.0), |acc, c| acc * z + c)
}

/// Sampled `max |f - p|` on the circle `|z| = r` (the maximum over `B_r` by the maximum principle).
pub fn measured_remainder(map: &EntireMap, coeffs: &[Complex64], r: f64, samples: usize) -> Result<f64, TaylorError> {
    (0..samples)
        .into_par_iter()
        .map(|j| {
            let z = Complex64::from_polar(r, TAU * j as f64 / samples as f64);
            let f = map.eval_c64(&[z])?[0].to_c64();
            Ok((f - eval_poly(coeffs, z)).norm())
        })
        .try_reduce(|| 0.0, |a, b| Ok(a.max(b)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maps::{builtin, from_exprs};
    use proptest::prelude::*;
    use serde_json::{json, Value};

    fn one(src: &str) -> EntireMap {
        from_exprs(&[src.to_string()], 1).unwrap()
    }

    #[test]
    fn remainder_examples() {
        assert_eq!(remainder_bound(2.0, 0, 0.0).unwrap(), 1.0);
        assert_eq!(remainder_bound(2.0, 10, 5.0).unwrap(), -4.0);
        assert!(remainder_bound(1.0, 3, 0.0).is_err());
    }

    #[test]
    fn degree_examples() {
        assert_eq!(choose_degree(2.0, 0.0, 2.0).unwrap(), 2);
        assert_eq!(choose_degree(4.0, 10.0, 1.0).unwrap(), 6);
        let mut last = u32::MAX;
        for j in 0..60 {
            let k = choose_degree(2.0, 12.0, 2f64.powf(-20.0 + 0.5 * j as f64)).unwrap();
            assert!(k <= last);
            last = k;
        }
    }

    #[test]
    fn count_examples() {
        assert_eq!(bezout_count(1, 2).unwrap(), 12);
        assert_eq!(bezout_count(2, 3).unwrap(), 13509);
        assert_eq!(pow(5, 1).unwrap(), 5);
        assert_eq!(pow(5, 2).unwrap(), 25);
        assert_eq!(zeta_d_count(1, 1).unwrap(), 15);
        assert_eq!(zeta_d_count(2, 2).unwrap(), 2058);
        assert!(matches!(bezout_bound(1, 2.0, 3.0, 4.0), Err(TaylorError::DeltaTooLarge { .. })));
        assert!(matches!(bezout_bound(1, 2.0, 3.0, 0.0), Err(TaylorError::InvalidDelta)));
    }

    #[test]
    fn zeta_d_dominates_zero_term() {
        for n in 1..=3u32 {
            for k in 1..=100u128 {
                let zd: u128 = 3 * k * (3 + 2 * k).pow(2 * n - 1);
                assert!(zeta_d_count(n, k).unwrap() == zd && zd >= k.pow(n));
            }
        }
        // the critical-component term is not dominated at small k for n = 2
        assert!(zeta_d_count(2, 1).unwrap() < 5 * 10u128.pow(2));
    }

    #[test]
    fn exp_shift_bounds_hold() {
        let e = builtin("exp_shift_n", 1, &Value::Null).unwrap();
        let log2_mu = (20f64.exp() + 1.0).log2();
        let zeta = crate::grid::coarse_count(&e, 10.0, 0.5, 256).unwrap().zeta as u128;
        assert!(zeta <= bezout_bound(1, 2.0, log2_mu, 0.5).unwrap());
        for r in [4.0, 7.0, 10.0] {
            for delta in [0.25, 0.5, 0.9] {
                let mu = (2.0 * r as f64).exp() + 1.0;
                let t = crate::zeros::tau(&e, r, delta, 128).unwrap().tau as u128;
                assert!(t <= tau_bound(1, 2.0, mu.log2(), delta).unwrap());
            }
        }
    }

    #[test]
    fn coefficient_examples() {
        let (c, _, _) = taylor_coeffs(&one("exp(z1)"), 6, 1.0, 64).unwrap();
        let mut fact = 1.0;
        for (j, cj) in c.iter().enumerate() {
            if j > 0 {
                fact *= j as f64;
            }
            assert!((cj - 1.0 / fact).norm() < 1e-10);
        }
        let (c, _, _) = taylor_coeffs(&one("z1^3"), 5, 1.0, 64).unwrap();
        for (j, cj) in c.iter().enumerate() {
            assert!((cj - if j == 3 { 1.0 } else { 0.0 }).norm() < 1e-12);
        }
        let (c, _, _) = taylor_coeffs(&one("z1^3"), 5, 0.3, 100).unwrap();
        assert!((c[3] - 1.0).norm() < 1e-12);
    }

    #[test]
    fn exp_shift_remainder_within_bound() {
        let e = builtin("exp_shift_n", 1, &Value::Null).unwrap();
        let log2_mu = (2f64.exp() + 1.0).log2();
        let k = choose_degree(2.0, log2_mu, 1e-3).unwrap();
        let model = taylor_model(&e, k, 2.0, 1.0, log2_mu).unwrap();
        let got = measured_remainder(&e, &model.coeffs, 1.0, 4096).unwrap();
        assert!(got <= model.log2_remainder_bound.exp2() + 1e-9, "{got} vs {}", model.log2_remainder_bound.exp2());
    }

    #[test]
    fn exp_remainder_against_series_tail() {
        let log2_mu = 2f64.exp().log2();
        let b = remainder_bound(2.0, 8, log2_mu).unwrap().exp2();
        let max_tail = (0..2048)
            .map(|s| {
                let z = Complex64::from_polar(1.0, TAU * s as f64 / 2048.0);
                let (mut term, mut tail) = (Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0));
                for j in 0..40 {
                    if j >= 8 {
                        tail += term;
                    }
                    term *= z / (j + 1) as f64;
                }
                tail.norm()
            })
            .fold(0.0, f64::max);
        assert!(max_tail <= b);
    }

    // tail sum of the series of exp (odd = false) or sin (odd = true) from degree k on
    fn series_tail(z: Complex64, k: usize, odd: bool) -> Complex64 {
        let (mut term, mut tail) = (Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0));
        for j in 0..k + 80 {
            let c = if !odd {
                term
            } else if j % 2 == 1 {
                if j % 4 == 1 { term } else { -term }
            } else {
                Complex64::new(0.0, 0.0)
            };
            if j >= k {
                tail += c;
            }
            term *= z / (j + 1) as f64;
        }
        tail
    }

    #[test]
    fn empirical_cauchy_remainder_sweep() {
        for (name, odd) in [("exp", false), ("sin", true), ("exp_shift", false)] {
            for r in [0.5f64, 1.0, 2.0] {
                for a in [1.5f64, 2.0, 4.0] {
                    let big: f64 = a * r;
                    let mu: f64 = match name {
                        "exp" => big.exp(),
                        "sin" => big.sinh(),
                        _ => big.exp() + 1.0,
                    };
                    for k in 1..=20u32 {
                        let b = remainder_bound(a, k, mu.log2()).unwrap().exp2();
                        let got = (0..1024)
                            .map(|s| series_tail(Complex64::from_polar(r, TAU * s as f64 / 1024.0), k as usize, odd).norm())
                            .fold(0.0, f64::max);
                        assert!(got <= b, "{name} r={r} a={a} k={k}: {got} > {b}");
                    }
                }
            }
        }
    }

    #[test]
    fn quadrature_matches_series_for_sin() {
        let (c, _, _) = taylor_coeffs(&one("sin(z1)"), 8, 1.0, 64).unwrap();
        let want = [0.0, 1.0, 0.0, -1.0 / 6.0, 0.0, 1.0 / 120.0, 0.0, -1.0 / 5040.0];
        for (a, b) in c.iter().zip(want) {
            assert!((a - b).norm() < 1e-12);
        }
        let p = builtin("polynomial", 1, &json!({"coeffs": [1, [0, 2], 3]})).unwrap();
        let (c, _, _) = taylor_coeffs(&p, 4, 2.0, 64).unwrap();
        assert!((c[1] - Complex64::new(0.0, 2.0)).norm() < 1e-12 && (c[2] - 3.0).norm() < 1e-12 && c[3].norm() < 1e-12);
    }

    proptest! {
        #[test]
        fn bounds_monotone(n in 1u32..3, a in 1.1f64..8.0, mu in 1.0f64..40.0, dmu in 0.0f64..10.0,
                           d1 in -20.0f64..-0.5, dd in 0.0f64..10.0) {
            let (lo, hi) = ((d1 - dd).exp2(), d1.exp2());
            let b = |m: f64, d: f64| all_bounds(n, a, m, d).unwrap();
            let (x, y) = (b(mu, lo), b(mu, hi));
            prop_assert!(y.bezout_bound <= x.bezout_bound && y.tau_bound <= x.tau_bound && y.zeta_d_bound <= x.zeta_d_bound);
            let z = b(mu + dmu, hi);
            prop_assert!(y.bezout_bound <= z.bezout_bound && y.tau_bound <= z.tau_bound && y.zeta_d_bound <= z.zeta_d_bound);
        }

        #[test]
        fn chosen_degree_is_minimal(a in 1.05f64..10.0, mu in -5.0f64..60.0, d in -30.0f64..5.0) {
            let delta = d.exp2();
            let k = choose_degree(a, mu, delta).unwrap();
            let t = (delta / 2.0).log2();
            prop_assert!(remainder_bound(a, k, mu).unwrap() < t);
            prop_assert!(k == 1 || remainder_bound(a, k - 1, mu).unwrap() >= t);
        }
    }
}
