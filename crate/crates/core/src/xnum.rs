//! Complex numbers with an f64 mantissa and an exact integer base-2 exponent.
//!
//! Values like `2^(-c^2)` for large `c` or partial products of
//! `prod (1 - z/2^i)` at `|z| = 2^30` leave the f64 range quickly; keeping the
//! exponent as an `i64` keeps them representable and comparable.

use num_complex::Complex64;
use std::fmt;
use thiserror::Error;

/// Largest admissible exponent magnitude.
pub const EXP_LIMIT: i64 = 1 << 62;

/// Alignment gap beyond which the smaller addend is dropped.
pub const ABSORB_GAP: i64 = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum XnumError {
    #[error("exponent overflow: |exp2| exceeds 2^62")]
    Overflow,
    #[error("non-finite input")]
    NonFinite,
}

pub type XResult<T> = Result<T, XnumError>;

/// `(mantissa_re + i mantissa_im) * 2^exp2`.
///
/// Either the canonical zero `(0, 0, 0)` or a mantissa with modulus in `[1, 2)`.
/// `absorbed` is sticky: it records that some addend upstream was dropped
/// by the alignment gap rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogComplex {
    pub mantissa_re: f64,
    pub mantissa_im: f64,
    pub exp2: i64,
    pub absorbed: bool,
}

impl Default for LogComplex {
    fn default() -> Self {
        Self::zero()
    }
}

fn frexp_exponent(x: f64) -> i64 {
    // exponent e with 2^e <= x < 2^(e+1), for finite x > 0
    let bits = x.to_bits();
    let raw = ((bits >> 52) & 0x7ff) as i64;
    if raw == 0 {
        frexp_exponent(x * f64::from_bits(((64 + 1023) as u64) << 52)) - 64
    } else {
        raw - 1023
    }
}

/// Exact multiplication by `2^k` as long as the result stays normal.
pub fn ldexp(mut x: f64, mut k: i64) -> f64 {
    while k > 1000 {
        x *= f64::from_bits(((1000 + 1023) as u64) << 52);
        k -= 1000;
    }
    while k < -1000 {
        x *= f64::from_bits(((1023 - 1000) as u64) << 52);
        k += 1000;
    }
    x * f64::from_bits(((k + 1023) as u64) << 52)
}

fn check_exp(e: i64) -> XResult<i64> {
    if e.abs() > EXP_LIMIT {
        Err(XnumError::Overflow)
    } else {
        Ok(e)
    }
}

impl LogComplex {
    pub const fn zero() -> Self {
        Self { mantissa_re: 0.0, mantissa_im: 0.0, exp2: 0, absorbed: false }
    }

    pub const fn one() -> Self {
        Self { mantissa_re: 1.0, mantissa_im: 0.0, exp2: 0, absorbed: false }
    }

    /// Builds a normalized value from an arbitrary mantissa and exponent.
    pub fn normalize(re: f64, im: f64, exp2: i64) -> XResult<Self> {
        if !re.is_finite() || !im.is_finite() {
            return Err(XnumError::NonFinite);
        }
        if re == 0.0 && im == 0.0 {
            return Ok(Self::zero());
        }
        let m = re.abs().max(im.abs());
        let e0 = frexp_exponent(m);
        let (mut re, mut im) = (ldexp(re, -e0), ldexp(im, -e0));
        let mut e = exp2.checked_add(e0).ok_or(XnumError::Overflow)?;
        if re.hypot(im) >= 2.0 {
            re *= 0.5;
            im *= 0.5;
            e += 1;
        }
        Ok(Self { mantissa_re: re, mantissa_im: im, exp2: check_exp(e)?, absorbed: false })
    }

    pub fn from_f64(x: f64) -> XResult<Self> {
        Self::normalize(x, 0.0, 0)
    }

    pub fn from_parts(re: f64, im: f64) -> XResult<Self> {
        Self::normalize(re, im, 0)
    }

    pub fn from_c64(z: Complex64) -> XResult<Self> {
        Self::normalize(z.re, z.im, 0)
    }

    /// `2^k` exactly.
    pub fn pow2(k: i64) -> XResult<Self> {
        Ok(Self { mantissa_re: 1.0, mantissa_im: 0.0, exp2: check_exp(k)?, absorbed: false })
    }

    pub fn is_zero(&self) -> bool {
        self.mantissa_re == 0.0 && self.mantissa_im == 0.0
    }

    pub fn with_absorbed(mut self, flag: bool) -> Self {
        self.absorbed |= flag;
        self
    }

    /// Plain complex value; may overflow to infinity or flush to zero.
    pub fn to_c64(&self) -> Complex64 {
        if self.exp2 > 2000 {
            return Complex64::new(self.mantissa_re * f64::INFINITY, self.mantissa_im * f64::INFINITY);
        }
        if self.exp2 < -2000 {
            return Complex64::new(0.0, 0.0);
        }
        Complex64::new(ldexp(self.mantissa_re, self.exp2), ldexp(self.mantissa_im, self.exp2))
    }

    pub fn log2_abs(&self) -> f64 {
        xc_log2_abs(*self)
    }

    /// Argument in `(-pi, pi]`.
    pub fn arg(&self) -> f64 {
        self.mantissa_im.atan2(self.mantissa_re)
    }

    pub fn neg(&self) -> Self {
        Self { mantissa_re: -self.mantissa_re, mantissa_im: -self.mantissa_im, ..*self }
    }

    pub fn conj(&self) -> Self {
        Self { mantissa_im: -self.mantissa_im, ..*self }
    }

    pub fn scale_pow2(&self, k: i64) -> XResult<Self> {
        if self.is_zero() {
            return Ok(*self);
        }
        let e = self.exp2.checked_add(k).ok_or(XnumError::Overflow)?;
        Ok(Self { exp2: check_exp(e)?, ..*self })
    }

    pub fn mul(&self, other: &Self) -> XResult<Self> {
        xc_mul(*self, *other)
    }

    pub fn add(&self, other: &Self) -> XResult<Self> {
        xc_add(*self, *other)
    }

    pub fn sub(&self, other: &Self) -> XResult<Self> {
        xc_add(*self, other.neg())
    }

    pub fn mul_f64(&self, x: f64) -> XResult<Self> {
        xc_mul(*self, Self::from_f64(x)?)
    }

    pub fn recip(&self) -> XResult<Self> {
        if self.is_zero() {
            return Err(XnumError::NonFinite);
        }
        let d = self.mantissa_re * self.mantissa_re + self.mantissa_im * self.mantissa_im;
        let e = self.exp2.checked_neg().ok_or(XnumError::Overflow)?;
        Ok(Self::normalize(self.mantissa_re / d, -self.mantissa_im / d, e)?.with_absorbed(self.absorbed))
    }

    pub fn div(&self, other: &Self) -> XResult<Self> {
        xc_mul(*self, other.recip()?)
    }

    pub fn powi(&self, k: u32) -> XResult<Self> {
        let mut acc = Self::one();
        let mut base = *self;
        let mut k = k;
        while k > 0 {
            if k & 1 == 1 {
                acc = xc_mul(acc, base)?;
            }
            k >>= 1;
            if k > 0 {
                base = xc_mul(base, base)?;
            }
        }
        Ok(acc)
    }

    pub fn exp(&self) -> XResult<Self> {
        let z = self.to_c64();
        if !z.re.is_finite() || !z.im.is_finite() {
            return Err(XnumError::Overflow);
        }
        if z.re.abs() < 700.0 {
            return Ok(Self::from_c64(z.exp())?.with_absorbed(self.absorbed));
        }
        let t = z.re * std::f64::consts::LOG2_E;
        if t.abs() > EXP_LIMIT as f64 {
            return Err(XnumError::Overflow);
        }
        let e = t.floor();
        let mag = (t - e).exp2();
        let (s, c) = z.im.sin_cos();
        Ok(Self::normalize(mag * c, mag * s, e as i64)?.with_absorbed(self.absorbed))
    }

    pub fn sin(&self) -> XResult<Self> {
        let z = self.to_c64();
        if z.im.abs() < 700.0 && z.re.is_finite() {
            return Ok(Self::from_c64(z.sin())?.with_absorbed(self.absorbed));
        }
        // (e^{iz} - e^{-iz}) / 2i
        let iz = xc_mul(*self, Self::from_parts(0.0, 1.0)?)?;
        let d = iz.exp()?.sub(&iz.neg().exp()?)?;
        xc_mul(d, Self::from_parts(0.0, -0.5)?)
    }

    pub fn cos(&self) -> XResult<Self> {
        let z = self.to_c64();
        if z.im.abs() < 700.0 && z.re.is_finite() {
            return Ok(Self::from_c64(z.cos())?.with_absorbed(self.absorbed));
        }
        let iz = xc_mul(*self, Self::from_parts(0.0, 1.0)?)?;
        let s = iz.exp()?.add(&iz.neg().exp()?)?;
        s.scale_pow2(-1)
    }

    /// Modulus as `(mantissa, exp2)` with mantissa in `[1, 2)`, or `(0, 0)`.
    pub fn abs_parts(&self) -> (f64, i64) {
        if self.is_zero() {
            (0.0, 0)
        } else {
            (self.mantissa_re.hypot(self.mantissa_im), self.exp2)
        }
    }
}

impl fmt::Display for LogComplex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({} + {}i)*2^{}", self.mantissa_re, self.mantissa_im, self.exp2)
    }
}

pub fn xc_mul(a: LogComplex, b: LogComplex) -> XResult<LogComplex> {
    let flag = a.absorbed || b.absorbed;
    if a.is_zero() || b.is_zero() {
        return Ok(LogComplex::zero().with_absorbed(flag));
    }
    let re = a.mantissa_re * b.mantissa_re - a.mantissa_im * b.mantissa_im;
    let im = a.mantissa_re * b.mantissa_im + a.mantissa_im * b.mantissa_re;
    let e = a.exp2.checked_add(b.exp2).ok_or(XnumError::Overflow)?;
    Ok(LogComplex::normalize(re, im, check_exp(e)?)?.with_absorbed(flag))
}

pub fn xc_add(a: LogComplex, b: LogComplex) -> XResult<LogComplex> {
    let flag = a.absorbed || b.absorbed;
    if b.is_zero() {
        return Ok(a.with_absorbed(flag));
    }
    if a.is_zero() {
        return Ok(b.with_absorbed(flag));
    }
    let (hi, lo) = if a.exp2 >= b.exp2 { (a, b) } else { (b, a) };
    let gap = hi.exp2 - lo.exp2;
    if gap > ABSORB_GAP {
        return Ok(hi.with_absorbed(true));
    }
    let re = hi.mantissa_re + ldexp(lo.mantissa_re, -gap);
    let im = hi.mantissa_im + ldexp(lo.mantissa_im, -gap);
    Ok(LogComplex::normalize(re, im, hi.exp2)?.with_absorbed(flag))
}

pub fn xc_log2_abs(a: LogComplex) -> f64 {
    if a.is_zero() {
        f64::NEG_INFINITY
    } else {
        a.exp2 as f64 + a.mantissa_re.hypot(a.mantissa_im).log2()
    }
}

/// Sum with the same gap rule, in pairwise order.
pub fn xc_sum(terms: &[LogComplex]) -> XResult<LogComplex> {
    match terms.len() {
        0 => Ok(LogComplex::zero()),
        1 => Ok(terms[0]),
        n => {
            let (l, r) = terms.split_at(n / 2);
            xc_add(xc_sum(l)?, xc_sum(r)?)
        }
    }
}
