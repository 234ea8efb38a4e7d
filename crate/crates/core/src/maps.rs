//! Built-in entire maps, expression-backed maps and maximum-modulus estimates.
//!
//! The Cornalba-Shiffman pair `F(z, w) = (g(z), f(z, w))` with
//! `g(z) = prod_{i>=1} (1 - z/2^i)` and
//! `f(z, w) = sum_i 2^(-c_i^2) g_i(z) P_{c_i}(w)`, `P_c(w) = prod_{j<=c} (w - 1/j)`,
//! is evaluated with analytic truncation indices.

use crate::expr::{self, ExprAst, ExprError};
use crate::xnum::{xc_add, LogComplex, XnumError};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

pub const DEFAULT_TRUNCATION: f64 = 8.881784197001252e-16; // 2^-50

/// Terms with `c_i` beyond this have coefficient below `2^(-2^62)`.
const C_MAX: u64 = 1 << 31;

/// Tail bounds below `2^ABS_FLOOR` stop a series even when the partial sum vanishes.
const ABS_FLOOR: f64 = -65536.0;

/// Largest supported `log2 |z|` for the product `g`.
const MAX_LOG2_Z: f64 = 1_048_576.0;

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MapError {
    #[error("unknown builtin map '{0}'")]
    UnknownBuiltin(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("argument out of range: {0}")]
    Domain(String),
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error(transparent)]
    Num(#[from] XnumError),
}

#[derive(Debug, Clone, PartialEq)]
pub enum CSpec {
    /// `c_i = floor(exp2^l (lambda i))`.
    Pow { lambda: f64, l: u32 },
    /// Finitely many terms; the series for `f` stops with the list.
    Explicit(Vec<u64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CSParams {
    pub c_spec: CSpec,
    pub truncation_rel_err: f64,
}

impl Default for CSParams {
    fn default() -> Self {
        Self { c_spec: CSpec::Pow { lambda: 1.0, l: 1 }, truncation_rel_err: DEFAULT_TRUNCATION }
    }
}

impl CSParams {
    pub fn new(c_spec: &str, truncation_rel_err: f64) -> Result<Self, MapError> {
        let spec = parse_c_spec(c_spec)?;
        let p = Self { c_spec: spec, truncation_rel_err };
        p.validate()?;
        Ok(p)
    }

    pub fn from_spec(c_spec: &str) -> Result<Self, MapError> {
        Self::new(c_spec, DEFAULT_TRUNCATION)
    }

    pub fn spec_string(&self) -> String {
        match &self.c_spec {
            CSpec::Pow { lambda, l } => format!("pow:{lambda},{l}"),
            CSpec::Explicit(v) => {
                let items: Vec<String> = v.iter().map(|c| c.to_string()).collect();
                format!("explicit:[{}]", items.join(","))
            }
        }
    }

    /// `c_i` for `i >= 1` as a real number, possibly huge.
    pub fn c_real(&self, i: usize) -> Option<f64> {
        match &self.c_spec {
            CSpec::Pow { lambda, l } => {
                let mut x = lambda * i as f64;
                for _ in 0..*l {
                    x = x.exp2();
                }
                Some(x.floor())
            }
            CSpec::Explicit(v) => v.get(i.checked_sub(1)?).map(|&c| c as f64),
        }
    }

    /// `c_i` when it is small enough for its term to matter.
    pub fn c(&self, i: usize) -> Option<u64> {
        let c = self.c_real(i)?;
        if c.is_finite() && c <= C_MAX as f64 {
            Some(c as u64)
        } else {
            None
        }
    }

    pub fn validate(&self) -> Result<(), MapError> {
        let t = self.truncation_rel_err;
        if !(t >= 2f64.powi(-60) && t <= 0.5) {
            return Err(MapError::InvalidParams("truncation_rel_err must lie in [2^-60, 1/2]".into()));
        }
        if let CSpec::Pow { lambda, .. } = self.c_spec {
            if !(lambda > 0.0 && lambda.is_finite()) {
                return Err(MapError::InvalidParams("lambda must be positive".into()));
            }
        }
        let mut prev = 0.0;
        for i in 1..=64 {
            let Some(c) = self.c_real(i) else { break };
            if c >= 2f64.powi(53) {
                break;
            }
            if c < 1.0 || c <= prev {
                return Err(MapError::InvalidParams(format!("c-sequence not strictly increasing positive at i={i}")));
            }
            prev = c;
        }
        Ok(())
    }
}

fn parse_c_spec(s: &str) -> Result<CSpec, MapError> {
    let bad = || MapError::InvalidParams(format!("bad c_spec '{s}'"));
    if let Some(rest) = s.strip_prefix("pow:") {
        let (lam, l) = rest.split_once(',').ok_or_else(bad)?;
        let lambda: f64 = lam.trim().parse().map_err(|_| bad())?;
        let l: u32 = l.trim().parse().map_err(|_| bad())?;
        Ok(CSpec::Pow { lambda, l })
    } else if let Some(rest) = s.strip_prefix("explicit:") {
        let v: Vec<u64> = serde_json::from_str(rest.trim()).map_err(|_| bad())?;
        if v.is_empty() {
            return Err(bad());
        }
        Ok(CSpec::Explicit(v))
    } else {
        Err(bad())
    }
}

/// `prod_{i>=1} (1 + 2^-i)`; the factors past 200 change nothing in f64.
pub fn prod_one_plus_pow2() -> f64 {
    (1..=200).fold(1.0, |acc, i| acc * (1.0 + (-i as f64).exp2()))
}

/// `prod_{m>=1} (1 - 2^-m)`.
pub fn prod_one_minus_pow2() -> f64 {
    (1..=200).fold(1.0, |acc, i| acc * (1.0 - (-i as f64).exp2()))
}

/// `C_0 = 1/2 prod_{i>=1} (1 - 3/2^(i+1))`.
pub fn c0_const() -> f64 {
    0.5 * (1..=200).fold(1.0, |acc, i| acc * (1.0 - 3.0 * (-(i as f64) - 1.0).exp2()))
}

/// Additive constant in the upper growth bound for `F`.
pub fn cs_const_c() -> f64 {
    4.0 + prod_one_plus_pow2().log2()
}

/// Two-sided bound on `log2 mu(F, r)`.
pub fn mu_cs_bounds(r: f64) -> Result<(f64, f64), MapError> {
    if !(r >= 2.0) {
        return Err(MapError::Domain("r must be at least 2".into()));
    }
    let l = r.log2();
    Ok((0.5 * l * l - 1.5 * l + 1.0, 1.5 * l * l + 3.5 * l + cs_const_c()))
}

// a + b; a dropped part below 2^-100 relative is charged to the truncation
// budget (tol >= 2^-60) instead of raising the sticky flag
fn budget_add(a: LogComplex, b: LogComplex) -> Result<LogComplex, XnumError> {
    let flag = a.absorbed || b.absorbed;
    let s = xc_add(a, b)?;
    Ok(LogComplex { absorbed: flag, ..s })
}

fn budget_sub(a: LogComplex, b: LogComplex) -> Result<LogComplex, XnumError> {
    budget_add(a, b.neg())
}

/// `log2 prod_{j>=1} (1 + rho 2^-j)` for `rho = 2^t`, a bound for every `|g_i|` on `|z| <= rho`.
pub fn log2_g_majorant(t: f64) -> f64 {
    if t == f64::NEG_INFINITY {
        return 0.0;
    }
    let jmax = (t.max(0.0) + 64.0).ceil() as i64;
    let mut s = 0.0;
    for j in 1..=jmax {
        let e = t - j as f64;
        s += if e > 0.0 { e + (1.0 + (-e).exp2()).log2() } else { (1.0 + e.exp2()).log2() };
    }
    // tail: sum_{j>jmax} log2(1 + x_j) <= (rho 2^-jmax) / ln 2
    s + (t - jmax as f64).exp2() * std::f64::consts::LOG2_E * 1.0001
}

fn g_factor_count(log2z: f64, tol: f64) -> usize {
    if log2z == f64::NEG_INFINITY {
        return 1;
    }
    // 2^-N |z| <= 1/2 and |log tail| <= 2|z|2^-N <= tol/4
    let need = (log2z + 3.0 - tol.log2()).max(log2z + 1.0);
    need.ceil().max(1.0) as usize
}

/// `z == 2^k` exactly for some `k >= 1`.
fn dyadic_index(z: &LogComplex) -> Option<usize> {
    (z.mantissa_re == 1.0 && z.mantissa_im == 0.0 && z.exp2 >= 1).then_some(z.exp2 as usize)
}

fn g_factors(z: &LogComplex, tol: f64) -> Result<Vec<LogComplex>, MapError> {
    let lz = z.log2_abs();
    if lz > MAX_LOG2_Z {
        return Err(MapError::Domain("|z| too large for the product".into()));
    }
    let n = g_factor_count(lz, tol);
    (1..=n).map(|i| Ok(budget_sub(LogComplex::one(), z.scale_pow2(-(i as i64))?)?)).collect()
}

fn product(v: &[LogComplex]) -> Result<LogComplex, XnumError> {
    v.iter().try_fold(LogComplex::one(), |acc, x| acc.mul(x))
}

/// `g(z)` with relative error at most `tol`; exact zero at `z = 2^k`.
pub fn cs_g(z: LogComplex, tol: f64) -> Result<LogComplex, MapError> {
    if dyadic_index(&z).is_some() {
        return Ok(LogComplex::zero());
    }
    Ok(product(&g_factors(&z, tol)?)?)
}

/// `g_i(2^i) = (-1)^(i-1) prod_{m<i} (2^m - 1) prod_{m>=1} (1 - 2^-m)`.
pub fn cs_gi_at_pow2(i: usize) -> Result<LogComplex, MapError> {
    let mut acc = LogComplex::from_f64(prod_one_minus_pow2())?;
    for m in 1..i {
        let f = if m < 53 {
            LogComplex::from_f64((m as f64).exp2() - 1.0)?
        } else {
            LogComplex::pow2(m as i64)?
        };
        acc = acc.mul(&f)?;
    }
    Ok(if i.is_multiple_of(2) { acc.neg() } else { acc })
}

/// `log2 |g_i(2^i)|`.
pub fn log2_gi_at_pow2(i: usize) -> f64 {
    let mut s = prod_one_minus_pow2().log2();
    for m in 1..i {
        s += if m < 53 { ((m as f64).exp2() - 1.0).log2() } else { m as f64 };
    }
    s
}

/// `g_i(z)`: `g` with the `i`-th factor removed.
pub fn cs_gi(i: usize, z: LogComplex, tol: f64) -> Result<LogComplex, MapError> {
    if let Some(k) = dyadic_index(&z) {
        return if k == i { cs_gi_at_pow2(i) } else { Ok(LogComplex::zero()) };
    }
    let f = g_factors(&z, tol)?;
    if i <= f.len() {
        let mut acc = LogComplex::one();
        for (j, x) in f.iter().enumerate() {
            if j + 1 != i {
                acc = acc.mul(x)?;
            }
        }
        Ok(acc)
    } else {
        let phi = budget_sub(LogComplex::one(), z.scale_pow2(-(i as i64))?)?;
        Ok(product(&f)?.div(&phi)?)
    }
}

fn inv_j(j: u64) -> Result<LogComplex, XnumError> {
    LogComplex::from_f64(1.0 / j as f64)
}

/// `P_c(w) = prod_{j=1}^{c} (w - 1/j)`.
pub fn cs_p(c: u64, w: LogComplex) -> Result<LogComplex, MapError> {
    let mut acc = LogComplex::one();
    for j in 1..=c {
        acc = acc.mul(&budget_sub(w, inv_j(j)?)?)?;
    }
    Ok(acc)
}

/// Prefix products `pre[k] = prod_{j<=k}` and suffix products of the factor list.
fn prefix_suffix(f: &[LogComplex]) -> Result<(Vec<LogComplex>, Vec<LogComplex>), XnumError> {
    let n = f.len();
    let mut pre = vec![LogComplex::one(); n + 1];
    let mut suf = vec![LogComplex::one(); n + 2];
    for k in 0..n {
        pre[k + 1] = pre[k].mul(&f[k])?;
    }
    for k in (0..n).rev() {
        suf[k + 1] = suf[k + 2].mul(&f[k])?;
    }
    Ok((pre, suf))
}

struct GContext {
    factors: Vec<LogComplex>,
    pre: Vec<LogComplex>,
    suf: Vec<LogComplex>,
    dyadic: Option<usize>,
    z: LogComplex,
}

impl GContext {
    fn new(z: LogComplex, tol: f64) -> Result<Self, MapError> {
        let factors = g_factors(&z, tol)?;
        let (pre, suf) = prefix_suffix(&factors)?;
        Ok(Self { factors, pre, suf, dyadic: dyadic_index(&z), z })
    }

    fn g(&self) -> LogComplex {
        if self.dyadic.is_some() {
            LogComplex::zero()
        } else {
            self.pre[self.factors.len()]
        }
    }

    fn gi(&self, i: usize) -> Result<LogComplex, MapError> {
        if let Some(k) = self.dyadic {
            return if k == i { cs_gi_at_pow2(i) } else { Ok(LogComplex::zero()) };
        }
        let n = self.factors.len();
        if i <= n {
            Ok(self.pre[i - 1].mul(&self.suf[i + 1])?)
        } else {
            let phi = budget_sub(LogComplex::one(), self.z.scale_pow2(-(i as i64))?)?;
            Ok(self.g().div(&phi)?)
        }
    }

    /// `g_i'(z) = sum_{j != i} -2^-j g_{ij}(z)` by a forward pass over the factors.
    fn gi_prime(&self, i: usize) -> Result<LogComplex, MapError> {
        let mut v = LogComplex::one();
        let mut d = LogComplex::zero();
        for (k, x) in self.factors.iter().enumerate() {
            if k + 1 == i {
                continue;
            }
            let dx = LogComplex::pow2(-(k as i64) - 1)?.neg();
            d = budget_add(d.mul(x)?, v.mul(&dx)?)?;
            v = v.mul(x)?;
        }
        Ok(d)
    }

    /// `g'(z) = sum_i -2^-i g_i(z)`.
    fn g_prime(&self) -> Result<LogComplex, MapError> {
        let mut s = LogComplex::zero();
        for i in 1..=self.factors.len() {
            let t = self.gi(i)?.scale_pow2(-(i as i64))?.neg();
            s = budget_add(s, t)?;
        }
        Ok(s)
    }
}

fn log2_w_plus_one(w: &LogComplex) -> f64 {
    let lw = w.log2_abs();
    if lw > 60.0 {
        lw
    } else {
        (w.to_c64().norm() + 1.0).log2()
    }
}

/// Log-space bound on `sum_{i' >= i} 2^(-c_{i'}^2) |g_{i'}| |P_{c_{i'}}|` valid once `c_i >= L + 1`.
fn series_tail(log_g: f64, c: u64, l: f64) -> Option<f64> {
    let c = c as f64;
    (c >= l + 1.0).then_some(log_g + c * l - c * c + 1.0)
}

/// Evaluation of `F` together with optional partial derivatives.
struct CsEval {
    g: LogComplex,
    f: LogComplex,
    dg: LogComplex,
    df_dz: LogComplex,
    df_dw: LogComplex,
}

fn cs_eval(z: LogComplex, w: LogComplex, p: &CSParams, with_jac: bool) -> Result<CsEval, MapError> {
    let tol = p.truncation_rel_err;
    let ctx = GContext::new(z, tol)?;
    let l = log2_w_plus_one(&w);
    let log_g = log2_g_majorant(z.log2_abs());
    let log_tol = tol.log2();
    let mut s = LogComplex::zero();
    let mut sz = LogComplex::zero();
    let mut sw = LogComplex::zero();
    // running P_c(w) and P_c'(w)
    let mut pv = LogComplex::one();
    let mut pd = LogComplex::zero();
    let mut c_prev = 0u64;
    for i in 1.. {
        let Some(c) = p.c(i) else { break };
        if let Some(tail) = series_tail(log_g, c, l) {
            let margin = if with_jac { (c as f64).log2() + 2.0 } else { 0.0 };
            let mut scale = s.log2_abs();
            if with_jac {
                scale = scale.min(sz.log2_abs()).min(sw.log2_abs());
            }
            if tail + margin <= log_tol + scale - 1.0 || tail + margin < ABS_FLOOR {
                break;
            }
        }
        for j in c_prev + 1..=c {
            let fac = budget_sub(w, inv_j(j)?)?;
            if with_jac {
                pd = budget_add(pd.mul(&fac)?, pv)?;
            }
            pv = pv.mul(&fac)?;
        }
        c_prev = c;
        let coef = LogComplex::pow2(-((c * c) as i64))?;
        let gi = ctx.gi(i)?;
        s = budget_add(s, coef.mul(&gi)?.mul(&pv)?)?;
        if with_jac {
            sw = budget_add(sw, coef.mul(&gi)?.mul(&pd)?)?;
            sz = budget_add(sz, coef.mul(&ctx.gi_prime(i)?)?.mul(&pv)?)?;
        }
    }
    let dg = if with_jac { ctx.g_prime()? } else { LogComplex::zero() };
    Ok(CsEval { g: ctx.g(), f: s, dg, df_dz: sz, df_dw: sw })
}

/// `F(z, w) = (g(z), f(z, w))`.
pub fn cs_f(z: LogComplex, w: LogComplex, p: &CSParams) -> Result<[LogComplex; 2], MapError> {
    let e = cs_eval(z, w, p, false)?;
    Ok([e.g, e.f])
}

/// `log2` of the Euclidean norm of a vector.
pub fn log2_norm(v: &[LogComplex]) -> f64 {
    let e = v.iter().filter(|x| !x.is_zero()).map(|x| x.exp2).max();
    let Some(e) = e else { return f64::NEG_INFINITY };
    let s: f64 = v
        .iter()
        .filter(|x| !x.is_zero() && e - x.exp2 < 600)
        .map(|x| {
            let m = x.mantissa_re.hypot(x.mantissa_im);
            crate::xnum::ldexp(m * m, -2 * (e - x.exp2))
        })
        .sum();
    e as f64 + 0.5 * s.log2()
}

#[derive(Debug, Clone, PartialEq)]
pub enum MapKind {
    CsF(CSParams),
    CsG { tol: f64 },
    ExpShift,
    Polynomial { coeffs: Vec<Complex64>, roots: Option<Vec<Complex64>> },
    Expr(Vec<ExprAst>),
}

/// Serializable description of a map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapConfig {
    #[serde(default = "default_schema")]
    pub schema_version: u32,
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub components: Option<Vec<String>>,
    pub n: usize,
    #[serde(default)]
    pub params: Value,
}

fn default_schema() -> u32 {
    CONFIG_SCHEMA_VERSION
}

#[derive(Debug, Clone, PartialEq)]
pub struct EntireMap {
    pub n: usize,
    pub m: usize,
    pub kind: MapKind,
    pub config: MapConfig,
}

fn json_complex(v: &Value) -> Option<Complex64> {
    match v {
        Value::Number(x) => Some(Complex64::new(x.as_f64()?, 0.0)),
        Value::Array(a) if a.len() == 2 => Some(Complex64::new(a[0].as_f64()?, a[1].as_f64()?)),
        _ => None,
    }
}

fn json_complex_list(v: &Value, key: &str) -> Result<Option<Vec<Complex64>>, MapError> {
    match v.get(key) {
        None => Ok(None),
        Some(Value::Array(a)) => a
            .iter()
            .map(|x| json_complex(x).ok_or_else(|| MapError::InvalidParams(format!("bad entry in '{key}'"))))
            .collect::<Result<Vec<_>, _>>()
            .map(Some),
        Some(_) => Err(MapError::InvalidParams(format!("'{key}' must be a list"))),
    }
}

fn poly_from_roots(roots: &[Complex64]) -> Vec<Complex64> {
    let mut c = vec![Complex64::new(1.0, 0.0)];
    for r in roots {
        let mut next = vec![Complex64::new(0.0, 0.0); c.len() + 1];
        for (k, a) in c.iter().enumerate() {
            next[k + 1] += a;
            next[k] -= a * r;
        }
        c = next;
    }
    c
}

/// Built-in map by name.
pub fn builtin(name: &str, n: usize, params: &Value) -> Result<EntireMap, MapError> {
    let params = if params.is_null() { json!({}) } else { params.clone() };
    let tol = params.get("truncation_rel_err").and_then(Value::as_f64).unwrap_or(DEFAULT_TRUNCATION);
    let (canonical, n, m, kind) = match name {
        "cs_F" => {
            let spec = params.get("c_spec").and_then(Value::as_str).unwrap_or("pow:1,1");
            ("cs_F", 2, 2, MapKind::CsF(CSParams::new(spec, tol)?))
        }
        "cs_g" => {
            if !(tol > 0.0 && tol <= 0.5) {
                return Err(MapError::InvalidParams("truncation_rel_err must lie in (0, 1/2]".into()));
            }
            ("cs_g", 1, 1, MapKind::CsG { tol })
        }
        "exp_shift_n" | "exp_shift" => {
            if n == 0 {
                return Err(MapError::InvalidParams("n must be at least 1".into()));
            }
            ("exp_shift_n", n, n, MapKind::ExpShift)
        }
        "polynomial" => {
            let roots = json_complex_list(&params, "roots")?;
            let coeffs = match (json_complex_list(&params, "coeffs")?, &roots) {
                (Some(c), None) => c,
                (None, Some(r)) => poly_from_roots(r),
                _ => return Err(MapError::InvalidParams("polynomial needs exactly one of 'coeffs' or 'roots'".into())),
            };
            if coeffs.is_empty() {
                return Err(MapError::InvalidParams("empty coefficient list".into()));
            }
            ("polynomial", 1, 1, MapKind::Polynomial { coeffs, roots })
        }
        other => return Err(MapError::UnknownBuiltin(other.to_string())),
    };
    let config = MapConfig {
        schema_version: CONFIG_SCHEMA_VERSION,
        kind: "builtin".into(),
        name: Some(canonical.into()),
        components: None,
        n,
        params,
    };
    Ok(EntireMap { n, m, kind, config })
}

/// Map whose components are parsed expressions in `z1 .. zn`.
pub fn from_exprs(components: &[String], n: usize) -> Result<EntireMap, MapError> {
    if components.is_empty() {
        return Err(MapError::InvalidParams("no components".into()));
    }
    let asts = components.iter().map(|c| expr::parse(c, n)).collect::<Result<Vec<_>, _>>()?;
    let config = MapConfig {
        schema_version: CONFIG_SCHEMA_VERSION,
        kind: "expr".into(),
        name: None,
        components: Some(components.to_vec()),
        n,
        params: json!({ "grammar": expr::GRAMMAR }),
    };
    Ok(EntireMap { n, m: asts.len(), kind: MapKind::Expr(asts), config })
}

pub fn from_config(cfg: &MapConfig) -> Result<EntireMap, MapError> {
    if cfg.schema_version != CONFIG_SCHEMA_VERSION {
        return Err(MapError::InvalidParams(format!("unsupported schema_version {}", cfg.schema_version)));
    }
    match cfg.kind.as_str() {
        "builtin" => {
            let name = cfg.name.as_deref().ok_or_else(|| MapError::InvalidParams("builtin needs 'name'".into()))?;
            builtin(name, cfg.n, &cfg.params)
        }
        "expr" => {
            let comps = cfg.components.as_ref().ok_or_else(|| MapError::InvalidParams("expr needs 'components'".into()))?;
            from_exprs(comps, cfg.n)
        }
        k => Err(MapError::InvalidParams(format!("unknown kind '{k}'"))),
    }
}

fn horner(coeffs: &[Complex64], z: &LogComplex) -> Result<(LogComplex, LogComplex), XnumError> {
    let mut v = LogComplex::zero();
    let mut d = LogComplex::zero();
    for c in coeffs.iter().rev() {
        d = d.mul(z)?.add(&v)?;
        v = v.mul(z)?.add(&LogComplex::from_c64(*c)?)?;
    }
    Ok((v, d))
}

impl EntireMap {
    pub fn name(&self) -> String {
        self.config.name.clone().unwrap_or_else(|| "expr".into())
    }

    fn check_dim(&self, z: &[LogComplex]) -> Result<(), MapError> {
        if z.len() != self.n {
            return Err(MapError::Domain(format!("expected {} coordinates, got {}", self.n, z.len())));
        }
        Ok(())
    }

    pub fn eval(&self, z: &[LogComplex]) -> Result<Vec<LogComplex>, MapError> {
        self.check_dim(z)?;
        Ok(match &self.kind {
            MapKind::CsF(p) => cs_f(z[0], z[1], p)?.to_vec(),
            MapKind::CsG { tol } => vec![cs_g(z[0], *tol)?],
            MapKind::ExpShift => z.iter().map(|x| x.exp()?.add(&LogComplex::one())).collect::<Result<_, XnumError>>()?,
            MapKind::Polynomial { coeffs, .. } => vec![horner(coeffs, &z[0])?.0],
            MapKind::Expr(asts) => asts.iter().map(|a| expr::eval(a, z)).collect::<Result<_, _>>()?,
        })
    }

    pub fn eval_c64(&self, z: &[Complex64]) -> Result<Vec<LogComplex>, MapError> {
        let z = z.iter().map(|c| LogComplex::from_c64(*c)).collect::<Result<Vec<_>, _>>()?;
        self.eval(&z)
    }

    /// `log2 |f(z)|` (Euclidean norm over components).
    pub fn log2_abs_at(&self, z: &[Complex64]) -> Result<f64, MapError> {
        Ok(log2_norm(&self.eval_c64(z)?))
    }

    /// Row `i` holds the partial derivatives of component `i`.
    pub fn jacobian(&self, z: &[LogComplex]) -> Result<Vec<Vec<LogComplex>>, MapError> {
        self.check_dim(z)?;
        let zero = LogComplex::zero();
        Ok(match &self.kind {
            MapKind::CsF(p) => {
                let e = cs_eval(z[0], z[1], p, true)?;
                vec![vec![e.dg, zero], vec![e.df_dz, e.df_dw]]
            }
            MapKind::CsG { tol } => {
                let ctx = GContext::new(z[0], *tol)?;
                vec![vec![ctx.g_prime()?]]
            }
            MapKind::ExpShift => (0..self.n)
                .map(|k| {
                    let mut row = vec![zero; self.n];
                    row[k] = z[k].exp()?;
                    Ok(row)
                })
                .collect::<Result<_, XnumError>>()?,
            MapKind::Polynomial { coeffs, .. } => vec![vec![horner(coeffs, &z[0])?.1]],
            MapKind::Expr(asts) => expr::jacobian(asts, z)?,
        })
    }

    /// Zeros inside the closed ball `B_r`, when the map's zero set is known in closed form.
    pub fn known_zeros(&self, r: f64) -> Option<Vec<Vec<Complex64>>> {
        match &self.kind {
            MapKind::ExpShift => {
                let kmax = ((r / std::f64::consts::PI - 1.0) / 2.0).floor().max(-1.0) as i64;
                let axis: Vec<f64> = (-kmax - 1..=kmax).map(|k| (2 * k + 1) as f64 * std::f64::consts::PI).collect();
                let mut out = Vec::new();
                let mut idx = vec![0usize; self.n];
                if axis.is_empty() {
                    return Some(out);
                }
                loop {
                    let pt: Vec<f64> = idx.iter().map(|&i| axis[i]).collect();
                    if pt.iter().map(|y| y * y).sum::<f64>() <= r * r {
                        out.push(pt.iter().map(|&y| Complex64::new(0.0, y)).collect());
                    }
                    let mut k = 0;
                    while k < self.n {
                        idx[k] += 1;
                        if idx[k] < axis.len() {
                            break;
                        }
                        idx[k] = 0;
                        k += 1;
                    }
                    if k == self.n {
                        return Some(out);
                    }
                }
            }
            MapKind::CsG { .. } => Some(
                (1..)
                    .map(|i| (i as f64).exp2())
                    .take_while(|x| *x <= r)
                    .map(|x| vec![Complex64::new(x, 0.0)])
                    .collect(),
            ),
            MapKind::CsF(p) => {
                let mut out = Vec::new();
                for i in 1.. {
                    let x = (i as f64).exp2();
                    if x > r {
                        break;
                    }
                    let Some(c) = p.c(i) else { break };
                    for j in 1..=c {
                        let w = 1.0 / j as f64;
                        if x * x + w * w <= r * r {
                            out.push(vec![Complex64::new(x, 0.0), Complex64::new(w, 0.0)]);
                        }
                    }
                }
                Some(out)
            }
            MapKind::Polynomial { roots: Some(rs), .. } => {
                Some(rs.iter().filter(|z| z.norm() <= r).map(|z| vec![*z]).collect())
            }
            _ => None,
        }
    }

    /// Analytic upper bound on `log2 mu(f, r)` where one is available.
    pub fn log2_mu_upper(&self, r: f64) -> Option<f64> {
        match &self.kind {
            MapKind::CsF(_) => mu_cs_bounds(r).ok().map(|b| b.1),
            MapKind::CsG { .. } => {
                (r >= 2.0).then(|| prod_one_plus_pow2().log2() + (r.log2() / 2.0 + 1.0) * (2.0 * r).log2())
            }
            MapKind::ExpShift => {
                let one = r * std::f64::consts::LOG2_E + (1.0 + (-r).exp()).log2();
                Some(one + 0.5 * (self.n as f64).log2())
            }
            MapKind::Polynomial { coeffs, .. } => {
                let s: f64 = coeffs.iter().enumerate().map(|(k, c)| c.norm() * r.powi(k as i32)).sum();
                Some(s.log2())
            }
            MapKind::Expr(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MaxModulusReport {
    pub r: f64,
    pub log2_mu_lower: f64,
    pub log2_mu_upper: Option<f64>,
    pub sample_count: usize,
    pub upper_note: Option<String>,
}

const GOLDEN: f64 = 0.618_033_988_749_894_9;
const RINGS: usize = 8;

/// Kronecker sequence constants for dimension `d`.
fn kronecker_alpha(d: usize) -> Vec<f64> {
    // phi_d solves x^(d+1) = x + 1
    let mut x = 2.0f64;
    for _ in 0..64 {
        x = (1.0 + x).powf(1.0 / (d as f64 + 1.0));
    }
    (1..=d).map(|k| (1.0 / x.powi(k as i32)).fract()).collect()
}

/// Unit-sphere point in `C^n` from a point of `[0,1)^(2n-1)`.
fn sphere_point(n: usize, u: &[f64]) -> Vec<Complex64> {
    let mut cuts: Vec<f64> = u[..n - 1].to_vec();
    cuts.sort_by(f64::total_cmp);
    let mut prev = 0.0;
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let next = if k + 1 < n { cuts[k] } else { 1.0 };
        let m = (next - prev).max(0.0).sqrt();
        prev = next;
        let th = std::f64::consts::TAU * u[n - 1 + k];
        out.push(Complex64::from_polar(m, th));
    }
    out
}

/// Deterministic nested sample of `B_r`: the first `budget` points never change with `budget`.
pub fn sample_ball(n: usize, r: f64, budget: usize) -> Vec<Vec<Complex64>> {
    let boundary = budget - budget / 4;
    let interior = budget / 4;
    let mut pts = Vec::with_capacity(budget);
    let mut axis = Vec::new();
    for k in 0..n {
        for unit in [Complex64::new(1.0, 0.0), Complex64::new(-1.0, 0.0), Complex64::new(0.0, 1.0), Complex64::new(0.0, -1.0)] {
            let mut p = vec![Complex64::new(0.0, 0.0); n];
            p[k] = unit;
            axis.push(p);
        }
    }
    let alpha = kronecker_alpha(2 * n - 1);
    let unit = |t: usize| -> Vec<Complex64> {
        if n == 1 {
            vec![Complex64::from_polar(1.0, std::f64::consts::TAU * (t as f64 * GOLDEN).fract())]
        } else {
            let u: Vec<f64> = alpha.iter().map(|a| (0.5 + t as f64 * a).fract()).collect();
            sphere_point(n, &u)
        }
    };
    for t in 0..boundary {
        let p = if t < axis.len() { axis[t].clone() } else { unit(t - axis.len() + 1) };
        pts.push(p.into_iter().map(|c| c * r).collect());
    }
    for t in 0..interior {
        let frac = (t % RINGS + 1) as f64 / (RINGS + 1) as f64;
        pts.push(unit(t + 7919).into_iter().map(|c| c * (r * frac)).collect());
    }
    pts
}

/// Sampled lower bound (and analytic upper bound for built-ins) on `log2 mu(f, r)`.
pub fn mu_estimate(map: &EntireMap, r: f64, budget: usize) -> Result<MaxModulusReport, MapError> {
    if !(r > 0.0) || budget == 0 {
        return Err(MapError::Domain("need r > 0 and budget >= 1".into()));
    }
    let pts = sample_ball(map.n, r, budget);
    let lower = pts
        .par_iter()
        .map(|p| map.log2_abs_at(p))
        .try_reduce(|| f64::NEG_INFINITY, |a, b| Ok(a.max(b)))?;
    let upper = map.log2_mu_upper(r);
    let note = matches!(map.kind, MapKind::CsF(_)).then(|| "analytic, possibly loose".to_string());
    Ok(MaxModulusReport { r, log2_mu_lower: lower, log2_mu_upper: upper, sample_count: pts.len(), upper_note: note })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn lc(x: f64) -> LogComplex {
        LogComplex::from_f64(x).unwrap()
    }

    #[test]
    fn constants() {
        // partial products to 200 terms; the tails are below 2^-199
        assert!((prod_one_plus_pow2() - 2.384231029031371).abs() < 1e-12);
        assert!((cs_const_c() - 5.2535).abs() < 1e-4);
        assert!((c0_const() - 0.0523).abs() < 1e-4);
        let q: f64 = (1..=60).map(|m| 1.0 - 0.5f64.powi(m)).product();
        assert!((prod_one_minus_pow2() - q).abs() < 1e-15);
    }

    #[test]
    fn g_values() {
        assert!(cs_g(LogComplex::pow2(5).unwrap(), 1e-15).unwrap().is_zero());
        let want = 6.0 * (1..=200).fold(1.0, |a, j| a * (1.0 + 0.5f64.powi(j)));
        let got = cs_g(lc(-4.0), DEFAULT_TRUNCATION).unwrap().to_c64();
        assert!((got.re - want).abs() < 1e-12 * want && got.im == 0.0);
        assert!((got.re - 14.3054).abs() < 1e-4);
        for k in 4..=20 {
            let v = cs_g(LogComplex::pow2(k).unwrap().neg(), DEFAULT_TRUNCATION).unwrap();
            let kf = k as f64;
            assert!(v.log2_abs() >= kf * (kf - 1.0) / 2.0 - (kf - 1.0));
        }
    }

    #[test]
    fn g_matches_naive_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let z = Complex64::new(rng.gen_range(-50.0..50.0), rng.gen_range(-50.0..50.0));
            let naive: Complex64 = (1..400).map(|i| 1.0 - z / 2f64.powi(i)).product();
            let got = cs_g(LogComplex::from_c64(z).unwrap(), DEFAULT_TRUNCATION).unwrap().to_c64();
            assert!((got - naive).norm() <= 1e-12 * naive.norm());
        }
    }

    #[test]
    fn gi_closed_form_matches_deleted_product() {
        for i in 1..=12usize {
            let z = 2f64.powi(i as i32);
            let naive: f64 = (1..400).filter(|&j| j != i).map(|j| 1.0 - z / 2f64.powi(j as i32)).product();
            let got = cs_gi_at_pow2(i).unwrap().to_c64().re;
            assert!((got - naive).abs() <= 1e-12 * naive.abs(), "i={i}");
            assert!((log2_gi_at_pow2(i) - naive.abs().log2()).abs() < 1e-12);
            assert!(log2_gi_at_pow2(i) < ((i - 1) * i) as f64 / 2.0);
        }
    }

    #[test]
    fn f_at_zero_set() {
        let p = CSParams::default();
        let c5 = p.c(5).unwrap();
        for (i, j) in [(1usize, 1u64), (3, 2), (5, c5)] {
            let v = cs_f(LogComplex::pow2(i as i64).unwrap(), lc(1.0 / j as f64), &p).unwrap();
            assert!(v[0].is_zero());
            assert!(v[1].is_zero() || v[1].log2_abs() < -40.0);
        }
    }

    #[test]
    fn f_matches_direct_series() {
        // direct f64 oracle: the first few terms of the series at moderate points
        let p = CSParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let z = Complex64::new(rng.gen_range(-6.0..6.0), rng.gen_range(-6.0..6.0));
            let w = Complex64::new(rng.gen_range(-1.5..1.5), rng.gen_range(-1.5..1.5));
            let gi = |i: i32| -> Complex64 { (1..200).filter(|&j| j != i).map(|j| 1.0 - z / 2f64.powi(j)).product() };
            let pc = |c: u64| -> Complex64 { (1..=c).map(|j| w - 1.0 / j as f64).product() };
            let want: Complex64 = (1..=4).map(|i| gi(i) * pc(1 << i) * 2f64.powi(-(1 << (2 * i)))).sum();
            let got = cs_f(LogComplex::from_c64(z).unwrap(), LogComplex::from_c64(w).unwrap(), &p).unwrap()[1].to_c64();
            assert!((got - want).norm() <= 1e-10 * want.norm(), "{got} vs {want}");
        }
    }

    #[test]
    fn separation_lower_bound() {
        let p = CSParams::default();
        let c0 = c0_const();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for k in 3..=12i32 {
            let x = 2f64.powi(k) + 2f64.powi(k - 1);
            let bound = c0.log2() + ((k - 1) * k) as f64 / 2.0;
            for _ in 0..20 {
                let z = Complex64::new(x, rng.gen_range(-1e3..1e3));
                let w = Complex64::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
                let v = cs_f(LogComplex::from_c64(z).unwrap(), LogComplex::from_c64(w).unwrap(), &p).unwrap();
                assert!(log2_norm(&v) > bound);
            }
        }
    }

    #[test]
    fn g_component_ignores_w() {
        let p = CSParams::default();
        let z = LogComplex::from_parts(3.7, -1.2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let first = cs_f(z, LogComplex::zero(), &p).unwrap()[0];
        for _ in 0..100 {
            let w = LogComplex::from_parts(rng.gen_range(-9.0..9.0), rng.gen_range(-9.0..9.0)).unwrap();
            let g = cs_f(z, w, &p).unwrap()[0];
            assert_eq!(g.mantissa_re.to_bits(), first.mantissa_re.to_bits());
            assert_eq!(g.mantissa_im.to_bits(), first.mantissa_im.to_bits());
            assert_eq!(g.exp2, first.exp2);
        }
    }

    #[test]
    fn builtins() {
        let m = builtin("exp_shift_n", 1, &Value::Null).unwrap();
        let v = m.eval_c64(&[Complex64::new(0.0, std::f64::consts::PI)]).unwrap();
        assert!(v[0].to_c64().norm() < 1e-14);
        let m2 = builtin("exp_shift_n", 2, &Value::Null).unwrap();
        let v = m2.eval_c64(&[Complex64::new(0.0, std::f64::consts::PI), Complex64::new(0.0, 3.0 * std::f64::consts::PI)]).unwrap();
        assert!(v.iter().all(|x| x.to_c64().norm() < 1e-13));
        let c = builtin("polynomial", 1, &json!({"coeffs": [1]})).unwrap();
        let z = [LogComplex::from_parts(2.0, 3.0).unwrap()];
        assert_eq!(c.eval(&z).unwrap()[0].to_c64(), Complex64::new(1.0, 0.0));
        assert!(c.jacobian(&z).unwrap()[0][0].is_zero());
        assert!(matches!(builtin("nope", 1, &Value::Null), Err(MapError::UnknownBuiltin(_))));
        assert!(CSParams::from_spec("explicit:[1,3,2]").is_err());
        assert!(CSParams::from_spec("pow:0.5,0").is_err());
        assert!(CSParams::from_spec("pow:1,2").is_ok());
    }

    #[test]
    fn config_round_trip() {
        let m = builtin("cs_F", 2, &json!({"c_spec": "pow:1,1"})).unwrap();
        let text = serde_json::to_string(&m.config).unwrap();
        let back: MapConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(from_config(&back).unwrap(), m);
        let e = from_exprs(&["exp(z1)+1".into()], 1).unwrap();
        let back: MapConfig = serde_json::from_str(&serde_json::to_string(&e.config).unwrap()).unwrap();
        assert_eq!(from_config(&back).unwrap(), e);
    }

    #[test]
    fn jacobians_match_finite_differences() {
        let maps = [
            builtin("cs_F", 2, &json!({"c_spec": "pow:1,1"})).unwrap(),
            builtin("cs_F", 2, &json!({"c_spec": "explicit:[2,3,5,7]"})).unwrap(),
            builtin("cs_g", 1, &Value::Null).unwrap(),
            builtin("polynomial", 1, &json!({"roots": [0.5, [0, 1], -2]})).unwrap(),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let h = 1e-6;
        for m in &maps {
            for _ in 0..50 {
                let x: Vec<Complex64> =
                    (0..m.n).map(|_| Complex64::new(rng.gen_range(-3.0..3.0), rng.gen_range(-1.0..1.0))).collect();
                let xs: Vec<_> = x.iter().map(|c| LogComplex::from_c64(*c).unwrap()).collect();
                let jac = m.jacobian(&xs).unwrap();
                for k in 0..m.n {
                    let mut xp = x.clone();
                    let mut xm = x.clone();
                    xp[k] += h;
                    xm[k] -= h;
                    let fp = m.eval_c64(&xp).unwrap();
                    let fm = m.eval_c64(&xm).unwrap();
                    for row in 0..m.m {
                        let fd = (fp[row].to_c64() - fm[row].to_c64()) / (2.0 * h);
                        let d = jac[row][k].to_c64();
                        let scale = d.norm().max(m.eval(&xs).unwrap()[row].to_c64().norm()).max(1e-300);
                        assert!((d - fd).norm() <= 1e-6 * scale, "{} row {row} col {k}: {d} vs {fd}", m.name());
                    }
                }
            }
        }
    }

    #[test]
    fn mu_examples() {
        let e = builtin("exp_shift_n", 1, &Value::Null).unwrap();
        let rep = mu_estimate(&e, 10.0, 2048).unwrap();
        assert!(rep.log2_mu_lower >= 14.42 && rep.log2_mu_lower <= 14.43);
        assert!(rep.log2_mu_lower <= rep.log2_mu_upper.unwrap());
        let cube = builtin("polynomial", 1, &json!({"coeffs": [0, 0, 0, 1]})).unwrap();
        assert!((mu_estimate(&cube, 2.0, 64).unwrap().log2_mu_lower - 3.0).abs() < 1e-9);
        let f = builtin("cs_F", 2, &Value::Null).unwrap();
        for k in 4..=16 {
            let kf = k as f64;
            let rep = mu_estimate(&f, kf.exp2(), 256).unwrap();
            assert!(rep.log2_mu_lower >= 0.5 * kf * kf - 1.5 * kf + 1.0);
            assert!(rep.log2_mu_lower <= rep.log2_mu_upper.unwrap());
        }
    }

    #[test]
    fn cs_bounds() {
        assert_eq!(mu_cs_bounds(2.0).unwrap().0, 0.0);
        let (lo, hi) = mu_cs_bounds(1024.0).unwrap();
        assert_eq!(lo, 36.0);
        assert!((hi - (185.0 + cs_const_c())).abs() < 1e-12 && (hi - 190.2535).abs() < 1e-3);
        assert!(mu_cs_bounds(1.5).is_err());
    }

    #[test]
    fn known_zeros_lattice() {
        let e = builtin("exp_shift_n", 1, &Value::Null).unwrap();
        assert_eq!(e.known_zeros(10.0).unwrap().len(), 4);
        assert_eq!(e.known_zeros(2.0).unwrap().len(), 0);
        let e2 = builtin("exp_shift_n", 2, &Value::Null).unwrap();
        assert_eq!(e2.known_zeros(5.0).unwrap().len(), 4);
        let f = builtin("cs_F", 2, &Value::Null).unwrap();
        for z in f.known_zeros(20.0).unwrap() {
            assert!(log2_norm(&f.eval_c64(&z).unwrap()) < -40.0);
        }
    }

    proptest! {
        #[test]
        fn mu_monotone_in_budget(b in 1usize..400, extra in 0usize..400) {
            let e = builtin("exp_shift_n", 1, &Value::Null).unwrap();
            let a = mu_estimate(&e, 3.0, b).unwrap().log2_mu_lower;
            let c = mu_estimate(&e, 3.0, b + extra).unwrap().log2_mu_lower;
            prop_assert!(a <= c);
        }

        #[test]
        fn mu_monotone_in_r(r in 0.1f64..20.0, dr in 0.0f64..5.0, b in 1usize..200) {
            for m in [builtin("exp_shift_n", 1, &Value::Null).unwrap(),
                      builtin("polynomial", 1, &json!({"coeffs": [1, 2, 0, 1]})).unwrap()] {
                let a = mu_estimate(&m, r, b).unwrap().log2_mu_lower;
                let c = mu_estimate(&m, r + dr, b).unwrap().log2_mu_lower;
                prop_assert!(a <= c);
            }
        }

        #[test]
        fn no_absorption_in_range(z in prop::array::uniform4((-1f64..1.0, -200f64..31.0)),
                                  nz in prop::array::uniform4(any::<bool>())) {
            let p = CSParams::default();
            let c: Vec<f64> = z.iter().zip(nz).map(|((s, e), keep)| if keep { s * e.exp2() } else { 0.0 }).collect();
            let z = LogComplex::from_parts(c[0], c[1]).unwrap();
            let w = LogComplex::from_parts(c[2], c[3]).unwrap();
            let v = cs_f(z, w, &p).unwrap();
            prop_assert!(!v[0].absorbed && !v[1].absorbed);
        }
    }
}
