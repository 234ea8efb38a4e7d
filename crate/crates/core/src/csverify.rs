//! Structural analysis of the Cornalba-Shiffman map `F(z, w) = (g(z), f(z, w))`
//! at radii far beyond grid reach: slice containment, hyperplane separation,
//! `zeta` brackets, island bounds and Jacobian decay at the zeros.

use crate::grid::{attach_zeros, components, zeta_counts, GridError, SublevelGrid, Verdict};
use crate::maps::{builtin, c0_const, cs_p, log2_gi_at_pow2, mu_cs_bounds, CSParams, CSpec, EntireMap, MapError};
use crate::xnum::LogComplex;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;
use std::collections::HashMap;
use std::fmt::Write as _;
use std::sync::Mutex;
use thiserror::Error;

/// Largest `c_i` for which slice sublevel sets are counted on a grid.
pub const SLICE_GRID_MAX_C: u64 = 256;
/// Largest `c_i` for which the Jacobian is evaluated zero by zero.
pub const JACOBIAN_EXACT_MAX_C: u64 = 1 << 14;
const WITNESS_STEPS: usize = 2048;
const ZETA0_HORIZON: usize = 256;

#[derive(Debug, Error)]
pub enum CsError {
    #[error(transparent)]
    Map(#[from] MapError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("invalid input: {0}")]
    Invalid(String),
}

type CsResult<T> = Result<T, CsError>;

/// Smallest `i >= 1` with `delta >= 2^(-i(i+1)/2)`.
pub fn k_merge(delta: f64) -> u32 {
    let l = delta.log2();
    (1u32..).find(|&i| l >= -((i * (i + 1) / 2) as f64)).unwrap()
}

/// Smallest `k >= 1` with `C_0 2^((k-1)k/2) > delta`.
pub fn k_sep(delta: f64) -> u32 {
    let (l, c0) = (delta.log2(), c0_const().log2());
    (1u32..).find(|&k| c0 + ((k - 1) * k / 2) as f64 > l).unwrap()
}

/// `C_0` with the tail of the product bounded: `(lower, upper)`.
pub fn c0_certified() -> (f64, f64) {
    let hi = c0_const();
    (hi * (1.0 - 3.0 * 2f64.powi(-201)), hi)
}

/// `log2 prod_i |1 - 2^-i x|` at `x = 2^k + 2^(k-1)`.
pub fn log2_minorant(k: u32) -> f64 {
    let x = 3.0 * 2f64.powi(k as i32 - 1);
    (1..=k as i32 + 200).map(|i| (1.0 - x * 2f64.powi(-i)).abs().log2()).sum()
}

fn cs_map(params: &CSParams) -> CsResult<EntireMap> {
    let p = json!({ "c_spec": params.spec_string(), "truncation_rel_err": params.truncation_rel_err });
    Ok(builtin("cs_F", 2, &p)?)
}

fn c_of(params: &CSParams, i: usize) -> f64 {
    params.c_real(i).unwrap_or(f64::INFINITY)
}

fn sat_u64(x: f64) -> u64 {
    if x >= u64::MAX as f64 {
        u64::MAX
    } else {
        x.max(0.0) as u64
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CSStructure {
    pub c_spec: String,
    pub delta: f64,
    pub k_merge: u32,
    pub k_sep: u32,
    pub c0: f64,
}

impl CSStructure {
    pub fn new(params: &CSParams, delta: f64) -> CsResult<Self> {
        if !(delta > 0.0) {
            return Err(CsError::Invalid("delta must be positive".into()));
        }
        Ok(Self { c_spec: params.spec_string(), delta, k_merge: k_merge(delta), k_sep: k_sep(delta), c0: c0_const() })
    }

    /// `H_k = {Re z = 2^k + 2^(k-1)}` misses `{|F| <= delta}`, by the `C_0 2^((k-1)k/2)` bound or by the exact minorant.
    pub fn clean(&self, k: u32) -> bool {
        k >= self.k_sep || log2_minorant(k) > self.delta.log2()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Containment {
    pub i: usize,
    pub c: f64,
    pub hypothesis: bool,
    pub log2_b: f64,
    pub b: f64,
    /// `max log2 |F|` over the sampled points, when sampled.
    pub sampled_max_log2: Option<f64>,
    pub samples_ok: Option<bool>,
}

/// Whether the slice interval `{2^i} x [0, b_i]` is certified inside `{|F| <= delta}`.
pub fn interval_containment(i: usize, delta: f64, params: &CSParams) -> CsResult<Containment> {
    if i == 0 || !(delta > 0.0) {
        return Err(CsError::Invalid("need i >= 1 and delta > 0".into()));
    }
    let c = c_of(params, i);
    let t = ((i - 1) * i / 2) as f64;
    let ld = delta.log2();
    let hypothesis = ld >= t - c * c;
    let log2_b = (c * c - t + ld) / c;
    let mut out = Containment { i, c, hypothesis, log2_b, b: log2_b.exp2(), sampled_max_log2: None, samples_ok: None };
    if hypothesis && c <= (1u64 << 20) as f64 && i <= 60 {
        let map = cs_map(params)?;
        let top = out.b.min(2f64.powi(20));
        let z = LogComplex::pow2(i as i64).map_err(MapError::from)?;
        let vals = (0..64)
            .into_par_iter()
            .map(|s| {
                let w = LogComplex::from_f64(top * s as f64 / 63.0)?;
                Ok(crate::maps::log2_norm(&map.eval(&[z, w])?))
            })
            .collect::<Result<Vec<f64>, MapError>>()?;
        let m = vals.into_iter().fold(f64::NEG_INFINITY, f64::max);
        out.sampled_max_log2 = Some(m);
        out.samples_ok = Some(m <= ld + 1e-9);
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct Separation {
    pub k: u32,
    /// `C_0 2^((k-1)k/2) > delta`.
    pub analytic: bool,
    pub log2_analytic_bound: f64,
    pub log2_minorant: f64,
    pub minorant_exceeds_delta: bool,
    pub sampled_min_log2: f64,
    /// Sampled `|g|` on the hyperplane never falls below the minorant.
    pub samples_ok: bool,
}

pub fn separation_check(k: u32, delta: f64, samples: usize) -> CsResult<Separation> {
    if k == 0 || !(delta > 0.0) {
        return Err(CsError::Invalid("need k >= 1 and delta > 0".into()));
    }
    let bound = c0_const().log2() + ((k - 1) * k / 2) as f64;
    let h = log2_minorant(k);
    let g = builtin("cs_g", 1, &serde_json::Value::Null)?;
    let x = 3.0 * 2f64.powi(k as i32 - 1);
    let span = 4.0 * 2f64.powi(k as i32);
    let vals = (0..samples.max(1))
        .into_par_iter()
        .map(|s| {
            let y = span * (2.0 * (s as f64 + 0.5) / samples.max(1) as f64 - 1.0);
            g.log2_abs_at(&[Complex64::new(x, y)])
        })
        .collect::<Result<Vec<f64>, MapError>>()?;
    let m = vals.into_iter().fold(f64::INFINITY, f64::min);
    Ok(Separation {
        k,
        analytic: bound > delta.log2(),
        log2_analytic_bound: bound,
        log2_minorant: h,
        minorant_exceeds_delta: h > delta.log2(),
        sampled_min_log2: m,
        samples_ok: m >= h - 1e-9,
    })
}

/// A sampled path inside `{|F| <= delta}` from the zero `(2^i, 1)` to a zero on slice `i + 1`.
#[derive(Debug, Clone, Serialize)]
pub struct MergeWitness {
    pub i: usize,
    pub max_log2_abs_f: f64,
    pub max_norm: f64,
    pub end_j: u64,
    pub steps: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ZetaBracket {
    pub r: f64,
    pub delta: f64,
    pub lower: u64,
    pub upper: u64,
    /// Slices from this index on are counted exactly.
    pub exact_tail_from: Option<usize>,
    pub slices_in_ball: usize,
    pub envelope_lower: f64,
    pub envelope_upper: f64,
    pub assumptions: Vec<String>,
    pub verdicts: Vec<Verdict>,
}

/// Bracket assembly with per-slice results cached across radii.
pub struct CsAnalyzer {
    pub params: CSParams,
    pub structure: CSStructure,
    map: EntireMap,
    witnesses: Mutex<HashMap<usize, Option<MergeWitness>>>,
    slice_counts: Mutex<HashMap<(usize, u64), (u64, bool)>>,
}

fn log2_rho(r: f64, i: usize) -> f64 {
    // log2 sqrt(r^2 - 4^i)
    let lr = r.log2();
    let q = (2.0 * (i as f64 - lr)).exp2();
    if q >= 1.0 {
        f64::NEG_INFINITY
    } else {
        lr + 0.5 * (1.0 - q).log2()
    }
}

/// Envelope values `(lower, upper)` for `zeta(F, r, delta)`.
pub fn envelopes(r: f64, delta: f64, params: &CSParams) -> (f64, f64) {
    let lr = r.log2();
    let ld = delta.log2();
    let sum_c = |top: f64, strict: bool| -> f64 {
        let mut s = 0.0;
        let mut i = 1usize;
        while (i as f64) < top || (!strict && i as f64 == top) {
            s += c_of(params, i);
            i += 1;
        }
        s
    };
    let upper = if ld < -lr * (lr + 1.0) / 2.0 {
        sum_c(lr, false)
    } else if delta < 0.5 {
        let q = (-2.0 * ld).sqrt();
        lr + 2.0 - q + sum_c(q, true)
    } else {
        lr
    };
    let lc = c0_const().log2();
    let fl = lr.floor();
    let lower = if delta <= c0_const() {
        fl - 1.0
    } else if ld <= lc + lr * (lr - 1.0) / 2.0 {
        fl - (2.0 * ld - 2.0 * lc).sqrt() - 2.0
    } else {
        0.0
    };
    (lower.max(0.0), upper)
}

impl CsAnalyzer {
    pub fn new(params: &CSParams, delta: f64) -> CsResult<Self> {
        Ok(Self {
            params: params.clone(),
            structure: CSStructure::new(params, delta)?,
            map: cs_map(params)?,
            witnesses: Mutex::new(HashMap::new()),
            slice_counts: Mutex::new(HashMap::new()),
        })
    }

    fn c(&self, i: usize) -> f64 {
        c_of(&self.params, i)
    }

    /// Zeros `(2^i, 1/j)` inside `B_r`.
    fn zeros_on_slice(&self, r: f64, i: usize) -> f64 {
        let lrho = log2_rho(r, i);
        if lrho == f64::NEG_INFINITY {
            return 0.0;
        }
        let jmin = (-lrho).exp2().ceil().max(1.0);
        (self.c(i) - jmin + 1.0).max(0.0)
    }

    /// Components of the slice set `{w : |P_c(w)| <= delta 2^(c^2) / |g_i(2^i)|}` in `|w| <= rho`
    /// that contain zeros, at two resolutions; returns the larger count and whether they agree.
    fn slice_plane_count(&self, i: usize, lrho: f64) -> CsResult<(u64, bool)> {
        let c = self.c(i) as u64;
        let log2_t = self.structure.delta.log2() + (c * c) as f64 - log2_gi_at_pow2(i);
        let r_full = 1.0 + (log2_t / c as f64).exp2();
        let rho = lrho.exp2();
        let key = (i, if rho >= r_full { u64::MAX } else { rho.to_bits() });
        if let Some(v) = self.slice_counts.lock().unwrap().get(&key) {
            return Ok(*v);
        }
        let half = rho.min(r_full) * (1.0 + 1.0 / 64.0);
        let zeros: Vec<Vec<Complex64>> =
            (1..=c).map(|j| 1.0 / j as f64).filter(|&w| w <= rho).map(|w| vec![Complex64::new(w, 0.0)]).collect();
        let mut counts = Vec::new();
        for res in [256usize, 512] {
            let h = 2.0 * half / res as f64;
            let cells: Vec<(f64, bool)> = (0..res * res)
                .into_par_iter()
                .map(|idx| {
                    let (a, b) = (idx / res, idx % res);
                    let w = Complex64::new(-half + (a as f64 + 0.5) * h, -half + (b as f64 + 0.5) * h);
                    if w.norm() > rho {
                        return Ok((f64::INFINITY, false));
                    }
                    let v = cs_p(c, LogComplex::from_c64(w)?)?.log2_abs() - log2_t;
                    Ok((v, true))
                })
                .collect::<Result<_, MapError>>()?;
            let (values, dom): (Vec<f64>, Vec<bool>) = cells.into_iter().unzip();
            let mut grid = SublevelGrid::from_field(vec![res, res], vec![-half, -half], vec![h, h], Some(rho), values, dom, 1.0);
            grid.pin_zeros(&zeros);
            let mut set = components(&grid);
            attach_zeros(&mut set, &grid, &zeros);
            counts.push(zeta_counts(&set).0 as u64);
        }
        let v = (counts[0].max(counts[1]), counts[0] == counts[1]);
        self.slice_counts.lock().unwrap().insert(key, v);
        Ok(v)
    }

    /// Tracks the zero branch `w(x)` of `f(x, .)` from `(2^i, 1)` along real `x` up to `2^(i+1)`.
    pub fn merge_witness(&self, i: usize) -> CsResult<Option<MergeWitness>> {
        if let Some(w) = self.witnesses.lock().unwrap().get(&i) {
            return Ok(w.clone());
        }
        let w = self.track_branch(i)?;
        self.witnesses.lock().unwrap().insert(i, w.clone());
        Ok(w)
    }

    fn track_branch(&self, i: usize) -> CsResult<Option<MergeWitness>> {
        if i > 40 {
            return Ok(None);
        }
        let ld = self.structure.delta.log2();
        let (a, b) = ((i as f64).exp2(), ((i + 1) as f64).exp2());
        let eval = |x: f64, w: Complex64| -> Result<(Vec<LogComplex>, LogComplex), MapError> {
            let p = [LogComplex::from_f64(x)?, LogComplex::from_c64(w)?];
            let v = self.map.eval(&p)?;
            let d = self.map.jacobian(&p)?[1][1];
            Ok((v, d))
        };
        let newton = |x: f64, w0: Complex64| -> Option<Complex64> {
            let mut w = w0;
            for _ in 0..60 {
                let (v, d) = eval(x, w).ok()?;
                if v[1].is_zero() {
                    return Some(w);
                }
                let step = v[1].div(&d).ok()?.to_c64();
                if !(step.re.is_finite() && step.im.is_finite()) {
                    return None;
                }
                w -= step;
                if step.norm() <= 1e-13 * w.norm().max(1.0) {
                    return Some(w);
                }
            }
            None
        };
        let (mut x, mut w) = (a, Complex64::new(1.0, 0.0));
        let base = (b - a) / WITNESS_STEPS as f64;
        let mut h = base;
        let (mut max_f, mut max_norm, mut steps) = (f64::NEG_INFINITY, (a * a + 1.0).sqrt(), 0usize);
        while x < b {
            let xn = (x + h).min(b);
            let Some(wn) = newton(xn, w).filter(|wn| (wn - w).norm() <= 0.25 * w.norm().max(1.0)) else {
                h *= 0.5;
                if h < base * 2f64.powi(-24) {
                    return Ok(None);
                }
                continue;
            };
            let mid = eval(0.5 * (x + xn), 0.5 * (w + wn))?.0;
            let end = eval(xn, wn)?.0;
            let m = crate::maps::log2_norm(&mid).max(crate::maps::log2_norm(&end));
            if m > ld {
                return Ok(None);
            }
            max_f = max_f.max(m);
            max_norm = max_norm.max((xn * xn + wn.norm_sqr()).sqrt());
            x = xn;
            w = wn;
            steps += 1;
            h = (2.0 * h).min(base);
        }
        let cn = self.c(i + 1);
        let j = (1.0 / w.re).round();
        if !(j >= 1.0 && j <= cn && (w - 1.0 / j).norm() < 1e-8) {
            return Ok(None);
        }
        Ok(Some(MergeWitness { i, max_log2_abs_f: max_f, max_norm, end_j: j as u64, steps }))
    }

    pub fn bracket(&self, r: f64) -> CsResult<ZetaBracket> {
        if !(r >= 2.0) {
            return Err(CsError::Invalid("r must be at least 2".into()));
        }
        let s = &self.structure;
        let mut assumptions = Vec::new();
        let present: Vec<usize> = (1..).take_while(|&i| (i as f64) < r.log2() + 1.0).filter(|&i| self.zeros_on_slice(r, i) >= 1.0).collect();
        // per-slice upper counts
        let uppers = present
            .par_iter()
            .map(|&i| -> CsResult<(u64, String)> {
                let nz = self.zeros_on_slice(r, i);
                if i as u32 >= s.k_merge {
                    return Ok((1, format!("slice {i}: interval inside the sublevel set")));
                }
                let c = self.c(i);
                if c <= SLICE_GRID_MAX_C as f64 {
                    let (k, conv) = self.slice_plane_count(i, log2_rho(r, i))?;
                    let k = k.min(sat_u64(nz)).max(1);
                    let note = if conv { "" } else { ", unconverged" };
                    Ok((k, format!("slice {i}: {k} slice-plane component(s) from a sampled grid{note}")))
                } else {
                    Ok((sat_u64(nz), format!("slice {i}: zero count used as the upper bound")))
                }
            })
            .collect::<CsResult<Vec<_>>>()?;
        let mut upper: u64 = 0;
        for (u, note) in &uppers {
            upper = upper.saturating_add(*u);
            if !note.contains("interval inside") {
                assumptions.push(note.clone());
            }
        }
        // groups split by clean hyperplanes; merges inside a group are witnessed or left open
        let mut lower: u64 = 0;
        let mut prev: Option<usize> = None;
        for &i in &present {
            let new_group = match prev {
                None => true,
                Some(p) => (p..i).any(|k| s.clean(k as u32)),
            };
            if new_group {
                lower += 1;
            } else if let Some(p) = prev.filter(|&p| p + 1 == i) {
                let wit = if (4f64.powi(p as i32) + 1.0).sqrt() <= r { self.merge_witness(p)? } else { None };
                match wit {
                    Some(w) if w.max_norm <= r => {
                        upper = upper.saturating_sub(1);
                        assumptions.push(format!(
                            "slices {p},{i} merge along a sampled zero branch ({} steps, max log2|F| = {:.4})",
                            w.steps, w.max_log2_abs_f
                        ));
                    }
                    _ => assumptions.push(format!("slices {p},{i}: merge undecided")),
                }
            }
            prev = Some(i);
        }
        let exact_tail_from = present
            .iter()
            .copied()
            .find(|&i0| present.iter().filter(|&&i| i >= i0).all(|&i| i as u32 >= s.k_merge && (i == 1 || s.clean(i as u32 - 1))));
        let (el, eu) = envelopes(r, s.delta, &self.params);
        let verdicts = vec![
            Verdict::new("bracket_ordered", lower <= upper, format!("[{lower}, {upper}]")),
            Verdict::new("upper_within_envelope", upper as f64 <= eu + 1e-9, format!("upper {upper} vs envelope {eu:.4}")),
            Verdict::new("lower_within_envelope", lower as f64 >= el - 1e-9, format!("lower {lower} vs envelope {el:.4}")),
        ];
        Ok(ZetaBracket {
            r,
            delta: s.delta,
            lower,
            upper,
            exact_tail_from,
            slices_in_ball: present.len(),
            envelope_lower: el,
            envelope_upper: eu,
            assumptions,
            verdicts,
        })
    }
}

pub fn zeta_bracket(r: f64, delta: f64, params: &CSParams) -> CsResult<ZetaBracket> {
    CsAnalyzer::new(params, delta)?.bracket(r)
}

#[derive(Debug, Clone, Serialize)]
pub struct SliceVerdict {
    pub i: usize,
    pub log2_b: f64,
    pub hypothesis: bool,
    pub peninsula: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct Zeta0Report {
    pub r: f64,
    pub delta_used: f64,
    pub i0: Option<usize>,
    pub k: Option<usize>,
    pub head_sum: f64,
    pub upper: Option<f64>,
    pub m: Option<f64>,
    pub closed_form: Option<f64>,
    pub growth_class: String,
    pub slices: Vec<SliceVerdict>,
    pub inapplicable: Option<String>,
}

fn iter_exp2(x: f64, times: u32) -> f64 {
    (0..times).fold(x, |a, _| a.exp2())
}

fn iter_log2(x: f64, times: u32) -> f64 {
    (0..times).fold(x, |a, _| a.log2())
}

/// Island bound for `c_i = floor(exp2^l(lambda i))` following the slice elongation argument.
pub fn zeta0_analysis(r: f64, delta: f64, params: &CSParams) -> CsResult<Zeta0Report> {
    let CSpec::Pow { lambda, l } = params.c_spec else {
        return Err(CsError::Invalid("island analysis needs a pow:lambda,l rule".into()));
    };
    if !(delta > 0.0) {
        return Err(CsError::Invalid("delta must be positive".into()));
    }
    let d = delta.min(1.0);
    let ld = d.log2();
    let lr = r.log2();
    let growth_class = format!("O({}r)", "log ".repeat(l as usize + 1));
    let log2_b = |i: usize| {
        let c = c_of(params, i);
        if c.is_infinite() {
            f64::INFINITY
        } else {
            (c * c - ((i - 1) * i / 2) as f64 + ld) / c
        }
    };
    let slices: Vec<SliceVerdict> = (1..)
        .take_while(|&i| (i as f64) <= lr && i <= 4096)
        .map(|i| {
            let c = c_of(params, i);
            let hypothesis = c.is_infinite() || ld >= ((i - 1) * i / 2) as f64 - c * c;
            let lb = log2_b(i);
            SliceVerdict { i, log2_b: lb, hypothesis, peninsula: hypothesis && lb > log2_rho(r, i) }
        })
        .collect();
    let mut rep = Zeta0Report {
        r,
        delta_used: d,
        i0: None,
        k: None,
        head_sum: f64::NAN,
        upper: None,
        m: None,
        closed_form: None,
        growth_class,
        slices,
        inapplicable: None,
    };
    if lr < iter_exp2(1.0, l) {
        rep.inapplicable = Some(format!("r below the validity floor exp2^{}(1)", l + 1));
        return Ok(rep);
    }
    let lb: Vec<f64> = (0..=ZETA0_HORIZON + 1).map(|i| if i == 0 { f64::NAN } else { log2_b(i) }).collect();
    let cond1 = |i: usize| {
        let c = c_of(params, i);
        c.is_infinite() || ld >= (-c).max(((i - 1) * i / 2) as f64 - c * c)
    };
    let incr = |i: usize| lb[i + 1] > lb[i] || lb[i + 1].is_infinite();
    let i0 = (1..=ZETA0_HORIZON).find(|&i0| {
        lb[i0] >= i0 as f64 && (i0..=ZETA0_HORIZON).all(|i| cond1(i) && incr(i))
    });
    let Some(i0) = i0 else {
        rep.inapplicable = Some(format!("no admissible i0 up to slice {ZETA0_HORIZON}"));
        return Ok(rep);
    };
    let top = lb[i0].floor();
    let head: f64 = (1..).take_while(|&i| i as f64 <= top).map(|i| c_of(params, i)).sum();
    let k = (i0..=ZETA0_HORIZON).take_while(|&k| lb[k] <= lr).last();
    let upper = match k {
        None => head,
        Some(k) => head - i0 as f64 + k as f64,
    };
    let ilog = |x_log2: f64, k: usize| {
        if x_log2.is_infinite() {
            lambda * k as f64
        } else {
            iter_log2(x_log2, l)
        }
    };
    let mut m = head - 1.0 / lambda;
    m = m.max(head - i0 as f64);
    for kk in i0..=ZETA0_HORIZON {
        m = m.max(head - i0 as f64 + kk as f64 - ilog(lb[kk], kk).max(1.0) / lambda);
    }
    rep.i0 = Some(i0);
    rep.k = k;
    rep.head_sum = head;
    rep.upper = Some(upper);
    rep.m = Some(m);
    rep.closed_form = Some(iter_log2(lr, l) / lambda + m);
    Ok(rep)
}

#[derive(Debug, Clone, Serialize)]
pub struct JacobianDecay {
    pub i: usize,
    pub j: u64,
    pub c: u64,
    pub log2_det: f64,
    pub log2_bound: f64,
    pub verdict: bool,
}

fn log2_prod_except(c: u64, j: u64) -> f64 {
    let inv = 1.0 / j as f64;
    (1..=c).filter(|&l| l != j).map(|l| (inv - 1.0 / l as f64).abs().log2()).sum()
}

/// `log2 |det J_F|` at the zero `(2^i, 1/j)` from the closed form.
pub fn jacobian_decay(i: usize, j: u64, params: &CSParams) -> CsResult<JacobianDecay> {
    let c = params.c(i).ok_or_else(|| CsError::Invalid(format!("c_{i} too large")))?;
    if !(1..=c).contains(&j) {
        return Err(CsError::Invalid(format!("need 1 <= j <= c_{i} = {c}")));
    }
    let gi = log2_gi_at_pow2(i);
    let log2_det = (-(i as f64) + gi) + (-((c * c) as f64) + gi + log2_prod_except(c, j));
    let log2_bound = -((c * c) as f64) + (i * i) as f64 - 2.0 * i as f64;
    Ok(JacobianDecay { i, j, c, log2_det, log2_bound, verdict: log2_det < log2_bound })
}

#[derive(Debug, Clone, Serialize)]
pub struct FalsificationRow {
    pub i: usize,
    pub max_log2_det: f64,
    /// `log2 c - b * log2 mu_upper(|xi|)`: `|det J| < c mu^-b` holds when `max_log2_det` is below it.
    pub log2_rhs: f64,
    pub below: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct Falsification {
    pub c: f64,
    pub b: f64,
    pub rows: Vec<FalsificationRow>,
    /// First slice from which `|det J_F| < c mu^-b` at every zero, up to the horizon.
    pub cutoff: Option<usize>,
}

/// Scans slices `1..=horizon` for the Jacobian lower-bound condition `|det J_F(xi)| >= c mu(F, |xi|)^-b`.
pub fn falsification(params: &CSParams, c: f64, b: f64, horizon: usize) -> CsResult<Falsification> {
    if !(c > 0.0 && b > 0.0) {
        return Err(CsError::Invalid("need c > 0 and b > 0".into()));
    }
    let rows = (1..=horizon)
        .into_par_iter()
        .map(|i| -> CsResult<FalsificationRow> {
            let ci = params.c(i).ok_or_else(|| CsError::Invalid(format!("c_{i} too large")))?;
            let max_log2_det = if ci <= JACOBIAN_EXACT_MAX_C {
                (1..=ci).map(|j| jacobian_decay(i, j, params).map(|d| d.log2_det)).try_fold(f64::NEG_INFINITY, |a, x| x.map(|x| a.max(x)))?
            } else {
                -((ci * ci) as f64) + (i * i) as f64 - 2.0 * i as f64
            };
            let mu_hi = mu_cs_bounds((4f64.powi(i as i32) + 1.0).sqrt())?.1;
            let log2_rhs = c.log2() - b * mu_hi;
            Ok(FalsificationRow { i, max_log2_det, log2_rhs, below: max_log2_det < log2_rhs })
        })
        .collect::<CsResult<Vec<_>>>()?;
    let cutoff = (0..rows.len()).find(|&s| rows[s..].iter().all(|r| r.below)).map(|s| rows[s].i);
    Ok(Falsification { c, b, rows, cutoff })
}

#[derive(Debug, Clone, Serialize)]
pub struct CsRow {
    pub r: f64,
    pub log2_r: f64,
    pub zeta_lower: u64,
    pub zeta_upper: u64,
    pub envelope_lower: f64,
    pub envelope_upper: f64,
    pub mu_lower: f64,
    pub mu_upper: f64,
    pub islands_upper: Option<f64>,
}

pub fn cs_table(radii: &[f64], delta: f64, params: &CSParams) -> CsResult<Vec<CsRow>> {
    let an = CsAnalyzer::new(params, delta)?;
    radii
        .iter()
        .map(|&r| {
            let b = an.bracket(r)?;
            let (mu_lower, mu_upper) = mu_cs_bounds(r)?;
            let islands_upper = match params.c_spec {
                CSpec::Pow { .. } => zeta0_analysis(r, delta, params)?.upper,
                CSpec::Explicit(_) => None,
            };
            Ok(CsRow {
                r,
                log2_r: r.log2(),
                zeta_lower: b.lower,
                zeta_upper: b.upper,
                envelope_lower: b.envelope_lower,
                envelope_upper: b.envelope_upper,
                mu_lower,
                mu_upper,
                islands_upper,
            })
        })
        .collect()
}

pub fn cs_table_csv(rows: &[CsRow]) -> String {
    let mut s = String::from("r,log2_r,zeta_lower,zeta_upper,envelope_lower,envelope_upper,mu_lower,mu_upper,islands_upper\n");
    for x in rows {
        let isl = x.islands_upper.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            x.r, x.log2_r, x.zeta_lower, x.zeta_upper, x.envelope_lower, x.envelope_upper, x.mu_lower, x.mu_upper, isl
        );
    }
    s
}
