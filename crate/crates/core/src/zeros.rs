//! Zeros of one-variable maps: argument-principle winding numbers on
//! rectangles, quadrisection with damped Newton polishing, and `tau`.

use crate::grid::{self, GridError, MAX_CELLS};
use crate::maps::{EntireMap, MapError};
use crate::xnum::LogComplex;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;
use std::f64::consts::{FRAC_PI_2, PI, TAU};
use thiserror::Error;

const EDGE_SAMPLES: usize = 32;
const MAX_SPLIT_DEPTH: u32 = 40;

#[derive(Debug, Error)]
pub enum ZerosError {
    #[error("contour unsafe: passes too near a zero around {near}")]
    ContourUnsafe { near: Complex64 },
    #[error("zeros module needs a map C -> C (got n = {n}, m = {m})")]
    NotOneVariable { n: usize, m: usize },
    #[error("unresolved boxes remain after subdivision ({0} boxes)")]
    Unresolved(usize),
    #[error("islands cannot be separated by a safe contour below the cell cap")]
    Inseparable,
    #[error(transparent)]
    Map(#[from] MapError),
    #[error("grid failure: {0}")]
    Grid(String),
}

impl From<GridError> for ZerosError {
    fn from(e: GridError) -> Self {
        match e {
            GridError::Zeros(z) => z,
            other => ZerosError::Grid(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Rect {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl Rect {
    pub fn new(x0: f64, x1: f64, y0: f64, y1: f64) -> Self {
        Self { x0, x1, y0, y1 }
    }

    pub fn square(c: Complex64, half: f64) -> Self {
        Self::new(c.re - half, c.re + half, c.im - half, c.im + half)
    }

    pub fn contains(&self, z: Complex64) -> bool {
        z.re >= self.x0 && z.re <= self.x1 && z.im >= self.y0 && z.im <= self.y1
    }

    pub fn center(&self) -> Complex64 {
        Complex64::new(0.5 * (self.x0 + self.x1), 0.5 * (self.y0 + self.y1))
    }

    pub fn size(&self) -> f64 {
        (self.x1 - self.x0).max(self.y1 - self.y0)
    }

    fn corners(&self) -> [Complex64; 4] {
        [
            Complex64::new(self.x0, self.y0),
            Complex64::new(self.x1, self.y0),
            Complex64::new(self.x1, self.y1),
            Complex64::new(self.x0, self.y1),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Zero {
    pub location: Complex64,
    pub multiplicity: u32,
    pub residual: f64,
}

fn check_1d(map: &EntireMap) -> Result<(), ZerosError> {
    if map.n != 1 || map.m != 1 {
        return Err(ZerosError::NotOneVariable { n: map.n, m: map.m });
    }
    Ok(())
}

fn value(map: &EntireMap, z: Complex64) -> Result<LogComplex, ZerosError> {
    Ok(map.eval_c64(&[z])?[0])
}

fn wrap(a: f64) -> f64 {
    let mut d = a % TAU;
    if d > PI {
        d -= TAU;
    } else if d <= -PI {
        d += TAU;
    }
    d
}

// argument change along [a, b], refined until every step is below pi/2
fn segment_arg(
    map: &EntireMap,
    a: Complex64,
    fa: LogComplex,
    b: Complex64,
    fb: LogComplex,
    depth: u32,
) -> Result<f64, ZerosError> {
    if fa.is_zero() || fb.is_zero() {
        return Err(ZerosError::ContourUnsafe { near: if fa.is_zero() { a } else { b } });
    }
    let d = wrap(fb.arg() - fa.arg());
    let m = 0.5 * (a + b);
    let fm = value(map, m)?;
    if d.abs() < FRAC_PI_2 && !fm.is_zero() {
        // arg change bounded by |b - a| |f'| / |f| near the midpoint
        let dm = map.jacobian(&[LogComplex::from_c64(m).map_err(MapError::from)?])?[0][0];
        let low = fa.log2_abs().min(fb.log2_abs()).min(fm.log2_abs());
        if (b - a).norm().log2() + dm.log2_abs() - low < FRAC_PI_2.log2() {
            return Ok(d);
        }
    }
    if depth >= MAX_SPLIT_DEPTH {
        return Err(ZerosError::ContourUnsafe { near: m });
    }
    Ok(segment_arg(map, a, fa, m, fm, depth + 1)? + segment_arg(map, m, fm, b, fb, depth + 1)?)
}

/// Winding number of `f` along the boundary of `rect`, with `samples` initial points per edge.
pub fn winding_number_with(map: &EntireMap, rect: &Rect, samples: usize) -> Result<i64, ZerosError> {
    check_1d(map)?;
    let c = rect.corners();
    let mut pts = Vec::with_capacity(4 * samples);
    for e in 0..4 {
        let (p, q) = (c[e], c[(e + 1) % 4]);
        for k in 0..samples {
            pts.push(p + (q - p) * (k as f64 / samples as f64));
        }
    }
    let vals = pts.par_iter().map(|&z| value(map, z)).collect::<Result<Vec<_>, _>>()?;
    let n = pts.len();
    let total: f64 = (0..n)
        .into_par_iter()
        .map(|k| segment_arg(map, pts[k], vals[k], pts[(k + 1) % n], vals[(k + 1) % n], 0))
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .sum();
    let w = total / TAU;
    if (w - w.round()).abs() > 0.05 {
        return Err(ZerosError::ContourUnsafe { near: rect.center() });
    }
    Ok(w.round() as i64)
}

pub fn winding_number(map: &EntireMap, rect: &Rect) -> Result<i64, ZerosError> {
    winding_number_with(map, rect, EDGE_SAMPLES)
}

/// Damped Newton for a zero of multiplicity `m`, started at `z0`.
fn newton(map: &EntireMap, rect: &Rect, m: u32) -> Result<(Complex64, f64), ZerosError> {
    let s = rect.size();
    let fence = Rect::new(rect.x0 - s, rect.x1 + s, rect.y0 - s, rect.y1 + s);
    let z0 = rect.center();
    let mut z = z0;
    let mut fz = value(map, z)?;
    for _ in 0..200 {
        if fz.is_zero() {
            break;
        }
        let d = map.jacobian(&[LogComplex::from_c64(z).map_err(MapError::from)?])?[0][0];
        if d.is_zero() {
            break;
        }
        let Ok(step) = fz.div(&d).and_then(|q| q.mul_f64(m as f64)).map(|q| q.to_c64()) else {
            break;
        };
        if !step.re.is_finite() || !step.im.is_finite() {
            break;
        }
        let mut lam = 1.0;
        let mut moved = false;
        while lam > 1e-6 {
            let cand = z - step * lam;
            let fc = if fence.contains(cand) { value(map, cand).ok() } else { None };
            if let Some(fc) = fc.filter(|fc| fc.log2_abs() < fz.log2_abs()) {
                z = cand;
                fz = fc;
                moved = true;
                break;
            }
            lam *= 0.5;
        }
        if !moved || (step * lam).norm() <= 1e-15 * z.norm().max(1.0) {
            break;
        }
    }
    Ok((z, fz.to_c64().norm()))
}

#[derive(Debug, Clone, Serialize)]
pub struct LocateResult {
    pub zeros: Vec<Zero>,
    /// Boxes left with nonzero winding at the depth cap.
    pub unresolved: Vec<(Rect, i64)>,
    pub partial: bool,
}

fn boundary_scale(map: &EntireMap, rect: &Rect) -> Result<f64, ZerosError> {
    let mut s: f64 = 0.0;
    for c in rect.corners() {
        s = s.max(value(map, c)?.to_c64().norm());
    }
    Ok(s.max(f64::MIN_POSITIVE))
}

fn try_polish(map: &EntireMap, rect: &Rect, w: i64) -> Result<Option<Zero>, ZerosError> {
    let (p, res) = newton(map, rect, w as u32)?;
    if !rect.contains(p) {
        return Ok(None);
    }
    let scale = boundary_scale(map, rect)?;
    if res > 2f64.powi(-30) * scale {
        return Ok(None);
    }
    // multiplicity from a shrinking box around the polished point
    let mut half = (rect.size() / 8.0).min(2f64.powi(-10) * p.norm().max(1.0));
    for _ in 0..4 {
        match winding_number(map, &Rect::square(p, half)) {
            Ok(k) if k == w => return Ok(Some(Zero { location: p, multiplicity: w as u32, residual: res })),
            Ok(_) => return Ok(None),
            Err(ZerosError::ContourUnsafe { .. }) => half *= 0.61,
            Err(e) => return Err(e),
        }
    }
    Ok(None)
}

fn split(map: &EntireMap, rect: &Rect) -> Result<Option<[(Rect, i64); 4]>, ZerosError> {
    for t in [0.5, 0.4713, 0.5291, 0.4417, 0.5573] {
        let xm = rect.x0 + t * (rect.x1 - rect.x0);
        let ym = rect.y0 + (1.0 - t) * (rect.y1 - rect.y0);
        let kids = [
            Rect::new(rect.x0, xm, rect.y0, ym),
            Rect::new(xm, rect.x1, rect.y0, ym),
            Rect::new(rect.x0, xm, ym, rect.y1),
            Rect::new(xm, rect.x1, ym, rect.y1),
        ];
        let ws: Result<Vec<i64>, _> = kids.par_iter().map(|k| winding_number(map, k)).collect();
        match ws {
            Ok(ws) => return Ok(Some([(kids[0], ws[0]), (kids[1], ws[1]), (kids[2], ws[2]), (kids[3], ws[3])])),
            Err(ZerosError::ContourUnsafe { .. }) => continue,
            Err(e) => return Err(e),
        }
    }
    Ok(None)
}

fn resolve(map: &EntireMap, rect: Rect, w: i64, depth: u32, max_depth: u32) -> Result<LocateResult, ZerosError> {
    let mut out = LocateResult { zeros: Vec::new(), unresolved: Vec::new(), partial: false };
    if w == 0 {
        return Ok(out);
    }
    if w > 0 {
        if let Some(z) = try_polish(map, &rect, w)? {
            out.zeros.push(z);
            return Ok(out);
        }
    }
    let kids = if depth < max_depth { split(map, &rect)? } else { None };
    let Some(kids) = kids.filter(|k| k.iter().map(|x| x.1).sum::<i64>() == w) else {
        out.unresolved.push((rect, w));
        out.partial = true;
        return Ok(out);
    };
    let parts = kids
        .par_iter()
        .map(|&(k, kw)| resolve(map, k, kw, depth + 1, max_depth))
        .collect::<Result<Vec<_>, _>>()?;
    for p in parts {
        out.zeros.extend(p.zeros);
        out.unresolved.extend(p.unresolved);
        out.partial |= p.partial;
    }
    Ok(out)
}

/// Zeros inside `region` with multiplicities.
pub fn locate_zeros(map: &EntireMap, region: &Rect, max_depth: u32) -> Result<LocateResult, ZerosError> {
    let w = winding_number(map, region)?;
    let mut res = resolve(map, *region, w, 0, max_depth)?;
    res.zeros.sort_by(|a, b| (a.location.re, a.location.im).partial_cmp(&(b.location.re, b.location.im)).unwrap());
    Ok(res)
}

/// All zeros in the closed disk `|z| <= r`.
pub fn locate_zeros_in_ball(map: &EntireMap, r: f64) -> Result<Vec<Zero>, ZerosError> {
    check_1d(map)?;
    let mut last = None;
    for pad in [1.0 / 64.0, 1.0 / 37.0, 1.0 / 23.0, 1.0 / 13.0] {
        let big = r * (1.0 + pad) + 1e-3;
        match locate_zeros(map, &Rect::new(-big, big * 0.9973, -big * 0.9981, big), 48) {
            Ok(res) if !res.partial => {
                return Ok(res.zeros.into_iter().filter(|z| z.location.norm() <= r).collect());
            }
            Ok(res) => last = Some(ZerosError::Unresolved(res.unresolved.len())),
            Err(e @ ZerosError::ContourUnsafe { .. }) => last = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last.unwrap())
}

#[derive(Debug, Clone, Serialize)]
pub struct TauReport {
    pub tau: usize,
    pub zeta0: usize,
    pub per_island: Vec<usize>,
    pub islands_without_zero: usize,
    pub res: usize,
}

fn island_contour(grid: &grid::SublevelGrid<f64>, set: &grid::ComponentSet, label: usize) -> Option<Rect> {
    let c = &set.components[label];
    let h = grid.h[0];
    let (lo_x, hi_x) = (c.bbox_min[0] as i64 - 1, c.bbox_max[0] as i64 + 1);
    let (lo_y, hi_y) = (c.bbox_min[1] as i64 - 1, c.bbox_max[1] as i64 + 1);
    if lo_x < 0 || lo_y < 0 || hi_x >= grid.dims[0] as i64 || hi_y >= grid.dims[1] as i64 {
        return None;
    }
    // the guard ring and everything inside it must avoid other components
    for x in lo_x..=hi_x {
        for y in lo_y..=hi_y {
            let l = set.labels[x as usize * grid.dims[1] + y as usize];
            if l != u32::MAX && l as usize != label {
                return None;
            }
        }
    }
    // contour through the centers of the guard ring cells
    let cx = |k: i64| grid.lo[0] + (k as f64 + 0.5) * h;
    let cy = |k: i64| grid.lo[1] + (k as f64 + 0.5) * grid.h[1];
    Some(Rect::new(cx(lo_x), cx(hi_x), cy(lo_y), cy(hi_y)))
}

/// Zeros with multiplicity inside islands of `{|f| <= delta} ∩ B_r`.
pub fn tau(map: &EntireMap, r: f64, delta: f64, res: usize) -> Result<TauReport, ZerosError> {
    check_1d(map)?;
    let zs: Vec<Vec<Complex64>> = locate_zeros_in_ball(map, r)?.into_iter().map(|z| vec![z.location]).collect();
    let mut res = res;
    loop {
        let snap = grid::snapshot(map, &zs, r, delta, res)?;
        let islands: Vec<usize> = snap.set.components.iter().filter(|c| c.is_island).map(|c| c.label).collect();
        let contours: Option<Vec<Rect>> = islands.iter().map(|&l| island_contour(&snap.grid, &snap.set, l)).collect();
        let windings = contours.map(|cs| {
            cs.par_iter().map(|c| winding_number(map, c)).collect::<Result<Vec<i64>, _>>()
        });
        match windings {
            Some(Ok(ws)) => {
                let per: Vec<usize> = ws.iter().map(|&w| w.max(0) as usize).collect();
                return Ok(TauReport {
                    tau: per.iter().sum(),
                    zeta0: snap.zeta0,
                    islands_without_zero: per.iter().filter(|&&w| w == 0).count(),
                    per_island: per,
                    res,
                });
            }
            Some(Err(e @ ZerosError::ContourUnsafe { .. })) | Some(Err(e @ ZerosError::Map(_))) => {
                if (2 * res).pow(2) > MAX_CELLS {
                    return Err(e);
                }
            }
            Some(Err(e)) => return Err(e),
            None => {
                if (2 * res).pow(2) > MAX_CELLS {
                    return Err(ZerosError::Inseparable);
                }
            }
        }
        res *= 2;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maps::builtin;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use serde_json::{json, Value};

    fn poly(coeffs: Value) -> EntireMap {
        builtin("polynomial", 1, &json!({ "coeffs": coeffs })).unwrap()
    }

    fn exp_shift() -> EntireMap {
        builtin("exp_shift_n", 1, &Value::Null).unwrap()
    }

    #[test]
    fn winding_examples() {
        let unit = Rect::new(-1.0, 1.0, -1.0, 1.0);
        assert_eq!(winding_number(&poly(json!([0, 0, 0, 1])), &unit).unwrap(), 3);
        assert_eq!(winding_number(&exp_shift(), &Rect::new(-1.0, 1.0, 2.0, 4.0)).unwrap(), 1);
        let two = poly(json!([-0.25, 0, 1]));
        assert_eq!(winding_number(&two, &unit).unwrap(), 2);
        assert_eq!(winding_number(&two, &Rect::new(0.25, 0.75, -0.25, 0.25)).unwrap(), 1);
        let through = winding_number(&two, &Rect::new(0.5, 1.0, -0.25, 0.25));
        assert!(matches!(through, Err(ZerosError::ContourUnsafe { .. })));
    }

    #[test]
    fn locate_examples() {
        let res = locate_zeros(&exp_shift(), &Rect::new(-11.0, 11.0, -11.0, 11.0), 40).unwrap();
        assert!(!res.partial);
        let mut ims: Vec<f64> = res.zeros.iter().map(|z| z.location.im).collect();
        ims.sort_by(f64::total_cmp);
        let want = [-3.0 * PI, -PI, PI, 3.0 * PI];
        assert_eq!(ims.len(), 4);
        for (a, b) in ims.iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(res.zeros.iter().all(|z| z.multiplicity == 1 && z.location.re.abs() < 1e-12));
        let sq = locate_zeros(&poly(json!([0, 0, 1])), &Rect::new(-1.0, 1.0, -1.0, 1.0), 40).unwrap();
        assert_eq!(sq.zeros.len(), 1);
        assert_eq!(sq.zeros[0].multiplicity, 2);
        assert!(sq.zeros[0].location.norm() < 1e-7);
    }

    #[test]
    fn planted_roots_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..5 {
            let roots: Vec<Complex64> =
                (0..6).map(|_| Complex64::new(rng.gen_range(-0.9..0.9), rng.gen_range(-0.9..0.9))).collect();
            let m = builtin("polynomial", 1, &json!({ "roots": roots.iter().map(|z| [z.re, z.im]).collect::<Vec<_>>() }))
                .unwrap();
            let res = locate_zeros(&m, &Rect::new(-1.03, 1.01, -1.02, 1.04), 40).unwrap();
            assert!(!res.partial);
            let total: u32 = res.zeros.iter().map(|z| z.multiplicity).sum();
            assert_eq!(total, 6);
            for r in &roots {
                let best = res.zeros.iter().map(|z| (z.location - r).norm()).fold(f64::INFINITY, f64::min);
                assert!(best < 1e-10, "root {r} missed by {best}");
            }
        }
    }

    #[test]
    fn clustered_roots_in_a_large_ball() {
        let m = crate::maps::from_exprs(&["z1^3 - 1".to_string()], 1).unwrap();
        for r in [1.5, 8.0, 40.0] {
            let z = locate_zeros_in_ball(&m, r).unwrap();
            assert_eq!(z.len(), 3, "r={r}");
            assert!(z.iter().all(|z| z.multiplicity == 1 && (z.location.powu(3) - 1.0).norm() < 1e-12));
        }
        // (z - 1)^2 (z + 2) = z^3 - 3z + 2
        let z = locate_zeros_in_ball(&poly(json!([2, -3, 0, 1])), 30.0).unwrap();
        let mut m: Vec<u32> = z.iter().map(|z| z.multiplicity).collect();
        m.sort();
        assert_eq!(m, vec![1, 2]);
    }

    #[test]
    fn depth_cap_gives_partial_result() {
        let two = poly(json!([-1e-6, 0, 1]));
        let res = locate_zeros(&two, &Rect::new(-1.01, 0.99, -1.02, 0.98), 0).unwrap();
        assert!(res.partial || res.zeros.iter().map(|z| z.multiplicity).sum::<u32>() == 2);
    }

    #[test]
    fn tau_examples() {
        assert_eq!(tau(&exp_shift(), 10.0, 0.5, 256).unwrap().tau, 4);
        let sq = tau(&poly(json!([0, 0, 1])), 1.0, 0.25, 64).unwrap();
        assert_eq!((sq.tau, sq.zeta0), (2, 1));
        // all of B_1 is inside the sublevel set: one peninsula, no islands
        let flat = tau(&poly(json!([0.1, 0.1])), 1.0, 0.5, 64).unwrap();
        assert_eq!(flat.tau, 0);
    }

    proptest! {
        #[test]
        fn winding_stable_under_refinement(cx in -2.0f64..2.0, cy in -2.0f64..2.0, half in 0.1f64..3.0) {
            let m = poly(json!([[0.3, -0.2], [-1.0, 0.5], 0, [0.7, 0.1], 1]));
            let rect = Rect::square(Complex64::new(cx, cy), half);
            let a = winding_number_with(&m, &rect, 16);
            let b = winding_number_with(&m, &rect, 32);
            if let (Ok(a), Ok(b)) = (a, b) {
                prop_assert_eq!(a, b);
            }
        }
    }
}
