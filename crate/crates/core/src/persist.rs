//! Degree-0 sublevel persistence of `|f|` on the cell grid.

use crate::grid::{sample_sublevel, zeros_in_ball, GridError, SublevelGrid, UnionFind, Verdict};
use crate::maps::EntireMap;
use crate::Scalar;
use rayon::prelude::*;
use serde::Serialize;
use std::fmt::Write as _;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Bar<T> {
    pub birth: T,
    /// `inf` for the essential class.
    pub death: T,
    pub multiplicity: usize,
}

impl<T: Scalar> Bar<T> {
    pub fn length(&self) -> T {
        self.death - self.birth
    }

    pub fn alive_at(&self, t: T) -> bool {
        self.birth <= t && t < self.death
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Barcode<T> {
    pub bars: Vec<Bar<T>>,
}

impl<T: Scalar> Barcode<T> {
    pub fn empty() -> Self {
        Self { bars: Vec::new() }
    }

    /// Groups equal intervals, sorted by `(birth, death)`.
    pub fn from_pairs(mut pairs: Vec<(T, T)>) -> Self {
        pairs.retain(|(b, d)| b < d);
        pairs.par_sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
        let mut bars: Vec<Bar<T>> = Vec::new();
        for (b, d) in pairs {
            match bars.last_mut() {
                Some(l) if l.birth == b && l.death == d => l.multiplicity += 1,
                _ => bars.push(Bar { birth: b, death: d, multiplicity: 1 }),
            }
        }
        Self { bars }
    }

    pub fn total(&self) -> usize {
        self.bars.iter().map(|b| b.multiplicity).sum()
    }

    pub fn infinite(&self) -> usize {
        self.bars.iter().filter(|b| b.death.is_infinite()).map(|b| b.multiplicity).sum()
    }

    /// Number of classes alive at `t`.
    pub fn betti_at(&self, t: T) -> usize {
        self.bars.iter().filter(|b| b.alive_at(t)).map(|b| b.multiplicity).sum()
    }

    /// CSV with header `birth,death,multiplicity`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("birth,death,multiplicity\n");
        for b in &self.bars {
            let d = if b.death.is_infinite() { "inf".to_string() } else { format!("{:e}", b.death) };
            let _ = writeln!(s, "{:e},{},{}", b.birth, d, b.multiplicity);
        }
        s
    }
}

/// Lower-star elder-rule pairs over a vertex graph; ties broken by vertex index.
pub fn lower_star_pairs<T: Scalar>(values: &[T], active: &[bool], nbrs: impl Fn(usize) -> Vec<usize>) -> Vec<(T, T)> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).filter(|&i| active[i]).collect();
    order.par_sort_unstable_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap().then(a.cmp(&b)));
    let older = |a: usize, b: usize| (values[a], a) <= (values[b], b);
    let mut done = vec![false; n];
    let mut uf = UnionFind::new(n);
    let mut elder: Vec<u32> = vec![u32::MAX; n];
    let mut pairs = Vec::new();
    for &v in &order {
        done[v] = true;
        elder[v] = v as u32;
        for u in nbrs(v) {
            if !done[u] {
                continue;
            }
            let (ru, rv) = (uf.find(u), uf.find(v));
            if ru == rv {
                continue;
            }
            let (eu, ev) = (elder[ru] as usize, elder[rv] as usize);
            let (old, young) = if older(eu, ev) { (eu, ev) } else { (ev, eu) };
            pairs.push((values[young], values[v]));
            let root = uf.union(ru, rv);
            elder[root] = old as u32;
        }
    }
    for &v in &order {
        if uf.find(v) == v {
            pairs.push((values[elder[v] as usize], T::infinity()));
        }
    }
    pairs
}

/// Barcode of `|f|` over the grid's domain cells; the grid stores `log2 |f|`.
pub fn barcode_of_grid<T: Scalar>(grid: &SublevelGrid<T>) -> Barcode<T> {
    let pairs = lower_star_pairs(&grid.values, &grid.in_domain, |i| grid.neighbors(i));
    let lin = |x: T| if x.is_infinite() && x > T::zero() { x } else { x.exp2() };
    Barcode::from_pairs(pairs.into_iter().map(|(b, d)| (lin(b), lin(d))).collect())
}

/// Barcode of a 1-d profile of raw values (path graph).
pub fn barcode_of_profile<T: Scalar>(values: &[T]) -> Barcode<T> {
    let n = values.len();
    let pairs = lower_star_pairs(values, &vec![true; n], |i| {
        let mut v = Vec::with_capacity(2);
        if i > 0 {
            v.push(i - 1);
        }
        if i + 1 < n {
            v.push(i + 1);
        }
        v
    });
    Barcode::from_pairs(pairs)
}

/// Barcode of `|f|` on `B_r`; cells holding a known or located zero take the value 0.
pub fn barcode0<T: Scalar>(map: &EntireMap, r: f64, res: usize) -> Result<Barcode<T>, GridError> {
    let mut grid = sample_sublevel::<T>(map, r, 1.0, res)?;
    let zeros = if map.n == 1 { Some(zeros_in_ball(map, r)?) } else { map.known_zeros(r) };
    if let Some(z) = zeros {
        grid.pin_zeros(&z);
    }
    Ok(barcode_of_grid(&grid))
}

/// Bars longer than `delta`; infinite bars always count.
pub fn count_long_bars<T: Scalar>(bc: &Barcode<T>, delta: f64) -> usize {
    let d = T::from_f64(delta).unwrap();
    bc.bars.iter().filter(|b| b.death.is_infinite() || b.length() > d).map(|b| b.multiplicity).sum()
}

#[derive(Debug, Clone, Serialize)]
pub struct StabilityReport {
    pub verdict: Verdict,
    /// `None` when the precondition fails.
    pub holds: Option<bool>,
    pub sup_distance: f64,
    pub n_f_2c: usize,
    pub n_g_eps: usize,
}

/// Checks `N_{2c}(f) <= N_eps(g)` on a shared grid when `sup ||f| - |g|| <= c - eps/2`.
pub fn stability_check(f: &EntireMap, g: &EntireMap, c: f64, eps: f64, r: f64, res: usize) -> Result<StabilityReport, GridError> {
    let gf = sample_sublevel::<f64>(f, r, 1.0, res)?;
    let gg = sample_sublevel::<f64>(g, r, 1.0, res)?;
    let dist = gf
        .values
        .par_iter()
        .zip(&gg.values)
        .zip(&gf.in_domain)
        .filter(|(_, d)| **d)
        .map(|((a, b), _)| (a.exp2() - b.exp2()).abs())
        .reduce(|| 0.0, f64::max);
    let nf = count_long_bars(&barcode_of_grid(&gf), 2.0 * c);
    let ng = count_long_bars(&barcode_of_grid(&gg), eps);
    let admissible = eps > 0.0 && c > eps / 2.0 && dist <= c - eps / 2.0;
    let holds = admissible.then_some(nf <= ng);
    let detail = format!("N_2c(f) = {nf}, N_eps(g) = {ng}, sampled sup distance = {dist:e}, c = {c}, eps = {eps}");
    let verdict = match holds {
        None => Verdict::new("stability", true, format!("inapplicable: {detail}")),
        Some(h) => Verdict::new("stability", h, detail),
    };
    Ok(StabilityReport { verdict, holds, sup_distance: dist, n_f_2c: nf, n_g_eps: ng })
}
