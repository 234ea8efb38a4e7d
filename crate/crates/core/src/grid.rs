//! Sampled sublevel sets `{|f| <= delta} ∩ B_r` and their connected components.
//!
//! Cells are indexed row-major with axis 0 slowest. For a map on `C^n` the
//! axes are `Re z1, Im z1, Re z2, Im z2, ...`. Two masked cells are adjacent
//! when they share a face.

use crate::maps::{EntireMap, MapError};
use crate::zeros::{self, ZerosError};
use crate::Scalar;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;
use std::io::Write;
use std::path::Path;
use thiserror::Error;

pub const MAX_CELLS: usize = 1 << 28;
pub const MIN_RES: usize = 16;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("grid of {cells} cells exceeds the cap of 2^28")]
    Cap { cells: u128 },
    #[error("resolution must be at least {MIN_RES}")]
    Resolution,
    #[error("full grids need n <= 2 (got {0})")]
    Dimension(usize),
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error(transparent)]
    Map(#[from] MapError),
    #[error(transparent)]
    Zeros(#[from] ZerosError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone)]
pub struct SublevelGrid<T> {
    pub dims: Vec<usize>,
    /// Lower corner of the region.
    pub lo: Vec<f64>,
    /// Cell width per axis.
    pub h: Vec<f64>,
    /// Radius of the ball the region is clipped to, if any.
    pub ball_r: Option<f64>,
    pub delta: f64,
    /// Per-cell `log2 |f|`; `+inf` outside the domain.
    pub values: Vec<T>,
    pub in_domain: Vec<bool>,
    pub mask: Vec<bool>,
}

fn strides(dims: &[usize]) -> Vec<usize> {
    let mut s = vec![1; dims.len()];
    for a in (0..dims.len().saturating_sub(1)).rev() {
        s[a] = s[a + 1] * dims[a + 1];
    }
    s
}

impl<T: Scalar> SublevelGrid<T> {
    /// Grid over an arbitrary field of `log2` values.
    pub fn from_field(
        dims: Vec<usize>,
        lo: Vec<f64>,
        h: Vec<f64>,
        ball_r: Option<f64>,
        values: Vec<T>,
        in_domain: Vec<bool>,
        delta: f64,
    ) -> Self {
        let mut g = Self { dims, lo, h, ball_r, delta, values, in_domain, mask: Vec::new() };
        g.rethreshold(delta);
        g
    }

    /// Recomputes the mask for a new `delta`; ties count as inside.
    pub fn rethreshold(&mut self, delta: f64) {
        self.delta = delta;
        let t = T::from_f64(delta.log2()).unwrap();
        self.mask = self.values.par_iter().zip(&self.in_domain).map(|(v, d)| *d && *v <= t).collect();
    }

    pub fn cell_count(&self) -> usize {
        self.values.len()
    }

    pub fn coords(&self, idx: usize) -> Vec<usize> {
        let s = strides(&self.dims);
        s.iter().zip(&self.dims).map(|(st, d)| (idx / st) % d).collect()
    }

    pub fn center(&self, idx: usize) -> Vec<f64> {
        self.coords(idx).iter().enumerate().map(|(a, &k)| self.lo[a] + (k as f64 + 0.5) * self.h[a]).collect()
    }

    /// Cell containing a point, if inside the region.
    pub fn cell_of(&self, p: &[f64]) -> Option<usize> {
        let s = strides(&self.dims);
        let mut idx = 0;
        for a in 0..self.dims.len() {
            let k = ((p[a] - self.lo[a]) / self.h[a]).floor();
            if !(k >= 0.0 && k < self.dims[a] as f64) {
                return None;
            }
            idx += k as usize * s[a];
        }
        Some(idx)
    }

    /// Face neighbours of a cell.
    pub fn neighbors(&self, idx: usize) -> Vec<usize> {
        let s = strides(&self.dims);
        let mut out = Vec::with_capacity(2 * self.dims.len());
        for a in 0..self.dims.len() {
            let k = (idx / s[a]) % self.dims[a];
            if k > 0 {
                out.push(idx - s[a]);
            }
            if k + 1 < self.dims[a] {
                out.push(idx + s[a]);
            }
        }
        out
    }

    fn half_diagonal(&self) -> f64 {
        0.5 * self.h.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Distance from the sphere `S_r` to the cell center, signed (positive inside).
    fn depth(&self, idx: usize) -> Option<f64> {
        let r = self.ball_r?;
        let c = self.center(idx);
        Some(r - c.iter().map(|x| x * x).sum::<f64>().sqrt())
    }

    /// Cells containing one of the given points take `log2 |f| = -inf`, the infimum over the cell.
    /// A cell holding a zero of the ball joins the domain even if its center lies outside.
    pub fn pin_zeros(&mut self, zeros: &[Vec<Complex64>]) {
        let t = T::from_f64(self.delta.log2()).unwrap();
        for z in zeros {
            let p: Vec<f64> = z.iter().flat_map(|c| [c.re, c.im]).collect();
            if let Some(idx) = self.cell_of(&p) {
                let inside = self.ball_r.is_none_or(|r| p.iter().map(|x| x * x).sum::<f64>() <= r * r);
                if self.in_domain[idx] || inside {
                    self.in_domain[idx] = true;
                    self.values[idx] = T::neg_infinity();
                    self.mask[idx] = T::neg_infinity() <= t;
                }
            }
        }
    }

    /// Raw mask dump: one byte per cell (1 = in the sublevel set), row-major,
    /// axis 0 slowest, plus a JSON sidecar at `<path>.json`.
    pub fn dump_mask(&self, path: &Path) -> Result<(), GridError> {
        let bytes: Vec<u8> = self.mask.iter().map(|&b| b as u8).collect();
        std::fs::File::create(path)?.write_all(&bytes)?;
        let side = serde_json::json!({
            "format": "u8 per cell, 1 = inside, row-major with axis 0 slowest",
            "dims": self.dims,
            "lo": self.lo,
            "h": self.h,
            "ball_r": self.ball_r,
            "delta": self.delta,
        });
        let mut p = path.as_os_str().to_owned();
        p.push(".json");
        std::fs::write(p, serde_json::to_string_pretty(&side).unwrap())?;
        Ok(())
    }
}

/// Samples `log2 |f|` at the cell centers of `[-r, r]^(2n)`, keeping cells whose center lies in `B_r`.
pub fn sample_sublevel<T: Scalar>(map: &EntireMap, r: f64, delta: f64, res: usize) -> Result<SublevelGrid<T>, GridError> {
    if map.n > 2 {
        return Err(GridError::Dimension(map.n));
    }
    if res < MIN_RES {
        return Err(GridError::Resolution);
    }
    if !(r > 0.0 && delta > 0.0) {
        return Err(GridError::Invalid("need r > 0 and delta > 0".into()));
    }
    let d = 2 * map.n;
    let cells = (res as u128).pow(d as u32);
    if cells > MAX_CELLS as u128 {
        return Err(GridError::Cap { cells });
    }
    let cells = cells as usize;
    let h = 2.0 * r / res as f64;
    let dims = vec![res; d];
    let lo = vec![-r; d];
    let st = strides(&dims);
    let center = |idx: usize| -> Vec<f64> { (0..d).map(|a| -r + (((idx / st[a]) % res) as f64 + 0.5) * h).collect() };
    let results: Vec<Result<(T, bool), MapError>> = (0..cells)
        .into_par_iter()
        .map(|idx| {
            let c = center(idx);
            if c.iter().map(|x| x * x).sum::<f64>() > r * r {
                return Ok((T::infinity(), false));
            }
            let z: Vec<Complex64> = c.chunks(2).map(|p| Complex64::new(p[0], p[1])).collect();
            let v = map.log2_abs_at(&z)?;
            Ok((T::from_f64(v).unwrap_or_else(T::infinity), true))
        })
        .collect();
    let mut values = Vec::with_capacity(cells);
    let mut in_domain = Vec::with_capacity(cells);
    for x in results {
        let (v, b) = x?;
        values.push(v);
        in_domain.push(b);
    }
    Ok(SublevelGrid::from_field(dims, lo, vec![h; d], Some(r), values, in_domain, delta))
}

/// Union-find over cell indices with union by rank and path halving.
#[derive(Debug, Clone)]
pub struct UnionFind {
    parent: Vec<u32>,
    rank: Vec<u8>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        Self { parent: (0..n as u32).collect(), rank: vec![0; n] }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] as usize != x {
            let p = self.parent[x] as usize;
            self.parent[x] = self.parent[p];
            x = p;
        }
        x
    }

    pub fn union(&mut self, a: usize, b: usize) -> usize {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return ra;
        }
        let (hi, lo) = if self.rank[ra] >= self.rank[rb] { (ra, rb) } else { (rb, ra) };
        self.parent[lo] = hi as u32;
        if self.rank[hi] == self.rank[lo] {
            self.rank[hi] += 1;
        }
        hi
    }
}

// slab-local union-find on a contiguous index range
fn slab_find(parent: &mut [u32], off: usize, mut x: usize) -> usize {
    while parent[x - off] as usize != x {
        let p = parent[x - off] as usize;
        parent[x - off] = parent[p - off];
        x = p;
    }
    x
}

#[derive(Debug, Clone, Serialize)]
pub struct Component {
    pub label: usize,
    pub cells: Vec<usize>,
    pub touches_sphere: bool,
    pub is_island: bool,
    pub bbox_min: Vec<usize>,
    pub bbox_max: Vec<usize>,
    /// Indices into the zero list passed to `attach_zeros`.
    pub zeros: Vec<usize>,
}

#[derive(Debug, Clone, Default)]
pub struct ComponentSet {
    pub components: Vec<Component>,
    /// Component label per cell, `u32::MAX` for cells outside the mask.
    pub labels: Vec<u32>,
}

fn assemble<T: Scalar>(grid: &SublevelGrid<T>, mut root_of: impl FnMut(usize) -> usize) -> ComponentSet {
    let n = grid.cell_count();
    let mut labels = vec![u32::MAX; n];
    let mut by_root = std::collections::HashMap::new();
    let mut comps: Vec<Component> = Vec::new();
    let half = grid.half_diagonal();
    for idx in 0..n {
        if !grid.mask[idx] {
            continue;
        }
        let root = root_of(idx);
        let label = *by_root.entry(root).or_insert_with(|| {
            comps.push(Component {
                label: comps.len(),
                cells: Vec::new(),
                touches_sphere: false,
                is_island: true,
                bbox_min: vec![usize::MAX; grid.dims.len()],
                bbox_max: vec![0; grid.dims.len()],
                zeros: Vec::new(),
            });
            comps.len() - 1
        });
        labels[idx] = label as u32;
        let c = &mut comps[label];
        c.cells.push(idx);
        for (a, k) in grid.coords(idx).into_iter().enumerate() {
            c.bbox_min[a] = c.bbox_min[a].min(k);
            c.bbox_max[a] = c.bbox_max[a].max(k);
        }
        match grid.depth(idx) {
            Some(depth) => {
                if depth <= half {
                    c.touches_sphere = true;
                }
                if depth <= 2.0 * half {
                    c.is_island = false;
                }
            }
            None => c.is_island = false,
        }
    }
    ComponentSet { components: comps, labels }
}

/// Components of the mask; labels follow the smallest member cell index.
pub fn components<T: Scalar>(grid: &SublevelGrid<T>) -> ComponentSet {
    let n = grid.cell_count();
    let dims = &grid.dims;
    let st = strides(dims);
    let mut parent: Vec<u32> = (0..n as u32).collect();
    let slab_rows = (dims[0] / rayon::current_num_threads().max(1)).max(1);
    let slab_len = slab_rows * st[0];
    let mask = &grid.mask;
    // local pass: unions that stay inside a slab of axis-0 rows
    parent.par_chunks_mut(slab_len).enumerate().for_each(|(s, chunk)| {
        let off = s * slab_len;
        let end = off + chunk.len();
        for idx in off..end {
            if !mask[idx] {
                continue;
            }
            for a in 0..dims.len() {
                let k = (idx / st[a]) % dims[a];
                let nb = idx + st[a];
                if k + 1 < dims[a] && nb < end && mask[nb] {
                    let (ra, rb) = (slab_find(chunk, off, idx), slab_find(chunk, off, nb));
                    if ra != rb {
                        let (hi, lo) = (ra.min(rb), ra.max(rb));
                        chunk[lo - off] = hi as u32;
                    }
                }
            }
        }
    });
    // merge pass across slab boundaries
    let mut uf = UnionFind { parent, rank: vec![0; n] };
    let mut row = slab_rows;
    while row < dims[0] {
        let base = row * st[0];
        for idx in base - st[0]..base {
            if mask[idx] && mask[idx + st[0]] {
                uf.union(idx, idx + st[0]);
            }
        }
        row += slab_rows;
    }
    assemble(grid, |i| uf.find(i))
}

/// Same partition computed by visiting cells in the given order; used to check order invariance.
pub fn components_in_order<T: Scalar>(grid: &SublevelGrid<T>, order: &[usize]) -> ComponentSet {
    let mut uf = UnionFind::new(grid.cell_count());
    for &idx in order {
        if grid.mask[idx] {
            for nb in grid.neighbors(idx) {
                if grid.mask[nb] {
                    uf.union(idx, nb);
                }
            }
        }
    }
    // canonical roots: smallest member index
    let mut least = vec![usize::MAX; grid.cell_count()];
    for idx in 0..grid.cell_count() {
        if grid.mask[idx] {
            let r = uf.find(idx);
            least[r] = least[r].min(idx);
        }
    }
    assemble(grid, |i| {
        let r = uf.find(i);
        least[r]
    })
}

/// Attaches zeros (points of `C^n`) to the components whose cell contains them.
pub fn attach_zeros<T: Scalar>(set: &mut ComponentSet, grid: &SublevelGrid<T>, zeros: &[Vec<Complex64>]) {
    for c in &mut set.components {
        c.zeros.clear();
    }
    for (zi, z) in zeros.iter().enumerate() {
        let p: Vec<f64> = z.iter().flat_map(|c| [c.re, c.im]).collect();
        if let Some(idx) = grid.cell_of(&p) {
            let l = set.labels[idx];
            if l != u32::MAX {
                set.components[l as usize].zeros.push(zi);
            }
        }
    }
}

/// `(zeta, zeta0)` of a labeled set with zeros attached.
pub fn zeta_counts(set: &ComponentSet) -> (usize, usize) {
    let with_zero = set.components.iter().filter(|c| !c.zeros.is_empty());
    let z = with_zero.clone().count();
    let z0 = with_zero.filter(|c| c.is_island).count();
    (z, z0)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdict {
    pub name: String,
    pub holds: bool,
    pub detail: String,
}

impl Verdict {
    pub fn new(name: &str, holds: bool, detail: impl Into<String>) -> Self {
        Self { name: name.into(), holds, detail: detail.into() }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CountReport {
    pub zeta: usize,
    pub zeta0: usize,
    pub tau: Option<usize>,
    pub n_delta: Option<usize>,
    pub converged: bool,
    pub resolutions: Vec<usize>,
    pub zeros_in_ball: usize,
    pub islands: usize,
    pub islands_without_zero: usize,
    pub verdicts: Vec<Verdict>,
}

/// Zeros of the map in the closed ball: located for `n = 1`, from the closed-form list otherwise.
pub fn zeros_in_ball(map: &EntireMap, r: f64) -> Result<Vec<Vec<Complex64>>, GridError> {
    if map.n == 1 {
        let zs = zeros::locate_zeros_in_ball(map, r)?;
        Ok(zs.into_iter().map(|z| vec![z.location]).collect())
    } else {
        map.known_zeros(r)
            .ok_or_else(|| GridError::Invalid(format!("no zero list available for map '{}' with n = {}", map.name(), map.n)))
    }
}

/// Grid, components and counts at one resolution.
pub struct Snapshot {
    pub grid: SublevelGrid<f64>,
    pub set: ComponentSet,
    pub zeta: usize,
    pub zeta0: usize,
}

pub fn snapshot(map: &EntireMap, zeros: &[Vec<Complex64>], r: f64, delta: f64, res: usize) -> Result<Snapshot, GridError> {
    let mut grid = sample_sublevel::<f64>(map, r, delta, res)?;
    grid.pin_zeros(zeros);
    let mut set = components(&grid);
    attach_zeros(&mut set, &grid, zeros);
    let (zeta, zeta0) = zeta_counts(&set);
    Ok(Snapshot { grid, set, zeta, zeta0 })
}

fn cells_for(n: usize, res: usize) -> u128 {
    (res as u128).pow(2 * n as u32)
}

/// `zeta` and `zeta0` with resolution doubling until two consecutive resolutions agree.
pub fn coarse_count(map: &EntireMap, r: f64, delta: f64, res_start: usize) -> Result<CountReport, GridError> {
    let zeros = zeros_in_ball(map, r)?;
    let (report, _) = coarse_count_with(map, &zeros, r, delta, res_start)?;
    Ok(report)
}

/// As `coarse_count` with a precomputed zero list; also returns the finest snapshot.
pub fn coarse_count_with(
    map: &EntireMap,
    zeros: &[Vec<Complex64>],
    r: f64,
    delta: f64,
    res_start: usize,
) -> Result<(CountReport, Snapshot), GridError> {
    coarse_count_capped(map, zeros, r, delta, res_start, usize::MAX)
}

/// As `coarse_count_with`, refining no further than `max_res` per axis.
pub fn coarse_count_capped(
    map: &EntireMap,
    zeros: &[Vec<Complex64>],
    r: f64,
    delta: f64,
    res_start: usize,
    max_res: usize,
) -> Result<(CountReport, Snapshot), GridError> {
    let mut res = res_start;
    let mut cur = snapshot(map, zeros, r, delta, res)?;
    let mut used = vec![res];
    let converged = loop {
        let next = res * 2;
        if next > max_res || cells_for(map.n, next) > MAX_CELLS as u128 {
            break false;
        }
        let fine = snapshot(map, zeros, r, delta, next)?;
        used.push(next);
        let same = (fine.zeta, fine.zeta0) == (cur.zeta, cur.zeta0);
        cur = fine;
        res = next;
        if same {
            break true;
        }
    };
    let islands = cur.set.components.iter().filter(|c| c.is_island).count();
    let bare = cur.set.components.iter().filter(|c| c.is_island && c.zeros.is_empty()).count();
    let verdicts = vec![
        Verdict::new("zeta0_le_zeta", cur.zeta0 <= cur.zeta, format!("{} <= {}", cur.zeta0, cur.zeta)),
        Verdict::new("every_island_has_zero", bare == 0, format!("{bare} of {islands} islands without a zero")),
    ];
    let report = CountReport {
        zeta: cur.zeta,
        zeta0: cur.zeta0,
        tau: None,
        n_delta: None,
        converged,
        resolutions: used,
        zeros_in_ball: zeros.len(),
        islands,
        islands_without_zero: bare,
        verdicts,
    };
    Ok((report, cur))
}
