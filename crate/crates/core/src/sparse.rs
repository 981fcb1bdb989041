//! Direct solver for symmetric 5/7-point stencil matrices on boxes of cells.
//!
//! Geometric nested dissection drives a multifrontal LDL^T. Two modes:
//!
//! * inertia-only: frontal factors are discarded as soon as a separator is
//!   eliminated, leaving just the pivot sign counts. By Sylvester's law of
//!   inertia the number of negative pivots of A - lambda*B equals the number
//!   of pencil eigenvalues below lambda, which is how eigenvalue counting
//!   curves are computed without ever running an eigensolver. Threshold
//!   pivoting with delayed pivots keeps the counts reliable for shifts inside
//!   the spectrum; pivots that stay bad all the way up are resolved at the
//!   root by a dense symmetric eigendecomposition of the leftover block.
//! * keep: factor columns are stored for forward/backward solves, used by
//!   shift-invert iterations. The shift must sit outside the spectrum (the
//!   shifted matrix is then definite and factors without pivot swaps).
//!
//! Everything is deterministic: the dissection order is a pure function of
//! the box dimensions.

use nalgebra::DMatrix;
use std::collections::{HashMap, HashSet};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SparseError {
    #[error("pivot at cell {cell} is numerically zero (|d| = {value:.3e}); shift coincides with an eigenvalue")]
    SingularPivot { cell: usize, value: f64 },
    #[error("shift lies on an eigenvalue of the pencil to working precision")]
    ShiftOnEigenvalue,
    #[error(
        "ill-conditioned pivot (|d| = {0:.3e}) in keep mode; shift is too close to the spectrum"
    )]
    IllConditioned(f64),
    #[error("length mismatch: expected {expected} cells, got {got}")]
    DimMismatch { expected: usize, got: usize },
}

/// Cell counts per axis; `nz = 1` embeds the 2D case.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CellDims {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
}

impl CellDims {
    pub fn d2(nx: usize, ny: usize) -> Self {
        CellDims { nx, ny, nz: 1 }
    }

    pub fn d3(nx: usize, ny: usize, nz: usize) -> Self {
        CellDims { nx, ny, nz }
    }

    pub fn n(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    #[inline]
    pub fn idx(&self, x: usize, y: usize, z: usize) -> usize {
        (z * self.ny + y) * self.nx + x
    }

    pub fn strides(&self) -> [usize; 3] {
        [1, self.nx, self.nx * self.ny]
    }

    pub fn extents(&self) -> [usize; 3] {
        [self.nx, self.ny, self.nz]
    }
}

/// Symmetric matrix with nearest-neighbor coupling on a box of cells.
///
/// `diag[c]` is the diagonal entry of cell `c`; `off[a][c]` couples `c` with
/// its +axis-`a` neighbor. Entries on the last slice of each axis are unused
/// and must stay zero (assembly and `matvec` rely on this).
#[derive(Debug, Clone)]
pub struct StencilMatrix {
    pub dims: CellDims,
    pub diag: Vec<f64>,
    pub off: [Vec<f64>; 3],
}

impl StencilMatrix {
    pub fn zeros(dims: CellDims) -> Self {
        let n = dims.n();
        StencilMatrix {
            dims,
            diag: vec![0.0; n],
            off: [vec![0.0; n], vec![0.0; n], vec![0.0; n]],
        }
    }

    pub fn n(&self) -> usize {
        self.dims.n()
    }

    /// y = A x.
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        let n = self.n();
        assert_eq!(x.len(), n);
        assert_eq!(y.len(), n);
        for c in 0..n {
            y[c] = self.diag[c] * x[c];
        }
        for a in 0..3 {
            let s = self.dims.strides()[a];
            if self.dims.extents()[a] < 2 {
                continue;
            }
            let off = &self.off[a];
            for c in 0..n - s {
                let w = off[c];
                if w != 0.0 {
                    y[c] += w * x[c + s];
                    y[c + s] += w * x[c];
                }
            }
        }
    }

    /// Dense copy (oracle / small-problem fallback only).
    pub fn to_dense(&self) -> DMatrix<f64> {
        let d = self.dims;
        let n = d.n();
        let mut m = DMatrix::zeros(n, n);
        for c in 0..n {
            m[(c, c)] = self.diag[c];
        }
        let strides = d.strides();
        let ext = d.extents();
        for z in 0..d.nz {
            for y in 0..d.ny {
                for x in 0..d.nx {
                    let c = d.idx(x, y, z);
                    let pos = [x, y, z];
                    for a in 0..3 {
                        if pos[a] + 1 < ext[a] {
                            let w = self.off[a][c];
                            if w != 0.0 {
                                m[(c, c + strides[a])] = w;
                                m[(c + strides[a], c)] = w;
                            }
                        }
                    }
                }
            }
        }
        m
    }

    /// Infinity-norm scale of A - shift*B, for pivot-zero thresholds.
    fn scale(&self, shift: f64, mass: Option<&[f64]>) -> f64 {
        let mut s: f64 = 0.0;
        for c in 0..self.n() {
            let m = mass.map_or(1.0, |m| m[c]);
            s = s.max((self.diag[c] - shift * m).abs());
        }
        for a in 0..3 {
            for &w in &self.off[a] {
                s = s.max(w.abs());
            }
        }
        s.max(1e-300)
    }
}

/// Pivot sign counts of A - shift*B.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Inertia {
    pub neg: usize,
    pub zero: usize,
    pub pos: usize,
}

/// Number of pencil eigenvalues of (A, B) strictly below `shift` (B positive
/// diagonal; identity when `mass` is `None`). Errors if the shift lands on an
/// eigenvalue to working precision; callers should nudge and retry.
pub fn count_below(
    mat: &StencilMatrix,
    mass: Option<&[f64]>,
    shift: f64,
) -> Result<usize, SparseError> {
    let inr = inertia(mat, mass, shift)?;
    if inr.zero > 0 {
        return Err(SparseError::ShiftOnEigenvalue);
    }
    Ok(inr.neg)
}

pub fn inertia(
    mat: &StencilMatrix,
    mass: Option<&[f64]>,
    shift: f64,
) -> Result<Inertia, SparseError> {
    check_mass(mat, mass)?;
    let mut ctx = Ctx {
        mat,
        mass,
        shift,
        zero_tol: 1e-13 * mat.scale(shift, mass),
        tau: 0.01,
        keep: None,
        neg: 0,
        zero: 0,
        eliminated: 0,
    };
    let leftover = ctx.dissect(Region::whole(mat.dims))?;
    ctx.finish_root(leftover);
    debug_assert_eq!(ctx.eliminated, mat.n());
    let n = mat.n();
    Ok(Inertia {
        neg: ctx.neg,
        zero: ctx.zero,
        pos: n - ctx.neg - ctx.zero,
    })
}

fn check_mass(mat: &StencilMatrix, mass: Option<&[f64]>) -> Result<(), SparseError> {
    if let Some(m) = mass {
        if m.len() != mat.n() {
            return Err(SparseError::DimMismatch {
                expected: mat.n(),
                got: m.len(),
            });
        }
    }
    Ok(())
}

/// Stored LDL^T factorization of A - shift*B for repeated solves.
pub struct Factorization {
    n: usize,
    // Column-compressed factor: column k has rows/vals in [ptr[k], ptr[k+1]).
    col_cell: Vec<u32>,
    col_d: Vec<f64>,
    ptr: Vec<usize>,
    rows: Vec<u32>,
    vals: Vec<f64>,
    pub inertia: Inertia,
}

impl Factorization {
    pub fn new(mat: &StencilMatrix, mass: Option<&[f64]>, shift: f64) -> Result<Self, SparseError> {
        check_mass(mat, mass)?;
        let n = mat.n();
        let mut store = FactorStore {
            col_cell: Vec::with_capacity(n),
            col_d: Vec::with_capacity(n),
            ptr: vec![0],
            rows: Vec::new(),
            vals: Vec::new(),
        };
        let mut ctx = Ctx {
            mat,
            mass,
            shift,
            zero_tol: 1e-13 * mat.scale(shift, mass),
            tau: 0.0,
            keep: Some(&mut store),
            neg: 0,
            zero: 0,
            eliminated: 0,
        };
        let leftover = ctx.dissect(Region::whole(mat.dims))?;
        debug_assert_eq!(leftover.m, 0);
        let (neg, zero) = (ctx.neg, ctx.zero);
        Ok(Factorization {
            n,
            col_cell: store.col_cell,
            col_d: store.col_d,
            ptr: store.ptr,
            rows: store.rows,
            vals: store.vals,
            inertia: Inertia {
                neg,
                zero,
                pos: n - neg - zero,
            },
        })
    }

    /// Solves (A - shift*B) x = b in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        assert_eq!(b.len(), self.n);
        let ncol = self.col_cell.len();
        for k in 0..ncol {
            let zj = b[self.col_cell[k] as usize];
            if zj != 0.0 {
                for t in self.ptr[k]..self.ptr[k + 1] {
                    b[self.rows[t] as usize] -= self.vals[t] * zj;
                }
            }
        }
        for k in 0..ncol {
            b[self.col_cell[k] as usize] /= self.col_d[k];
        }
        for k in (0..ncol).rev() {
            let mut acc = 0.0;
            for t in self.ptr[k]..self.ptr[k + 1] {
                acc += self.vals[t] * b[self.rows[t] as usize];
            }
            b[self.col_cell[k] as usize] -= acc;
        }
    }
}

struct FactorStore {
    col_cell: Vec<u32>,
    col_d: Vec<f64>,
    ptr: Vec<usize>,
    rows: Vec<u32>,
    vals: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
struct Region {
    x0: usize,
    x1: usize,
    y0: usize,
    y1: usize,
    z0: usize,
    z1: usize,
}

impl Region {
    fn whole(d: CellDims) -> Self {
        Region {
            x0: 0,
            x1: d.nx,
            y0: 0,
            y1: d.ny,
            z0: 0,
            z1: d.nz,
        }
    }

    fn cells(&self) -> usize {
        (self.x1 - self.x0) * (self.y1 - self.y0) * (self.z1 - self.z0)
    }
}

/// Schur complement over the cells in `ids` (full storage, lower triangle
/// valid, column-major, side `m`).
struct Front {
    ids: Vec<u32>,
    mat: Vec<f64>,
    m: usize,
}

const LEAF_MAX: usize = 32;
const PANEL: usize = 32;

struct Ctx<'a> {
    mat: &'a StencilMatrix,
    mass: Option<&'a [f64]>,
    shift: f64,
    zero_tol: f64,
    tau: f64,
    keep: Option<&'a mut FactorStore>,
    neg: usize,
    zero: usize,
    eliminated: usize,
}

impl<'a> Ctx<'a> {
    #[inline]
    fn shifted_diag(&self, c: usize) -> f64 {
        self.mat.diag[c] - self.shift * self.mass.map_or(1.0, |m| m[c])
    }

    /// Exterior cells adjacent to `r`, in a fixed deterministic order.
    fn exterior_ring(&self, r: &Region) -> Vec<u32> {
        let d = self.mat.dims;
        let mut out = Vec::new();
        if r.x0 > 0 {
            for z in r.z0..r.z1 {
                for y in r.y0..r.y1 {
                    out.push(d.idx(r.x0 - 1, y, z) as u32);
                }
            }
        }
        if r.x1 < d.nx {
            for z in r.z0..r.z1 {
                for y in r.y0..r.y1 {
                    out.push(d.idx(r.x1, y, z) as u32);
                }
            }
        }
        if r.y0 > 0 {
            for z in r.z0..r.z1 {
                for x in r.x0..r.x1 {
                    out.push(d.idx(x, r.y0 - 1, z) as u32);
                }
            }
        }
        if r.y1 < d.ny {
            for z in r.z0..r.z1 {
                for x in r.x0..r.x1 {
                    out.push(d.idx(x, r.y1, z) as u32);
                }
            }
        }
        if r.z0 > 0 {
            for y in r.y0..r.y1 {
                for x in r.x0..r.x1 {
                    out.push(d.idx(x, y, r.z0 - 1) as u32);
                }
            }
        }
        if r.z1 < d.nz {
            for y in r.y0..r.y1 {
                for x in r.x0..r.x1 {
                    out.push(d.idx(x, y, r.z1) as u32);
                }
            }
        }
        out
    }

    fn dissect(&mut self, r: Region) -> Result<Front, SparseError> {
        let ext = [r.x1 - r.x0, r.y1 - r.y0, r.z1 - r.z0];
        let lo = [r.x0, r.y0, r.z0];
        let hi = [r.x1, r.y1, r.z1];
        let longest = (0..3).filter(|&a| ext[a] >= 3).max_by_key(|&a| ext[a]);
        let mids = [0, 1, 2].map(|a| (longest == Some(a)).then(|| (lo[a] + hi[a]) / 2));
        if r.cells() <= LEAF_MAX || mids.iter().all(|m| m.is_none()) {
            return self.leaf(r);
        }
        // Mid-plane separator across the longest axis. Fronts stay at the
        // classical nested-dissection size because children Schur onto their
        // exterior rings only (see `leaf`); separator cells and any pivots the
        // children delayed are all eliminated here.
        let seg = |lo: usize, hi: usize, mid: Option<usize>| match mid {
            Some(p) => vec![(lo, p), (p + 1, hi)],
            None => vec![(lo, hi)],
        };
        let sx = seg(r.x0, r.x1, mids[0]);
        let sy = seg(r.y0, r.y1, mids[1]);
        let sz = seg(r.z0, r.z1, mids[2]);
        let mut fronts = Vec::with_capacity(sx.len() * sy.len() * sz.len());
        for zs in &sz {
            for ys in &sy {
                for xs in &sx {
                    fronts.push(self.dissect(Region {
                        x0: xs.0,
                        x1: xs.1,
                        y0: ys.0,
                        y1: ys.1,
                        z0: zs.0,
                        z1: zs.1,
                    })?);
                }
            }
        }
        self.internal(r, mids, fronts)
    }

    /// Dense handling of a small region: assemble every original entry with
    /// at least one endpoint inside, eliminate all region cells. Every region
    /// cell couples only to the region and its exterior ring, both fully
    /// present in the front, so the whole region can be eliminated here; the
    /// Schur complement lands on the ring (ancestor separator cells).
    fn leaf(&mut self, r: Region) -> Result<Front, SparseError> {
        let d = self.mat.dims;
        let mut ids = Vec::new();
        for z in r.z0..r.z1 {
            for y in r.y0..r.y1 {
                for x in r.x0..r.x1 {
                    ids.push(d.idx(x, y, z) as u32);
                }
            }
        }
        let s = ids.len();
        ids.extend(self.exterior_ring(&r));
        let m = ids.len();
        let mut front = vec![0.0f64; m * m];
        let local = local_map(&ids);
        let strides = d.strides();
        let exts = d.extents();
        for z in r.z0..r.z1 {
            for y in r.y0..r.y1 {
                for x in r.x0..r.x1 {
                    let c = d.idx(x, y, z);
                    let lc = local[&(c as u32)];
                    front[lc + lc * m] += self.shifted_diag(c);
                    let pos = [x, y, z];
                    for a in 0..3 {
                        // +a edges cover in-region pairs once (lower endpoint)
                        // plus crossings to the ring above; -a adds only the
                        // crossings to the ring below.
                        if pos[a] + 1 < exts[a] {
                            let nb = c + strides[a];
                            if let Some(&ln) = local.get(&(nb as u32)) {
                                add_sym(&mut front, m, lc, ln, self.mat.off[a][c]);
                            }
                        }
                        if pos[a] > 0 {
                            let nb = c - strides[a];
                            if !in_region(&r, nb, d) {
                                let ln = local[&(nb as u32)];
                                add_sym(&mut front, m, lc, ln, self.mat.off[a][nb]);
                            }
                        }
                    }
                }
            }
        }
        self.eliminate_front(ids, front, m, s)
    }

    fn internal(
        &mut self,
        r: Region,
        mids: [Option<usize>; 3],
        fronts: Vec<Front>,
    ) -> Result<Front, SparseError> {
        let d = self.mat.dims;
        let in_sep = |x: usize, y: usize, z: usize| {
            mids[0] == Some(x) || mids[1] == Some(y) || mids[2] == Some(z)
        };
        // Front cells: the separator cross, everything surviving from the
        // children (their exterior rings and delayed pivots), plus exterior
        // neighbors of the cross rim not already supplied by the children.
        let mut sep_ids = Vec::new();
        for z in r.z0..r.z1 {
            for y in r.y0..r.y1 {
                for x in r.x0..r.x1 {
                    if in_sep(x, y, z) {
                        sep_ids.push(d.idx(x, y, z) as u32);
                    }
                }
            }
        }
        let mut seen: HashSet<u32> = sep_ids.iter().copied().collect();
        let mut extra = Vec::new();
        for f in &fronts {
            for &c in &f.ids {
                if seen.insert(c) {
                    extra.push(c);
                }
            }
        }
        let strides = d.strides();
        let exts = d.extents();
        for &c in &sep_ids {
            let pos = unindex(c as usize, d);
            for a in 0..3 {
                if pos[a] + 1 < exts[a] {
                    let nb = c as usize + strides[a];
                    if !in_region(&r, nb, d) && seen.insert(nb as u32) {
                        extra.push(nb as u32);
                    }
                }
                if pos[a] > 0 {
                    let nb = c as usize - strides[a];
                    if !in_region(&r, nb, d) && seen.insert(nb as u32) {
                        extra.push(nb as u32);
                    }
                }
            }
        }
        // Eliminable here: every front cell inside this region — the cross
        // itself plus any pivots a child delayed. Their remaining coupling
        // (child borders, the cross, exterior neighbors) is all in the front.
        let mut elim = Vec::new();
        let mut border = Vec::new();
        for &c in sep_ids.iter().chain(extra.iter()) {
            if in_region(&r, c as usize, d) {
                elim.push(c);
            } else {
                border.push(c);
            }
        }
        let s = elim.len();
        let mut ids = elim;
        ids.extend_from_slice(&border);
        let m = ids.len();
        let mut front = vec![0.0f64; m * m];
        let local = local_map(&ids);
        for f in &fronts {
            scatter(&local, f, &mut front, m);
        }
        drop(fronts);
        // Original entries owned by this node: separator diagonals, edges
        // between two separator cells, and separator-to-exterior edges. Edges
        // between the separator and the child regions were already added by
        // the children (the separator is part of their exterior rings).
        for &c in &sep_ids {
            let c = c as usize;
            let lc = local[&(c as u32)];
            front[lc + lc * m] += self.shifted_diag(c);
            let pos = unindex(c, d);
            for a in 0..3 {
                if pos[a] + 1 < exts[a] {
                    let nb = c + strides[a];
                    let mut np = pos;
                    np[a] += 1;
                    let nb_in_r = in_region(&r, nb, d);
                    if (nb_in_r && in_sep(np[0], np[1], np[2])) || !nb_in_r {
                        let ln = local[&(nb as u32)];
                        add_sym(&mut front, m, lc, ln, self.mat.off[a][c]);
                    }
                }
                if pos[a] > 0 {
                    let nb = c - strides[a];
                    if !in_region(&r, nb, d) {
                        let ln = local[&(nb as u32)];
                        add_sym(&mut front, m, lc, ln, self.mat.off[a][nb]);
                    }
                }
            }
        }
        self.eliminate_front(ids, front, m, s)
    }

    /// Pivots that were delayed all the way to the root: exact inertia of
    /// the leftover Schur complement via a dense eigendecomposition.
    fn finish_root(&mut self, leftover: Front) {
        let m = leftover.m;
        if m == 0 {
            return;
        }
        let mut dm = DMatrix::zeros(m, m);
        for j in 0..m {
            for i in j..m {
                let v = leftover.mat[i + j * m];
                dm[(i, j)] = v;
                dm[(j, i)] = v;
            }
        }
        for &mu in dm.symmetric_eigenvalues().iter() {
            if mu < -self.zero_tol {
                self.neg += 1;
            } else if mu <= self.zero_tol {
                self.zero += 1;
            }
        }
        self.eliminated += m;
    }

    /// Eliminates the first `s_try` front columns. Columns are never written
    /// until their pivot is accepted (the candidate is built in scratch), so
    /// threshold delays can swap columns to the border without any partially
    /// applied updates. Returns the Schur complement over the remainder.
    fn eliminate_front(
        &mut self,
        mut ids: Vec<u32>,
        mut f: Vec<f64>,
        m: usize,
        s_try: usize,
    ) -> Result<Front, SparseError> {
        let mut scratch = vec![0.0f64; m];
        let mut pd = [0.0f64; PANEL];
        let s0 = s_try;
        let mut s_end = s_try;
        let mut panel_start = 0;
        let mut j = 0;
        // Delayed pivots are retried within this front after each stalled
        // sweep (their Schur values change as other columns fall); only
        // pivots that survive a full no-progress pass are passed upward.
        // Without the retry, delayed columns snowball into ancestor fronts
        // and the factorization cost blows up by an order of magnitude.
        'sweep: loop {
            let j_at_entry = j;
            while j < s_end {
                if j == panel_start + PANEL {
                    rank_update(&mut f, m, panel_start, j);
                    panel_start = j;
                }
                // Candidate column j = original (plus prior-panel updates, which
                // rank_update already applied) minus current-panel contributions.
                for i in j..m {
                    scratch[i] = f[i + j * m];
                }
                for p in panel_start..j {
                    let w = pd[p - panel_start] * f[j + p * m];
                    if w != 0.0 {
                        for i in j..m {
                            scratch[i] -= f[i + p * m] * w;
                        }
                    }
                }
                let dj = scratch[j];
                if self.tau > 0.0 {
                    let mut colmax = 0.0f64;
                    for i in j + 1..m {
                        colmax = colmax.max(scratch[i].abs());
                    }
                    if dj.abs() < self.tau * colmax {
                        sym_swap(&mut f, m, j, s_end - 1, &mut ids);
                        s_end -= 1;
                        continue;
                    }
                }
                if dj.abs() <= self.zero_tol {
                    if self.keep.is_some() {
                        return Err(SparseError::IllConditioned(dj.abs()));
                    }
                    return Err(SparseError::SingularPivot {
                        cell: ids[j] as usize,
                        value: dj.abs(),
                    });
                }
                if dj < 0.0 {
                    self.neg += 1;
                }
                f[j + j * m] = dj;
                let inv = 1.0 / dj;
                for i in j + 1..m {
                    f[i + j * m] = scratch[i] * inv;
                }
                pd[j - panel_start] = dj;
                if let Some(store) = self.keep.as_deref_mut() {
                    store.col_cell.push(ids[j]);
                    store.col_d.push(dj);
                    for i in j + 1..m {
                        let v = f[i + j * m];
                        if v != 0.0 {
                            store.rows.push(ids[i]);
                            store.vals.push(v);
                        }
                    }
                    store.ptr.push(store.rows.len());
                }
                self.eliminated += 1;
                j += 1;
            }
            if j > panel_start && j < m {
                rank_update(&mut f, m, panel_start, j);
            }
            panel_start = j;
            if j == s0 || j == j_at_entry {
                break 'sweep;
            }
            s_end = s0;
        }
        debug_assert_eq!(j, s_end);
        let b = m - s_end;
        let mut schur = vec![0.0f64; b * b];
        for k in 0..b {
            for i in k..b {
                schur[i + k * b] = f[(s_end + i) + (s_end + k) * m];
            }
        }
        Ok(Front {
            ids: ids[s_end..].to_vec(),
            mat: schur,
            m: b,
        })
    }
}

#[inline]
fn add_sym(front: &mut [f64], m: usize, a: usize, b: usize, w: f64) {
    if w != 0.0 {
        let (hi, lo) = if a > b { (a, b) } else { (b, a) };
        front[hi + lo * m] += w;
    }
}

/// Trailing update F[p1.., p1..] -= L D L^T over the factored panel
/// [p0, p1), lower triangle only. Outer-product layout: the 8-lane vector
/// axis runs down the contiguous front columns, W values are broadcast, so
/// no reductions appear and the loop vectorizes cleanly. Writes that land in
/// the (never-read) strict upper triangle of the trailing block are allowed;
/// they stay finite. This is the hot loop of the solver.
fn rank_update(f: &mut [f64], m: usize, p0: usize, p1: usize) {
    let pw = p1 - p0;
    let rows = m - p1;
    if rows == 0 || pw == 0 {
        return;
    }
    let (lpart, cpart) = f.split_at_mut(p1 * m);
    let lcol = |p: usize| (p0 + p) * m + p1;
    let mut w = [0.0f64; 4 * PANEL];
    let mut k = 0;
    while k + 4 <= rows {
        for p in 0..pw {
            let dp = lpart[(p0 + p) * m + (p0 + p)];
            let lp = lcol(p) + k;
            w[4 * p] = dp * lpart[lp];
            w[4 * p + 1] = dp * lpart[lp + 1];
            w[4 * p + 2] = dp * lpart[lp + 2];
            w[4 * p + 3] = dp * lpart[lp + 3];
        }
        // Tiles of 8 rows, aligned down so the lane axis stays contiguous;
        // lanes above the diagonal compute harmless values.
        let mut i = k & !7usize;
        while i < rows {
            if i + 8 <= rows {
                let mut acc = [[0.0f64; 8]; 4];
                for (c, a) in acc.iter_mut().enumerate() {
                    let base = (k + c) * m + p1 + i;
                    a.copy_from_slice(&cpart[base..base + 8]);
                }
                for p in 0..pw {
                    let lv = &lpart[lcol(p) + i..lcol(p) + i + 8];
                    let wp = &w[4 * p..4 * p + 4];
                    for t in 0..8 {
                        let l = lv[t];
                        acc[0][t] -= l * wp[0];
                        acc[1][t] -= l * wp[1];
                        acc[2][t] -= l * wp[2];
                        acc[3][t] -= l * wp[3];
                    }
                }
                for (c, a) in acc.iter().enumerate() {
                    let base = (k + c) * m + p1 + i;
                    cpart[base..base + 8].copy_from_slice(a);
                }
            } else {
                for c in 0..4 {
                    for ii in i.max(k + c)..rows {
                        let mut s = cpart[(k + c) * m + p1 + ii];
                        for p in 0..pw {
                            s -= lpart[lcol(p) + ii] * w[4 * p + c];
                        }
                        cpart[(k + c) * m + p1 + ii] = s;
                    }
                }
            }
            i += 8;
        }
        k += 4;
    }
    while k < rows {
        for p in 0..pw {
            let dp = lpart[(p0 + p) * m + (p0 + p)];
            w[p] = dp * lpart[lcol(p) + k];
        }
        for ii in k..rows {
            let mut s = cpart[k * m + p1 + ii];
            for p in 0..pw {
                s -= lpart[lcol(p) + ii] * w[p];
            }
            cpart[k * m + p1 + ii] = s;
        }
        k += 1;
    }
}

/// Symmetric swap of rows/columns `a <= b` in full-lower storage, mirrored in
/// the id list.
fn sym_swap(f: &mut [f64], m: usize, a: usize, b: usize, ids: &mut [u32]) {
    if a == b {
        return;
    }
    debug_assert!(a < b);
    ids.swap(a, b);
    for i in 0..a {
        f.swap(a + i * m, b + i * m);
    }
    let tmp = f[a + a * m];
    f[a + a * m] = f[b + b * m];
    f[b + b * m] = tmp;
    for i in a + 1..b {
        f.swap(i + a * m, b + i * m);
    }
    for i in b + 1..m {
        f.swap(i + a * m, i + b * m);
    }
}

fn in_region(r: &Region, c: usize, d: CellDims) -> bool {
    let [x, y, z] = unindex(c, d);
    x >= r.x0 && x < r.x1 && y >= r.y0 && y < r.y1 && z >= r.z0 && z < r.z1
}

fn unindex(c: usize, d: CellDims) -> [usize; 3] {
    let x = c % d.nx;
    let y = (c / d.nx) % d.ny;
    let z = c / (d.nx * d.ny);
    [x, y, z]
}

fn local_map(ids: &[u32]) -> HashMap<u32, usize> {
    ids.iter().enumerate().map(|(i, &c)| (c, i)).collect()
}

fn scatter(local: &HashMap<u32, usize>, f: &Front, front: &mut [f64], m: usize) {
    let map: Vec<usize> = f.ids.iter().map(|g| local[g]).collect();
    for lj in 0..f.m {
        let tj = map[lj];
        let col = &f.mat[lj * f.m..(lj + 1) * f.m];
        for li in lj..f.m {
            let v = col[li];
            if v != 0.0 {
                add_sym(front, m, map[li], tj, v);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_stencil(dims: CellDims, seed: u64) -> StencilMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = StencilMatrix::zeros(dims);
        for c in 0..dims.n() {
            m.diag[c] = rng.gen_range(-2.0..2.0);
        }
        let ext = dims.extents();
        for z in 0..dims.nz {
            for y in 0..dims.ny {
                for x in 0..dims.nx {
                    let c = dims.idx(x, y, z);
                    let pos = [x, y, z];
                    for a in 0..3 {
                        if pos[a] + 1 < ext[a] {
                            m.off[a][c] = rng.gen_range(-1.0..1.0);
                        }
                    }
                }
            }
        }
        m
    }

    fn sorted_eigs(m: &StencilMatrix) -> Vec<f64> {
        let mut eigs: Vec<f64> = m
            .to_dense()
            .symmetric_eigenvalues()
            .iter()
            .copied()
            .collect();
        eigs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        eigs
    }

    #[test]
    fn matvec_matches_dense() {
        for (dims, seed) in [
            (CellDims::d2(8, 6), 1u64),
            (CellDims::d3(4, 3, 5), 2),
            (CellDims::d2(64, 1), 3),
        ] {
            let m = random_stencil(dims, seed);
            let dm = m.to_dense();
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
            let x: Vec<f64> = (0..dims.n()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut y = vec![0.0; dims.n()];
            m.matvec(&x, &mut y);
            let yd = &dm * nalgebra::DVector::from_column_slice(&x);
            for c in 0..dims.n() {
                assert!(
                    (y[c] - yd[c]).abs() < 1e-12,
                    "cell {c}: {} vs {}",
                    y[c],
                    yd[c]
                );
            }
        }
    }

    #[test]
    fn inertia_matches_dense_eigenvalue_counts() {
        for (dims, seed) in [
            (CellDims::d2(12, 9), 7u64),
            (CellDims::d2(20, 20), 8),
            (CellDims::d3(5, 4, 3), 9),
            (CellDims::d2(64, 1), 10),
        ] {
            let m = random_stencil(dims, seed);
            let eigs = sorted_eigs(&m);
            let n = eigs.len();
            for q in 1..20 {
                let lo = eigs[0] - 1.0;
                let hi = eigs[n - 1] + 1.0;
                let shift = lo + (hi - lo) * q as f64 / 20.0;
                let expected = eigs.iter().filter(|&&e| e < shift).count();
                let got = count_below(&m, None, shift).unwrap();
                assert_eq!(got, expected, "dims {dims:?} shift {shift}");
            }
        }
    }

    #[test]
    fn inertia_with_mass_matches_generalized_counts() {
        let dims = CellDims::d2(10, 7);
        let m = random_stencil(dims, 21);
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let n = dims.n();
        let mass: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..2.0)).collect();
        // Generalized eigenvalues via the similarity B^{-1/2} A B^{-1/2}.
        let a = m.to_dense();
        let mut sim = a.clone();
        for i in 0..n {
            for j in 0..n {
                sim[(i, j)] = a[(i, j)] / (mass[i] * mass[j]).sqrt();
            }
        }
        let mut eigs: Vec<f64> = sim.symmetric_eigenvalues().iter().copied().collect();
        eigs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for q in 1..10 {
            let shift = eigs[0] - 0.5 + (eigs[n - 1] - eigs[0] + 1.0) * q as f64 / 10.0;
            let expected = eigs.iter().filter(|&&e| e < shift).count();
            assert_eq!(count_below(&m, Some(&mass), shift).unwrap(), expected);
        }
    }

    #[test]
    fn delayed_pivots_still_count_exactly() {
        // Zero diagonal forces constant threshold delays; some pivots reach
        // the root and go through the dense fallback.
        let dims = CellDims::d2(9, 8);
        let mut m = StencilMatrix::zeros(dims);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for y in 0..dims.ny {
            for x in 0..dims.nx {
                let c = dims.idx(x, y, 0);
                if x + 1 < dims.nx {
                    m.off[0][c] = rng.gen_range(0.5..1.5);
                }
                if y + 1 < dims.ny {
                    m.off[1][c] = rng.gen_range(0.5..1.5);
                }
            }
        }
        let eigs = sorted_eigs(&m);
        for shift in [-2.5, -1.0, -0.3, 0.3, 0.7, 2.0] {
            let expected = eigs.iter().filter(|&&e| e < shift).count();
            assert_eq!(
                count_below(&m, None, shift).unwrap(),
                expected,
                "shift {shift}"
            );
        }
    }

    #[test]
    fn inertia_is_deterministic() {
        let dims = CellDims::d2(33, 29);
        let m = random_stencil(dims, 77);
        let a = inertia(&m, None, 0.4).unwrap();
        let b = inertia(&m, None, 0.4).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn factor_solves_definite_system() {
        let dims = CellDims::d2(23, 17);
        let mut m = random_stencil(dims, 31);
        for c in 0..dims.n() {
            m.diag[c] = 5.0;
        }
        let f = Factorization::new(&m, None, -1.0).unwrap();
        assert_eq!(f.inertia.neg, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let b: Vec<f64> = (0..dims.n()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut x = b.clone();
        f.solve_in_place(&mut x);
        let mut ax = vec![0.0; dims.n()];
        m.matvec(&x, &mut ax);
        let mut r2 = 0.0;
        let mut b2 = 0.0;
        for c in 0..dims.n() {
            let r = ax[c] + x[c] - b[c];
            r2 += r * r;
            b2 += b[c] * b[c];
        }
        assert!(
            (r2 / b2).sqrt() < 1e-12,
            "relative residual {}",
            (r2 / b2).sqrt()
        );
    }

    #[test]
    fn factor_matches_dense_solve_on_3d() {
        let dims = CellDims::d3(6, 5, 4);
        let mut m = random_stencil(dims, 41);
        for c in 0..dims.n() {
            m.diag[c] = 8.0;
        }
        let f = Factorization::new(&m, None, 0.0).unwrap();
        let dm = m.to_dense();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let b: Vec<f64> = (0..dims.n()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let xd = dm
            .lu()
            .solve(&nalgebra::DVector::from_column_slice(&b))
            .unwrap();
        let mut x = b.clone();
        f.solve_in_place(&mut x);
        for c in 0..dims.n() {
            assert!((x[c] - xd[c]).abs() < 1e-10);
        }
    }

    #[test]
    fn generalized_solve_with_mass() {
        let dims = CellDims::d2(11, 13);
        let mut m = random_stencil(dims, 51);
        for c in 0..dims.n() {
            m.diag[c] = 6.0;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(52);
        let mass: Vec<f64> = (0..dims.n()).map(|_| rng.gen_range(0.5..2.0)).collect();
        let shift = -2.0;
        let f = Factorization::new(&m, Some(&mass), shift).unwrap();
        let b: Vec<f64> = (0..dims.n()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut x = b.clone();
        f.solve_in_place(&mut x);
        let mut ax = vec![0.0; dims.n()];
        m.matvec(&x, &mut ax);
        for c in 0..dims.n() {
            let r = ax[c] - shift * mass[c] * x[c] - b[c];
            assert!(r.abs() < 1e-10, "cell {c} residual {r}");
        }
    }

    #[test]
    #[ignore] // timing probe, run on demand: cargo test --release -- --ignored bench_inertia
    fn bench_inertia_large_grid() {
        let n = 1024;
        let dims = CellDims::d2(n, n);
        let mut m = StencilMatrix::zeros(dims);
        for y in 0..n {
            for x in 0..n {
                let c = dims.idx(x, y, 0);
                m.diag[c] = 4.0;
                if x + 1 < n {
                    m.off[0][c] = -1.0;
                }
                if y + 1 < n {
                    m.off[1][c] = -1.0;
                }
            }
        }
        let t0 = std::time::Instant::now();
        let count = count_below(&m, None, 2.0).unwrap();
        let dt = t0.elapsed();
        println!(
            "inertia on {}x{} grid: {} below shift, {:.2?}",
            n, n, count, dt
        );
        assert!(count > 0 && count < n * n);
    }

    #[test]
    #[ignore]
    fn bench_inertia_3d_grid() {
        let n = 64;
        let dims = CellDims::d3(n, n, n);
        let mut m = StencilMatrix::zeros(dims);
        for z in 0..n {
            for y in 0..n {
                for x in 0..n {
                    let c = dims.idx(x, y, z);
                    m.diag[c] = 6.0;
                    if x + 1 < n {
                        m.off[0][c] = -1.0;
                    }
                    if y + 1 < n {
                        m.off[1][c] = -1.0;
                    }
                    if z + 1 < n {
                        m.off[2][c] = -1.0;
                    }
                }
            }
        }
        let t0 = std::time::Instant::now();
        let count = count_below(&m, None, 3.0).unwrap();
        let dt = t0.elapsed();
        println!(
            "inertia on {0}x{0}x{0} grid: {1} below shift, {2:.2?}",
            n, count, dt
        );
        assert!(count > 0 && count < n * n * n);
    }

    #[test]
    fn counts_on_larger_grid_match_free_laplacian_formula() {
        // 1D Dirichlet chain: eigenvalues 4 sin^2(k pi / (2(n+1))) of the
        // tridiagonal (2, -1) matrix, k = 1..n.
        let n = 301;
        let dims = CellDims::d2(n, 1);
        let mut m = StencilMatrix::zeros(dims);
        for c in 0..n {
            m.diag[c] = 2.0;
            if c + 1 < n {
                m.off[0][c] = -1.0;
            }
        }
        let eig = |k: usize| {
            let t = (k as f64) * std::f64::consts::PI / (2.0 * (n as f64 + 1.0));
            4.0 * t.sin().powi(2)
        };
        for lam in [0.5, 1.0, 2.2, 3.3, 3.9] {
            let expected = (1..=n).filter(|&k| eig(k) < lam).count();
            assert_eq!(
                count_below(&m, None, lam).unwrap(),
                expected,
                "lambda {lam}"
            );
        }
        // lambda = 2 is the exact eigenvalue at k = (n+1)/2 and must be
        // reported as such rather than silently miscounted.
        assert!(matches!(
            count_below(&m, None, 2.0),
            Err(SparseError::ShiftOnEigenvalue)
        ));
    }
}
