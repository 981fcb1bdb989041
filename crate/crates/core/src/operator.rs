//! Box Hamiltonians assembled from torus fields: the direct form
//! -Lap - xi_eps + c_eps and the exponential-transform symmetric form
//! sum e^{2W} |grad v|^2 + sum Y v^2 (mass e^{2W}), with Dirichlet or
//! Neumann walls; spectral bracketing scalars; quadratic partitions of
//! unity for IMS localization.
//!
//! Discretization: cell-centered finite differences. Box cells sit at the
//! centers of torus lattice cells, walls lie on cell faces. Dirichlet is an
//! antimirror ghost (u_ghost = -u_cell, so the interpolant vanishes on the
//! face; each wall face adds 2 w_f / h^2 to the diagonal); Neumann is a
//! mirror ghost (face term drops). The noise lattice is the cell lattice:
//! the potential of box cell m is the torus field value at m, no
//! interpolation. This makes the standard comparison inequalities exact at
//! the matrix level: walls only add nonnegative diagonal terms, so
//! Neumann <= Dirichlet levelwise; a face-aligned tiling's Dirichlet forms
//! exceed the ambient form by exactly sum (u_i + u_j)^2 w_f / h^2 over cut
//! faces, and its Neumann forms fall short by exactly the matching
//! sum (u_i - u_j)^2 term.

use crate::field::{Field, FieldError, Grid, Topology};
use crate::sparse::{CellDims, StencilMatrix};
use serde_json::json;
use std::f64::consts::PI;
use std::fmt;
use std::io::{BufWriter, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OperatorError {
    #[error("box exceeds the sampled torus along axis {axis}")]
    BoxExceedsTorus { axis: usize },
    #[error("{0} field has non-finite values")]
    NonFiniteField(&'static str),
    #[error("fields live on different grids")]
    GridMismatch,
    #[error("theta must be positive, got {0}")]
    BadTheta(f64),
    #[error("interpolation exponent must sit in (0,1), got {0}")]
    BadExponent(f64),
    #[error("the lower bracket needs theta < 1 when the form norm is nonzero, got theta = {0}")]
    LowerBracketUndefined(f64),
    #[error("tile of {tile} cells cannot host an overlap of {overlap}")]
    BadTiling { tile: usize, overlap: usize },
    #[error("tile length {tile} does not divide the box extent {extent}")]
    UnevenTiling { tile: usize, extent: usize },
    #[error("boundary term only applies to Neumann walls")]
    BoundaryTermNeedsNeumann,
    #[error(transparent)]
    Field(#[from] FieldError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Bc {
    Dirichlet,
    Neumann,
}

impl fmt::Display for Bc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Bc::Dirichlet => write!(f, "dirichlet"),
            Bc::Neumann => write!(f, "neumann"),
        }
    }
}

/// Axis-aligned box of whole cells inside the sampled torus: `shape[a]`
/// cells starting at torus cell `corner[a]`. Unused axes carry shape 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoxSpec {
    pub corner: [usize; 3],
    pub shape: [usize; 3],
}

impl BoxSpec {
    pub fn cube(d: usize, corner: [usize; 3], n_sub: usize) -> Self {
        let mut shape = [1usize; 3];
        let mut c = [0usize; 3];
        for a in 0..d {
            shape[a] = n_sub;
            c[a] = corner[a];
        }
        BoxSpec { corner: c, shape }
    }

    pub fn cells(&self) -> usize {
        self.shape[0] * self.shape[1] * self.shape[2]
    }

    fn validate(&self, grid: Grid) -> Result<(), OperatorError> {
        if grid.topology != Topology::Torus {
            return Err(FieldError::WrongTopology("torus").into());
        }
        for a in 0..3 {
            let bad = if a < grid.d {
                self.shape[a] == 0 || self.corner[a] + self.shape[a] > grid.n
            } else {
                self.shape[a] != 1 || self.corner[a] != 0
            };
            if bad {
                return Err(OperatorError::BoxExceedsTorus { axis: a });
            }
        }
        Ok(())
    }

    fn dims(&self) -> CellDims {
        CellDims::d3(self.shape[0], self.shape[1], self.shape[2])
    }

    /// Torus flat index of local box cell p.
    fn torus_idx(&self, grid: Grid, p: [usize; 3]) -> usize {
        let e = grid.extents();
        (self.corner[0] + p[0])
            + e[0] * ((self.corner[1] + p[1]) + e[1] * (self.corner[2] + p[2]))
    }

    /// Torus flat index of the cell `step` lattice units out along `axis`
    /// from local cell p, wrapping periodically.
    fn torus_idx_offset(&self, grid: Grid, p: [usize; 3], axis: usize, step: i64) -> usize {
        let e = grid.extents();
        let mut q = [
            (self.corner[0] + p[0]) as i64,
            (self.corner[1] + p[1]) as i64,
            (self.corner[2] + p[2]) as i64,
        ];
        q[axis] = (q[axis] + step).rem_euclid(e[axis] as i64);
        q[0] as usize + e[0] * (q[1] as usize + e[1] * q[2] as usize)
    }
}

/// An assembled quadratic form: matrix pencil (A, B) on the box cells, with
/// A = weighted stencil Laplacian + diagonal potential and B the diagonal
/// mass. Pencil eigenvalues approximate the continuum ones directly; the
/// integral-scaled form value is h^d u^T A v.
#[derive(Debug, Clone)]
pub struct AssembledForm {
    pub bc: Bc,
    pub bx: BoxSpec,
    pub d: usize,
    pub h: f64,
    pub matrix: StencilMatrix,
    /// diagonal potential term alone (included in `matrix.diag`)
    pub potential: Vec<f64>,
    pub mass: Vec<f64>,
}

impl AssembledForm {
    pub fn dim(&self) -> usize {
        self.matrix.n()
    }

    /// Bilinear form h^d [sum_faces w_f (u_i-u_j)(v_i-v_j)/h^2 + wall and
    /// potential diagonals], summed face by face — deliberately not the
    /// matrix product, so the two evaluations cross-check each other.
    pub fn form(&self, u: &[f64], v: &[f64]) -> f64 {
        let dims = self.bx.dims();
        let n = dims.n();
        assert_eq!(u.len(), n);
        assert_eq!(v.len(), n);
        let h2 = self.h * self.h;
        // per-cell remainder: wall + potential terms = diag minus face sums
        let mut rem: Vec<f64> = self.matrix.diag.clone();
        let strides = dims.strides();
        let ext = dims.extents();
        let mut cross = 0.0;
        for a in 0..3 {
            if ext[a] < 2 {
                continue;
            }
            let s = strides[a];
            let off = &self.matrix.off[a];
            for c in 0..n - s {
                let w = -off[c] * h2; // face weight
                if w != 0.0 {
                    cross += w * (u[c] - u[c + s]) * (v[c] - v[c + s]) / h2;
                    rem[c] -= w / h2;
                    rem[c + s] -= w / h2;
                }
            }
        }
        let diag: f64 = (0..n).map(|c| rem[c] * u[c] * v[c]).sum();
        (cross + diag) * self.h.powi(self.d as i32)
    }

    /// Same bilinear form through the matrix product.
    pub fn matrix_form(&self, u: &[f64], v: &[f64]) -> f64 {
        let mut av = vec![0.0; v.len()];
        self.matrix.matvec(v, &mut av);
        let dot: f64 = u.iter().zip(&av).map(|(a, b)| a * b).sum();
        dot * self.h.powi(self.d as i32)
    }

    /// Mass-weighted squared norm h^d sum m_i u_i^2.
    pub fn norm_sq(&self, u: &[f64]) -> f64 {
        let dot: f64 = u.iter().zip(&self.mass).map(|(a, m)| m * a * a).sum();
        dot * self.h.powi(self.d as i32)
    }

    /// Coordinate-format export: one JSON header line, the upper triangle of
    /// A as "row col value" in row-major order, a "mass" marker line, then
    /// the mass diagonal. Byte-deterministic.
    pub fn export(&self, path: &Path) -> std::io::Result<()> {
        let dims = self.bx.dims();
        let n = dims.n();
        let strides = dims.strides();
        let ext = dims.extents();
        let mut rows: Vec<(usize, usize, f64)> = Vec::new();
        for c in 0..n {
            rows.push((c, c, self.matrix.diag[c]));
            for a in 0..3 {
                if ext[a] < 2 {
                    continue;
                }
                let s = strides[a];
                if c + s < n && (c / s) % ext[a] != ext[a] - 1 {
                    let w = self.matrix.off[a][c];
                    if w != 0.0 {
                        rows.push((c, c + s, w));
                    }
                }
            }
        }
        rows.sort_unstable_by_key(|r| (r.0, r.1));
        let header = json!({
            "kind": "assembled_form",
            "dim": n,
            "d": self.d,
            "bc": self.bc.to_string(),
            "shape": self.bx.shape,
            "corner": self.bx.corner,
            "h": self.h,
            "nnz": rows.len(),
        });
        let mut out = BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "{header}")?;
        for (i, j, v) in &rows {
            writeln!(out, "{i} {j} {v:.17e}")?;
        }
        writeln!(out, "mass")?;
        for (i, m) in self.mass.iter().enumerate() {
            writeln!(out, "{i} {i} {m:.17e}")?;
        }
        out.flush()
    }
}

fn finite(name: &'static str, values: &[f64]) -> Result<(), OperatorError> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(OperatorError::NonFiniteField(name))
    }
}

/// Weighted stencil Laplacian on the box: interior face f = (i, i+e_a) gets
/// off-diagonal -w_f/h^2 and w_f/h^2 on both diagonals; a wall face adds
/// 2 w_wall / h^2 (Dirichlet) or nothing (Neumann) to its cell.
/// `face_w(lo, hi)` gives the interior weight, `wall_w(cell)` the wall one.
fn stencil<FW, WW>(
    bx: BoxSpec,
    d: usize,
    h: f64,
    bc: Bc,
    mut face_w: FW,
    mut wall_w: WW,
) -> StencilMatrix
where
    FW: FnMut(usize, usize) -> f64,
    WW: FnMut(usize) -> f64,
{
    let dims = bx.dims();
    let mut m = StencilMatrix::zeros(dims);
    let strides = dims.strides();
    let ext = dims.extents();
    let h2 = h * h;
    for z in 0..ext[2] {
        for y in 0..ext[1] {
            for x in 0..ext[0] {
                let p = [x, y, z];
                let c = x + strides[1] * y + strides[2] * z;
                for a in 0..d {
                    if p[a] + 1 < ext[a] {
                        let j = c + strides[a];
                        let w = face_w(c, j);
                        m.off[a][c] = -w / h2;
                        m.diag[c] += w / h2;
                        m.diag[j] += w / h2;
                    } else if bc == Bc::Dirichlet {
                        m.diag[c] += 2.0 * wall_w(c) / h2;
                    }
                    if p[a] == 0 && bc == Bc::Dirichlet {
                        m.diag[c] += 2.0 * wall_w(c) / h2;
                    }
                }
            }
        }
    }
    m
}

/// Direct Hamiltonian -Lap - potential + c on the box, sampled from the
/// covering torus; identity mass.
pub fn assemble_direct(
    potential: &Field,
    c: f64,
    bc: Bc,
    bx: BoxSpec,
) -> Result<AssembledForm, OperatorError> {
    let grid = potential.grid;
    bx.validate(grid)?;
    finite("potential", &potential.values)?;
    let h = grid.h();
    let mut m = stencil(bx, grid.d, h, bc, |_, _| 1.0, |_| 1.0);
    let dims = bx.dims();
    let ext = dims.extents();
    let n = dims.n();
    let mut pot = vec![0.0; n];
    for z in 0..ext[2] {
        for y in 0..ext[1] {
            for x in 0..ext[0] {
                let cell = x + ext[0] * (y + ext[1] * z);
                let t = bx.torus_idx(grid, [x, y, z]);
                pot[cell] = -potential.values[t] + c;
            }
        }
    }
    for (d_i, p) in m.diag.iter_mut().zip(&pot) {
        *d_i += p;
    }
    Ok(AssembledForm {
        bc,
        bx,
        d: grid.d,
        h,
        matrix: m,
        potential: pot,
        mass: vec![1.0; n],
    })
}

/// Transformed symmetric form: stiffness weighted by e^{W_i + W_j} across
/// faces (the geometric mean of the cell weights e^{2W}, exact for constant
/// W), wall weight e^{2W_cell}, potential diagonal +Y, mass e^{2W}. With
/// Neumann walls an optional boundary field V adds the discrete flux
/// functional e^{2W_i} (V_out - V_in)/h^2 per wall face to the diagonal,
/// the lattice version of the surface term v^2 e^{2W} grad V . dS.
pub fn assemble_transformed(
    w: &Field,
    y: &Field,
    bc: Bc,
    bx: BoxSpec,
    boundary_term: Option<&Field>,
) -> Result<AssembledForm, OperatorError> {
    let grid = w.grid;
    if y.grid != grid {
        return Err(OperatorError::GridMismatch);
    }
    bx.validate(grid)?;
    finite("W", &w.values)?;
    finite("Y", &y.values)?;
    if boundary_term.is_some() && bc != Bc::Neumann {
        return Err(OperatorError::BoundaryTermNeedsNeumann);
    }
    if let Some(v) = boundary_term {
        if v.grid != grid {
            return Err(OperatorError::GridMismatch);
        }
        finite("boundary", &v.values)?;
    }
    let h = grid.h();
    let dims = bx.dims();
    let ext = dims.extents();
    let n = dims.n();
    // cache per-cell torus indices once; faces reuse them
    let mut tidx = vec![0usize; n];
    for z in 0..ext[2] {
        for y_ in 0..ext[1] {
            for x in 0..ext[0] {
                tidx[x + ext[0] * (y_ + ext[1] * z)] = bx.torus_idx(grid, [x, y_, z]);
            }
        }
    }
    let wv = &w.values;
    let m = stencil(
        bx,
        grid.d,
        h,
        bc,
        |lo, hi| (wv[tidx[lo]] + wv[tidx[hi]]).exp(),
        |cell| (2.0 * wv[tidx[cell]]).exp(),
    );
    let mut mass = vec![0.0; n];
    let mut pot = vec![0.0; n];
    for cell in 0..n {
        mass[cell] = (2.0 * wv[tidx[cell]]).exp();
        pot[cell] = y.values[tidx[cell]];
    }
    finite("e^{2W}", &mass)?;
    let mut m = m;
    if let Some(vfield) = boundary_term {
        let h2 = h * h;
        for z in 0..ext[2] {
            for y_ in 0..ext[1] {
                for x in 0..ext[0] {
                    let p = [x, y_, z];
                    let cell = x + ext[0] * (y_ + ext[1] * z);
                    for a in 0..grid.d {
                        for (edge, step) in [(0, -1i64), (ext[a] - 1, 1)] {
                            if p[a] == edge {
                                let out = bx.torus_idx_offset(grid, p, a, step);
                                let flux =
                                    mass[cell] * (vfield.values[out] - vfield.values[tidx[cell]]);
                                pot[cell] += flux / h2;
                            }
                        }
                    }
                }
            }
        }
    }
    for (d_i, p) in m.diag.iter_mut().zip(&pot) {
        *d_i += p;
    }
    Ok(AssembledForm {
        bc,
        bx,
        d: grid.d,
        h,
        matrix: m,
        potential: pot,
        mass,
    })
}

/// Inputs for the two-sided spectral comparison between the transformed box
/// form and the free Laplacian: a tilt theta, an interpolation exponent s,
/// the sup of W on the box, a supplied form norm for Z and interpolation
/// constant.
#[derive(Debug, Clone, Copy)]
pub struct BracketParams {
    pub theta: f64,
    pub s: f64,
    pub w_sup: f64,
    pub z_norm: f64,
    pub c_ip: f64,
}

impl BracketParams {
    pub fn new(
        theta: f64,
        s: f64,
        w_sup: f64,
        z_norm: f64,
        c_ip: f64,
    ) -> Result<Self, OperatorError> {
        if !(theta > 0.0) || !theta.is_finite() {
            return Err(OperatorError::BadTheta(theta));
        }
        if !(s > 0.0 && s < 1.0) {
            return Err(OperatorError::BadExponent(s));
        }
        if !(w_sup >= 0.0 && z_norm >= 0.0 && c_ip >= 0.0) {
            return Err(OperatorError::NonFiniteField("bracket"));
        }
        Ok(BracketParams {
            theta,
            s,
            w_sup,
            z_norm,
            c_ip,
        })
    }
}

/// Two-sided eigenvalue bracket
///   Lambda_pm = (1 +- theta) e^{+-4 sup|W|} (lambda +- A_pm),
///   A_pm = theta + (theta/(1 +- theta))^{-s/(1-s)} C_ip^{2/(1-s)}
///          e^{(2 +- 2s/(1-s)) sup|W|} normZ^{1/(1-s)}.
/// Returns (Lambda_minus, Lambda_plus). The norm-dependent part of A_minus
/// needs theta < 1; with a zero form norm it drops and any theta works.
pub fn bracket_lambda(params: &BracketParams, lambda: f64) -> Result<(f64, f64), OperatorError> {
    let BracketParams {
        theta,
        s,
        w_sup,
        z_norm,
        c_ip,
    } = *params;
    if !(theta > 0.0) {
        return Err(OperatorError::BadTheta(theta));
    }
    let correction = |sign: f64| -> Result<f64, OperatorError> {
        if z_norm == 0.0 {
            return Ok(0.0);
        }
        if sign < 0.0 && theta >= 1.0 {
            return Err(OperatorError::LowerBracketUndefined(theta));
        }
        let ratio = theta / (1.0 + sign * theta);
        Ok(ratio.powf(-s / (1.0 - s))
            * c_ip.powf(2.0 / (1.0 - s))
            * ((2.0 + sign * 2.0 * s / (1.0 - s)) * w_sup).exp()
            * z_norm.powf(1.0 / (1.0 - s)))
    };
    let a_plus = theta + correction(1.0)?;
    let a_minus = theta + correction(-1.0)?;
    let upper = (1.0 + theta) * (4.0 * w_sup).exp() * (lambda + a_plus);
    let lower = (1.0 - theta) * (-4.0 * w_sup).exp() * (lambda - a_minus);
    Ok((lower, upper))
}

/// Quadratic partition of unity on a box: per-axis tiles of `tile` cells
/// whose squared profiles telescope to one, overlapping over `2*overlap`
/// cells around interior tile boundaries (edge tiles run flat into the
/// walls). `gradient_bound` is the measured sup over cells of
/// sum_k sum_faces (eta_k(i') - eta_k(i))^2 / (2 h^2), the constant in the
/// discrete IMS inequality; it stays below profile_k / l^2 with l the
/// physical overlap half-width.
#[derive(Debug, Clone)]
pub struct ImsPartition {
    pub tiles: Vec<Vec<f64>>,
    pub shape: [usize; 3],
    pub d: usize,
    pub h: f64,
    pub tile_cells: usize,
    pub overlap_cells: usize,
    /// analytic profile constant: measured gradient sup <= profile_k / l^2
    pub profile_k: f64,
    /// measured discrete gradient sup
    pub gradient_bound: f64,
}

fn bump(t: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else {
        (-1.0 / t).exp()
    }
}

/// Smooth 0 -> 1 ramp on [0, 1].
fn ramp(t: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else if t >= 1.0 {
        1.0
    } else {
        bump(t) / (bump(t) + bump(1.0 - t))
    }
}

/// Rising edge: 0 below -l, 1 above +l, with rise^2 + fall^2 = 1 for the
/// matching falling edge cos-partner.
fn rise(t: f64, l: f64) -> f64 {
    (0.5 * PI * ramp((t + l) / (2.0 * l))).sin()
}

fn fall(t: f64, l: f64) -> f64 {
    (0.5 * PI * ramp((t + l) / (2.0 * l))).cos()
}

pub fn ims_partition(
    bx: BoxSpec,
    d: usize,
    h: f64,
    tile_cells: usize,
    overlap_cells: usize,
) -> Result<ImsPartition, OperatorError> {
    if overlap_cells == 0 || tile_cells <= 2 * overlap_cells {
        return Err(OperatorError::BadTiling {
            tile: tile_cells,
            overlap: overlap_cells,
        });
    }
    for a in 0..d {
        if bx.shape[a] % tile_cells != 0 {
            return Err(OperatorError::UnevenTiling {
                tile: tile_cells,
                extent: bx.shape[a],
            });
        }
    }
    let ext = bx.shape;
    let tiles_per_axis: Vec<usize> = (0..d).map(|a| ext[a] / tile_cells).collect();
    let l = overlap_cells as f64;
    // 1D profiles per axis: profile[a][k][i]
    let mut profiles: Vec<Vec<Vec<f64>>> = Vec::new();
    for a in 0..d {
        let t_count = tiles_per_axis[a];
        let mut axis = Vec::with_capacity(t_count);
        for k in 0..t_count {
            let lo = (k * tile_cells) as f64;
            let hi = ((k + 1) * tile_cells) as f64;
            let row: Vec<f64> = (0..ext[a])
                .map(|i| {
                    let t = i as f64 + 0.5;
                    let up = if k == 0 { 1.0 } else { rise(t - lo, l) };
                    let down = if k == t_count - 1 { 1.0 } else { fall(t - hi, l) };
                    up * down
                })
                .collect();
            axis.push(row);
        }
        profiles.push(axis);
    }
    let n = bx.cells();
    let tile_total: usize = tiles_per_axis.iter().product();
    let mut tiles = Vec::with_capacity(tile_total);
    for kt in 0..tile_total {
        let mut k = [0usize; 3];
        let mut rest = kt;
        for a in 0..d {
            k[a] = rest % tiles_per_axis[a];
            rest /= tiles_per_axis[a];
        }
        let mut eta = vec![0.0; n];
        for z in 0..ext[2] {
            for y in 0..ext[1] {
                for x in 0..ext[0] {
                    let p = [x, y, z];
                    let mut v = 1.0;
                    for a in 0..d {
                        v *= profiles[a][k[a]][p[a]];
                    }
                    eta[x + ext[0] * (y + ext[1] * z)] = v;
                }
            }
        }
        tiles.push(eta);
    }
    // measured discrete gradient bound
    let mut grad_sup = 0.0f64;
    let strides = [1usize, ext[0], ext[0] * ext[1]];
    let mut per_cell = vec![0.0f64; n];
    for eta in &tiles {
        for a in 0..d {
            if ext[a] < 2 {
                continue;
            }
            let s = strides[a];
            for c in 0..n {
                if (c / s) % ext[a] != ext[a] - 1 {
                    let diff = eta[c + s] - eta[c];
                    let g = diff * diff / (2.0 * h * h);
                    per_cell[c] += g;
                    per_cell[c + s] += g;
                }
            }
        }
    }
    for g in &per_cell {
        grad_sup = grad_sup.max(*g);
    }
    Ok(ImsPartition {
        tiles,
        shape: ext,
        d,
        h,
        tile_cells,
        overlap_cells,
        profile_k: d as f64 * PI * PI / 2.0,
        gradient_bound: grad_sup,
    })
}

impl ImsPartition {
    /// sup over box cells of |sum_k eta_k^2 - 1|.
    pub fn partition_defect(&self) -> f64 {
        let n = self.shape[0] * self.shape[1] * self.shape[2];
        let mut worst = 0.0f64;
        for c in 0..n {
            let s: f64 = self.tiles.iter().map(|t| t[c] * t[c]).sum();
            worst = worst.max((s - 1.0).abs());
        }
        worst
    }

    /// physical overlap half-width
    pub fn overlap_width(&self) -> f64 {
        self.overlap_cells as f64 * self.h
    }
}
