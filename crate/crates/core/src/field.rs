//! Grids, fields, deterministic Gaussian noise, and mollification.
//!
//! All randomness is counter-based: a sampler keyed by (seed, site) yields the
//! same field regardless of evaluation order, so seeds are stable identifiers
//! across runs and machines. White noise is i.i.d. N(0, h^-d) per site, the
//! normalization for which discrete pairings h^d sum xi(x) phi(x) reproduce
//! the continuum L^2 isometry. Long-range correlated noise is synthesized
//! spectrally from white noise with the density |k|^(alpha-d). Mollification
//! is a Fourier multiplier with the Gaussian profile rho(x) = pi^(-d/2)
//! exp(-|x|^2), whose transform is rho_hat(k) = exp(-pi^2 |k|^2).

use crate::spectral::Spectral;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FieldError {
    #[error("dimension must be 2 or 3, got {0}")]
    BadDim(usize),
    #[error("points per side must be a power of two >= 8, got {0}")]
    BadSideCount(usize),
    #[error("side length must be positive, got {0}")]
    BadSideLength(f64),
    #[error("correlation exponent must lie in (0, min(d,4)), got {alpha} in d={d}")]
    CorrelationExponent { alpha: f64, d: usize },
    #[error("mollifier width {eps} unresolved at spacing {h} (need eps >= 2h)")]
    Unresolved { eps: f64, h: f64 },
    #[error("operation requires a {0} grid")]
    WrongTopology(&'static str),
    #[error("operation requires {0}-space values")]
    WrongSpace(&'static str),
    #[error("sub-box [{0}, {0}+{1}) does not fit inside the parent grid")]
    BoxOutOfRange(usize, usize),
    #[error("value count {got} does not match grid size {expected}")]
    ValueCount { expected: usize, got: usize },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("header: {0}")]
    Header(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Topology {
    Torus,
    Box,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub d: usize,
    pub n: usize,
    pub side: f64,
    pub topology: Topology,
}

impl Grid {
    pub fn new(d: usize, n: usize, side: f64, topology: Topology) -> Result<Self, FieldError> {
        if d != 2 && d != 3 {
            return Err(FieldError::BadDim(d));
        }
        if n < 8 || !n.is_power_of_two() {
            return Err(FieldError::BadSideCount(n));
        }
        if !(side > 0.0) {
            return Err(FieldError::BadSideLength(side));
        }
        Ok(Grid {
            d,
            n,
            side,
            topology,
        })
    }

    pub fn torus(d: usize, n: usize, side: f64) -> Result<Self, FieldError> {
        Grid::new(d, n, side, Topology::Torus)
    }

    pub fn boxed(d: usize, n: usize, side: f64) -> Result<Self, FieldError> {
        Grid::new(d, n, side, Topology::Box)
    }

    pub fn h(&self) -> f64 {
        self.side / self.n as f64
    }

    pub fn cells(&self) -> usize {
        self.n.pow(self.d as u32)
    }

    /// Flat-array extents, z-major collapsed to 1 in d=2.
    pub fn extents(&self) -> [usize; 3] {
        if self.d == 2 {
            [self.n, self.n, 1]
        } else {
            [self.n, self.n, self.n]
        }
    }

    /// Coordinates of the site with flat index `c` (site x = h*m).
    pub fn site(&self, c: usize) -> [f64; 3] {
        let e = self.extents();
        let h = self.h();
        [
            (c % e[0]) as f64 * h,
            ((c / e[0]) % e[1]) as f64 * h,
            (c / (e[0] * e[1])) as f64 * h,
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum NoiseKind {
    White,
    Riesz { alpha: f64 },
    Derived,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldMeta {
    #[serde(flatten)]
    pub kind: NoiseKind,
    pub seed: u64,
    pub epsilon: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Space {
    Physical,
    Fourier,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub grid: Grid,
    pub values: Vec<f64>,
    pub space: Space,
    pub meta: FieldMeta,
}

impl Field {
    pub fn from_values(grid: Grid, values: Vec<f64>, meta: FieldMeta) -> Result<Self, FieldError> {
        if values.len() != grid.cells() {
            return Err(FieldError::ValueCount {
                expected: grid.cells(),
                got: values.len(),
            });
        }
        Ok(Field {
            grid,
            values,
            space: Space::Physical,
            meta,
        })
    }

    pub fn constant(grid: Grid, value: f64) -> Self {
        Field {
            values: vec![value; grid.cells()],
            grid,
            space: Space::Physical,
            meta: FieldMeta {
                kind: NoiseKind::Derived,
                seed: 0,
                epsilon: 0.0,
            },
        }
    }

    fn expect_torus(&self) -> Result<(), FieldError> {
        if self.grid.topology != Topology::Torus {
            return Err(FieldError::WrongTopology("torus"));
        }
        Ok(())
    }

    fn expect_physical(&self) -> Result<(), FieldError> {
        if self.space != Space::Physical {
            return Err(FieldError::WrongSpace("physical"));
        }
        Ok(())
    }

    /// Cyclic translation by `shift` lattice steps (physical torus fields).
    pub fn translate(&self, shift: [usize; 3]) -> Result<Field, FieldError> {
        self.expect_torus()?;
        self.expect_physical()?;
        let e = self.grid.extents();
        let mut out = vec![0.0; self.values.len()];
        for z in 0..e[2] {
            let sz = (z + shift[2] % e[2]) % e[2];
            for y in 0..e[1] {
                let sy = (y + shift[1] % e[1]) % e[1];
                for x in 0..e[0] {
                    let sx = (x + shift[0] % e[0]) % e[0];
                    out[x + e[0] * (y + e[1] * z)] =
                        self.values[sx + e[0] * (sy + e[1] * sz)];
                }
            }
        }
        Ok(Field {
            grid: self.grid,
            values: out,
            space: Space::Physical,
            meta: self.meta,
        })
    }

    /// Restriction to an axis-aligned sub-box with lower corner at lattice
    /// site `corner` and `n_sub` cells per side. The result is a box field on
    /// the same lattice (same h); noise should always be sampled on a torus
    /// at least twice the target box and restricted, so wrap-around
    /// correlations never reach across the box.
    pub fn restrict(&self, n_sub: usize, corner: [usize; 3]) -> Result<Field, FieldError> {
        self.expect_physical()?;
        let e = self.grid.extents();
        let sub = Grid::new(
            self.grid.d,
            n_sub,
            self.grid.h() * n_sub as f64,
            Topology::Box,
        )?;
        let se = sub.extents();
        for a in 0..3 {
            if corner[a] + se[a] > e[a] {
                return Err(FieldError::BoxOutOfRange(corner[a], se[a]));
            }
        }
        let mut out = Vec::with_capacity(sub.cells());
        for z in 0..se[2] {
            for y in 0..se[1] {
                for x in 0..se[0] {
                    out.push(
                        self.values[(corner[0] + x)
                            + e[0] * ((corner[1] + y) + e[1] * (corner[2] + z))],
                    );
                }
            }
        }
        Ok(Field {
            grid: sub,
            values: out,
            space: Space::Physical,
            meta: self.meta,
        })
    }

    /// Stores values as flat little-endian f64 at `<stem>.f64` with a JSON
    /// header at `<stem>.json`.
    pub fn save(&self, stem: &Path) -> Result<(), FieldError> {
        let header = Header {
            d: self.grid.d,
            n: self.grid.n,
            l: self.grid.side,
            space: self.space,
            meta: self.meta,
        };
        let mut bytes = Vec::with_capacity(8 * self.values.len());
        for v in &self.values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        std::fs::write(stem.with_extension("f64"), bytes)?;
        std::fs::write(
            stem.with_extension("json"),
            serde_json::to_vec_pretty(&header)?,
        )?;
        Ok(())
    }

    pub fn load(stem: &Path) -> Result<Field, FieldError> {
        let header: Header =
            serde_json::from_slice(&std::fs::read(stem.with_extension("json"))?)?;
        let bytes = std::fs::read(stem.with_extension("f64"))?;
        let values: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let grid = Grid::new(header.d, header.n, header.l, Topology::Torus)?;
        if values.len() != grid.cells() {
            return Err(FieldError::ValueCount {
                expected: grid.cells(),
                got: values.len(),
            });
        }
        Ok(Field {
            grid,
            values,
            space: header.space,
            meta: header.meta,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    d: usize,
    n: usize,
    #[serde(rename = "L")]
    l: f64,
    space: Space,
    #[serde(flatten)]
    meta: FieldMeta,
}

/// One standard normal from the (seed, site)-keyed counter stream.
#[inline]
fn site_normal(base: &ChaCha8Rng, site: u64) -> f64 {
    let mut r = base.clone();
    r.set_stream(site);
    StandardNormal.sample(&mut r)
}

/// I.i.d. centered Gaussians with per-site variance h^-d.
pub fn sample_white_noise(grid: Grid, seed: u64) -> Result<Field, FieldError> {
    if grid.topology != Topology::Torus {
        return Err(FieldError::WrongTopology("torus"));
    }
    let sigma = grid.h().powf(-(grid.d as f64) / 2.0);
    let base = ChaCha8Rng::seed_from_u64(seed);
    let values = (0..grid.cells())
        .map(|c| sigma * site_normal(&base, c as u64))
        .collect();
    Ok(Field {
        grid,
        values,
        space: Space::Physical,
        meta: FieldMeta {
            kind: NoiseKind::White,
            seed,
            epsilon: 0.0,
        },
    })
}

/// Stationary centered Gaussian field with covariance ~ c |x|^-alpha at
/// intermediate lags, synthesized from white noise by the spectral multiplier
/// sqrt(c) |k|^((alpha-d)/2) (zero mean mode). As alpha -> d the density
/// flattens and the field degenerates to white noise.
pub fn sample_riesz_noise(
    grid: Grid,
    alpha: f64,
    c: f64,
    seed: u64,
) -> Result<Field, FieldError> {
    if !(alpha > 0.0 && alpha < (grid.d as f64).min(4.0)) {
        return Err(FieldError::CorrelationExponent { alpha, d: grid.d });
    }
    let mut field = sample_white_noise(grid, seed)?;
    let mut sp = Spectral::new();
    let half = (alpha - grid.d as f64) / 2.0;
    sp.apply_multiplier(grid.extents(), grid.side, &mut field.values, |k| {
        let k2 = k[0] * k[0] + k[1] * k[1] + k[2] * k[2];
        if k2 == 0.0 {
            0.0
        } else {
            c.sqrt() * k2.powf(half / 2.0)
        }
    });
    field.meta.kind = NoiseKind::Riesz { alpha };
    Ok(field)
}

#[derive(Debug, Clone, Copy)]
pub struct Mollifier {
    pub epsilon: f64,
}

impl Mollifier {
    pub fn new(epsilon: f64) -> Self {
        Mollifier { epsilon }
    }

    /// Fourier transform of the rescaled profile: rho_hat(eps k).
    pub fn hat(&self, k: [f64; 3]) -> f64 {
        let k2 = k[0] * k[0] + k[1] * k[1] + k[2] * k[2];
        (-PI * PI * self.epsilon * self.epsilon * k2).exp()
    }
}

/// Smooths by the Fourier multiplier rho_hat(eps k). Widths below two lattice
/// spacings are rejected: the profile would be invisible to the grid.
pub fn mollify(field: &Field, mollifier: &Mollifier) -> Result<Field, FieldError> {
    field.expect_torus()?;
    field.expect_physical()?;
    let h = field.grid.h();
    if mollifier.epsilon < 2.0 * h {
        return Err(FieldError::Unresolved {
            eps: mollifier.epsilon,
            h,
        });
    }
    let mut out = field.clone();
    let mut sp = Spectral::new();
    sp.apply_multiplier(
        field.grid.extents(),
        field.grid.side,
        &mut out.values,
        |k| mollifier.hat(k),
    );
    out.meta.epsilon = mollifier.epsilon;
    Ok(out)
}
