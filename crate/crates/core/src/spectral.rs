//! Lattice Fourier transforms on periodic boxes.
//!
//! Conventions, for a torus of side length `L` sampled on `n` cells per axis
//! with spacing h = L/n at cell centers or nodes (the transform itself does
//! not care which):
//!
//!   hat f(k) = h^d sum_m f(x_m) exp(-2 pi i k . x_m),
//!   f(x_m)   = (1/L^d) sum_k hat f(k) exp(+2 pi i k . x_m),
//!
//! where the frequency vectors are k = j / L with integer coordinates j in
//! the symmetric range {-n/2, ..., n/2 - 1}. These are the Riemann-sum
//! approximations of the continuum transform pair, so continuum multiplier
//! formulas (Green functions, mollifiers, frequency cutoffs) can be applied
//! verbatim to `hat f`.

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::collections::HashMap;
use std::sync::Arc;

/// FFT plan cache. One instance per thread of work; cheap to create.
pub struct Spectral {
    planner: FftPlanner<f64>,
    plans: HashMap<(usize, bool), Arc<dyn Fft<f64>>>,
}

impl Default for Spectral {
    fn default() -> Self {
        Self::new()
    }
}

/// Maps a flat array index along one axis to its integer frequency in the
/// symmetric range.
#[inline]
pub fn int_freq(n: usize, idx: usize) -> i64 {
    if idx < n.div_ceil(2) {
        idx as i64
    } else {
        idx as i64 - n as i64
    }
}

/// Physical frequency vector k = j/L of the flat index `c` on a `dims` grid.
#[inline]
pub fn freq(dims: [usize; 3], side: f64, c: usize) -> [f64; 3] {
    let ix = c % dims[0];
    let iy = (c / dims[0]) % dims[1];
    let iz = c / (dims[0] * dims[1]);
    [
        int_freq(dims[0], ix) as f64 / side,
        int_freq(dims[1], iy) as f64 / side,
        int_freq(dims[2], iz) as f64 / side,
    ]
}

pub fn n_total(dims: [usize; 3]) -> usize {
    dims[0] * dims[1] * dims[2]
}

impl Spectral {
    pub fn new() -> Self {
        Spectral {
            planner: FftPlanner::new(),
            plans: HashMap::new(),
        }
    }

    fn plan(&mut self, len: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
        self.plans
            .entry((len, inverse))
            .or_insert_with(|| {
                if inverse {
                    self.planner.plan_fft_inverse(len)
                } else {
                    self.planner.plan_fft_forward(len)
                }
            })
            .clone()
    }

    /// In-place multi-dimensional DFT of a flat complex array, one axis at a
    /// time. `inverse` selects the sign of the exponent; no normalization.
    fn dft(&mut self, dims: [usize; 3], data: &mut [Complex64], inverse: bool) {
        assert_eq!(data.len(), n_total(dims));
        let [nx, ny, nz] = dims;
        // Axis 0: contiguous lines.
        if nx > 1 {
            let fft = self.plan(nx, inverse);
            for line in data.chunks_exact_mut(nx) {
                fft.process(line);
            }
        }
        // Axes 1 and 2: gather strided lines into scratch.
        for (axis, (n, stride)) in [(ny, nx), (nz, nx * ny)].into_iter().enumerate() {
            if n <= 1 {
                continue;
            }
            let fft = self.plan(n, inverse);
            let mut scratch = vec![Complex64::new(0.0, 0.0); n];
            let block = stride * n;
            let nblocks = data.len() / block;
            for b in 0..nblocks {
                for off in 0..stride {
                    let base = b * block + off;
                    for t in 0..n {
                        scratch[t] = data[base + t * stride];
                    }
                    fft.process(&mut scratch);
                    for t in 0..n {
                        data[base + t * stride] = scratch[t];
                    }
                }
            }
            let _ = axis;
        }
    }

    /// hat f from real samples, including the Riemann factor (product of the
    /// cell spacings side/n_a over active axes).
    pub fn forward(&mut self, dims: [usize; 3], side: f64, real: &[f64]) -> Vec<Complex64> {
        let n = n_total(dims);
        assert_eq!(real.len(), n);
        let scale: f64 = dims
            .iter()
            .filter(|&&m| m > 1)
            .map(|&m| side / m as f64)
            .product();
        let mut data: Vec<Complex64> = real
            .iter()
            .map(|&x| Complex64::new(x * scale, 0.0))
            .collect();
        self.dft(dims, &mut data, false);
        data
    }

    /// Real samples from hat f; the imaginary residue (roundoff for
    /// conjugate-symmetric input) is discarded.
    pub fn inverse(&mut self, dims: [usize; 3], side: f64, hat: &[Complex64]) -> Vec<f64> {
        let mut data = hat.to_vec();
        self.dft(dims, &mut data, true);
        let scale = 1.0 / side.powi(dims.iter().filter(|&&m| m > 1).count().max(1) as i32);
        data.iter().map(|z| z.re * scale).collect()
    }

    /// Replaces `field` by the inverse transform of m(k) * hat field(k).
    pub fn apply_multiplier<F>(&mut self, dims: [usize; 3], side: f64, field: &mut [f64], mult: F)
    where
        F: Fn([f64; 3]) -> f64,
    {
        let mut hat = self.forward(dims, side, field);
        for (c, z) in hat.iter_mut().enumerate() {
            *z *= mult(freq(dims, side, c));
        }
        let back = self.inverse(dims, side, &hat);
        field.copy_from_slice(&back);
    }

    /// Same, with a complex multiplier (odd multipliers such as i*k produce
    /// real output only in combination; callers keep the complex plane).
    pub fn apply_multiplier_complex<F>(
        &mut self,
        dims: [usize; 3],
        side: f64,
        hat: &mut [Complex64],
        mult: F,
    ) where
        F: Fn([f64; 3]) -> Complex64,
    {
        for (c, z) in hat.iter_mut().enumerate() {
            *z *= mult(freq(dims, side, c));
        }
    }
}
