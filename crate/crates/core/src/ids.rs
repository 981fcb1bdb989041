//! Integrated density of states over growing boxes, Weyl-law fits,
//! stretched-exponential left tails, and additivity experiments.
//!
//! Per-volume curves N_bar_L(lambda) = (1/L^d) mean_seeds N(U_L, lambda)
//! estimated from independent noise realizations on a shared torus, with
//! nonparametric bootstrap error bars. High-lambda behaviour is compared
//! against N_bar ~ a lambda^{d/2} + b lambda^{(d-1)/2} with the leading
//! coefficient targeting vol(B(0,1))/(2pi)^d; left tails are fitted as
//! log N_bar ~ -C (-lambda)^alpha over a scanned exponent grid.

use crate::eigensolve::{counting, EigensolveError};
use crate::field::{mollify, sample_white_noise, Field, FieldError, Grid, Mollifier};
use crate::operator::{
    assemble_direct, ims_partition, Bc, BoxSpec, OperatorError,
};
use crate::sparse::CellDims;
use crate::stats::{bootstrap_stderr, fit_line, mean};
use serde::Serialize;
use std::f64::consts::PI;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IdsError {
    #[error("need at least 8 seeds, got {0}")]
    TooFewSeeds(usize),
    #[error("box length {l} does not fit the torus side {side}")]
    BoxTooLong { l: f64, side: f64 },
    #[error("box length {0} does not land on the cell lattice")]
    OffLattice(f64),
    #[error("neumann curves need integer box lengths, got {0}")]
    NeumannNeedsIntegerLength(f64),
    #[error("lambda grid is empty or unsorted")]
    BadGrid,
    #[error("no lambda with at least {need} counted eigenvalues (best {best:.1})")]
    InsufficientHighLambda { best: f64, need: usize },
    #[error("tail window keeps {have} usable points, need {need}")]
    TooFewTailPoints { have: usize, need: usize },
    #[error("bad tail window [{lo}, {hi}]: needs lo < hi < 0")]
    BadWindow { lo: f64, hi: f64 },
    #[error("need at least {need} principal-eigenvalue samples, got {have}")]
    TooFewSamples { have: usize, need: usize },
    #[error("tiling does not split the box evenly on axis {0}")]
    TileMismatch(usize),
    #[error(transparent)]
    Eigensolve(#[from] EigensolveError),
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// What sits on the diagonal besides the Laplacian.
#[derive(Debug, Clone, Copy)]
pub enum PotentialKind {
    Zero,
    /// -xi_eps + c_eps with xi_eps mollified white noise; the constant is
    /// supplied by the caller (one exact evaluation per torus/mollifier
    /// pair, shared across seeds)
    MollifiedNoise { epsilon: f64, c_eps: f64 },
}

#[derive(Debug, Clone)]
pub struct IdsSpec<'a> {
    pub d: usize,
    /// torus resolution and physical side shared by all boxes
    pub n: usize,
    pub side: f64,
    pub bc: Bc,
    pub l_list: &'a [f64],
    pub potential: PotentialKind,
    pub seeds: &'a [u64],
    pub lambda_grid: &'a [f64],
}

/// Per-volume averaged counting function on one box size.
#[derive(Debug, Clone, Serialize)]
pub struct IdsCurve {
    pub bc_label: String,
    pub d: usize,
    pub l: f64,
    pub epsilon: f64,
    pub lambdas: Vec<f64>,
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
    pub n_seeds: usize,
    /// true when some realization was dropped because its counting run
    /// failed; the curve then averages the survivors
    pub partial: bool,
}

const BOOTSTRAP_RESAMPLES: usize = 1000;
const BOOTSTRAP_SEED: u64 = 0xB005_74A9;
const COUNT_BAND: f64 = 1e-9;

fn box_cells(l: f64, side: f64, n: usize) -> Result<usize, IdsError> {
    if l <= 0.0 || l > side {
        return Err(IdsError::BoxTooLong { l, side });
    }
    let exact = l / side * n as f64;
    let cells = exact.round();
    if (exact - cells).abs() > 1e-9 || cells < 1.0 {
        return Err(IdsError::OffLattice(l));
    }
    Ok(cells as usize)
}

pub fn estimate_ids(spec: &IdsSpec) -> Result<Vec<IdsCurve>, IdsError> {
    if spec.seeds.len() < 8 {
        return Err(IdsError::TooFewSeeds(spec.seeds.len()));
    }
    if spec.lambda_grid.is_empty() || spec.lambda_grid.windows(2).any(|w| w[0] > w[1]) {
        return Err(IdsError::BadGrid);
    }
    let grid = Grid::torus(spec.d, spec.n, spec.side)?;
    let mut cells = Vec::with_capacity(spec.l_list.len());
    for &l in spec.l_list {
        if matches!(spec.bc, Bc::Neumann) && (l - l.round()).abs() > 1e-9 {
            return Err(IdsError::NeumannNeedsIntegerLength(l));
        }
        cells.push(box_cells(l, spec.side, spec.n)?);
    }
    let (epsilon, c_eps) = match spec.potential {
        PotentialKind::Zero => (0.0, 0.0),
        PotentialKind::MollifiedNoise { epsilon, c_eps } => (epsilon, c_eps),
    };
    let mollifier = Mollifier::new(epsilon.max(f64::MIN_POSITIVE));

    // samples[l_index][lambda_index][survivor]
    let mut samples: Vec<Vec<Vec<f64>>> =
        vec![vec![Vec::with_capacity(spec.seeds.len()); spec.lambda_grid.len()]; cells.len()];
    let mut partial = vec![false; cells.len()];
    for &seed in spec.seeds {
        let potential = match spec.potential {
            PotentialKind::Zero => Field::constant(grid, 0.0),
            PotentialKind::MollifiedNoise { .. } => {
                mollify(&sample_white_noise(grid, seed)?, &mollifier)?
            }
        };
        for (li, (&l, &m)) in spec.l_list.iter().zip(&cells).enumerate() {
            let bx = BoxSpec::cube(spec.d, [0, 0, 0], m);
            let form = assemble_direct(&potential, c_eps, spec.bc, bx)?;
            match counting(&form, spec.lambda_grid, COUNT_BAND) {
                Ok(curve) => {
                    let vol = l.powi(spec.d as i32);
                    for (slot, &count) in samples[li].iter_mut().zip(&curve.counts) {
                        slot.push(count as f64 / vol);
                    }
                }
                Err(EigensolveError::NotConverged { .. })
                | Err(EigensolveError::StuckShift { .. }) => partial[li] = true,
                Err(e) => return Err(e.into()),
            }
        }
    }
    let mut curves = Vec::with_capacity(cells.len());
    for (li, &l) in spec.l_list.iter().enumerate() {
        let per_lambda = &samples[li];
        let n_seeds = per_lambda[0].len();
        let mut mean_v = Vec::with_capacity(per_lambda.len());
        let mut se_v = Vec::with_capacity(per_lambda.len());
        for (gi, vals) in per_lambda.iter().enumerate() {
            mean_v.push(mean(vals));
            let se = if vals.len() < 2 {
                0.0
            } else {
                bootstrap_stderr(
                    vals,
                    BOOTSTRAP_RESAMPLES,
                    BOOTSTRAP_SEED ^ ((li as u64) << 32) ^ gi as u64,
                    mean,
                )
            };
            se_v.push(se);
        }
        curves.push(IdsCurve {
            bc_label: spec.bc.to_string(),
            d: spec.d,
            l,
            epsilon,
            lambdas: spec.lambda_grid.to_vec(),
            mean: mean_v,
            stderr: se_v,
            n_seeds,
            partial: partial[li],
        });
    }
    Ok(curves)
}

/// vol(B(0,1))/(2pi)^d: the per-volume coefficient of lambda^{d/2}.
pub fn weyl_constant(d: usize) -> f64 {
    match d {
        2 => 1.0 / (4.0 * PI),
        3 => 1.0 / (6.0 * PI * PI),
        _ => panic!("dimension {d} not supported"),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct WeylFit {
    /// N_bar(lambda_top) / lambda_top^{d/2}
    pub raw_ratio: f64,
    /// leading coefficient of the two-term fit a t^{d/2} + b t^{(d-1)/2}
    pub leading: f64,
    /// boundary-correction coefficient (negative for Dirichlet boxes)
    pub boundary: f64,
    pub window: (f64, f64),
    pub points: usize,
}

/// High-lambda fit of a per-volume curve. Uses the grid points where at
/// least 50 eigenvalues were counted.
pub fn weyl_fit(curve: &IdsCurve) -> Result<WeylFit, IdsError> {
    const MIN_COUNT: usize = 50;
    let vol = curve.l.powi(curve.d as i32);
    let usable: Vec<usize> = (0..curve.lambdas.len())
        .filter(|&i| curve.lambdas[i] > 0.0 && curve.mean[i] * vol >= MIN_COUNT as f64)
        .collect();
    if usable.len() < 3 {
        let best = curve.mean.iter().cloned().fold(0.0, f64::max) * vol;
        return Err(IdsError::InsufficientHighLambda {
            best,
            need: MIN_COUNT,
        });
    }
    let p_lead = curve.d as f64 / 2.0;
    let p_bdry = (curve.d as f64 - 1.0) / 2.0;
    let (mut s11, mut s12, mut s22, mut b1, mut b2) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &i in &usable {
        let x1 = curve.lambdas[i].powf(p_lead);
        let x2 = curve.lambdas[i].powf(p_bdry);
        let y = curve.mean[i];
        s11 += x1 * x1;
        s12 += x1 * x2;
        s22 += x2 * x2;
        b1 += x1 * y;
        b2 += x2 * y;
    }
    let det = s11 * s22 - s12 * s12;
    let leading = (s22 * b1 - s12 * b2) / det;
    let boundary = (s11 * b2 - s12 * b1) / det;
    let top = *usable.last().unwrap();
    Ok(WeylFit {
        raw_ratio: curve.mean[top] / curve.lambdas[top].powf(p_lead),
        leading,
        boundary,
        window: (curve.lambdas[usable[0]], curve.lambdas[top]),
        points: usable.len(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct TailFit {
    pub window: (f64, f64),
    pub alpha: f64,
    pub constant: f64,
    pub r2: f64,
    pub points: usize,
}

/// Least squares of log(value) on -(-lambda)^alpha over a scanned exponent
/// grid; the winning alpha maximizes R^2. Only negative lambdas with
/// positive values inside the window participate.
pub fn stretched_tail_fit(
    lambdas: &[f64],
    values: &[f64],
    window: (f64, f64),
) -> Result<TailFit, IdsError> {
    let (lo, hi) = window;
    if !(lo < hi) || !(hi < 0.0) {
        return Err(IdsError::BadWindow { lo, hi });
    }
    let mut xs_l = Vec::new();
    let mut ys = Vec::new();
    for (&l, &v) in lambdas.iter().zip(values) {
        if l >= lo && l <= hi && v > 0.0 {
            xs_l.push(l);
            ys.push(v.ln());
        }
    }
    if xs_l.len() < 4 {
        return Err(IdsError::TooFewTailPoints {
            have: xs_l.len(),
            need: 4,
        });
    }
    let mut best: Option<TailFit> = None;
    let mut alpha = 0.05;
    while alpha <= 3.0 {
        let xs: Vec<f64> = xs_l.iter().map(|&l| -(-l).powf(alpha)).collect();
        let fit = fit_line(&xs, &ys);
        if fit.r2.is_finite() && best.as_ref().is_none_or(|b| fit.r2 > b.r2) {
            best = Some(TailFit {
                window,
                alpha,
                constant: fit.slope,
                r2: fit.r2,
                points: xs_l.len(),
            });
        }
        alpha += 0.0025;
    }
    best.ok_or(IdsError::TooFewTailPoints {
        have: xs_l.len(),
        need: 4,
    })
}

/// Left-tail fit of a per-volume curve: log N_bar ~ -C (-lambda)^alpha.
pub fn lifschitz_fit(curve: &IdsCurve, window: (f64, f64)) -> Result<TailFit, IdsError> {
    stretched_tail_fit(&curve.lambdas, &curve.mean, window)
}

#[derive(Debug, Clone)]
pub struct AdditivitySpec<'a> {
    pub d: usize,
    pub n: usize,
    pub side: f64,
    /// the tiled box, in torus lattice coordinates
    pub bx: BoxSpec,
    pub tiles_per_axis: [usize; 3],
    /// overlap halo (cells) for the covering bound
    pub overlap_cells: usize,
    pub potential: PotentialKind,
    pub seeds: &'a [u64],
    pub lambda_grid: &'a [f64],
}

/// Per-lambda verdicts for the three comparison inequalities on a tiling:
/// Dirichlet super-additivity, Neumann sub-additivity, and the overlapping
/// Dirichlet cover with the measured gradient penalty added to lambda.
#[derive(Debug, Clone, Serialize)]
pub struct AdditivityReport {
    pub lambdas: Vec<f64>,
    pub super_violations: Vec<usize>,
    pub sub_violations: Vec<usize>,
    pub cover_violations: Vec<usize>,
    /// lambda shift used by the covering bound
    pub penalty: f64,
    pub whole_dirichlet_mean: Vec<f64>,
    pub tiles_dirichlet_mean: Vec<f64>,
    pub whole_neumann_mean: Vec<f64>,
    pub tiles_neumann_mean: Vec<f64>,
    pub n_seeds: usize,
}

/// Smallest box (plus a one-cell margin, clipped to the tiled box) holding
/// the support of one partition profile.
fn support_box(weights: &[f64], bx: BoxSpec, d: usize) -> BoxSpec {
    let dims = CellDims::d3(bx.shape[0], bx.shape[1], bx.shape[2]);
    let ext = dims.extents();
    let mut lo = [usize::MAX; 3];
    let mut hi = [0usize; 3];
    for (c, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            let k = c / (ext[0] * ext[1]);
            let j = (c / ext[0]) % ext[1];
            let i = c % ext[0];
            let p = [i, j, k];
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
    }
    let mut corner = bx.corner;
    let mut shape = [1usize; 3];
    for a in 0..d {
        let grow_lo = lo[a].saturating_sub(1);
        let grow_hi = (hi[a] + 1).min(bx.shape[a] - 1);
        corner[a] = bx.corner[a] + grow_lo;
        shape[a] = grow_hi - grow_lo + 1;
    }
    BoxSpec { corner, shape }
}

pub fn additivity_check(spec: &AdditivitySpec) -> Result<AdditivityReport, IdsError> {
    if spec.lambda_grid.is_empty() || spec.lambda_grid.windows(2).any(|w| w[0] > w[1]) {
        return Err(IdsError::BadGrid);
    }
    let grid = Grid::torus(spec.d, spec.n, spec.side)?;
    let h = grid.h();
    // exact tiling: shared boundaries, no overlap
    let mut tile_shape = [1usize; 3];
    for (a, ts) in tile_shape.iter_mut().enumerate().take(spec.d) {
        let t = spec.tiles_per_axis[a];
        if t == 0 || spec.bx.shape[a] % t != 0 {
            return Err(IdsError::TileMismatch(a));
        }
        *ts = spec.bx.shape[a] / t;
    }
    let mut tiles = Vec::new();
    for kz in 0..spec.tiles_per_axis[2].max(1) {
        for ky in 0..spec.tiles_per_axis[1].max(1) {
            for kx in 0..spec.tiles_per_axis[0].max(1) {
                let k = [kx, ky, kz];
                let mut corner = spec.bx.corner;
                for a in 0..spec.d {
                    corner[a] += k[a] * tile_shape[a];
                }
                tiles.push(BoxSpec {
                    corner,
                    shape: tile_shape,
                });
            }
        }
    }
    // overlapping cover from the partition of unity; the profiles need a
    // uniform tile size on every axis
    let ims_cells = tile_shape[0];
    if let Some(a) = (1..spec.d).find(|&a| tile_shape[a] != ims_cells) {
        return Err(IdsError::TileMismatch(a));
    }
    let partition = ims_partition(spec.bx, spec.d, h, ims_cells, spec.overlap_cells)?;
    let penalty = partition.gradient_bound;
    let covers: Vec<BoxSpec> = partition
        .tiles
        .iter()
        .map(|w| support_box(w, spec.bx, spec.d))
        .collect();
    let shifted: Vec<f64> = spec.lambda_grid.iter().map(|l| l + penalty).collect();

    let (epsilon, c_eps) = match spec.potential {
        PotentialKind::Zero => (0.0, 0.0),
        PotentialKind::MollifiedNoise { epsilon, c_eps } => (epsilon, c_eps),
    };
    let mollifier = Mollifier::new(epsilon.max(f64::MIN_POSITIVE));
    let ng = spec.lambda_grid.len();
    let mut report = AdditivityReport {
        lambdas: spec.lambda_grid.to_vec(),
        super_violations: vec![0; ng],
        sub_violations: vec![0; ng],
        cover_violations: vec![0; ng],
        penalty,
        whole_dirichlet_mean: vec![0.0; ng],
        tiles_dirichlet_mean: vec![0.0; ng],
        whole_neumann_mean: vec![0.0; ng],
        tiles_neumann_mean: vec![0.0; ng],
        n_seeds: spec.seeds.len(),
    };
    for &seed in spec.seeds {
        let potential = match spec.potential {
            PotentialKind::Zero => Field::constant(grid, 0.0),
            PotentialKind::MollifiedNoise { .. } => {
                mollify(&sample_white_noise(grid, seed)?, &mollifier)?
            }
        };
        let count_at = |bc: Bc, bx: BoxSpec, grid_l: &[f64]| -> Result<Vec<usize>, IdsError> {
            let form = assemble_direct(&potential, c_eps, bc, bx)?;
            Ok(counting(&form, grid_l, COUNT_BAND)?.counts)
        };
        let whole_d = count_at(Bc::Dirichlet, spec.bx, spec.lambda_grid)?;
        let whole_n = count_at(Bc::Neumann, spec.bx, spec.lambda_grid)?;
        let mut tiles_d = vec![0usize; ng];
        let mut tiles_n = vec![0usize; ng];
        for &tile in &tiles {
            for (acc, c) in tiles_d.iter_mut().zip(count_at(Bc::Dirichlet, tile, spec.lambda_grid)?) {
                *acc += c;
            }
            for (acc, c) in tiles_n.iter_mut().zip(count_at(Bc::Neumann, tile, spec.lambda_grid)?) {
                *acc += c;
            }
        }
        let mut cover = vec![0usize; ng];
        for &ext in &covers {
            for (acc, c) in cover.iter_mut().zip(count_at(Bc::Dirichlet, ext, &shifted)?) {
                *acc += c;
            }
        }
        for i in 0..ng {
            if whole_d[i] < tiles_d[i] {
                report.super_violations[i] += 1;
            }
            if whole_n[i] > tiles_n[i] {
                report.sub_violations[i] += 1;
            }
            if whole_d[i] > cover[i] {
                report.cover_violations[i] += 1;
            }
            report.whole_dirichlet_mean[i] += whole_d[i] as f64;
            report.tiles_dirichlet_mean[i] += tiles_d[i] as f64;
            report.whole_neumann_mean[i] += whole_n[i] as f64;
            report.tiles_neumann_mean[i] += tiles_n[i] as f64;
        }
    }
    let ns = spec.seeds.len() as f64;
    for v in report
        .whole_dirichlet_mean
        .iter_mut()
        .chain(report.tiles_dirichlet_mean.iter_mut())
        .chain(report.whole_neumann_mean.iter_mut())
        .chain(report.tiles_neumann_mean.iter_mut())
    {
        *v /= ns;
    }
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
pub struct TailComparison {
    pub degenerate: bool,
    pub ids_fit: Option<TailFit>,
    pub principal_fit: Option<TailFit>,
    pub exponent_gap: Option<f64>,
    pub window: (f64, f64),
    pub n_samples: usize,
}

/// Side-by-side left-tail exponents: the IDS curve against the empirical
/// distribution of principal-eigenvalue samples on a fixed box, over a
/// shared window. A spread-free sample set (deterministic potential) is
/// flagged degenerate instead of fitted.
pub fn tail_vs_principal(
    curve: &IdsCurve,
    principal: &[f64],
    window: (f64, f64),
) -> Result<TailComparison, IdsError> {
    const NEED: usize = 200;
    if principal.len() < NEED {
        return Err(IdsError::TooFewSamples {
            have: principal.len(),
            need: NEED,
        });
    }
    let max = principal.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = principal.iter().cloned().fold(f64::INFINITY, f64::min);
    if max - min <= 1e-12 * (1.0 + max.abs()) {
        return Ok(TailComparison {
            degenerate: true,
            ids_fit: None,
            principal_fit: None,
            exponent_gap: None,
            window,
            n_samples: principal.len(),
        });
    }
    let mut sorted = principal.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let cdf: Vec<f64> = curve
        .lambdas
        .iter()
        .map(|&l| sorted.partition_point(|&s| s <= l) as f64 / sorted.len() as f64)
        .collect();
    let ids_fit = stretched_tail_fit(&curve.lambdas, &curve.mean, window)?;
    let principal_fit = stretched_tail_fit(&curve.lambdas, &cdf, window)?;
    let gap = (ids_fit.alpha - principal_fit.alpha).abs();
    Ok(TailComparison {
        degenerate: false,
        ids_fit: Some(ids_fit),
        principal_fit: Some(principal_fit),
        exponent_gap: Some(gap),
        window,
        n_samples: principal.len(),
    })
}

/// One row per (curve, lambda): bc, L, epsilon, lambda, mean count per
/// volume, stderr, seeds.
pub fn write_ids_csv(path: &Path, curves: &[IdsCurve]) -> Result<(), IdsError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "bc",
        "L",
        "epsilon",
        "lambda",
        "mean_count_per_volume",
        "stderr",
        "n_seeds",
    ])?;
    for c in curves {
        for ((l, m), s) in c.lambdas.iter().zip(&c.mean).zip(&c.stderr) {
            w.write_record([
                c.bc_label.clone(),
                format!("{:.6}", c.l),
                format!("{:.6}", c.epsilon),
                format!("{l:.17e}"),
                format!("{m:.17e}"),
                format!("{s:.17e}"),
                c.n_seeds.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IdsError> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text)?;
    Ok(())
}
