//! Experiment configuration: one canonical UTF-8 JSON schema, strictly
//! validated before any compute. Unknown keys are rejected, and keys that
//! belong to a different experiment kind are rejected too.

use anderson_core::operator::{Bc, BoxSpec};
use serde::{Deserialize, Serialize};
use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Schema(String),
    #[error("resource: {0}")]
    Resource(String),
    #[error("assertions failed: {0}")]
    Assertion(String),
    #[error("{0}")]
    Compute(String),
}

impl CliError {
    /// Process exit code: 2 schema, 3 resource budget, 4 assertion verdict,
    /// 1 anything else.
    pub fn code(&self) -> i32 {
        match self {
            CliError::Schema(_) => 2,
            CliError::Resource(_) => 3,
            CliError::Assertion(_) => 4,
            CliError::Compute(_) => 1,
        }
    }
}

pub fn schema<S: Into<String>>(msg: S) -> CliError {
    CliError::Schema(msg.into())
}

pub fn resource<S: Into<String>>(msg: S) -> CliError {
    CliError::Resource(msg.into())
}

pub fn compute<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Compute(e.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    Spectrum,
    Ids,
    Weyl,
    RenormScan,
    BesovScan,
    Additivity,
    TransformCheck,
}

impl Kind {
    pub fn name(self) -> &'static str {
        match self {
            Kind::Spectrum => "spectrum",
            Kind::Ids => "ids",
            Kind::Weyl => "weyl",
            Kind::RenormScan => "renorm-scan",
            Kind::BesovScan => "besov-scan",
            Kind::Additivity => "additivity",
            Kind::TransformCheck => "transform-check",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BcName {
    Dirichlet,
    Neumann,
}

impl From<BcName> for Bc {
    fn from(b: BcName) -> Bc {
        match b {
            BcName::Dirichlet => Bc::Dirichlet,
            BcName::Neumann => Bc::Neumann,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case", tag = "type")]
pub enum PotentialConfig {
    Zero,
    MollifiedNoise { epsilon: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case", tag = "type")]
pub enum NoiseConfig {
    White,
    Riesz { alpha: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CountSpec {
    pub count: usize,
}

/// Either an explicit seed list or a count expanded from the seed base.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SeedsSpec {
    List(Vec<u64>),
    Count(CountSpec),
}

impl SeedsSpec {
    pub fn resolve(&self, base: u64) -> Vec<u64> {
        match self {
            SeedsSpec::List(list) => list.iter().map(|s| s.wrapping_add(base)).collect(),
            SeedsSpec::Count(c) => (0..c.count as u64).map(|i| base.wrapping_add(i)).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Linspace {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GridSpec {
    Explicit(Vec<f64>),
    Linspace(Linspace),
}

impl GridSpec {
    pub fn values(&self) -> Result<Vec<f64>, CliError> {
        match self {
            GridSpec::Explicit(v) => {
                if v.is_empty() || v.windows(2).any(|w| w[0] > w[1]) {
                    return Err(schema("lambda_grid must be nonempty and sorted"));
                }
                Ok(v.clone())
            }
            GridSpec::Linspace(ls) => {
                if ls.points < 2 || !(ls.lo < ls.hi) {
                    return Err(schema("lambda_grid linspace needs lo < hi and points >= 2"));
                }
                let step = (ls.hi - ls.lo) / (ls.points - 1) as f64;
                Ok((0..ls.points).map(|i| ls.lo + i as f64 * step).collect())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxConfig {
    pub corner: [usize; 3],
    pub shape: [usize; 3],
}

impl From<BoxConfig> for BoxSpec {
    fn from(b: BoxConfig) -> BoxSpec {
        BoxSpec {
            corner: b.corner,
            shape: b.shape,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Budget {
    #[serde(default)]
    pub max_cells: Option<usize>,
    #[serde(default)]
    pub max_seconds: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetBand {
    pub target: f64,
    pub rel_tol: f64,
}

impl TargetBand {
    pub fn contains(&self, value: f64) -> bool {
        (value - self.target).abs() <= self.rel_tol * self.target.abs()
    }
}

/// Optional embedded checks; each one that is configured contributes a
/// pass/fail verdict to the run record, and any failure exits with code 4.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct Assertions {
    #[serde(default)]
    pub lambda1: Option<TargetBand>,
    #[serde(default)]
    pub max_residual: Option<f64>,
    /// bands as multiples of the ball-volume constant
    #[serde(default)]
    pub weyl_raw_band: Option<[f64; 2]>,
    #[serde(default)]
    pub weyl_leading_band: Option<[f64; 2]>,
    #[serde(default)]
    pub slope: Option<TargetBand>,
    #[serde(default)]
    pub r2_min: Option<f64>,
    /// renorm scan: the sampling estimate stays within this many standard
    /// errors of the exact lattice sum
    #[serde(default)]
    pub mc_within_stderr: Option<f64>,
    /// additivity: defaults to on
    #[serde(default)]
    pub no_violations: Option<bool>,
    #[serde(default)]
    pub max_rel_gap: Option<f64>,
    /// transform check: each refinement shrinks the gap by at least this
    /// factor
    #[serde(default)]
    pub gap_ratio_max: Option<f64>,
    /// ids: defaults to on (every seed's counting run survived)
    #[serde(default)]
    pub curves_complete: Option<bool>,
}

pub const DEFAULT_MAX_CELLS: usize = 1 << 22;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: Kind,
    pub d: usize,
    pub n: usize,
    pub side: f64,
    pub seeds: SeedsSpec,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub jobs: Option<usize>,
    #[serde(default)]
    pub bc: Option<BcName>,
    #[serde(default)]
    pub potential: Option<PotentialConfig>,
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default)]
    pub tol: Option<f64>,
    #[serde(default)]
    pub l_list: Option<Vec<f64>>,
    #[serde(default)]
    pub lambda_grid: Option<GridSpec>,
    #[serde(default)]
    pub epsilons: Option<Vec<f64>>,
    #[serde(default)]
    pub mc_samples: Option<usize>,
    #[serde(default)]
    pub noise: Option<NoiseConfig>,
    /// besov scan: inclusive dyadic-level fit range
    #[serde(default)]
    pub levels: Option<[i32; 2]>,
    #[serde(default)]
    pub subbox: Option<BoxConfig>,
    #[serde(default)]
    pub tiles_per_axis: Option<[usize; 3]>,
    #[serde(default)]
    pub overlap_cells: Option<usize>,
    /// transform check: torus resolutions to compare (defaults to [n])
    #[serde(default)]
    pub resolutions: Option<Vec<usize>>,
    #[serde(default)]
    pub green_level: Option<usize>,
    #[serde(default)]
    pub budget: Option<Budget>,
    #[serde(default)]
    pub assertions: Option<Assertions>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        if self.d != 2 && self.d != 3 {
            return Err(schema(format!("d must be 2 or 3, got {}", self.d)));
        }
        if self.n < 4 || self.n % 2 != 0 {
            return Err(schema(format!("n must be even and >= 4, got {}", self.n)));
        }
        if !(self.side > 0.0) {
            return Err(schema(format!("side must be positive, got {}", self.side)));
        }
        if self.seeds.resolve(0).is_empty() {
            return Err(schema("seed list is empty"));
        }
        if let Some(eps) = self.epsilons.as_deref() {
            if eps.is_empty() || eps.iter().any(|&e| !(e > 0.0)) {
                return Err(schema("epsilons must be a nonempty list of positive widths"));
            }
        }
        if let Some(PotentialConfig::MollifiedNoise { epsilon }) = self.potential {
            if !(epsilon > 0.0) {
                return Err(schema(format!("potential epsilon must be positive, got {epsilon}")));
            }
        }
        if let Some(res) = self.resolutions.as_deref() {
            if res.is_empty() || res.windows(2).any(|w| w[0] >= w[1]) {
                return Err(schema("resolutions must be nonempty and strictly increasing"));
            }
        }

        let required: &[(&str, bool)] = match self.kind {
            Kind::Spectrum => &[],
            Kind::Ids => &[("potential", true), ("l_list", true), ("lambda_grid", true)],
            Kind::Weyl => &[("lambda_grid", true)],
            Kind::RenormScan => &[("epsilons", true)],
            Kind::BesovScan => &[("noise", true)],
            Kind::Additivity => &[
                ("potential", true),
                ("lambda_grid", true),
                ("subbox", true),
                ("tiles_per_axis", true),
                ("overlap_cells", true),
            ],
            Kind::TransformCheck => &[("potential", true)],
        };
        let allowed: &[&str] = match self.kind {
            Kind::Spectrum => &["bc", "potential", "k", "tol", "subbox"],
            Kind::Ids => &["bc", "potential", "l_list", "lambda_grid"],
            Kind::Weyl => &["bc", "potential", "lambda_grid"],
            Kind::RenormScan => &["epsilons", "mc_samples"],
            Kind::BesovScan => &["noise", "levels"],
            Kind::Additivity => &[
                "potential",
                "lambda_grid",
                "subbox",
                "tiles_per_axis",
                "overlap_cells",
            ],
            Kind::TransformCheck => &["bc", "potential", "k", "tol", "resolutions", "green_level"],
        };
        let present: &[(&str, bool)] = &[
            ("bc", self.bc.is_some()),
            ("potential", self.potential.is_some()),
            ("k", self.k.is_some()),
            ("tol", self.tol.is_some()),
            ("l_list", self.l_list.is_some()),
            ("lambda_grid", self.lambda_grid.is_some()),
            ("epsilons", self.epsilons.is_some()),
            ("mc_samples", self.mc_samples.is_some()),
            ("noise", self.noise.is_some()),
            ("levels", self.levels.is_some()),
            ("subbox", self.subbox.is_some()),
            ("tiles_per_axis", self.tiles_per_axis.is_some()),
            ("overlap_cells", self.overlap_cells.is_some()),
            ("resolutions", self.resolutions.is_some()),
            ("green_level", self.green_level.is_some()),
        ];
        for &(name, req) in required {
            if req && !present.iter().any(|&(n, p)| n == name && p) {
                return Err(schema(format!(
                    "kind `{}` requires field `{name}`",
                    self.kind.name()
                )));
            }
        }
        for &(name, p) in present {
            if p && !allowed.contains(&name) {
                return Err(schema(format!(
                    "field `{name}` does not apply to kind `{}`",
                    self.kind.name()
                )));
            }
        }
        if self.kind == Kind::TransformCheck {
            match self.potential {
                Some(PotentialConfig::MollifiedNoise { .. }) => {}
                _ => {
                    return Err(schema(
                        "transform-check needs potential type `mollified-noise`",
                    ))
                }
            }
            if self.d != 2 {
                return Err(schema("transform-check supports d = 2 only"));
            }
        }
        Ok(())
    }

    /// Largest cell count any stage of this run will allocate.
    pub fn peak_cells(&self) -> usize {
        let n = match self.resolutions.as_deref() {
            Some(res) if self.kind == Kind::TransformCheck => {
                res.iter().copied().max().unwrap_or(self.n)
            }
            _ => self.n,
        };
        n.pow(self.d as u32)
    }
}

pub fn load_config(path: &std::path::Path) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| schema(format!("cannot read {}: {e}", path.display())))?;
    let cfg: ExperimentConfig =
        serde_json::from_str(&text).map_err(|e| schema(format!("{}: {e}", path.display())))?;
    cfg.validate()?;
    Ok(cfg)
}
