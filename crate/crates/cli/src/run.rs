//! Run plumbing: flag overrides, budget checks, the content-addressed field
//! cache, a bounded worker pool with index-ordered aggregation, artifact
//! digests, and the append-only run registry.

use crate::config::{
    compute, resource, schema, CliError, ExperimentConfig, SeedsSpec, DEFAULT_MAX_CELLS,
};
use anderson_core::field::{mollify, sample_white_noise, Field, Grid, Mollifier};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub jobs: Option<usize>,
    pub seed_base: u64,
}

#[derive(Debug)]
pub struct Prepared {
    pub config: ExperimentConfig,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
    pub jobs: usize,
    pub cache: FieldCache,
}

pub fn prepare(config: ExperimentConfig, ov: &Overrides) -> Result<Prepared, CliError> {
    let seeds = config.seeds.resolve(ov.seed_base);
    let out = ov
        .out
        .clone()
        .or_else(|| config.out.clone())
        .ok_or_else(|| schema("output directory required (--out or config `out`)"))?;
    let jobs = ov.jobs.or(config.jobs).unwrap_or(1).max(1);
    let cap = config
        .budget
        .and_then(|b| b.max_cells)
        .unwrap_or(DEFAULT_MAX_CELLS);
    let peak = config.peak_cells();
    if peak > cap {
        return Err(resource(format!(
            "run needs {peak} cells, budget allows {cap}"
        )));
    }
    std::fs::create_dir_all(&out)
        .map_err(|e| resource(format!("cannot create {}: {e}", out.display())))?;
    let cache = FieldCache::open()?;
    Ok(Prepared {
        config,
        seeds,
        out,
        jobs,
        cache,
    })
}

/// Hash of the numeric identity of a run: the parsed config with the seed
/// list made explicit and the non-numeric knobs (out, jobs) cleared.
pub fn config_hash(config: &ExperimentConfig, seeds: &[u64]) -> String {
    let mut canonical = config.clone();
    canonical.out = None;
    canonical.jobs = None;
    canonical.seeds = SeedsSpec::List(seeds.to_vec());
    let bytes = serde_json::to_vec(&canonical).expect("config serializes");
    hex::encode(Sha256::digest(&bytes))
}

pub fn file_digest(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path)
        .map_err(|e| resource(format!("cannot read artifact {}: {e}", path.display())))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AssertionOutcome {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub kind: String,
    pub config_hash: String,
    pub version: String,
    pub wall_seconds: f64,
    pub seeds: Vec<u64>,
    pub artifacts: Vec<Artifact>,
    pub assertions: Vec<AssertionOutcome>,
}

pub fn tool_version() -> String {
    env!("CARGO_PKG_VERSION").to_string()
}

/// Appends one JSON line under an exclusive file lock.
pub fn append_registry(out: &Path, record: &RunRecord) -> Result<(), CliError> {
    let path = out.join("registry.jsonl");
    let file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .map_err(|e| resource(format!("cannot open {}: {e}", path.display())))?;
    file.lock()
        .map_err(|e| resource(format!("cannot lock registry: {e}")))?;
    let line = serde_json::to_string(record).map_err(compute)?;
    let result = writeln!(&file, "{line}").map_err(|e| resource(format!("registry write: {e}")));
    file.unlock()
        .map_err(|e| resource(format!("cannot unlock registry: {e}")))?;
    result
}

/// Runs f(0..n) on a bounded pool and returns results in index order, so
/// aggregation does not depend on scheduling.
pub fn map_indexed<T, F>(jobs: usize, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    let jobs = jobs.clamp(1, n.max(1));
    if jobs == 1 {
        return (0..n).map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<T>>> = Mutex::new((0..n).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..jobs {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let value = f(i);
                slots.lock().expect("pool slots")[i] = Some(value);
            });
        }
    });
    slots
        .into_inner()
        .expect("pool slots")
        .into_iter()
        .map(|v| v.expect("every index filled"))
        .collect()
}

/// Content-addressed store of sampled fields, shared across experiments.
/// Location: $ANDERSON_CACHE_DIR, else ~/.cache/anderson.
#[derive(Debug)]
pub struct FieldCache {
    dir: PathBuf,
}

impl FieldCache {
    pub fn open() -> Result<FieldCache, CliError> {
        let dir = match std::env::var_os("ANDERSON_CACHE_DIR") {
            Some(d) => PathBuf::from(d),
            None => match std::env::var_os("HOME") {
                Some(h) => PathBuf::from(h).join(".cache/anderson"),
                None => PathBuf::from(".anderson-cache"),
            },
        };
        std::fs::create_dir_all(&dir)
            .map_err(|e| resource(format!("cannot create cache {}: {e}", dir.display())))?;
        Ok(FieldCache { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn stem(&self, key: &str) -> PathBuf {
        self.dir.join(hex::encode(Sha256::digest(key.as_bytes())))
    }

    fn load_or<F>(&self, key: &str, build: F) -> Result<Field, CliError>
    where
        F: FnOnce() -> Result<Field, CliError>,
    {
        let stem = self.stem(key);
        if stem.with_extension("json").exists() {
            return Field::load(&stem).map_err(compute);
        }
        let field = build()?;
        field.save(&stem).map_err(compute)?;
        Ok(field)
    }

    pub fn white(&self, grid: Grid, seed: u64) -> Result<Field, CliError> {
        let key = format!(
            "white:d={}:n={}:side={:.17e}:seed={}",
            grid.d, grid.n, grid.side, seed
        );
        self.load_or(&key, || sample_white_noise(grid, seed).map_err(compute))
    }

    /// Mollified noise keyed additionally by the width.
    pub fn xi(&self, grid: Grid, seed: u64, epsilon: f64) -> Result<Field, CliError> {
        let key = format!(
            "xi:d={}:n={}:side={:.17e}:seed={}:eps={:.17e}",
            grid.d, grid.n, grid.side, seed, epsilon
        );
        self.load_or(&key, || {
            let white = self.white(grid, seed)?;
            mollify(&white, &Mollifier::new(epsilon)).map_err(compute)
        })
    }
}

pub fn write_json_artifact<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(compute)?;
    std::fs::write(path, text).map_err(|e| resource(format!("{}: {e}", path.display())))
}
