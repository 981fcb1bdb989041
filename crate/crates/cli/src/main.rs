//! Experiment driver for the discretized-operator laboratory: builds
//! mollified-noise Schrödinger forms on boxes, estimates spectra and
//! counting curves, scans renormalization constants and field regularity,
//! and renders figures. Every run is configured by a JSON file, writes its
//! artifacts plus a run record into an output directory, and appends to an
//! append-only registry there.
//!
//! Exit codes: 0 success, 1 compute failure, 2 bad configuration,
//! 3 resource/budget violation, 4 failed embedded assertion.

mod config;
mod experiments;
mod plot;
mod report;
mod run;

use clap::{Args, Parser, Subcommand};
use config::{load_config, CliError, Kind};
use run::{
    append_registry, config_hash, file_digest, prepare, tool_version, write_json_artifact,
    Artifact, Overrides, RunRecord,
};
use std::path::PathBuf;
use std::time::Instant;

#[derive(Parser)]
#[command(name = "anderson", version, about = "Mollified-noise Schrödinger operator laboratory")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Sample and cache the random fields a configuration needs.
    Sample(RunArgs),
    /// Lowest eigenvalues of the renormalized operator across seeds.
    Spectrum(RunArgs),
    /// Integrated-density-of-states surrogate curves over nested boxes.
    Ids(RunArgs),
    /// High-energy counting asymptotics against the Weyl constant.
    Weyl(RunArgs),
    /// Renormalization constant versus mollification scale.
    Renorm(RunArgs),
    /// Dyadic block sup-norm growth of sampled noise.
    Besov(RunArgs),
    /// Counting-function bracketing and tiling inequalities.
    Additivity(RunArgs),
    /// Direct versus exponential-transform eigenvalue agreement.
    TransformCheck(RunArgs),
    /// Render an SVG figure from run artifacts.
    Plot(PlotArgs),
    /// Summarize the run registry of an output directory.
    Report(ReportArgs),
}

#[derive(Args)]
struct RunArgs {
    /// JSON experiment configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides the config's `out`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (overrides the config's `jobs`).
    #[arg(long)]
    jobs: Option<usize>,
    /// Added to every seed drawn from a `{"count": n}` seed spec.
    #[arg(long, default_value_t = 0)]
    seed_base: u64,
}

#[derive(Args)]
struct PlotArgs {
    /// Which table layout to expect.
    #[arg(long, value_enum)]
    kind: plot::PlotKind,
    /// Output SVG path.
    #[arg(long)]
    out: PathBuf,
    /// Input CSV artifacts.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Output directory whose registry.jsonl should be summarized.
    #[arg(long)]
    out: PathBuf,
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = dispatch(cli.cmd) {
        eprintln!("error: {e}");
        std::process::exit(e.code());
    }
}

fn dispatch(cmd: Cmd) -> Result<(), CliError> {
    match cmd {
        Cmd::Sample(a) => run_cmd(None, &a),
        Cmd::Spectrum(a) => run_cmd(Some(Kind::Spectrum), &a),
        Cmd::Ids(a) => run_cmd(Some(Kind::Ids), &a),
        Cmd::Weyl(a) => run_cmd(Some(Kind::Weyl), &a),
        Cmd::Renorm(a) => run_cmd(Some(Kind::RenormScan), &a),
        Cmd::Besov(a) => run_cmd(Some(Kind::BesovScan), &a),
        Cmd::Additivity(a) => run_cmd(Some(Kind::Additivity), &a),
        Cmd::TransformCheck(a) => run_cmd(Some(Kind::TransformCheck), &a),
        Cmd::Plot(a) => plot::plot(a.kind, &a.inputs, &a.out),
        Cmd::Report(a) => report::report(&a.out),
    }
}

/// Shared run pipeline: load and validate the config, run the experiment,
/// then persist summary, digests, run record, and registry entry. `expect`
/// is None for `sample`, which accepts any experiment kind and only warms
/// the field cache.
fn run_cmd(expect: Option<Kind>, args: &RunArgs) -> Result<(), CliError> {
    let config = load_config(&args.config)?;
    if let Some(kind) = expect {
        if config.kind != kind {
            return Err(CliError::Schema(format!(
                "config kind is '{}' but the subcommand expects '{}'",
                config.kind.name(),
                kind.name()
            )));
        }
    }
    let prepared = prepare(
        config,
        &Overrides {
            out: args.out.clone(),
            jobs: args.jobs,
            seed_base: args.seed_base,
        },
    )?;
    let started = Instant::now();
    let outcome = if expect.is_none() {
        experiments::sample(&prepared)
    } else {
        experiments::run_experiment(&prepared)
    }?;
    let wall = started.elapsed().as_secs_f64();
    if let Some(budget) = prepared.config.budget {
        if let Some(max) = budget.max_seconds {
            if wall > max {
                return Err(CliError::Resource(format!(
                    "run took {wall:.2}s, budget allows {max:.2}s"
                )));
            }
        }
    }

    let summary_path = prepared.out.join("summary.json");
    write_json_artifact(&summary_path, &outcome.summary)?;
    let mut paths = outcome.artifacts.clone();
    paths.push(summary_path);
    let mut artifacts = Vec::new();
    for path in &paths {
        let rel = path
            .strip_prefix(&prepared.out)
            .unwrap_or(path)
            .display()
            .to_string();
        artifacts.push(Artifact {
            path: rel,
            sha256: file_digest(path)?,
        });
    }
    let kind_name = match expect {
        None => "sample".to_string(),
        Some(_) => prepared.config.kind.name().to_string(),
    };
    let record = RunRecord {
        kind: kind_name.clone(),
        config_hash: config_hash(&prepared.config, &prepared.seeds),
        version: tool_version(),
        wall_seconds: wall,
        seeds: prepared.seeds.clone(),
        artifacts,
        assertions: outcome.assertions.clone(),
    };
    write_json_artifact(&prepared.out.join("run_record.json"), &record)?;
    append_registry(&prepared.out, &record)?;

    let passed = outcome.assertions.iter().filter(|a| a.pass).count();
    println!(
        "{kind_name}: {} artifact(s), {passed}/{} assertion(s) passed, {wall:.2}s -> {}",
        paths.len(),
        outcome.assertions.len(),
        prepared.out.display()
    );
    let failing: Vec<String> = outcome
        .assertions
        .iter()
        .filter(|a| !a.pass)
        .map(|a| format!("{} ({})", a.name, a.detail))
        .collect();
    if failing.is_empty() {
        Ok(())
    } else {
        Err(CliError::Assertion(failing.join("; ")))
    }
}
