//! Registry digest: turns the append-only run log of an output directory
//! into a markdown table.

use crate::config::CliError;
use crate::run::RunRecord;
use std::fmt::Write as _;
use std::path::Path;

pub fn report(out: &Path) -> Result<(), CliError> {
    let registry = out.join("registry.jsonl");
    let text = std::fs::read_to_string(&registry)
        .map_err(|e| CliError::Resource(format!("{}: {e}", registry.display())))?;
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: RunRecord = serde_json::from_str(line)
            .map_err(|e| CliError::Compute(format!("registry line {}: {e}", i + 1)))?;
        records.push(rec);
    }

    let mut md = String::new();
    let _ = writeln!(md, "# Run registry: {}", out.display());
    let _ = writeln!(md);
    let _ = writeln!(md, "| kind | config | version | wall (s) | artifacts | assertions |");
    let _ = writeln!(md, "|---|---|---|---|---|---|");
    for r in &records {
        let hash = r.config_hash.get(..12).unwrap_or(&r.config_hash);
        let assertions = if r.assertions.is_empty() {
            "none".to_string()
        } else {
            let passed = r.assertions.iter().filter(|a| a.pass).count();
            let total = r.assertions.len();
            if passed == total {
                format!("{passed}/{total} pass")
            } else {
                let failing: Vec<&str> = r
                    .assertions
                    .iter()
                    .filter(|a| !a.pass)
                    .map(|a| a.name.as_str())
                    .collect();
                format!("{passed}/{total} FAIL ({})", failing.join(", "))
            }
        };
        let _ = writeln!(
            md,
            "| {} | {} | {} | {:.2} | {} | {} |",
            r.kind,
            hash,
            r.version,
            r.wall_seconds,
            r.artifacts.len(),
            assertions
        );
    }
    let _ = writeln!(md);
    let _ = writeln!(md, "{} run(s) recorded.", records.len());

    let path = out.join("report.md");
    std::fs::write(&path, &md)
        .map_err(|e| CliError::Resource(format!("{}: {e}", path.display())))?;
    print!("{md}");
    Ok(())
}
