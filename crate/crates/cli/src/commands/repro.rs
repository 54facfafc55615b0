use std::path::Path;

use anyhow::Result;
use lesion_cascade::eval::published::{all_checks, printed_negative_total_note, PUBLISHED};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::manifest::{RunDir, RunManifest};

pub const CHECKS_FILE: &str = "checks.txt";

/// Recomputes the published metric triples and totals from the published
/// confusion matrices. Prints one line per check and fails if any check does.
pub fn run(cfg: &RunConfig, out: &Path) -> Result<RunManifest> {
    let run = RunDir::create(out, "repro-tables", cfg)?;
    let checks = all_checks();
    let mut text = String::new();
    for c in &checks {
        text.push_str(&c.line());
        text.push('\n');
    }
    for note in PUBLISHED.iter().filter_map(printed_negative_total_note) {
        text.push_str(&note);
        text.push('\n');
    }
    print!("{text}");
    run.write(CHECKS_FILE, &text)?;
    let manifest = run.finish()?;
    let failed = checks.iter().filter(|c| !c.passed).count();
    if failed > 0 {
        return Err(CliError::ChecksFailed { failed, total: checks.len() }.into());
    }
    Ok(manifest)
}
