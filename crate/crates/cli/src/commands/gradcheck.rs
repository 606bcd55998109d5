use std::path::PathBuf;

use airway_refine::certify::{suite, CheckKind, TOLERANCE};
use anyhow::Result;
use clap::{ArgGroup, Args};
use serde::Serialize;
use serde_json::json;

use crate::failure::{invalid, Failure, Kind};
use crate::manifest::{beside, RunManifest};
use crate::table::save_rows;

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("which").required(true).args(["all", "op", "list"])))]
pub struct GradcheckArgs {
    /// Check every operator, loss and network.
    #[arg(long)]
    pub all: bool,
    /// Check only the named entries (repeatable).
    #[arg(long)]
    pub op: Vec<String>,
    /// Print the available names and exit.
    #[arg(long)]
    pub list: bool,
    /// Also write the table as CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct Row {
    name: &'static str,
    kind: CheckKind,
    max_rel_error: f64,
    checked: usize,
    skipped: usize,
    pass: bool,
}

pub fn run(a: GradcheckArgs, manifest: Option<PathBuf>) -> Result<()> {
    let checks = suite();
    if a.list {
        for c in &checks {
            println!("{:<32} {:?}", c.name, c.kind);
        }
        return Ok(());
    }
    let mut run = RunManifest::start("gradcheck", None);
    let selected: Vec<_> = if a.all {
        checks
    } else {
        if let Some(unknown) = a.op.iter().find(|n| !checks.iter().any(|c| c.name == n.as_str())) {
            return Err(invalid(format!("unknown check {unknown:?}; see --list")));
        }
        checks.into_iter().filter(|c| a.op.iter().any(|n| n == c.name)).collect()
    };
    run.config(&json!({ "checks": selected.iter().map(|c| c.name).collect::<Vec<_>>(), "tolerance": TOLERANCE }))?;

    println!("{:<32} {:<9} {:>14} {:>8} {:>8}  result", "name", "kind", "max_rel_error", "checked", "skipped");
    let mut rows = Vec::new();
    for c in &selected {
        let r = c.run()?;
        let pass = r.max_rel_error < TOLERANCE && r.checked > 0;
        println!(
            "{:<32} {:<9} {:>14.3e} {:>8} {:>8}  {}",
            c.name,
            format!("{:?}", c.kind).to_lowercase(),
            r.max_rel_error,
            r.checked,
            r.skipped.len(),
            if pass { "ok" } else { "FAIL" }
        );
        rows.push(Row {
            name: c.name,
            kind: c.kind,
            max_rel_error: r.max_rel_error,
            checked: r.checked,
            skipped: r.skipped.len(),
            pass,
        });
    }
    let failed = rows.iter().filter(|r| !r.pass).count();
    let manifest_path = match &a.out {
        Some(out) => {
            save_rows(out, &rows)?;
            run.output(out);
            manifest.unwrap_or_else(|| beside(out))
        }
        None => manifest.unwrap_or_else(|| PathBuf::from("gradcheck.manifest.json")),
    };
    run.finish(&manifest_path)?;
    if failed > 0 {
        return Err(Failure::new(Kind::Numeric, format!("{failed} of {} gradient checks exceed {TOLERANCE:e}", rows.len())).into());
    }
    println!("{} checks passed", rows.len());
    Ok(())
}
