use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use airway_refine::train::{read_log, EpochLog};
use anyhow::{Context, Result};
use clap::Args;
use serde::Serialize;
use serde_json::json;

use crate::failure::invalid;
use crate::manifest::{RunManifest, MANIFEST_FILE};
use crate::svg::{bar_panels, line_chart};
use crate::table::{mean_std, median, read_rows, save_rows, AblationRow, EvalRow, METRICS};

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Per-case CSV written by `eval` (repeatable).
    #[arg(long = "eval")]
    pub evals: Vec<PathBuf>,
    /// `log.csv` written by `train` (repeatable).
    #[arg(long = "log")]
    pub logs: Vec<PathBuf>,
    /// `ablation.csv` written by `ablate` (repeatable).
    #[arg(long = "ablation")]
    pub ablations: Vec<PathBuf>,
    /// Output directory for summary tables and SVG plots.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Serialize)]
struct SummaryRow {
    source: String,
    metric: &'static str,
    mean: f64,
    std: f64,
    median: f64,
    n: usize,
}

/// File stem, or the parent directory name for generic stems.
fn label(path: &Path) -> String {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let parent = path.parent().and_then(|p| p.file_name()).map(|n| n.to_string_lossy().into_owned());
    match (stem.as_str(), parent) {
        ("eval" | "log" | "metrics" | "ablation", Some(p)) => p,
        _ => stem,
    }
}

fn metric_panels(rows: &[[f64; 7]]) -> Vec<(String, Vec<f64>)> {
    METRICS
        .iter()
        .enumerate()
        .map(|(k, m)| (m.to_string(), rows.iter().map(|r| r[k]).collect()))
        .collect()
}

fn loss_series(log: &[EpochLog]) -> Vec<(String, Vec<f64>)> {
    let col = |f: fn(&EpochLog) -> f64| log.iter().map(f).collect::<Vec<_>>();
    vec![
        ("g_total".into(), col(|e| e.g_total)),
        ("g_l1".into(), col(|e| e.g_l1)),
        ("g_ccf".into(), col(|e| e.g_ccf)),
        ("g_ld".into(), col(|e| e.g_ld)),
        ("g_adv".into(), col(|e| e.g_adv)),
        ("d_loss".into(), col(|e| e.d_loss)),
        ("d_acc".into(), col(|e| e.d_acc)),
    ]
}

fn write(path: PathBuf, text: &str, run: &mut RunManifest) -> Result<()> {
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    run.output(path);
    Ok(())
}

pub fn run(a: ReportArgs, manifest: Option<PathBuf>) -> Result<()> {
    if a.evals.is_empty() && a.logs.is_empty() && a.ablations.is_empty() {
        return Err(invalid("nothing to report; pass --eval, --log or --ablation"));
    }
    let mut run = RunManifest::start("report", None);
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let mut summary = Vec::new();
    let mut md = String::from("| source | n |");
    for m in METRICS {
        let _ = write!(md, " {m} |");
    }
    md.push_str("\n|---|---|");
    md.push_str(&"---|".repeat(METRICS.len()));
    md.push('\n');

    for p in &a.evals {
        run.input(p)?;
        let rows: Vec<EvalRow> = read_rows(p)?;
        let name = label(p);
        let values: Vec<[f64; 7]> = rows.iter().map(EvalRow::values).collect();
        let _ = write!(md, "| {name} | {} |", rows.len());
        for (k, metric) in METRICS.iter().enumerate() {
            let xs: Vec<f64> = values.iter().map(|v| v[k]).collect();
            let (mean, std) = mean_std(&xs);
            let _ = write!(md, " {mean:.4} ± {std:.4} |");
            summary.push(SummaryRow {
                source: name.clone(),
                metric,
                mean,
                std,
                median: median(&xs),
                n: xs.len(),
            });
        }
        md.push('\n');
        let cases: Vec<String> = rows.iter().map(|r| r.case.clone()).collect();
        let svg = bar_panels(&format!("{name}: per-case metrics"), &cases, &metric_panels(&values));
        write(a.out.join(format!("{name}.svg")), &svg, &mut run)?;
    }

    for p in &a.ablations {
        run.input(p)?;
        let rows: Vec<AblationRow> = read_rows(p)?;
        let name = label(p);
        let _ = writeln!(md, "\n**{name}**\n\n| config |{}", METRICS.map(|m| format!(" {m} |")).concat());
        let _ = writeln!(md, "|---|{}", "---|".repeat(METRICS.len()));
        for r in &rows {
            let _ = writeln!(md, "| {} |{}", r.config, r.values().map(|v| format!(" {v:.4} |")).concat());
        }
        let configs: Vec<String> = rows.iter().map(|r| r.config.clone()).collect();
        let values: Vec<[f64; 7]> = rows.iter().map(AblationRow::values).collect();
        let svg = bar_panels(&format!("{name}: configurations"), &configs, &metric_panels(&values));
        write(a.out.join(format!("{name}.svg")), &svg, &mut run)?;
    }

    for p in &a.logs {
        run.input(p)?;
        let log = read_log(p)?;
        let name = label(p);
        let epochs: Vec<f64> = log.iter().map(|e| e.epoch as f64).collect();
        let svg = line_chart(&format!("{name}: training losses"), "epoch", &epochs, &loss_series(&log));
        write(a.out.join(format!("{name}_loss.svg")), &svg, &mut run)?;
    }

    if !summary.is_empty() {
        let path = a.out.join("summary.csv");
        save_rows(&path, &summary)?;
        run.output(path);
    }
    write(a.out.join("summary.md"), &md, &mut run)?;
    run.config(&json!({ "evals": a.evals, "logs": a.logs, "ablations": a.ablations }))?;
    run.finish(&manifest.unwrap_or_else(|| a.out.join(MANIFEST_FILE)))?;
    println!("report written to {}", a.out.display());
    Ok(())
}
