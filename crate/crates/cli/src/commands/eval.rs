use std::fs;
use std::path::{Path, PathBuf};

use airway_refine::dataset::DatasetManifest;
use airway_refine::metrics::evaluate;
use airway_refine::volume::Mask3;
use anyhow::{Context, Result};
use clap::Args;
use rayon::prelude::*;
use serde_json::json;

use super::refine::REFINED_SUFFIX;
use crate::manifest::{beside, require, RunManifest};
use crate::table::{save_rows, summarize, write_rows, EvalRow};

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Predicted mask, or a directory of `<id>.<suffix>` masks.
    #[arg(long)]
    pub pred: PathBuf,
    /// Ground-truth mask, or a dataset directory.
    #[arg(long)]
    pub gt: PathBuf,
    /// Prediction file suffix in directory mode (`prelim.vol` scores the preliminary masks).
    #[arg(long, default_value = REFINED_SUFFIX)]
    pub suffix: String,
    /// Per-case CSV; printed to stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Mean and standard deviation per metric as JSON; defaults to `<out>.summary.json`.
    #[arg(long)]
    pub summary: Option<PathBuf>,
}

fn case_name(path: &Path) -> String {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    name.split('.').next().unwrap_or(&name).to_string()
}

/// `(case id, prediction, ground truth)` triples to score.
fn pairs(a: &EvalArgs) -> Result<Vec<(String, PathBuf, PathBuf)>> {
    if !a.gt.is_dir() {
        return Ok(vec![(case_name(&a.gt), a.pred.clone(), a.gt.clone())]);
    }
    let ds = DatasetManifest::load(&a.gt)?;
    Ok(ds
        .cases
        .into_iter()
        .map(|c| {
            let pred = a.pred.join(format!("{}.{}", c.id, a.suffix));
            let gt = a.gt.join(&c.mask);
            (c.id, pred, gt)
        })
        .collect())
}

pub fn score(pairs: &[(String, PathBuf, PathBuf)]) -> Result<Vec<EvalRow>> {
    pairs
        .par_iter()
        .map(|(id, pred, gt)| {
            require(pred)?;
            let p = Mask3::read_raw(pred).with_context(|| format!("case {id}"))?;
            let g = Mask3::read_raw(gt).with_context(|| format!("case {id}"))?;
            let m = evaluate(&p, &g).with_context(|| format!("case {id}"))?;
            Ok(EvalRow::new(id.clone(), &m))
        })
        .collect()
}

pub fn run(a: EvalArgs, manifest: Option<PathBuf>) -> Result<()> {
    let mut run = RunManifest::start("eval", None);
    require(&a.gt)?;
    require(&a.pred)?;
    let pairs = pairs(&a)?;
    for (_, p, g) in &pairs {
        run.input(p)?;
        run.input(g)?;
    }
    let rows = score(&pairs)?;
    let summary = summarize(&rows);
    run.config(&json!({ "suffix": a.suffix }))?;
    let manifest_path = match &a.out {
        Some(out) => {
            save_rows(out, &rows)?;
            run.output(out);
            let s = a.summary.clone().unwrap_or_else(|| out.with_extension("summary.json"));
            fs::write(&s, serde_json::to_string_pretty(&summary)? + "\n")
                .with_context(|| format!("writing {}", s.display()))?;
            run.output(s);
            manifest.unwrap_or_else(|| beside(out))
        }
        None => {
            write_rows(std::io::stdout().lock(), &rows)?;
            if let Some(s) = &a.summary {
                fs::write(s, serde_json::to_string_pretty(&summary)? + "\n")?;
                run.output(s);
            }
            manifest.unwrap_or_else(|| PathBuf::from("eval.manifest.json"))
        }
    };
    run.finish(&manifest_path)?;
    Ok(())
}
