use std::fs;
use std::path::PathBuf;

use airway_refine::dataset::{CaseEntry, DatasetManifest};
use airway_refine::rng::case_seed;
use airway_refine::synth::{generate_fitting, TreeSpec};
use anyhow::{Context, Result};
use clap::Args;
use rayon::prelude::*;
use serde_json::json;

use super::{parse_dims, read_json};
use crate::failure::invalid;
use crate::manifest::{RunManifest, MANIFEST_FILE};

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Number of cases.
    #[arg(long)]
    pub count: usize,
    /// Volume extent X,Y,Z.
    #[arg(long, value_parser = parse_dims, default_value = "48,48,48")]
    pub dims: [usize; 3],
    /// Bifurcation generations.
    #[arg(long, default_value_t = 3)]
    pub depth: usize,
    #[arg(long)]
    pub seed: u64,
    /// Output dataset directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Tree parameters as JSON; --dims, --depth and the per-case seed override it.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Reseeded attempts per case before giving up on a tree that does not fit.
    #[arg(long, default_value_t = 100)]
    pub attempts: usize,
}

pub fn run(a: SynthArgs, manifest: Option<PathBuf>) -> Result<()> {
    let mut run = RunManifest::start("synth", Some(a.seed));
    let base = match &a.spec {
        Some(p) => {
            run.input(p)?;
            read_json::<TreeSpec>(p)?
        }
        None => TreeSpec::default(),
    };
    if a.count == 0 {
        return Err(invalid("--count must be at least 1"));
    }
    let base = TreeSpec {
        dims: a.dims,
        depth: a.depth,
        ..base
    };
    base.validate()?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;

    let specs: Vec<TreeSpec> = (0..a.count)
        .into_par_iter()
        .map(|i| -> Result<TreeSpec> {
            let spec = TreeSpec {
                seed: case_seed(a.seed, i as u64),
                ..base.clone()
            };
            let entry = CaseEntry::named(case_id(i), false);
            let (fitted, tree) = generate_fitting(&spec, a.attempts).with_context(|| format!("case {}", entry.id))?;
            tree.image.write_raw(a.out.join(&entry.image))?;
            tree.gt.write_raw(a.out.join(&entry.mask))?;
            Ok(fitted)
        })
        .collect::<Result<_>>()?;

    let cases: Vec<CaseEntry> = (0..a.count).map(|i| CaseEntry::named(case_id(i), false)).collect();
    for c in &cases {
        run.output(a.out.join(&c.image));
        run.output(a.out.join(&c.mask));
    }
    let ds = DatasetManifest::new(cases, json!({ "seed": a.seed, "tree_specs": specs }));
    run.output(ds.save(&a.out)?);
    run.config(&json!({ "count": a.count, "attempts": a.attempts, "tree": base }))?;
    run.finish(&manifest.unwrap_or_else(|| a.out.join(MANIFEST_FILE)))?;
    println!("wrote {} cases to {}", a.count, a.out.display());
    Ok(())
}

pub fn case_id(i: usize) -> String {
    format!("case_{i:04}")
}
