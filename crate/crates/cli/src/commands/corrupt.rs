use std::fs;
use std::path::PathBuf;

use airway_refine::dataset::{CaseEntry, DatasetManifest};
use airway_refine::rng::case_seed;
use airway_refine::synth::{corrupt_fitting, CorruptionSpec};
use airway_refine::volume::Mask3;
use anyhow::{Context, Result};
use clap::Args;
use rayon::prelude::*;
use serde_json::json;

use super::{copy_volume, read_json};
use crate::manifest::{require, RunManifest, MANIFEST_FILE};

#[derive(Debug, Args)]
pub struct CorruptArgs {
    /// Dataset written by `synth`.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Corruption parameters as JSON; defaults when omitted. The per-case seed overrides its seed.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub seed: u64,
    /// Output dataset directory with images, masks and preliminary masks.
    #[arg(long)]
    pub out: PathBuf,
    /// Reseeded attempts per case when a tree has too few breakage positions.
    #[arg(long, default_value_t = 100)]
    pub attempts: usize,
}

pub fn run(a: CorruptArgs, manifest: Option<PathBuf>) -> Result<()> {
    let mut run = RunManifest::start("corrupt", Some(a.seed));
    require(&a.input)?;
    let source = DatasetManifest::load(&a.input)?;
    run.input(&a.input)?;
    let base = match &a.spec {
        Some(p) => {
            run.input(p)?;
            read_json::<CorruptionSpec>(p)?
        }
        None => CorruptionSpec::default(),
    };
    base.validate()?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;

    let results: Vec<(CaseEntry, CorruptionSpec)> = source
        .cases
        .par_iter()
        .enumerate()
        .map(|(i, c)| -> Result<_> {
            let entry = CaseEntry::named(c.id.clone(), true);
            let gt = Mask3::read_raw(a.input.join(&c.mask)).with_context(|| format!("case {}", c.id))?;
            let spec = CorruptionSpec {
                seed: case_seed(a.seed, i as u64),
                ..base.clone()
            };
            let (used, prelim) = corrupt_fitting(&gt, &spec, a.attempts).with_context(|| format!("case {}", c.id))?;
            copy_volume(&a.input.join(&c.image), &a.out.join(&entry.image))?;
            copy_volume(&a.input.join(&c.mask), &a.out.join(&entry.mask))?;
            let prelim_path = a.out.join(entry.prelim.as_ref().expect("named with prelim"));
            prelim.write_raw(&prelim_path)?;
            Ok((entry, used))
        })
        .collect::<Result<_>>()?;

    let (cases, specs): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    for c in &cases {
        for f in [Some(&c.image), Some(&c.mask), c.prelim.as_ref()].into_iter().flatten() {
            run.output(a.out.join(f));
        }
    }
    let meta = json!({ "seed": a.seed, "source": source.meta, "corruption_specs": specs });
    run.output(DatasetManifest::new(cases, meta).save(&a.out)?);
    run.config(&json!({ "attempts": a.attempts, "corruption": base }))?;
    run.finish(&manifest.unwrap_or_else(|| a.out.join(MANIFEST_FILE)))?;
    println!("corrupted {} cases into {}", specs.len(), a.out.display());
    Ok(())
}
