use std::fs;
use std::path::{Path, PathBuf};

use airway_refine::autodiff::Checkpoint;
use airway_refine::dataset::DatasetManifest;
use airway_refine::patching::StitchMode;
use airway_refine::refine::{refine_case, RefineConfig, RefineModel};
use airway_refine::volume::{Dims, Mask3, Volume3};
use anyhow::{Context, Result};
use clap::{ArgGroup, Args};
use serde_json::json;

use super::parse_dims;
use crate::failure::invalid;
use crate::manifest::{beside, require, RunManifest, MANIFEST_FILE};

/// Patch extent used when neither the flag nor the checkpoint gives one.
pub const DEFAULT_PATCH: [usize; 3] = [128, 96, 144];

/// File suffix of refined masks written in dataset mode.
pub const REFINED_SUFFIX: &str = "refined.vol";

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("source").required(true).args(["ct", "data"])))]
pub struct RefineArgs {
    /// Image volume (single-case mode).
    #[arg(long, requires = "mask", conflicts_with = "data")]
    pub ct: Option<PathBuf>,
    /// Preliminary mask (single-case mode).
    #[arg(long, requires = "ct")]
    pub mask: Option<PathBuf>,
    /// Dataset with preliminary masks; writes <id>.refined.vol per case into --out.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Training checkpoint.
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Output mask file, or directory in dataset mode.
    #[arg(long)]
    pub out: PathBuf,
    /// Keep every component instead of the largest one.
    #[arg(long)]
    pub no_lcc: bool,
    /// How overlapping patches are merged.
    #[arg(long, default_value = "mean")]
    pub stitch_mode: StitchMode,
    /// Inference patch extent X,Y,Z; defaults to the training crop stored in
    /// the checkpoint, else 128,96,144.
    #[arg(long, value_parser = parse_dims)]
    pub patch_dims: Option<[usize; 3]>,
    /// Patch overlap fraction; only 0.5 is supported.
    #[arg(long, default_value_t = 0.5)]
    pub overlap: f64,
}

fn trained_patch(ckpt: &Checkpoint) -> Option<[usize; 3]> {
    serde_json::from_value(ckpt.meta.get("train")?.get("patch_dims")?.clone()).ok()
}

pub fn load_model(path: &Path, patch: Option<[usize; 3]>) -> Result<(RefineModel, Dims)> {
    require(path)?;
    let ckpt = Checkpoint::load(path)?;
    let model = RefineModel::from_checkpoint(&ckpt)?;
    let patch = patch.or_else(|| trained_patch(&ckpt)).unwrap_or(DEFAULT_PATCH);
    let div = model.generator.config().divisor();
    if patch.iter().any(|n| n % div != 0) {
        return Err(invalid(format!("patch {patch:?} is not a multiple of the generator divisor {div}")));
    }
    Ok((model, patch.into()))
}

pub fn run(a: RefineArgs, manifest: Option<PathBuf>) -> Result<()> {
    if a.overlap != 0.5 {
        return Err(invalid(format!("--overlap {} is unsupported; only 0.5 is allowed", a.overlap)));
    }
    let mut run = RunManifest::start("refine", None);
    run.input(&a.ckpt)?;
    let (model, patch_dims) = load_model(&a.ckpt, a.patch_dims)?;
    let cfg = RefineConfig {
        patch_dims,
        stitch: a.stitch_mode,
        lcc: !a.no_lcc,
    };
    run.config(&json!({
        "patch_dims": patch_dims,
        "overlap": a.overlap,
        "stitch_mode": cfg.stitch,
        "lcc": cfg.lcc,
    }))?;

    let manifest_path = match (&a.ct, &a.mask, &a.data) {
        (Some(ct_path), Some(mask_path), _) => {
            run.input(ct_path)?;
            run.input(mask_path)?;
            let ct = Volume3::read_raw(ct_path)?;
            let prelim = Mask3::read_raw(mask_path)?;
            let refined = refine_case(&model, &ct, &prelim, &cfg)?;
            refined.write_raw(&a.out)?;
            run.output(&a.out);
            println!("refined {} -> {} ({} voxels)", mask_path.display(), a.out.display(), refined.count());
            manifest.unwrap_or_else(|| beside(&a.out))
        }
        (_, _, Some(dir)) => {
            require(dir)?;
            let ds = DatasetManifest::load(dir)?;
            run.input(dir)?;
            fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
            for c in &ds.cases {
                let prelim_name = c
                    .prelim
                    .as_ref()
                    .ok_or_else(|| invalid(format!("case {} has no preliminary mask", c.id)))?;
                let ct = Volume3::read_raw(dir.join(&c.image)).with_context(|| format!("case {}", c.id))?;
                let prelim = Mask3::read_raw(dir.join(prelim_name)).with_context(|| format!("case {}", c.id))?;
                let refined = refine_case(&model, &ct, &prelim, &cfg).with_context(|| format!("case {}", c.id))?;
                let out = a.out.join(format!("{}.{REFINED_SUFFIX}", c.id));
                refined.write_raw(&out)?;
                run.output(out);
            }
            println!("refined {} cases into {}", ds.cases.len(), a.out.display());
            manifest.unwrap_or_else(|| a.out.join(MANIFEST_FILE))
        }
        _ => unreachable!("clap enforces one input mode"),
    };
    run.finish(&manifest_path)?;
    Ok(())
}
