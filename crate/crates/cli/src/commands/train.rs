use std::path::PathBuf;

use airway_refine::dataset::load_train_cases;
use airway_refine::nets::{
    DiscriminatorConfig, GeneratorConfig, PatchDiscriminatorConfig, VitDiscriminatorConfig, DISC_DILATE_RADIUS,
};
use airway_refine::train::{train_with, TrainConfig};
use anyhow::Result;
use clap::{Args, ValueEnum};
use serde_json::Value;

use super::{parse_dims, read_json};
use crate::failure::{invalid, schema};
use crate::manifest::{require, RunManifest, MANIFEST_FILE};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum DiscKind {
    Patch,
    Vit,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset written by `corrupt`.
    #[arg(long)]
    pub data: PathBuf,
    /// Training configuration JSON; every field is optional.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Run directory for log.csv, checkpoints and config.resolved.json.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: u64,
    /// Continue from a checkpoint written at an epoch boundary.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Generator configuration JSON.
    #[arg(long)]
    pub gen_config: Option<PathBuf>,
    /// Discriminator architecture.
    #[arg(long, value_enum)]
    pub disc: Option<DiscKind>,
    /// Discriminator configuration JSON for the chosen architecture.
    #[arg(long)]
    pub disc_config: Option<PathBuf>,
    /// Chebyshev radius of the label dilation in the discriminator input.
    #[arg(long)]
    pub disc_dilate_radius: Option<usize>,
    /// Training crop extent X,Y,Z.
    #[arg(long, value_parser = parse_dims)]
    pub patch_dims: Option<[usize; 3]>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub steps_per_epoch: Option<usize>,
}

fn discriminator(kind: DiscKind, file: Option<Value>, patch: [usize; 3]) -> Result<DiscriminatorConfig> {
    let parse_err = |e: serde_json::Error| schema(format!("--disc-config: {e}"));
    Ok(match kind {
        DiscKind::Patch => DiscriminatorConfig::Patch(match file {
            Some(v) => serde_json::from_value::<PatchDiscriminatorConfig>(v).map_err(parse_err)?,
            None => PatchDiscriminatorConfig::default(),
        }),
        DiscKind::Vit => DiscriminatorConfig::Vit(match file {
            Some(v) => serde_json::from_value::<VitDiscriminatorConfig>(v).map_err(parse_err)?,
            None => VitDiscriminatorConfig {
                input_dims: patch,
                ..VitDiscriminatorConfig::default()
            },
        }),
    })
}

/// The configuration file with command-line overrides applied.
pub fn resolve(a: &TrainArgs, run: &mut RunManifest) -> Result<TrainConfig> {
    let mut cfg = match &a.config {
        Some(p) => {
            run.input(p)?;
            read_json::<TrainConfig>(p)?
        }
        None => TrainConfig::default(),
    };
    cfg.seed = a.seed;
    if let Some(p) = &a.gen_config {
        run.input(p)?;
        cfg.generator = read_json::<GeneratorConfig>(p)?;
    }
    if let Some(d) = a.patch_dims {
        cfg.patch_dims = d;
    }
    let file = match &a.disc_config {
        Some(p) => {
            run.input(p)?;
            Some(read_json::<Value>(p)?)
        }
        None => None,
    };
    let current = match cfg.discriminator {
        DiscriminatorConfig::Patch(_) => DiscKind::Patch,
        DiscriminatorConfig::Vit(_) => DiscKind::Vit,
    };
    match (a.disc, file) {
        (Some(kind), file) if kind != current || file.is_some() => {
            cfg.discriminator = discriminator(kind, file, cfg.patch_dims)?;
        }
        (None, Some(v)) => {
            cfg.discriminator = serde_json::from_value::<DiscriminatorConfig>(v.clone())
                .or_else(|_| discriminator(DiscKind::Patch, Some(v), cfg.patch_dims))?;
        }
        _ => {}
    }
    if let (DiscriminatorConfig::Vit(v), None) = (&mut cfg.discriminator, &a.disc_config) {
        v.input_dims = cfg.patch_dims;
    }
    match a.disc_dilate_radius {
        Some(r) => cfg.disc_dilate_radius = r,
        None if cfg.disc_dilate_radius != DISC_DILATE_RADIUS => {
            return Err(invalid(format!(
                "disc_dilate_radius {} differs from {DISC_DILATE_RADIUS}; pass --disc-dilate-radius to confirm",
                cfg.disc_dilate_radius
            )));
        }
        None => {}
    }
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    if a.steps_per_epoch.is_some() {
        cfg.steps_per_epoch = a.steps_per_epoch;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn run(a: TrainArgs, manifest: Option<PathBuf>) -> Result<()> {
    let mut run = RunManifest::start("train", Some(a.seed));
    require(&a.data)?;
    let cfg = resolve(&a, &mut run)?;
    run.input(&a.data)?;
    if let Some(p) = &a.resume {
        run.input(p)?;
    }
    let cases = load_train_cases(&a.data)?;
    let outcome = train_with(&cases, &cfg, &a.out, a.resume.as_deref(), |e| {
        eprintln!(
            "epoch {:>4}  g {:.4}  l1 {:.4}  ccf {:.4}  ld {:.4}  adv {:.4}  d {:.4}  acc {:.2}",
            e.epoch, e.g_total, e.g_l1, e.g_ccf, e.g_ld, e.g_adv, e.d_loss, e.d_acc
        )
    })?;
    run.config(&cfg)?;
    for f in [
        airway_refine::train::LOG_FILE,
        airway_refine::train::RESOLVED_CONFIG_FILE,
    ] {
        run.output(a.out.join(f));
    }
    let mut ckpts: Vec<_> = std::fs::read_dir(&a.out)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "bin"))
        .collect();
    ckpts.sort();
    ckpts.into_iter().for_each(|p| run.output(p));
    run.finish(&manifest.unwrap_or_else(|| a.out.join(MANIFEST_FILE)))?;
    println!("final checkpoint {}", outcome.final_checkpoint.display());
    Ok(())
}
