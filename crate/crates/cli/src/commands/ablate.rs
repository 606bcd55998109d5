use std::fs;
use std::path::{Path, PathBuf};

use airway_refine::dataset::{load_train_cases, TrainCase};
use airway_refine::metrics::evaluate;
use airway_refine::nets::{DiscriminatorConfig, GeneratorConfig, PatchDiscriminatorConfig, VitDiscriminatorConfig};
use airway_refine::refine::{refine_case, RefineConfig, RefineModel};
use airway_refine::train::{train_with, TrainConfig};
use anyhow::{Context, Result};
use clap::{Args, ValueEnum};
use serde::Serialize;
use serde_json::json;

use super::read_json;
use crate::failure::invalid;
use crate::manifest::{RunManifest, MANIFEST_FILE};
use crate::table::{mean_std, save_rows, AblationRow, EvalRow};

pub const ABLATION_FILE: &str = "ablation.csv";

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    Table4,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long, value_enum)]
    pub preset: Preset,
    /// Synthesize a small dataset and train each configuration for a few steps.
    #[arg(long)]
    pub toy: bool,
    #[arg(long)]
    pub seed: u64,
    /// Output directory: ablation.csv plus one run directory per configuration.
    #[arg(long)]
    pub out: PathBuf,
    /// Corrupted dataset (required without --toy).
    #[arg(long, required_unless_present = "toy")]
    pub data: Option<PathBuf>,
    /// Base training configuration JSON.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Trailing cases held out for scoring.
    #[arg(long)]
    pub holdout: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub steps_per_epoch: Option<usize>,
}

/// One ablation row: which loss terms and discriminator are on.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct Variant {
    pub name: &'static str,
    pub cl_dice: bool,
    pub ccf: bool,
    pub multi_scale: bool,
    pub vit: bool,
}

const fn variant(name: &'static str, cl_dice: bool, ccf: bool, multi_scale: bool, vit: bool) -> Variant {
    Variant {
        name,
        cl_dice,
        ccf,
        multi_scale,
        vit,
    }
}

pub const TABLE4: [Variant; 7] = [
    variant("BL", false, false, false, false),
    variant("BL+clDice", true, false, false, false),
    variant("BL+ccf", false, true, false, false),
    variant("BL+ccf+multi-scale", false, true, true, false),
    variant("BL+clDice+multi-scale", true, false, true, false),
    variant("BL+ccf+clDice+multi-scale", true, true, true, false),
    variant("BL(ViT)+ccf+clDice+multi-scale", true, true, true, true),
];

impl Variant {
    pub fn slug(&self) -> String {
        self.name
            .to_lowercase()
            .replace("(vit)", "_vit")
            .replace('+', "_")
    }

    /// `base` with the terms switched per this row. Enabled terms keep the
    /// base weights (or the defaults when the base disables them).
    pub fn apply(&self, base: &TrainConfig) -> TrainConfig {
        let defaults = TrainConfig::default().loss;
        let mut cfg = base.clone();
        let on = |w: f64, d: f64| if w > 0.0 { w } else { d };
        cfg.loss.alpha_cl = if self.cl_dice { on(base.loss.alpha_cl, defaults.alpha_cl) } else { 0.0 };
        cfg.loss.beta = if self.ccf { on(base.loss.beta, defaults.beta) } else { 0.0 };
        cfg.loss.multi_scale = self.multi_scale;
        cfg.discriminator = match (&base.discriminator, self.vit) {
            (DiscriminatorConfig::Vit(_), false) => DiscriminatorConfig::Patch(PatchDiscriminatorConfig::default()),
            (DiscriminatorConfig::Patch(_), true) => DiscriminatorConfig::Vit(VitDiscriminatorConfig {
                input_dims: base.patch_dims,
                ..VitDiscriminatorConfig::default()
            }),
            (d, _) => d.clone(),
        };
        cfg
    }
}

/// The reduced configuration trained by `--toy`.
pub fn toy_config(seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: 2,
        seed,
        patch_dims: [16, 16, 16],
        steps_per_epoch: Some(6),
        checkpoint_every: 1,
        generator: GeneratorConfig {
            levels: 3,
            base_channels: 4,
            ..GeneratorConfig::default()
        },
        discriminator: DiscriminatorConfig::Patch(PatchDiscriminatorConfig {
            channels: vec![4, 1],
            strides: vec![2, 1],
            ..PatchDiscriminatorConfig::default()
        }),
        ..TrainConfig::default()
    }
}

fn toy_dataset(dir: &Path, seed: u64) -> Result<()> {
    let raw = dir.join("synth");
    super::synth::run(
        super::synth::SynthArgs {
            count: 8,
            dims: [32, 32, 32],
            depth: 2,
            seed,
            out: raw.clone(),
            spec: None,
            attempts: 100,
        },
        None,
    )?;
    let spec = raw.join("corruption.json");
    fs::write(&spec, r#"{"breakage_count": 1}"#)?;
    super::corrupt::run(
        super::corrupt::CorruptArgs {
            input: raw,
            spec: Some(spec),
            seed,
            out: dir.to_path_buf(),
            attempts: 100,
        },
        None,
    )
}

/// Refines and scores `cases` with a trained generator.
pub fn score_cases(model: &RefineModel, cases: &[TrainCase], cfg: &RefineConfig) -> Result<Vec<EvalRow>> {
    cases
        .iter()
        .map(|c| {
            let refined = refine_case(model, &c.ct, &c.prelim, cfg).with_context(|| format!("case {}", c.id))?;
            let m = evaluate(&refined, &c.gt).with_context(|| format!("case {}", c.id))?;
            Ok(EvalRow::new(c.id.clone(), &m))
        })
        .collect()
}

pub fn run(a: AblateArgs, manifest: Option<PathBuf>) -> Result<()> {
    let Preset::Table4 = a.preset;
    let mut run = RunManifest::start("ablate", Some(a.seed));
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let data = match &a.data {
        Some(d) => d.clone(),
        None => {
            let d = a.out.join("data");
            toy_dataset(&d, a.seed)?;
            d
        }
    };
    run.input(&data)?;
    let mut base = match &a.config {
        Some(p) => {
            run.input(p)?;
            read_json::<TrainConfig>(p)?
        }
        None if a.toy => toy_config(a.seed),
        None => TrainConfig::default(),
    };
    base.seed = a.seed;
    if let Some(e) = a.epochs {
        base.epochs = e;
    }
    if a.steps_per_epoch.is_some() {
        base.steps_per_epoch = a.steps_per_epoch;
    }

    let cases = load_train_cases(&data)?;
    let holdout = a.holdout.unwrap_or(if a.toy { 2 } else { 10 });
    if holdout == 0 || holdout >= cases.len() {
        return Err(invalid(format!("--holdout {holdout} must leave training and test cases out of {}", cases.len())));
    }
    let (train_cases, test_cases) = cases.split_at(cases.len() - holdout);

    let configs: Vec<(Variant, TrainConfig)> = TABLE4.iter().map(|v| (*v, v.apply(&base))).collect();
    for (_, cfg) in &configs {
        cfg.validate()?;
    }
    let mut rows = Vec::new();
    for (v, cfg) in &configs {
        let dir = a.out.join("runs").join(v.slug());
        eprintln!("ablate: training {}", v.name);
        let outcome = train_with(train_cases, cfg, &dir, None, |_| {})?;
        let model = RefineModel {
            generator: outcome.state.generator.clone(),
            params: outcome.state.g_params.clone(),
        };
        let rcfg = RefineConfig {
            patch_dims: cfg.patch(),
            ..RefineConfig::default()
        };
        let scored = score_cases(&model, test_cases, &rcfg)?;
        let eval_path = dir.join("eval.csv");
        save_rows(&eval_path, &scored)?;
        run.output(eval_path);
        run.output(outcome.final_checkpoint);
        let means = std::array::from_fn(|k| mean_std(&scored.iter().map(|r| r.values()[k]).collect::<Vec<_>>()).0);
        rows.push(AblationRow::new(v.name, means));
    }
    let table = a.out.join(ABLATION_FILE);
    save_rows(&table, &rows)?;
    run.output(&table);
    run.config(&json!({
        "preset": "table4",
        "toy": a.toy,
        "holdout": holdout,
        "configs": configs.iter().map(|(v, c)| json!({ "name": v.name, "variant": v, "train": c })).collect::<Vec<_>>(),
    }))?;
    run.finish(&manifest.unwrap_or_else(|| a.out.join(MANIFEST_FILE)))?;
    for r in &rows {
        println!("{:<32} dlr {:.3}  dbr {:.3}  dice {:.3}", r.config, r.dlr, r.dbr, r.dice);
    }
    println!("wrote {}", table.display());
    Ok(())
}
