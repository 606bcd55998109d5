//! Adversarial training: each step updates the discriminator on the current
//! generator output, then updates the generator against the refreshed
//! discriminator.

mod adam;

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::RngExt;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Checkpoint, Graph, ParamStore, Tensor};
use crate::dataset::TrainCase;
use crate::error::{Error, Result};
use crate::losses::{
    disc_accuracy, discriminator_loss, generator_adversarial_loss, layer_loss, target_pyramid, to_unit, total_loss,
    LossWeights,
};
use crate::nets::{
    batch_tensor, prepare_disc_input, Discriminator, DiscriminatorConfig, Generator, GeneratorConfig,
    DISC_DILATE_RADIUS,
};
use crate::rng::{substream, Purpose};
use crate::volume::{Axis, Dims, Volume3};

pub use adam::Adam;

pub const LOG_FILE: &str = "log.csv";
pub const RESOLVED_CONFIG_FILE: &str = "config.resolved.json";
pub const FINAL_CHECKPOINT: &str = "ckpt_final.bin";
/// Consecutive near-perfect discriminator steps before the balance guard
/// pauses discriminator updates.
pub const GUARD_STEPS: usize = 50;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub g_lr: f64,
    /// Epochs at which the generator learning rate is multiplied by
    /// `lr_decay`.
    pub decay_epochs: Vec<usize>,
    pub lr_decay: f64,
    pub d_lr: f64,
    pub g_betas: [f64; 2],
    pub d_betas: [f64; 2],
    pub batch_size: usize,
    pub flip_prob: f64,
    pub seed: u64,
    /// Training crop `[x, y, z]`.
    pub patch_dims: [usize; 3],
    /// Optimizer steps per epoch; by default one pass over the cases.
    pub steps_per_epoch: Option<usize>,
    pub checkpoint_every: usize,
    pub balance_guard: bool,
    pub disc_dilate_radius: usize,
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    pub loss: LossWeights,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 150,
            g_lr: 1e-3,
            decay_epochs: vec![50, 80, 100, 120],
            lr_decay: 0.5,
            d_lr: 1e-3,
            g_betas: [0.9, 0.999],
            d_betas: [0.5, 0.999],
            batch_size: 2,
            flip_prob: 0.5,
            seed: 0,
            patch_dims: [24, 24, 24],
            steps_per_epoch: None,
            checkpoint_every: 10,
            balance_guard: false,
            disc_dilate_radius: DISC_DILATE_RADIUS,
            generator: GeneratorConfig::default(),
            discriminator: DiscriminatorConfig::default(),
            loss: LossWeights::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.decay_epochs.windows(2).any(|w| w[0] >= w[1]) {
            return bad(format!("decay epochs {:?} are not strictly increasing", self.decay_epochs));
        }
        for (name, lr) in [("g_lr", self.g_lr), ("d_lr", self.d_lr)] {
            if !(lr > 0.0 && lr.is_finite()) {
                return bad(format!("{name} {lr} must be positive"));
            }
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad(format!("lr_decay {} outside (0, 1]", self.lr_decay));
        }
        for b in self.g_betas.iter().chain(&self.d_betas) {
            if !(0.0..1.0).contains(b) {
                return bad(format!("Adam beta {b} outside [0, 1)"));
            }
        }
        if self.batch_size == 0 || self.checkpoint_every == 0 || self.steps_per_epoch == Some(0) {
            return bad("batch_size, checkpoint_every and steps_per_epoch must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return bad(format!("flip_prob {} outside [0, 1]", self.flip_prob));
        }
        self.generator.validate()?;
        let div = self.generator.divisor();
        if let Some(n) = self.patch_dims.iter().find(|&&n| n == 0 || n % div != 0) {
            return bad(format!("patch extent {n} is not a multiple of the generator divisor {div}"));
        }
        if self.generator.in_channels != 2 {
            return bad("the generator takes two channels (image, preliminary mask)".into());
        }
        if let DiscriminatorConfig::Vit(v) = &self.discriminator {
            if v.input_dims != self.patch_dims {
                return bad(format!("ViT input {:?} differs from the patch {:?}", v.input_dims, self.patch_dims));
            }
        }
        self.loss.validate()
    }

    pub fn patch(&self) -> Dims {
        self.patch_dims.into()
    }
}

/// Generator learning rate for `epoch` (0-based): `g_lr` times `lr_decay`
/// for each decay epoch already reached.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> f64 {
    let n = cfg.decay_epochs.iter().filter(|&&e| e <= epoch).count();
    cfg.g_lr * cfg.lr_decay.powi(n as i32)
}

/// Aligned `[B, 1, Z, Y, X]` training tensors.
#[derive(Clone, Debug)]
pub struct Batch {
    pub ct: Tensor<f32>,
    pub prelim: Tensor<f32>,
    pub gt: Tensor<f32>,
    pub centreline: Tensor<f32>,
}

impl Batch {
    /// Crops every case at one origin, stacking `[ct, prelim, gt, centreline]`.
    pub fn from_volumes(items: &[[Volume3; 4]]) -> Result<Self> {
        let channel = |k: usize| batch_tensor(&items.iter().map(|c| vec![&c[k]]).collect::<Vec<_>>());
        Ok(Self {
            ct: channel(0)?,
            prelim: channel(1)?,
            gt: channel(2)?,
            centreline: channel(3)?,
        })
    }
}

/// Phases of one step, in the order they ran.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepEvent {
    GeneratorForward,
    DiscriminatorLoss,
    DiscriminatorUpdate,
    GeneratorLoss,
    GeneratorUpdate,
}

#[derive(Clone, Debug)]
pub struct StepReport {
    pub events: Vec<StepEvent>,
    /// Weighted multi-layer generator objective.
    pub g_total: f64,
    /// Final-layer terms, unweighted.
    pub l1: f64,
    pub ccf: f64,
    pub ld: f64,
    /// Generator adversarial term, 0 when `delta` is 0.
    pub adv: f64,
    pub d_loss: f64,
    pub d_acc: f64,
    pub d_updated: bool,
}

/// Networks, parameters and optimizers, plus the position in training.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub generator: Generator,
    pub g_params: ParamStore<f32>,
    pub g_opt: Adam,
    pub disc: Discriminator,
    pub d_params: ParamStore<f32>,
    pub d_opt: Adam,
    /// Next epoch to run.
    pub epoch: usize,
    /// Steps taken so far.
    pub step: usize,
    /// Consecutive steps with discriminator accuracy above 0.99.
    pub guard_streak: usize,
    pub last_checkpoint: Option<PathBuf>,
}

impl TrainState {
    pub fn new(cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let (generator, g_params) = Generator::new(cfg.generator.clone(), cfg.seed)?;
        let (disc, d_params) = Discriminator::new(&cfg.discriminator, cfg.seed)?;
        Ok(Self {
            g_opt: Adam::new(&g_params, cfg.g_betas),
            d_opt: Adam::new(&d_params, cfg.d_betas),
            generator,
            g_params,
            disc,
            d_params,
            epoch: 0,
            step: 0,
            guard_streak: 0,
            last_checkpoint: None,
        })
    }

    pub fn to_checkpoint(&self, cfg: &TrainConfig) -> Checkpoint {
        let mut tensors = self.g_params.export("g.");
        tensors.extend(self.d_params.export("d."));
        tensors.extend(self.g_opt.export("opt.g."));
        tensors.extend(self.d_opt.export("opt.d."));
        let meta = serde_json::json!({
            "generator": cfg.generator,
            "discriminator": cfg.discriminator,
            "train": cfg,
            "epoch": self.epoch,
            "step": self.step,
            "g_adam_t": self.g_opt.t,
            "d_adam_t": self.d_opt.t,
            "guard_streak": self.guard_streak,
        });
        Checkpoint { tensors, meta }
    }

    /// Restores a state saved by [`TrainState::to_checkpoint`]. The
    /// networks in `cfg` must match the checkpoint.
    pub fn from_checkpoint(ckpt: &Checkpoint, cfg: &TrainConfig) -> Result<Self> {
        let mut s = Self::new(cfg)?;
        let field = |k: &str| {
            ckpt.meta
                .get(k)
                .and_then(serde_json::Value::as_u64)
                .ok_or_else(|| Error::Checkpoint(format!("metadata field {k} missing")))
        };
        let gen: GeneratorConfig = meta_config(ckpt, "generator")?;
        let disc: DiscriminatorConfig = meta_config(ckpt, "discriminator")?;
        if gen != cfg.generator || disc != cfg.discriminator {
            return Err(Error::Checkpoint("network configuration differs from the checkpoint".into()));
        }
        s.g_params.load_from(ckpt, "g.")?;
        s.d_params.load_from(ckpt, "d.")?;
        s.g_opt.load_from(ckpt, "opt.g.", field("g_adam_t")?)?;
        s.d_opt.load_from(ckpt, "opt.d.", field("d_adam_t")?)?;
        s.epoch = field("epoch")? as usize;
        s.step = field("step")? as usize;
        s.guard_streak = field("guard_streak")? as usize;
        Ok(s)
    }

    fn non_finite(&self) -> Error {
        Error::NonFiniteLoss {
            epoch: self.epoch,
            step: self.step,
            last_checkpoint: self
                .last_checkpoint
                .as_ref()
                .map_or_else(|| "none".to_string(), |p| p.display().to_string()),
        }
    }

    /// One discriminator update followed by one generator update.
    pub fn train_step(&mut self, batch: &Batch, cfg: &TrainConfig, g_lr: f64, d_lr: f64) -> Result<StepReport> {
        let w = &cfg.loss;
        let r = cfg.disc_dilate_radius;
        let mut events = Vec::with_capacity(5);

        let mut g = Graph::<f32>::new();
        let gp = self.g_params.bind(&mut g);
        let ct = g.constant(batch.ct.clone());
        let prelim = g.constant(batch.prelim.clone());
        let x = g.concat(&[ct, prelim], 1)?;
        let out = self.generator.forward(&mut g, &gp, x)?;
        events.push(StepEvent::GeneratorForward);

        let fake = g.value(out.output).map(|v| (v + 1.0) * 0.5);
        let mut dg = Graph::<f32>::new();
        let dp = self.d_params.bind(&mut dg);
        let d_ct = dg.constant(batch.ct.clone());
        let d_gt = dg.constant(batch.gt.clone());
        let d_fake = dg.constant(fake);
        let real_in = prepare_disc_input(&mut dg, d_ct, d_gt, r)?;
        let fake_in = prepare_disc_input(&mut dg, d_ct, d_fake, r)?;
        let real_logits = self.disc.forward(&mut dg, &dp, real_in)?;
        let fake_logits = self.disc.forward(&mut dg, &dp, fake_in)?;
        let d_loss_var = discriminator_loss(&mut dg, real_logits, fake_logits)?;
        let d_loss = f64::from(dg.value(d_loss_var).item());
        let d_acc = disc_accuracy(dg.value(real_logits), dg.value(fake_logits));
        events.push(StepEvent::DiscriminatorLoss);
        if !d_loss.is_finite() {
            return Err(self.non_finite());
        }
        self.guard_streak = if (d_acc - 1.0).abs() < 0.01 { self.guard_streak + 1 } else { 0 };
        let paused = cfg.balance_guard && self.guard_streak >= GUARD_STEPS;
        let d_updated = w.delta > 0.0 && !paused;
        if d_updated {
            dg.backward(d_loss_var)?;
            self.d_opt.step(&mut self.d_params, &dp.grads(&dg), d_lr)?;
            events.push(StepEvent::DiscriminatorUpdate);
        }
        drop(dg);

        let levels = cfg.generator.levels;
        let gts = target_pyramid(&batch.gt, levels)?;
        let cls = target_pyramid(&batch.centreline, levels)?;
        let adv = if w.delta > 0.0 {
            let dp = self.d_params.bind_frozen(&mut g);
            let p = to_unit(&mut g, out.output);
            let fin = prepare_disc_input(&mut g, ct, p, r)?;
            let logits = self.disc.forward(&mut g, &dp, fin)?;
            Some(generator_adversarial_loss(&mut g, logits)?)
        } else {
            None
        };
        let gt0 = g.constant(gts[0].clone());
        let cl0 = g.constant(cls[0].clone());
        let last = layer_loss(&mut g, out.output, gt0, cl0, adv, w)?;
        let mut layers = Vec::with_capacity(levels);
        if w.multi_scale {
            for (i, &a) in out.aux.iter().enumerate().rev() {
                let gt = g.constant(gts[i + 1].clone());
                let cl = g.constant(cls[i + 1].clone());
                layers.push(layer_loss(&mut g, a, gt, cl, None, w)?.total);
            }
        }
        layers.push(last.total);
        let total = total_loss(&mut g, &layers, w)?;
        events.push(StepEvent::GeneratorLoss);
        let scalar = |v| f64::from(g.value(v).item());
        let g_total = scalar(total);
        if !g_total.is_finite() {
            return Err(self.non_finite());
        }
        let report = StepReport {
            g_total,
            l1: scalar(last.l1),
            ccf: scalar(last.ccf),
            ld: scalar(last.ld),
            adv: adv.map_or(0.0, scalar),
            d_loss,
            d_acc,
            d_updated,
            events: Vec::new(),
        };
        g.backward(total)?;
        self.g_opt.step(&mut self.g_params, &gp.grads(&g), g_lr)?;
        events.push(StepEvent::GeneratorUpdate);
        self.step += 1;
        Ok(StepReport { events, ..report })
    }
}

fn meta_config<T: serde::de::DeserializeOwned>(ckpt: &Checkpoint, key: &str) -> Result<T> {
    let v = ckpt
        .meta
        .get(key)
        .ok_or_else(|| Error::Checkpoint(format!("metadata field {key} missing")))?;
    serde_json::from_value(v.clone()).map_err(|e| Error::Checkpoint(format!("metadata field {key}: {e}")))
}

/// Generator configuration recorded in a checkpoint.
pub fn checkpoint_generator(ckpt: &Checkpoint) -> Result<GeneratorConfig> {
    meta_config(ckpt, "generator")
}

/// Crops `[ct, prelim, gt, centreline]` around a random centreline voxel of
/// `case`, then flips x and y independently with probability `flip_prob`.
pub fn sample_patch(case: &TrainCase, patch: Dims, flip_prob: f64, rng: &mut ChaCha8Rng) -> Result<[Volume3; 4]> {
    let d = case.ct.dims();
    let (dv, pv) = (d.as_array(), patch.as_array());
    if (0..3).any(|k| pv[k] > dv[k]) {
        return Err(Error::case(
            &case.id,
            Error::InvalidArgument(format!("volume {d} is smaller than the patch {patch}")),
        ));
    }
    let fg: Vec<usize> = case.centreline.foreground().collect();
    let c = fg[rng.random_range(0..fg.len())];
    let centre = [c % d.nx, (c / d.nx) % d.ny, c / (d.nx * d.ny)];
    let origin: [usize; 3] = std::array::from_fn(|k| centre[k].saturating_sub(pv[k] / 2).min(dv[k] - pv[k]));
    let flip_x = rng.random_bool(flip_prob);
    let flip_y = rng.random_bool(flip_prob);
    let vols = [
        case.ct.clone(),
        case.prelim.to_volume(),
        case.gt.to_volume(),
        case.centreline.to_volume(),
    ];
    let mut out = Vec::with_capacity(4);
    for v in vols {
        let mut v = v.crop(origin, patch)?;
        if flip_x {
            v = v.flip(Axis::X)?;
        }
        if flip_y {
            v = v.flip(Axis::Y)?;
        }
        out.push(v);
    }
    Ok(out.try_into().expect("four volumes"))
}

/// Per-epoch means of the step reports.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub steps: usize,
    pub g_lr: f64,
    pub d_lr: f64,
    pub g_total: f64,
    pub g_l1: f64,
    pub g_ccf: f64,
    pub g_ld: f64,
    pub g_adv: f64,
    pub d_loss: f64,
    pub d_acc: f64,
    pub d_updates: usize,
}

/// Runs epoch `state.epoch` over `cases`.
pub fn run_epoch(state: &mut TrainState, cases: &[TrainCase], cfg: &TrainConfig) -> Result<EpochLog> {
    let epoch = state.epoch;
    let key = epoch as u64;
    let mut order: Vec<usize> = (0..cases.len()).collect();
    order.shuffle(&mut substream(cfg.seed, Purpose::Shuffle, key));
    let mut aug = substream(cfg.seed, Purpose::Augment, key);
    let batch = cfg.batch_size.min(cases.len());
    let steps = cfg.steps_per_epoch.unwrap_or(cases.len() / batch);
    let g_lr = lr_at(epoch, cfg);
    let mut sums = [0f64; 7];
    let mut d_updates = 0;
    for s in 0..steps {
        let items = (0..batch)
            .map(|b| sample_patch(&cases[order[(s * batch + b) % order.len()]], cfg.patch(), cfg.flip_prob, &mut aug))
            .collect::<Result<Vec<_>>>()?;
        let r = state.train_step(&Batch::from_volumes(&items)?, cfg, g_lr, cfg.d_lr)?;
        for (acc, v) in sums.iter_mut().zip([r.g_total, r.l1, r.ccf, r.ld, r.adv, r.d_loss, r.d_acc]) {
            *acc += v;
        }
        d_updates += usize::from(r.d_updated);
    }
    let m = sums.map(|v| v / steps as f64);
    state.epoch += 1;
    Ok(EpochLog {
        epoch,
        steps,
        g_lr,
        d_lr: cfg.d_lr,
        g_total: m[0],
        g_l1: m[1],
        g_ccf: m[2],
        g_ld: m[3],
        g_adv: m[4],
        d_loss: m[5],
        d_acc: m[6],
        d_updates,
    })
}

pub fn checkpoint_name(epoch: usize) -> String {
    format!("ckpt_{epoch:04}.bin")
}

/// Writes `rows` as CSV after a `# schema=1` line.
pub fn write_log(path: &Path, rows: &[EpochLog]) -> Result<()> {
    let mut w = csv::Writer::from_writer(b"# schema=1\n".to_vec());
    for r in rows {
        w.serialize(r).map_err(|e| csv_error(path, e))?;
    }
    let bytes = w.into_inner().map_err(|e| csv_error(path, e.into_error().into()))?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_log(path: &Path) -> Result<Vec<EpochLog>> {
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| csv_error(path, e))).collect()
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        detail: e.to_string(),
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub log: Vec<EpochLog>,
    pub final_checkpoint: PathBuf,
    pub state: TrainState,
}

/// Trains on `cases`, writing `log.csv`, `config.resolved.json` and
/// checkpoints into `out`. With `resume`, continues from that checkpoint and
/// keeps the rows of earlier epochs already in `out/log.csv`.
pub fn train(cases: &[TrainCase], cfg: &TrainConfig, out: &Path, resume: Option<&Path>) -> Result<TrainOutcome> {
    train_with(cases, cfg, out, resume, |_| {})
}

/// [`train`], calling `on_epoch` after each finished epoch.
pub fn train_with(
    cases: &[TrainCase],
    cfg: &TrainConfig,
    out: &Path,
    resume: Option<&Path>,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if cases.is_empty() {
        return Err(Error::InvalidArgument("no training cases".into()));
    }
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let resolved = out.join(RESOLVED_CONFIG_FILE);
    let text = serde_json::to_string_pretty(cfg).map_err(|e| Error::json(&resolved, e))?;
    fs::write(&resolved, text).map_err(|e| Error::io(&resolved, e))?;

    let log_path = out.join(LOG_FILE);
    let (mut state, mut log) = match resume {
        Some(p) => {
            let mut s = TrainState::from_checkpoint(&Checkpoint::load(p)?, cfg)?;
            s.last_checkpoint = Some(p.to_path_buf());
            let mut rows = if log_path.exists() { read_log(&log_path)? } else { Vec::new() };
            rows.retain(|r| r.epoch < s.epoch);
            (s, rows)
        }
        None => (TrainState::new(cfg)?, Vec::new()),
    };
    while state.epoch < cfg.epochs {
        log.push(run_epoch(&mut state, cases, cfg)?);
        on_epoch(log.last().expect("just pushed"));
        write_log(&log_path, &log)?;
        if state.epoch % cfg.checkpoint_every == 0 || state.epoch == cfg.epochs {
            let path = out.join(checkpoint_name(state.epoch));
            state.to_checkpoint(cfg).save(&path)?;
            state.last_checkpoint = Some(path);
        }
    }
    let final_checkpoint = out.join(FINAL_CHECKPOINT);
    state.to_checkpoint(cfg).save(&final_checkpoint)?;
    Ok(TrainOutcome {
        log,
        final_checkpoint,
        state,
    })
}
