//! Differentiable training objectives.
//!
//! Predictions reach every loss in `[0, 1]`: generator outputs are mapped
//! with `(tanh + 1) / 2` by [`to_unit`] first.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Bound, Element, Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::nets::Discriminator;

/// Smoothing added to both sides of every Dice-style ratio.
pub const EPS: f64 = 1e-6;

/// Weights of the per-layer and multi-layer objectives.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    /// clDice share of the Dice term, in `[0, 0.5]`.
    pub alpha_cl: f64,
    /// L1 weight.
    pub alpha: f64,
    /// Centreline-continuity weight.
    pub beta: f64,
    /// Dice/clDice weight.
    pub gamma: f64,
    /// Adversarial weight, final layer only.
    pub delta: f64,
    /// Layer weights, coarsest auxiliary output first, final output last.
    pub phi: [f64; 4],
    /// Soft-skeleton iterations.
    pub cl_iters: usize,
    /// Supervise the auxiliary outputs too.
    pub multi_scale: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha_cl: 0.5,
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.0,
            delta: 0.1,
            phi: [0.25, 0.5, 0.75, 1.0],
            cl_iters: 5,
            multi_scale: true,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=0.5).contains(&self.alpha_cl) {
            return Err(Error::InvalidArgument(format!("alpha_cl {} outside [0, 0.5]", self.alpha_cl)));
        }
        let named = [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma), ("delta", self.delta)];
        let phis = self.phi.iter().enumerate().map(|(i, &p)| (["phi1", "phi2", "phi3", "phi4"][i], p));
        for (name, w) in named.into_iter().chain(phis) {
            if !(0.0..=1.0).contains(&w) {
                return Err(Error::InvalidArgument(format!("{name} {w} outside [0, 1]")));
            }
        }
        Ok(())
    }

    /// Layer weight for each of `n` layers ordered coarsest first, final last.
    pub fn layer_weights(&self, n: usize) -> Result<Vec<f64>> {
        if n == 0 || n > self.phi.len() {
            return Err(Error::InvalidArgument(format!("{n} supervised layers, at most {} weights", self.phi.len())));
        }
        Ok(self.phi[self.phi.len() - n..].to_vec())
    }
}

/// `(x + 1) / 2`, mapping `tanh` outputs onto `[0, 1]`.
pub fn to_unit<T: Element>(g: &mut Graph<T>, x: Var) -> Var {
    let y = g.add_scalar(x, 1.0);
    g.mul_scalar(y, 0.5)
}

fn same_shape<T: Element>(g: &Graph<T>, op: &'static str, a: Var, b: Var) -> Result<()> {
    if g.shape(a) != g.shape(b) {
        return Err(Error::shape(op, format!("{:?} vs {:?}", g.shape(a), g.shape(b))));
    }
    Ok(())
}

/// `1 - (2 Σ p g + ε) / (Σ p² + Σ g² + ε)`.
pub fn soft_dice<T: Element>(g: &mut Graph<T>, pred: Var, gt: Var) -> Result<Var> {
    same_shape(g, "soft_dice", pred, gt)?;
    let pg = g.mul(pred, gt)?;
    let inter = g.sum(pg);
    let num = g.mul_scalar(inter, 2.0);
    let num = g.add_scalar(num, EPS);
    let p2 = g.square(pred);
    let p2 = g.sum(p2);
    let g2 = g.square(gt);
    let g2 = g.sum(g2);
    let den = g.add(p2, g2)?;
    let den = g.add_scalar(den, EPS);
    let dice = g.div(num, den)?;
    let neg = g.neg(dice);
    Ok(g.add_scalar(neg, 1.0))
}

fn soft_erode<T: Element>(g: &mut Graph<T>, x: Var) -> Result<Var> {
    g.min_pool3d(x, 3, 1, 1)
}

fn soft_open<T: Element>(g: &mut Graph<T>, x: Var) -> Result<Var> {
    let e = soft_erode(g, x)?;
    g.max_pool3d(e, 3, 1, 1)
}

/// Differentiable skeleton from `iters` rounds of erosion, each adding
/// what an opening removes.
pub fn soft_skeleton<T: Element>(g: &mut Graph<T>, x: Var, iters: usize) -> Result<Var> {
    let opened = soft_open(g, x)?;
    let d = g.sub(x, opened)?;
    let mut skel = g.relu(d);
    let mut img = x;
    for _ in 0..iters {
        img = soft_erode(g, img)?;
        let opened = soft_open(g, img)?;
        let d = g.sub(img, opened)?;
        let delta = g.relu(d);
        let overlap = g.mul(skel, delta)?;
        let fresh = g.sub(delta, overlap)?;
        let fresh = g.relu(fresh);
        skel = g.add(skel, fresh)?;
    }
    Ok(skel)
}

/// `(Σ s·m + ε) / (Σ s + ε)`.
fn covered<T: Element>(g: &mut Graph<T>, skel: Var, m: Var) -> Result<Var> {
    let sm = g.mul(skel, m)?;
    let num = g.sum(sm);
    let num = g.add_scalar(num, EPS);
    let den = g.sum(skel);
    let den = g.add_scalar(den, EPS);
    g.div(num, den)
}

/// `1 - clDice` with soft skeletons of both inputs.
pub fn soft_cl_dice<T: Element>(g: &mut Graph<T>, pred: Var, gt: Var, iters: usize) -> Result<Var> {
    same_shape(g, "soft_cl_dice", pred, gt)?;
    let sp = soft_skeleton(g, pred, iters)?;
    let sg = soft_skeleton(g, gt, iters)?;
    let tprec = covered(g, sp, gt)?;
    let tsens = covered(g, sg, pred)?;
    let prod = g.mul(tprec, tsens)?;
    let num = g.mul_scalar(prod, 2.0);
    let den = g.add(tprec, tsens)?;
    let cl = g.div(num, den)?;
    let neg = g.neg(cl);
    Ok(g.add_scalar(neg, 1.0))
}

/// `(1 - α) · soft_dice + α · soft_cl_dice`, with `α = alpha_cl`.
pub fn l_d<T: Element>(g: &mut Graph<T>, pred: Var, gt: Var, alpha_cl: f64, iters: usize) -> Result<Var> {
    if !(0.0..=0.5).contains(&alpha_cl) {
        return Err(Error::InvalidArgument(format!("alpha_cl {alpha_cl} outside [0, 0.5]")));
    }
    let dice = soft_dice(g, pred, gt)?;
    if alpha_cl == 0.0 {
        return Ok(dice);
    }
    let cl = soft_cl_dice(g, pred, gt, iters)?;
    let a = g.mul_scalar(dice, 1.0 - alpha_cl);
    let b = g.mul_scalar(cl, alpha_cl);
    g.add(a, b)
}

/// `1 - Σ pred·cl / Σ cl`: the uncovered share of the centreline.
pub fn l_ccf<T: Element>(g: &mut Graph<T>, pred: Var, centreline: Var) -> Result<Var> {
    same_shape(g, "l_ccf", pred, centreline)?;
    let total = g.value(centreline).sum();
    if total <= T::zero() {
        return Err(Error::Domain("centreline mask is empty".into()));
    }
    let pc = g.mul(pred, centreline)?;
    let hit = g.sum(pc);
    let frac = g.mul_scalar(hit, 1.0 / total.as_f64());
    let neg = g.neg(frac);
    Ok(g.add_scalar(neg, 1.0))
}

/// The weighted terms of one supervised layer.
#[derive(Clone, Copy, Debug)]
pub struct LayerLoss {
    pub total: Var,
    pub l1: Var,
    pub ccf: Var,
    pub ld: Var,
}

/// `α L1 + β L_CCF + γ L_D (+ δ · adversarial)`; `out` is the raw `tanh`
/// output, `gt` and `centreline` are binary at the same resolution.
pub fn layer_loss<T: Element>(
    g: &mut Graph<T>,
    out: Var,
    gt: Var,
    centreline: Var,
    adversarial: Option<Var>,
    w: &LossWeights,
) -> Result<LayerLoss> {
    let p = to_unit(g, out);
    let l1 = g.l1(p, gt)?;
    let ccf = l_ccf(g, p, centreline)?;
    let ld = l_d(g, p, gt, w.alpha_cl, w.cl_iters)?;
    let a = g.mul_scalar(l1, w.alpha);
    let b = g.mul_scalar(ccf, w.beta);
    let c = g.mul_scalar(ld, w.gamma);
    let ab = g.add(a, b)?;
    let mut total = g.add(ab, c)?;
    if let Some(adv) = adversarial {
        let d = g.mul_scalar(adv, w.delta);
        total = g.add(total, d)?;
    }
    Ok(LayerLoss { total, l1, ccf, ld })
}

/// `Σ φ_j L_j` over layers ordered coarsest first, final last.
pub fn total_loss<T: Element>(g: &mut Graph<T>, layers: &[Var], w: &LossWeights) -> Result<Var> {
    let phi = w.layer_weights(layers.len())?;
    let mut acc: Option<Var> = None;
    for (&l, &p) in layers.iter().zip(&phi) {
        let term = g.mul_scalar(l, p);
        acc = Some(match acc {
            None => term,
            Some(a) => g.add(a, term)?,
        });
    }
    Ok(acc.expect("at least one layer"))
}

/// Discriminator loss on real and fake logits.
pub fn discriminator_loss<T: Element>(g: &mut Graph<T>, real: Var, fake: Var) -> Result<Var> {
    let ones = Tensor::ones(g.shape(real));
    let zeros = Tensor::zeros(g.shape(fake));
    let r = g.bce_with_logits(real, &ones)?;
    let f = g.bce_with_logits(fake, &zeros)?;
    g.add(r, f)
}

/// Non-saturating generator loss: fakes scored as real.
pub fn generator_adversarial_loss<T: Element>(g: &mut Graph<T>, fake: Var) -> Result<Var> {
    let ones = Tensor::ones(g.shape(fake));
    g.bce_with_logits(fake, &ones)
}

/// `(d_loss, g_loss)` for discriminator inputs built by
/// [`crate::nets::prepare_disc_input`]. The discriminator loss sees `fake`
/// detached.
pub fn adversarial_losses<T: Element>(
    g: &mut Graph<T>,
    disc: &Discriminator,
    params: &Bound,
    real: Var,
    fake: Var,
) -> Result<(Var, Var)> {
    let real_logits = disc.forward(g, params, real)?;
    let fixed = g.detach(fake);
    let fixed_logits = disc.forward(g, params, fixed)?;
    let d = discriminator_loss(g, real_logits, fixed_logits)?;
    let fake_logits = disc.forward(g, params, fake)?;
    let gl = generator_adversarial_loss(g, fake_logits)?;
    Ok((d, gl))
}

/// Share of real logits above 0 and fake logits below 0.
pub fn disc_accuracy<T: Element>(real: &Tensor<T>, fake: &Tensor<T>) -> f64 {
    let hits = real.data().iter().filter(|v| **v > T::zero()).count()
        + fake.data().iter().filter(|v| **v < T::zero()).count();
    hits as f64 / (real.len() + fake.len()) as f64
}

/// `levels` targets, full resolution first, each a 2× max-pool of the last.
pub fn target_pyramid<T: Element>(t: &Tensor<T>, levels: usize) -> Result<Vec<Tensor<T>>> {
    let mut out = vec![t.clone()];
    for _ in 1..levels {
        let mut g = Graph::new();
        let x = g.constant(out.last().expect("non-empty").clone());
        let y = g.max_pool3d(x, 2, 2, 0)?;
        out.push(g.value(y).clone());
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
