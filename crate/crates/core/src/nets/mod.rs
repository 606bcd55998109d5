//! The refinement generator and the two discriminators.
//!
//! Networks hold only their topology and [`ParamId`]s. Values live in a
//! separate [`ParamStore`], so one network can run in `f32` for training and
//! in `f64` for gradient checks.

mod generator;
mod patch;
mod vit;

use rand::RngExt;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Bound, Element, Graph, ParamId, ParamStore, Tensor, Var};
use crate::error::{Error, Result};
use crate::volume::{Dims, Volume3};

pub use generator::{Generator, GeneratorConfig, GeneratorOutput};
pub use patch::{PatchDiscriminator, PatchDiscriminatorConfig};
pub use vit::{VitDiscriminator, VitDiscriminatorConfig};

/// Leaky-ReLU slope used throughout.
pub const NEGATIVE_SLOPE: f64 = 0.2;
/// Chebyshev radius of the label dilation applied before discrimination.
pub const DISC_DILATE_RADIUS: usize = 2;
const NORM_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug)]
struct Conv {
    w: ParamId,
    b: Option<ParamId>,
    stride: usize,
    pad: usize,
}

impl Conv {
    fn apply<T: Element>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        g.conv3d(x, p[self.w], self.b.map(|b| p[b]), self.stride, self.pad)
    }
}

#[derive(Clone, Copy, Debug)]
struct Affine {
    gamma: ParamId,
    beta: ParamId,
}

#[derive(Clone, Copy, Debug)]
struct Linear {
    w: ParamId,
    b: ParamId,
}

impl Linear {
    fn apply<T: Element>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        g.linear(x, p[self.w], Some(p[self.b]))
    }
}

/// Fills a [`ParamStore`] with fan-in-scaled uniform weights.
struct Init<'a> {
    rng: ChaCha8Rng,
    store: &'a mut ParamStore<f32>,
}

impl<'a> Init<'a> {
    fn new(rng: ChaCha8Rng, store: &'a mut ParamStore<f32>) -> Self {
        Self { rng, store }
    }

    fn uniform(&mut self, name: String, shape: &[usize], bound: f32) -> ParamId {
        let rng = &mut self.rng;
        let t = Tensor::from_fn(shape, |_| rng.random_range(-bound..bound));
        self.store.add(name, t)
    }

    fn constant(&mut self, name: String, shape: &[usize], value: f32) -> ParamId {
        self.store.add(name, Tensor::full(shape, value))
    }

    #[allow(clippy::too_many_arguments)]
    fn conv(&mut self, name: &str, ci: usize, co: usize, k: usize, bias: bool, stride: usize, pad: usize) -> Conv {
        let bound = 1.0 / ((ci * k * k * k) as f32).sqrt();
        let w = self.uniform(format!("{name}.w"), &[co, ci, k, k, k], bound);
        let b = bias.then(|| self.uniform(format!("{name}.b"), &[co], bound));
        Conv { w, b, stride, pad }
    }

    fn affine(&mut self, name: &str, n: usize) -> Affine {
        Affine {
            gamma: self.constant(format!("{name}.gamma"), &[n], 1.0),
            beta: self.constant(format!("{name}.beta"), &[n], 0.0),
        }
    }

    fn linear(&mut self, name: &str, input: usize, output: usize) -> Linear {
        let bound = 1.0 / (input as f32).sqrt();
        Linear {
            w: self.uniform(format!("{name}.w"), &[output, input], bound),
            b: self.uniform(format!("{name}.b"), &[output], bound),
        }
    }
}

/// Either discriminator, chosen by [`DiscriminatorConfig`].
#[derive(Clone, Debug)]
pub enum Discriminator {
    Patch(PatchDiscriminator),
    Vit(VitDiscriminator),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DiscriminatorConfig {
    Patch(PatchDiscriminatorConfig),
    Vit(VitDiscriminatorConfig),
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self::Patch(PatchDiscriminatorConfig::default())
    }
}

impl Discriminator {
    pub fn new(cfg: &DiscriminatorConfig, seed: u64) -> Result<(Self, ParamStore<f32>)> {
        Ok(match cfg {
            DiscriminatorConfig::Patch(c) => {
                let (d, p) = PatchDiscriminator::new(c.clone(), seed)?;
                (Self::Patch(d), p)
            }
            DiscriminatorConfig::Vit(c) => {
                let (d, p) = VitDiscriminator::new(c.clone(), seed)?;
                (Self::Vit(d), p)
            }
        })
    }

    /// Real/fake logits: a score map for the patch critic, `[B, 1]` for ViT.
    pub fn forward<T: Element>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        match self {
            Self::Patch(d) => d.forward(g, p, x),
            Self::Vit(d) => d.forward(g, p, x),
        }
    }
}

/// Dilates the soft `label` with a `(2r+1)³` max-pool and masks `ct` with it.
/// Both inputs are `[B, 1, Z, Y, X]`.
pub fn prepare_disc_input<T: Element>(g: &mut Graph<T>, ct: Var, label: Var, radius: usize) -> Result<Var> {
    if g.shape(ct) != g.shape(label) {
        return Err(Error::shape(
            "prepare_disc_input",
            format!("ct {:?} vs label {:?}", g.shape(ct), g.shape(label)),
        ));
    }
    let dilated = g.max_pool3d(label, 2 * radius + 1, 1, radius)?;
    g.mul(dilated, ct)
}

/// Stacks `items[b][c]` into a `[B, C, Z, Y, X]` tensor.
pub fn batch_tensor<T: Element>(items: &[Vec<&Volume3>]) -> Result<Tensor<T>> {
    let first = items
        .first()
        .and_then(|c| c.first())
        .ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
    let d = first.dims();
    let channels = items[0].len();
    let mut data = Vec::with_capacity(items.len() * channels * d.len());
    for case in items {
        if case.len() != channels {
            return Err(Error::shape("batch_tensor", format!("{} channels, expected {channels}", case.len())));
        }
        for v in case {
            if v.dims() != d {
                return Err(Error::shape("batch_tensor", format!("volume {} vs {d}", v.dims())));
            }
            data.extend(v.data().iter().map(|&x| T::of(x as f64)));
        }
    }
    Tensor::new(&[items.len(), channels, d.nz, d.ny, d.nx], data)
}

/// One `[Z, Y, X]` plane of a `[B, C, Z, Y, X]` tensor as a volume.
pub fn tensor_volume<T: Element>(t: &Tensor<T>, batch: usize, channel: usize) -> Result<Volume3> {
    let s = t.shape();
    if s.len() != 5 || batch >= s[0] || channel >= s[1] {
        return Err(Error::shape("tensor_volume", format!("({batch}, {channel}) of {s:?}")));
    }
    let d = Dims::new(s[4], s[3], s[2]);
    let start = (batch * s[1] + channel) * d.len();
    let data = t.data()[start..start + d.len()].iter().map(|v| v.as_f64() as f32).collect();
    Volume3::from_vec(d, data)
}
