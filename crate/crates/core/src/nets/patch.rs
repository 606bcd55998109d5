use serde::{Deserialize, Serialize};

use crate::autodiff::{Bound, Element, Graph, ParamStore, Var};
use crate::error::{Error, Result};
use crate::rng::{substream, Purpose};

use super::{Affine, Conv, Init, NEGATIVE_SLOPE, NORM_EPS};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PatchDiscriminatorConfig {
    pub in_channels: usize,
    /// Output channels per conv layer; the last must be 1.
    pub channels: Vec<usize>,
    /// Stride per conv layer.
    pub strides: Vec<usize>,
    pub kernel: usize,
    pub padding: usize,
    /// Instance norm between the first and last layers.
    pub norm: bool,
}

impl Default for PatchDiscriminatorConfig {
    fn default() -> Self {
        Self {
            in_channels: 1,
            channels: vec![8, 16, 1],
            strides: vec![2, 2, 1],
            kernel: 4,
            padding: 1,
            norm: false,
        }
    }
}

impl PatchDiscriminatorConfig {
    /// Five layers, 64 to 512 channels.
    pub fn full() -> Self {
        Self {
            channels: vec![64, 128, 256, 512, 1],
            strides: vec![2, 2, 2, 1, 1],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() || self.channels.len() != self.strides.len() {
            return Err(Error::InvalidArgument(format!(
                "{} channel entries with {} strides",
                self.channels.len(),
                self.strides.len()
            )));
        }
        if self.channels.last() != Some(&1) {
            return Err(Error::InvalidArgument("last patch layer must emit one channel".into()));
        }
        if self.kernel == 0 || self.strides.contains(&0) || self.channels.contains(&0) || self.in_channels == 0 {
            return Err(Error::InvalidArgument("patch discriminator sizes must be positive".into()));
        }
        Ok(())
    }

    /// Input voxels per axis seen by one output score:
    /// `r <- r + (kernel - 1) * product of earlier strides`.
    pub fn receptive_field(&self) -> usize {
        let mut r = 1;
        let mut jump = 1;
        for &s in &self.strides {
            r += (self.kernel - 1) * jump;
            jump *= s;
        }
        r
    }

    /// Score-map extent for an input extent `n`.
    pub fn output_len(&self, n: usize) -> Option<usize> {
        self.strides.iter().try_fold(n, |n, &s| {
            (n + 2 * self.padding).checked_sub(self.kernel).map(|v| v / s + 1)
        })
    }
}

#[derive(Clone, Copy, Debug)]
struct Layer {
    conv: Conv,
    norm: Option<Affine>,
}

/// Fully convolutional critic emitting one logit per receptive-field patch.
#[derive(Clone, Debug)]
pub struct PatchDiscriminator {
    cfg: PatchDiscriminatorConfig,
    layers: Vec<Layer>,
}

impl PatchDiscriminator {
    pub fn new(cfg: PatchDiscriminatorConfig, seed: u64) -> Result<(Self, ParamStore<f32>)> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let mut init = Init::new(substream(seed, Purpose::Init, 1), &mut store);
        let n = cfg.channels.len();
        let mut ci = cfg.in_channels;
        let mut layers = Vec::with_capacity(n);
        for (i, (&co, &s)) in cfg.channels.iter().zip(&cfg.strides).enumerate() {
            let normed = cfg.norm && i > 0 && i + 1 < n;
            let conv = init.conv(&format!("d{i}"), ci, co, cfg.kernel, !normed, s, cfg.padding);
            let norm = normed.then(|| init.affine(&format!("d{i}.norm"), co));
            layers.push(Layer { conv, norm });
            ci = co;
        }
        Ok((Self { cfg, layers }, store))
    }

    pub fn config(&self) -> &PatchDiscriminatorConfig {
        &self.cfg
    }

    /// `x`: `[B, C, Z, Y, X]` with every spatial dim at least the receptive
    /// field. Returns `[B, 1, z', y', x']` logits.
    pub fn forward<T: Element>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        let s = g.shape(x).to_vec();
        let rf = self.cfg.receptive_field();
        if s.len() != 5 || s[1] != self.cfg.in_channels {
            return Err(Error::shape("patch_discriminator", format!("unexpected input {s:?}")));
        }
        for (axis, &n) in ["z", "y", "x"].iter().zip(&s[2..]) {
            if n < rf {
                return Err(Error::shape(
                    "patch_discriminator",
                    format!("axis {axis} has {n} voxels, below the receptive field {rf}"),
                ));
            }
        }
        let last = self.layers.len() - 1;
        let mut h = x;
        for (i, l) in self.layers.iter().enumerate() {
            h = l.conv.apply(g, p, h)?;
            if let Some(n) = l.norm {
                h = g.instance_norm(h, p[n.gamma], p[n.beta], NORM_EPS)?;
            }
            if i < last {
                h = g.leaky_relu(h, NEGATIVE_SLOPE);
            }
        }
        Ok(h)
    }
}
