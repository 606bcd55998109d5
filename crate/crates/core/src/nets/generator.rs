use serde::{Deserialize, Serialize};

use crate::autodiff::{Bound, Element, Graph, ParamStore, Var};
use crate::error::{Error, Result};
use crate::rng::{substream, Purpose};

use super::{Affine, Conv, Init, NEGATIVE_SLOPE, NORM_EPS};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    /// CT plus preliminary mask.
    pub in_channels: usize,
    /// Resolution levels including the bottleneck.
    pub levels: usize,
    /// Channels at full resolution; doubled per level.
    pub base_channels: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            in_channels: 2,
            levels: 4,
            base_channels: 8,
        }
    }
}

impl GeneratorConfig {
    pub fn full() -> Self {
        Self {
            base_channels: 32,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels < 2 {
            return Err(Error::InvalidArgument(format!("generator needs at least 2 levels, got {}", self.levels)));
        }
        if self.in_channels == 0 || self.base_channels == 0 {
            return Err(Error::InvalidArgument("generator channel counts must be positive".into()));
        }
        Ok(())
    }

    /// Every spatial dim must be a multiple of this.
    pub fn divisor(&self) -> usize {
        1 << (self.levels - 1)
    }

    fn channels(&self, level: usize) -> usize {
        self.base_channels << level
    }
}

#[derive(Clone, Copy, Debug)]
struct Block {
    c1: Conv,
    n1: Affine,
    c2: Conv,
    n2: Affine,
}

/// Multi-scale supervised 3-D U-Net with `tanh` heads.
#[derive(Clone, Debug)]
pub struct Generator {
    cfg: GeneratorConfig,
    encoder: Vec<Block>,
    up: Vec<Conv>,
    decoder: Vec<Block>,
    aux_heads: Vec<Conv>,
    head: Conv,
}

/// Generator outputs, all in `(-1, 1)`.
#[derive(Clone, Debug)]
pub struct GeneratorOutput {
    /// Full resolution, one channel.
    pub output: Var,
    /// `aux[i]` is at `1 / 2^(i+1)` resolution.
    pub aux: Vec<Var>,
}

fn block(init: &mut Init, name: &str, ci: usize, co: usize) -> Block {
    Block {
        c1: init.conv(&format!("{name}.conv1"), ci, co, 3, false, 1, 1),
        n1: init.affine(&format!("{name}.norm1"), co),
        c2: init.conv(&format!("{name}.conv2"), co, co, 3, false, 1, 1),
        n2: init.affine(&format!("{name}.norm2"), co),
    }
}

impl Block {
    fn apply<T: Element>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        let mut h = x;
        for (c, n) in [(self.c1, self.n1), (self.c2, self.n2)] {
            h = c.apply(g, p, h)?;
            h = g.instance_norm(h, p[n.gamma], p[n.beta], NORM_EPS)?;
            h = g.leaky_relu(h, NEGATIVE_SLOPE);
        }
        Ok(h)
    }
}

impl Generator {
    pub fn new(cfg: GeneratorConfig, seed: u64) -> Result<(Self, ParamStore<f32>)> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let mut init = Init::new(substream(seed, Purpose::Init, 0), &mut store);
        let l = cfg.levels;
        let encoder = (0..l)
            .map(|i| {
                let ci = if i == 0 { cfg.in_channels } else { cfg.channels(i - 1) };
                block(&mut init, &format!("enc{i}"), ci, cfg.channels(i))
            })
            .collect();
        let mut up = Vec::new();
        let mut decoder = Vec::new();
        for i in (0..l - 1).rev() {
            up.push(init.conv(&format!("up{i}"), cfg.channels(i + 1), cfg.channels(i), 3, true, 1, 1));
            decoder.push(block(&mut init, &format!("dec{i}"), 2 * cfg.channels(i), cfg.channels(i)));
        }
        let aux_heads = (1..l)
            .map(|i| init.conv(&format!("aux{i}"), cfg.channels(i), 1, 1, true, 1, 0))
            .collect();
        let head = init.conv("head", cfg.channels(0), 1, 1, true, 1, 0);
        Ok((
            Self {
                cfg,
                encoder,
                up,
                decoder,
                aux_heads,
                head,
            },
            store,
        ))
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.cfg
    }

    /// `x`: `[B, in_channels, Z, Y, X]`.
    pub fn forward<T: Element>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<GeneratorOutput> {
        let s = g.shape(x).to_vec();
        if s.len() != 5 || s[1] != self.cfg.in_channels {
            return Err(Error::shape(
                "generator",
                format!("expected [B, {}, Z, Y, X], got {s:?}", self.cfg.in_channels),
            ));
        }
        let div = self.cfg.divisor();
        for (axis, &n) in ["z", "y", "x"].iter().zip(&s[2..]) {
            if n % div != 0 {
                return Err(Error::shape(
                    "generator",
                    format!("axis {axis} has {n} voxels, not a multiple of {div}"),
                ));
            }
        }
        let l = self.cfg.levels;
        let mut skips = Vec::with_capacity(l);
        let mut h = x;
        for (i, b) in self.encoder.iter().enumerate() {
            if i > 0 {
                h = g.max_pool3d(h, 2, 2, 0)?;
            }
            h = b.apply(g, p, h)?;
            skips.push(h);
        }
        // features per level, coarsest first
        let mut by_level = vec![h; l];
        for (j, i) in (0..l - 1).rev().enumerate() {
            let u = g.upsample2x(h)?;
            let u = self.up[j].apply(g, p, u)?;
            let cat = g.concat(&[u, skips[i]], 1)?;
            h = self.decoder[j].apply(g, p, cat)?;
            by_level[i] = h;
        }
        let mut aux = Vec::with_capacity(l - 1);
        for (k, head) in self.aux_heads.iter().enumerate() {
            let a = head.apply(g, p, by_level[k + 1])?;
            aux.push(g.tanh(a));
        }
        let o = self.head.apply(g, p, by_level[0])?;
        Ok(GeneratorOutput {
            output: g.tanh(o),
            aux,
        })
    }
}
