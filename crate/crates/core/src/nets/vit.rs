use serde::{Deserialize, Serialize};

use crate::autodiff::{multi_head_attention, AttentionWeights, Bound, Element, Graph, ParamId, ParamStore, Var};
use crate::error::{Error, Result};
use crate::rng::{substream, Purpose};

use super::{Affine, Init, Linear, NEGATIVE_SLOPE};

const LN_EPS: f64 = 1e-6;
const EMBED_INIT: f32 = 0.02;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VitDiscriminatorConfig {
    pub in_channels: usize,
    /// Input extent `[x, y, z]`; fixes the token count.
    pub input_dims: [usize; 3],
    /// Patch extent `[x, y, z]`.
    pub patch_dims: [usize; 3],
    pub layers: usize,
    pub hidden: usize,
    pub mlp: usize,
    pub heads: usize,
}

impl Default for VitDiscriminatorConfig {
    fn default() -> Self {
        Self {
            in_channels: 1,
            input_dims: [24, 24, 24],
            patch_dims: [8, 8, 8],
            layers: 2,
            hidden: 64,
            mlp: 128,
            heads: 4,
        }
    }
}

impl VitDiscriminatorConfig {
    /// ViT-small on full-size patches.
    pub fn full() -> Self {
        Self {
            in_channels: 1,
            input_dims: [128, 96, 144],
            patch_dims: [32, 32, 36],
            layers: 12,
            hidden: 768,
            mlp: 3072,
            heads: 12,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (axis, (&n, &p)) in ["x", "y", "z"].iter().zip(self.input_dims.iter().zip(&self.patch_dims)) {
            if p == 0 || n % p != 0 {
                return Err(Error::InvalidArgument(format!(
                    "ViT axis {axis}: input {n} is not divisible by patch {p}"
                )));
            }
        }
        if self.hidden == 0 || self.heads == 0 || !self.hidden.is_multiple_of(self.heads) {
            return Err(Error::InvalidArgument(format!(
                "ViT hidden size {} not divisible by {} heads",
                self.hidden, self.heads
            )));
        }
        if self.layers == 0 || self.mlp == 0 || self.in_channels == 0 {
            return Err(Error::InvalidArgument("ViT sizes must be positive".into()));
        }
        Ok(())
    }

    pub fn tokens(&self) -> usize {
        (0..3).map(|k| self.input_dims[k] / self.patch_dims[k]).product()
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.patch_dims.iter().product::<usize>()
    }
}

#[derive(Clone, Copy, Debug)]
struct EncoderLayer {
    ln1: Affine,
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    ln2: Affine,
    fc1: Linear,
    fc2: Linear,
}

/// Patch-embedding transformer with a class-token head.
#[derive(Clone, Debug)]
pub struct VitDiscriminator {
    cfg: VitDiscriminatorConfig,
    embed: Linear,
    cls: ParamId,
    pos: ParamId,
    layers: Vec<EncoderLayer>,
    ln: Affine,
    head1: Linear,
    head2: Linear,
}

impl VitDiscriminator {
    pub fn new(cfg: VitDiscriminatorConfig, seed: u64) -> Result<(Self, ParamStore<f32>)> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let mut init = Init::new(substream(seed, Purpose::Init, 2), &mut store);
        let d = cfg.hidden;
        let embed = init.linear("embed", cfg.patch_len(), d);
        let cls = init.uniform("cls".into(), &[1, 1, d], EMBED_INIT);
        let pos = init.uniform("pos".into(), &[cfg.tokens() + 1, d], EMBED_INIT);
        let layers = (0..cfg.layers)
            .map(|i| EncoderLayer {
                ln1: init.affine(&format!("l{i}.ln1"), d),
                q: init.linear(&format!("l{i}.q"), d, d),
                k: init.linear(&format!("l{i}.k"), d, d),
                v: init.linear(&format!("l{i}.v"), d, d),
                o: init.linear(&format!("l{i}.o"), d, d),
                ln2: init.affine(&format!("l{i}.ln2"), d),
                fc1: init.linear(&format!("l{i}.fc1"), d, cfg.mlp),
                fc2: init.linear(&format!("l{i}.fc2"), cfg.mlp, d),
            })
            .collect();
        let ln = init.affine("ln", d);
        let head1 = init.linear("head1", d, d);
        let head2 = init.linear("head2", d, 1);
        Ok((
            Self {
                cfg,
                embed,
                cls,
                pos,
                layers,
                ln,
                head1,
                head2,
            },
            store,
        ))
    }

    pub fn config(&self) -> &VitDiscriminatorConfig {
        &self.cfg
    }

    /// Number of learned positional embeddings (tokens plus class token).
    pub fn positions(&self) -> usize {
        self.cfg.tokens() + 1
    }

    /// `x`: `[B, C, Z, Y, X]` matching `input_dims`. Returns `[B, 1]` logits.
    pub fn forward<T: Element>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        let s = g.shape(x).to_vec();
        let [nx, ny, nz] = self.cfg.input_dims;
        if s.len() != 5 || s[1] != self.cfg.in_channels || s[2..] != [nz, ny, nx] {
            return Err(Error::shape(
                "vit_discriminator",
                format!("expected [B, {}, {nz}, {ny}, {nx}], got {s:?}", self.cfg.in_channels),
            ));
        }
        let b = s[0];
        let d = self.cfg.hidden;
        let t = self.cfg.tokens() + 1;
        let [px, py, pz] = self.cfg.patch_dims;
        let patches = g.patchify(x, [pz, py, px])?;
        let tokens = self.embed.apply(g, p, patches)?;
        let cls = g.expand(p[self.cls], &[b, 1, d])?;
        let h = g.concat(&[cls, tokens], 1)?;
        let pos = g.expand(p[self.pos], &[b, t, d])?;
        let mut h = g.add(h, pos)?;
        for l in &self.layers {
            let n = g.layer_norm(h, p[l.ln1.gamma], p[l.ln1.beta], LN_EPS)?;
            let w = AttentionWeights {
                wq: p[l.q.w],
                bq: p[l.q.b],
                wk: p[l.k.w],
                bk: p[l.k.b],
                wv: p[l.v.w],
                bv: p[l.v.b],
                wo: p[l.o.w],
                bo: p[l.o.b],
            };
            let a = multi_head_attention(g, n, &w, self.cfg.heads)?;
            h = g.add(h, a)?;
            let n = g.layer_norm(h, p[l.ln2.gamma], p[l.ln2.beta], LN_EPS)?;
            let m = l.fc1.apply(g, p, n)?;
            let m = g.gelu(m);
            let m = l.fc2.apply(g, p, m)?;
            h = g.add(h, m)?;
        }
        let h = g.layer_norm(h, p[self.ln.gamma], p[self.ln.beta], LN_EPS)?;
        let c = g.narrow(h, 1, 0, 1)?;
        let c = g.reshape(c, &[b, d])?;
        let c = self.head1.apply(g, p, c)?;
        let c = g.leaky_relu(c, NEGATIVE_SLOPE);
        self.head2.apply(g, p, c)
    }
}
