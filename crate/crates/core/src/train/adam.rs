use crate::autodiff::{Checkpoint, ParamStore, Tensor};
use crate::error::{Error, Result};

const EPS: f64 = 1e-8;

/// Adam with bias correction. Moments are kept in `f32`, matching the
/// parameters, so a checkpointed optimizer resumes bit for bit.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub betas: [f64; 2],
    pub t: u64,
    m: ParamStore<f32>,
    v: ParamStore<f32>,
}

impl Adam {
    pub fn new(params: &ParamStore<f32>, betas: [f64; 2]) -> Self {
        let zeros = |p: &ParamStore<f32>| {
            let mut z = p.clone();
            z.values_mut().for_each(|t| *t = Tensor::zeros(t.shape()));
            z
        };
        Self {
            betas,
            t: 0,
            m: zeros(params),
            v: zeros(params),
        }
    }

    pub fn step(&mut self, params: &mut ParamStore<f32>, grads: &[Tensor<f32>], lr: f64) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::shape("adam", format!("{} gradients for {} parameters", grads.len(), params.len())));
        }
        self.t += 1;
        let [b1, b2] = self.betas;
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        let moments = self.m.values_mut().zip(self.v.values_mut());
        for ((p, g), (m, v)) in params.values_mut().zip(grads).zip(moments) {
            if g.shape() != p.shape() {
                return Err(Error::shape("adam", format!("gradient {:?} for parameter {:?}", g.shape(), p.shape())));
            }
            let it = p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut().iter_mut().zip(v.data_mut()));
            for ((p, &g), (m, v)) in it {
                let g = f64::from(g);
                *m = (b1 * f64::from(*m) + (1.0 - b1) * g) as f32;
                *v = (b2 * f64::from(*v) + (1.0 - b2) * g * g) as f32;
                let mhat = f64::from(*m) / c1;
                let vhat = f64::from(*v) / c2;
                *p = (f64::from(*p) - lr * mhat / (vhat.sqrt() + EPS)) as f32;
            }
        }
        Ok(())
    }

    /// Moment tensors named `{prefix}m.*` and `{prefix}v.*`.
    pub fn export(&self, prefix: &str) -> Vec<(String, Tensor<f32>)> {
        let mut out = self.m.export(&format!("{prefix}m."));
        out.extend(self.v.export(&format!("{prefix}v.")));
        out
    }

    pub fn load_from(&mut self, ckpt: &Checkpoint, prefix: &str, t: u64) -> Result<()> {
        self.m.load_from(ckpt, &format!("{prefix}m."))?;
        self.v.load_from(ckpt, &format!("{prefix}v."))?;
        self.t = t;
        Ok(())
    }
}
