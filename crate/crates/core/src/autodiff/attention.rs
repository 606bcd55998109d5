use crate::error::{Error, Result};

use super::graph::{Graph, Var};
use super::tensor::Element;

/// Projection parameters of one attention block. Weights are `[D, D]`,
/// biases `[D]`.
#[derive(Clone, Copy, Debug)]
pub struct AttentionWeights {
    pub wq: Var,
    pub bq: Var,
    pub wk: Var,
    pub bk: Var,
    pub wv: Var,
    pub bv: Var,
    pub wo: Var,
    pub bo: Var,
}

/// Scaled dot-product attention with `heads` heads over `[T, D]` or
/// `[B, T, D]` token sequences.
pub fn multi_head_attention<T: Element>(
    g: &mut Graph<T>,
    x: Var,
    w: &AttentionWeights,
    heads: usize,
) -> Result<Var> {
    let s = g.shape(x).to_vec();
    let (b, t, d) = match s[..] {
        [t, d] => (1, t, d),
        [b, t, d] => (b, t, d),
        _ => return Err(Error::shape("multi_head_attention", format!("expected [B, T, D], got {s:?}"))),
    };
    if heads == 0 || d % heads != 0 {
        return Err(Error::shape(
            "multi_head_attention",
            format!("model dim {d} not divisible by {heads} heads"),
        ));
    }
    let dh = d / heads;
    let x3 = g.reshape(x, &[b, t, d])?;
    let split = |g: &mut Graph<T>, wt: Var, bias: Var| -> Result<Var> {
        let p = g.linear(x3, wt, Some(bias))?;
        let p = g.reshape(p, &[b, t, heads, dh])?;
        g.permute(p, &[0, 2, 1, 3])
    };
    let q = split(g, w.wq, w.bq)?;
    let k = split(g, w.wk, w.bk)?;
    let v = split(g, w.wv, w.bv)?;
    let kt = g.transpose(k)?;
    let scores = g.matmul(q, kt)?;
    let scores = g.mul_scalar(scores, 1.0 / (dh as f64).sqrt());
    let att = g.softmax(scores)?;
    let mixed = g.matmul(att, v)?;
    let mixed = g.permute(mixed, &[0, 2, 1, 3])?;
    let mixed = g.reshape(mixed, &[b, t, d])?;
    let out = g.linear(mixed, w.wo, Some(w.bo))?;
    g.reshape(out, &s)
}
