use crate::autodiff::graph::{Graph, Var};
use crate::autodiff::tensor::{Element, Tensor};
use crate::error::{Error, Result};

/// Normalises `groups` contiguous runs of `n` values, then applies a
/// per-channel affine map where run `r` uses channel `channel(r)`.
fn normalise<T: Element>(
    x: &[T],
    n: usize,
    gamma: &[T],
    beta: &[T],
    channel: impl Fn(usize) -> Option<usize>,
    per_element: bool,
    eps: T,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let runs = x.len() / n;
    let nf = T::of(n as f64);
    let mut out = vec![T::zero(); x.len()];
    let mut xhat = vec![T::zero(); x.len()];
    let mut inv_std = vec![T::zero(); runs];
    for r in 0..runs {
        let row = &x[r * n..(r + 1) * n];
        let mean = row.iter().copied().sum::<T>() / nf;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / nf;
        let is = T::one() / (var + eps).sqrt();
        inv_std[r] = is;
        for i in 0..n {
            let h = (row[i] - mean) * is;
            xhat[r * n + i] = h;
            let (g, b) = match (per_element, channel(r)) {
                (true, _) => (gamma[i], beta[i]),
                (false, Some(c)) => (gamma[c], beta[c]),
                (false, None) => (T::one(), T::zero()),
            };
            out[r * n + i] = g * h + b;
        }
    }
    (out, xhat, inv_std)
}

/// Given dL/dxhat for one run, returns dL/dx.
fn run_backward<T: Element>(dxhat: &[T], xhat: &[T], inv_std: T, out: &mut [T]) {
    let nf = T::of(dxhat.len() as f64);
    let s1: T = dxhat.iter().copied().sum();
    let s2: T = dxhat.iter().zip(xhat).map(|(&d, &h)| d * h).sum();
    for ((o, &d), &h) in out.iter_mut().zip(dxhat).zip(xhat) {
        *o = inv_std * (d - s1 / nf - h * s2 / nf);
    }
}

impl<T: Element> Graph<T> {
    /// Per-sample, per-channel normalisation over the spatial axes of
    /// `[B, C, ...]`, followed by a per-channel scale and shift.
    pub fn instance_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() < 3 {
            return Err(Error::shape("instance_norm", format!("expected [B, C, ...], got {s:?}")));
        }
        let ch = s[1];
        if self.shape(gamma) != [ch] || self.shape(beta) != [ch] {
            return Err(Error::shape(
                "instance_norm",
                format!("affine {:?}/{:?} for {ch} channels", self.shape(gamma), self.shape(beta)),
            ));
        }
        let n: usize = s[2..].iter().product();
        let (out, xhat, inv_std) = normalise(
            self.value(x).data(),
            n,
            self.value(gamma).data(),
            self.value(beta).data(),
            |r| Some(r % ch),
            false,
            T::of(eps),
        );
        let v = Tensor::new(&s, out)?;
        Ok(self.push("instance_norm", v, &[x, gamma, beta], move |c| {
            let g = c.grad.data();
            let gm = c.inputs[1].data();
            let runs = g.len() / n;
            let dx = c.needs[0].then(|| {
                let mut dx = vec![T::zero(); g.len()];
                let mut dxhat = vec![T::zero(); n];
                for r in 0..runs {
                    for i in 0..n {
                        dxhat[i] = g[r * n + i] * gm[r % ch];
                    }
                    run_backward(&dxhat, &xhat[r * n..(r + 1) * n], inv_std[r], &mut dx[r * n..(r + 1) * n]);
                }
                Tensor::new(c.inputs[0].shape(), dx).expect("x shape")
            });
            let mut dg = vec![T::zero(); ch];
            let mut db = vec![T::zero(); ch];
            for r in 0..runs {
                for i in 0..n {
                    dg[r % ch] += g[r * n + i] * xhat[r * n + i];
                    db[r % ch] += g[r * n + i];
                }
            }
            vec![
                dx,
                c.needs[1].then(|| Tensor::new(&[ch], dg).expect("gamma")),
                c.needs[2].then(|| Tensor::new(&[ch], db).expect("beta")),
            ]
        }))
    }

    /// Normalisation over the last axis with per-feature scale and shift.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let n = *s.last().ok_or_else(|| Error::shape("layer_norm", "scalar input"))?;
        if self.shape(gamma) != [n] || self.shape(beta) != [n] {
            return Err(Error::shape(
                "layer_norm",
                format!("affine {:?}/{:?} for {n} features", self.shape(gamma), self.shape(beta)),
            ));
        }
        let (out, xhat, inv_std) = normalise(
            self.value(x).data(),
            n,
            self.value(gamma).data(),
            self.value(beta).data(),
            |_| None,
            true,
            T::of(eps),
        );
        let v = Tensor::new(&s, out)?;
        Ok(self.push("layer_norm", v, &[x, gamma, beta], move |c| {
            let g = c.grad.data();
            let gm = c.inputs[1].data();
            let runs = g.len() / n;
            let dx = c.needs[0].then(|| {
                let mut dx = vec![T::zero(); g.len()];
                let mut dxhat = vec![T::zero(); n];
                for r in 0..runs {
                    for i in 0..n {
                        dxhat[i] = g[r * n + i] * gm[i];
                    }
                    run_backward(&dxhat, &xhat[r * n..(r + 1) * n], inv_std[r], &mut dx[r * n..(r + 1) * n]);
                }
                Tensor::new(c.inputs[0].shape(), dx).expect("x shape")
            });
            let mut dg = vec![T::zero(); n];
            let mut db = vec![T::zero(); n];
            for r in 0..runs {
                for i in 0..n {
                    dg[i] += g[r * n + i] * xhat[r * n + i];
                    db[i] += g[r * n + i];
                }
            }
            vec![
                dx,
                c.needs[1].then(|| Tensor::new(&[n], dg).expect("gamma")),
                c.needs[2].then(|| Tensor::new(&[n], db).expect("beta")),
            ]
        }))
    }
}
