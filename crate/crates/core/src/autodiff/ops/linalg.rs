use crate::autodiff::graph::{Graph, Var};
use crate::autodiff::tensor::{Element, Tensor};
use crate::error::{Error, Result};

impl<T: Element> Graph<T> {
    /// Batched product of `[..., M, K]` and `[..., K, N]`. The right operand
    /// may also be a plain `[K, N]` matrix shared across the batch.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() < 2 || sb.len() < 2 {
            return Err(Error::shape("matmul", format!("{sa:?} x {sb:?}: need rank >= 2")));
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (k2, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        let batch_a = &sa[..sa.len() - 2];
        let shared = sb.len() == 2;
        if k != k2 || (!shared && batch_a != &sb[..sb.len() - 2]) {
            return Err(Error::shape("matmul", format!("{sa:?} x {sb:?}")));
        }
        let batches: usize = batch_a.iter().product();
        let mut out_shape = batch_a.to_vec();
        out_shape.extend([m, n]);
        let mut out = vec![T::zero(); batches * m * n];
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let b_off = move |i: usize| if shared { 0 } else { i * k * n };
        for i in 0..batches {
            T::gemm(
                m,
                k,
                n,
                &av[i * m * k..],
                (k, 1),
                &bv[b_off(i)..],
                (n, 1),
                &mut out[i * m * n..(i + 1) * m * n],
                (n, 1),
                false,
            );
        }
        let v = Tensor::new(&out_shape, out)?;
        Ok(self.push("matmul", v, &[a, b], move |c| {
            let g = c.grad.data();
            let (av, bv) = (c.inputs[0].data(), c.inputs[1].data());
            let da = c.needs[0].then(|| {
                let mut d = vec![T::zero(); av.len()];
                for i in 0..batches {
                    // dA = G · Bᵀ
                    T::gemm(m, n, k, &g[i * m * n..], (n, 1), &bv[b_off(i)..], (1, n), &mut d[i * m * k..(i + 1) * m * k], (k, 1), false);
                }
                Tensor::new(c.inputs[0].shape(), d).expect("a shape")
            });
            let db = c.needs[1].then(|| {
                let mut d = vec![T::zero(); bv.len()];
                for i in 0..batches {
                    // dB = Aᵀ · G
                    let o = b_off(i);
                    T::gemm(k, m, n, &av[i * m * k..], (1, k), &g[i * m * n..], (n, 1), &mut d[o..o + k * n], (n, 1), shared && i > 0);
                }
                Tensor::new(c.inputs[1].shape(), d).expect("b shape")
            });
            vec![da, db]
        }))
    }

    /// `x · wᵀ + bias` over the last axis: `x` is `[..., In]`, `w` is
    /// `[Out, In]`, `bias` is `[Out]`.
    pub fn linear(&mut self, x: Var, w: Var, bias: Option<Var>) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        let d_in = *sx.last().ok_or_else(|| Error::shape("linear", "scalar input"))?;
        if sw.len() != 2 || sw[1] != d_in {
            return Err(Error::shape("linear", format!("input {sx:?} with weight {sw:?}")));
        }
        let d_out = sw[0];
        if let Some(b) = bias {
            if self.shape(b) != [d_out] {
                return Err(Error::shape("linear", format!("bias {:?} for {d_out} outputs", self.shape(b))));
            }
        }
        let rows = self.value(x).len() / d_in;
        let mut out = vec![T::zero(); rows * d_out];
        T::gemm(rows, d_in, d_out, self.value(x).data(), (d_in, 1), self.value(w).data(), (1, d_in), &mut out, (d_out, 1), false);
        if let Some(b) = bias {
            let bv = self.value(b).data();
            for r in 0..rows {
                for (o, &bb) in out[r * d_out..(r + 1) * d_out].iter_mut().zip(bv) {
                    *o += bb;
                }
            }
        }
        let mut out_shape = sx.clone();
        *out_shape.last_mut().expect("rank >= 1") = d_out;
        let v = Tensor::new(&out_shape, out)?;
        let mut inputs = vec![x, w];
        inputs.extend(bias);
        Ok(self.push("linear", v, &inputs, move |c| {
            let g = c.grad.data();
            let (xv, wv) = (c.inputs[0].data(), c.inputs[1].data());
            let dx = c.needs[0].then(|| {
                let mut d = vec![T::zero(); xv.len()];
                T::gemm(rows, d_out, d_in, g, (d_out, 1), wv, (d_in, 1), &mut d, (d_in, 1), false);
                Tensor::new(c.inputs[0].shape(), d).expect("x shape")
            });
            let dw = c.needs[1].then(|| {
                let mut d = vec![T::zero(); wv.len()];
                T::gemm(d_out, rows, d_in, g, (1, d_out), xv, (d_in, 1), &mut d, (d_in, 1), false);
                Tensor::new(c.inputs[1].shape(), d).expect("w shape")
            });
            let mut grads = vec![dx, dw];
            if c.inputs.len() == 3 {
                grads.push(c.needs[2].then(|| {
                    let mut d = vec![T::zero(); d_out];
                    for r in 0..rows {
                        for (acc, &gv) in d.iter_mut().zip(&g[r * d_out..(r + 1) * d_out]) {
                            *acc += gv;
                        }
                    }
                    Tensor::new(&[d_out], d).expect("bias shape")
                }));
            }
            grads
        }))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let n = *shape.last().ok_or_else(|| Error::shape("softmax", "scalar input"))?;
        let xv = self.value(x).data();
        let mut out = vec![T::zero(); xv.len()];
        for (row, o) in xv.chunks(n).zip(out.chunks_mut(n)) {
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut s = T::zero();
            for (oi, &xi) in o.iter_mut().zip(row) {
                *oi = (xi - m).exp();
                s += *oi;
            }
            for oi in o.iter_mut() {
                *oi = *oi / s;
            }
        }
        let v = Tensor::new(&shape, out)?;
        Ok(self.push("softmax", v, &[x], move |c| {
            let mut d = vec![T::zero(); c.output.len()];
            for ((y, g), dd) in c.output.data().chunks(n).zip(c.grad.data().chunks(n)).zip(d.chunks_mut(n)) {
                let dot: T = y.iter().zip(g).map(|(&a, &b)| a * b).sum();
                for ((di, &yi), &gi) in dd.iter_mut().zip(y).zip(g) {
                    *di = yi * (gi - dot);
                }
            }
            vec![Some(Tensor::new(c.output.shape(), d).expect("same shape"))]
        }))
    }
}
