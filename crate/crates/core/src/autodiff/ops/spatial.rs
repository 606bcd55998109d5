use crate::autodiff::graph::{Graph, Var};
use crate::autodiff::kernels::{avg_pool_plane_backward, col2im, im2col, pool_plane, PoolKind, Window};
use crate::autodiff::tensor::{Element, Tensor};
use crate::error::{Error, Result};

fn volume_shape(op: &'static str, s: &[usize]) -> Result<(usize, usize, [usize; 3])> {
    if s.len() != 5 {
        return Err(Error::shape(op, format!("expected [B, C, Z, Y, X], got {s:?}")));
    }
    Ok((s[0], s[1], [s[2], s[3], s[4]]))
}

fn window(op: &'static str, input: [usize; 3], kernel: usize, stride: usize, pad: usize) -> Result<Window> {
    Window::new(input, kernel, stride, pad).ok_or_else(|| {
        Error::shape(
            op,
            format!("spatial dims {input:?} with pad {pad} are smaller than kernel {kernel} (stride {stride})"),
        )
    })
}

impl<T: Element> Graph<T> {
    /// 3-D convolution with a cubic kernel and zero padding.
    /// `x`: `[B, Ci, Z, Y, X]`, `w`: `[Co, Ci, k, k, k]`, `bias`: `[Co]`.
    pub fn conv3d(&mut self, x: Var, w: Var, bias: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let (b, ci, spatial) = volume_shape("conv3d", self.shape(x))?;
        let ws = self.shape(w).to_vec();
        if ws.len() != 5 || ws[1] != ci || ws[2] != ws[3] || ws[3] != ws[4] {
            return Err(Error::shape(
                "conv3d",
                format!("weight {ws:?} does not fit {ci} input channels with a cubic kernel"),
            ));
        }
        let co = ws[0];
        if let Some(bv) = bias {
            if self.shape(bv) != [co] {
                return Err(Error::shape("conv3d", format!("bias {:?} for {co} channels", self.shape(bv))));
            }
        }
        let win = window("conv3d", spatial, ws[2], stride, pad)?;
        let (l, kk) = (win.output_len(), ci * win.taps());
        let in_len = ci * win.input_len();
        let mut out = vec![T::zero(); b * co * l];
        let mut cols = vec![T::zero(); kk * l];
        {
            let (xv, wv) = (self.value(x).data(), self.value(w).data());
            for n in 0..b {
                im2col(&xv[n * in_len..(n + 1) * in_len], ci, &win, &mut cols);
                T::gemm(co, kk, l, wv, (kk, 1), &cols, (l, 1), &mut out[n * co * l..(n + 1) * co * l], (l, 1), false);
            }
        }
        if let Some(bv) = bias {
            let bv = self.value(bv).data();
            for n in 0..b {
                for (c, &bb) in bv.iter().enumerate() {
                    for o in &mut out[(n * co + c) * l..(n * co + c + 1) * l] {
                        *o += bb;
                    }
                }
            }
        }
        let o = win.output;
        let v = Tensor::new(&[b, co, o[0], o[1], o[2]], out)?;
        let mut inputs = vec![x, w];
        inputs.extend(bias);
        Ok(self.push("conv3d", v, &inputs, move |c| {
            let g = c.grad.data();
            let (xv, wv) = (c.inputs[0].data(), c.inputs[1].data());
            let mut dx = c.needs[0].then(|| vec![T::zero(); xv.len()]);
            let mut dw = c.needs[1].then(|| vec![T::zero(); wv.len()]);
            let mut cols = vec![T::zero(); kk * l];
            let mut dcols = vec![T::zero(); kk * l];
            for n in 0..b {
                let gn = &g[n * co * l..(n + 1) * co * l];
                if let Some(dw) = dw.as_mut() {
                    im2col(&xv[n * in_len..(n + 1) * in_len], ci, &win, &mut cols);
                    T::gemm(co, l, kk, gn, (l, 1), &cols, (1, l), dw, (kk, 1), true);
                }
                if let Some(dx) = dx.as_mut() {
                    T::gemm(kk, co, l, wv, (1, kk), gn, (l, 1), &mut dcols, (l, 1), false);
                    col2im(&dcols, ci, &win, &mut dx[n * in_len..(n + 1) * in_len]);
                }
            }
            let mut grads = vec![
                dx.map(|d| Tensor::new(c.inputs[0].shape(), d).expect("x shape")),
                dw.map(|d| Tensor::new(c.inputs[1].shape(), d).expect("w shape")),
            ];
            if c.inputs.len() == 3 {
                grads.push(c.needs[2].then(|| {
                    let mut db = vec![T::zero(); co];
                    for n in 0..b {
                        for (ch, acc) in db.iter_mut().enumerate() {
                            *acc += g[(n * co + ch) * l..(n * co + ch + 1) * l].iter().copied().sum();
                        }
                    }
                    Tensor::new(&[co], db).expect("bias shape")
                }));
            }
            grads
        }))
    }

    fn pool3d(&mut self, op: &'static str, kind: PoolKind, x: Var, kernel: usize, stride: usize, pad: usize) -> Result<Var> {
        let (b, ch, spatial) = volume_shape(op, self.shape(x))?;
        if matches!(kind, PoolKind::Max | PoolKind::Min) && pad >= kernel {
            return Err(Error::shape(op, format!("padding {pad} must be smaller than kernel {kernel}")));
        }
        let win = window(op, spatial, kernel, stride, pad)?;
        let (il, ol) = (win.input_len(), win.output_len());
        let planes = b * ch;
        let mut out = vec![T::zero(); planes * ol];
        let mut arg = Vec::new();
        let xv = self.value(x).data();
        for p in 0..planes {
            pool_plane(&xv[p * il..(p + 1) * il], &win, kind, &mut out[p * ol..(p + 1) * ol], &mut arg);
        }
        let o = win.output;
        let v = Tensor::new(&[b, ch, o[0], o[1], o[2]], out)?;
        Ok(self.push(op, v, &[x], move |c| {
            let g = c.grad.data();
            let mut dx = vec![T::zero(); planes * il];
            match kind {
                PoolKind::Avg => {
                    for p in 0..planes {
                        avg_pool_plane_backward(&g[p * ol..(p + 1) * ol], &win, &mut dx[p * il..(p + 1) * il]);
                    }
                }
                _ => {
                    for p in 0..planes {
                        for j in 0..ol {
                            dx[p * il + arg[p * ol + j] as usize] += g[p * ol + j];
                        }
                    }
                }
            }
            vec![Some(Tensor::new(c.inputs[0].shape(), dx).expect("x shape"))]
        }))
    }

    /// Max over cubic windows; padding never wins.
    pub fn max_pool3d(&mut self, x: Var, kernel: usize, stride: usize, pad: usize) -> Result<Var> {
        self.pool3d("max_pool3d", PoolKind::Max, x, kernel, stride, pad)
    }

    /// Min over cubic windows; padding never wins.
    pub fn min_pool3d(&mut self, x: Var, kernel: usize, stride: usize, pad: usize) -> Result<Var> {
        self.pool3d("min_pool3d", PoolKind::Min, x, kernel, stride, pad)
    }

    /// Mean over cubic windows, counting padded taps as zeros.
    pub fn avg_pool3d(&mut self, x: Var, kernel: usize, stride: usize, pad: usize) -> Result<Var> {
        self.pool3d("avg_pool3d", PoolKind::Avg, x, kernel, stride, pad)
    }

    /// Nearest-neighbour upsampling by 2 along z, y and x.
    pub fn upsample2x(&mut self, x: Var) -> Result<Var> {
        let (b, ch, [z, y, w]) = volume_shape("upsample2x", self.shape(x))?;
        let (oz, oy, ox) = (2 * z, 2 * y, 2 * w);
        let xv = self.value(x).data();
        let planes = b * ch;
        let mut out = Vec::with_capacity(planes * oz * oy * ox);
        for p in 0..planes {
            let plane = &xv[p * z * y * w..(p + 1) * z * y * w];
            for k in 0..oz {
                for j in 0..oy {
                    let row = &plane[((k / 2) * y + j / 2) * w..((k / 2) * y + j / 2 + 1) * w];
                    for i in 0..ox {
                        out.push(row[i / 2]);
                    }
                }
            }
        }
        let v = Tensor::new(&[b, ch, oz, oy, ox], out)?;
        Ok(self.push("upsample2x", v, &[x], move |c| {
            let g = c.grad.data();
            let mut dx = vec![T::zero(); planes * z * y * w];
            for p in 0..planes {
                for k in 0..oz {
                    for j in 0..oy {
                        for i in 0..ox {
                            dx[p * z * y * w + ((k / 2) * y + j / 2) * w + i / 2] += g[((p * oz + k) * oy + j) * ox + i];
                        }
                    }
                }
            }
            vec![Some(Tensor::new(c.inputs[0].shape(), dx).expect("x shape"))]
        }))
    }
}
