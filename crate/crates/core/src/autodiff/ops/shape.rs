use crate::autodiff::graph::{Graph, Var};
use crate::autodiff::tensor::{numel, Element, Tensor};
use crate::error::{Error, Result};

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for a in (0..shape.len().saturating_sub(1)).rev() {
        s[a] = s[a + 1] * shape[a + 1];
    }
    s
}

/// For every output position of `shape` permuted by `axes`, the source index.
fn permute_map(shape: &[usize], axes: &[usize]) -> Vec<usize> {
    let src = strides(shape);
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let step: Vec<usize> = axes.iter().map(|&a| src[a]).collect();
    let total = numel(shape);
    let rank = shape.len();
    let mut map = Vec::with_capacity(total);
    let mut idx = vec![0usize; rank];
    let mut offset = 0usize;
    for _ in 0..total {
        map.push(offset);
        for a in (0..rank).rev() {
            idx[a] += 1;
            offset += step[a];
            if idx[a] < out_shape[a] {
                break;
            }
            offset -= step[a] * out_shape[a];
            idx[a] = 0;
        }
    }
    map
}

impl<T: Element> Graph<T> {
    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(a).clone().reshape(shape)?;
        Ok(self.push("reshape", v, &[a], |c| {
            vec![Some(c.grad.clone().reshape(c.inputs[0].shape()).expect("same size"))]
        }))
    }

    /// Reorders axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&mut self, a: Var, axes: &[usize]) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let mut seen = vec![false; shape.len()];
        if axes.len() != shape.len() || axes.iter().any(|&x| x >= shape.len() || std::mem::replace(&mut seen[x], true)) {
            return Err(Error::shape(
                "permute",
                format!("axes {axes:?} are not a permutation of rank {}", shape.len()),
            ));
        }
        let map = permute_map(&shape, axes);
        let out_shape: Vec<usize> = axes.iter().map(|&x| shape[x]).collect();
        let x = self.value(a).data();
        let v = Tensor::new(&out_shape, map.iter().map(|&i| x[i]).collect())?;
        Ok(self.push("permute", v, &[a], move |c| {
            let mut g = vec![T::zero(); map.len()];
            for (o, &i) in map.iter().enumerate() {
                g[i] = c.grad.data()[o];
            }
            vec![Some(Tensor::new(&shape, g).expect("input shape"))]
        }))
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let r = self.shape(a).len();
        if r < 2 {
            return Err(Error::shape("transpose", format!("rank {r} < 2")));
        }
        let mut axes: Vec<usize> = (0..r).collect();
        axes.swap(r - 1, r - 2);
        self.permute(a, &axes)
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat of nothing".into()))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::shape("concat", format!("axis {axis} out of rank {}", base.len())));
        }
        let mut sizes = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            let ok = s.len() == base.len() && (0..s.len()).all(|a| a == axis || s[a] == base[a]);
            if !ok {
                return Err(Error::shape(
                    "concat",
                    format!("{s:?} does not match {base:?} off axis {axis}"),
                ));
            }
            sizes.push(s[axis]);
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut out_shape = base.clone();
        out_shape[axis] = sizes.iter().sum();
        let mut data = Vec::with_capacity(numel(&out_shape));
        for o in 0..outer {
            for (&p, &n) in parts.iter().zip(&sizes) {
                let chunk = n * inner;
                data.extend_from_slice(&self.value(p).data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let v = Tensor::new(&out_shape, data)?;
        let total = out_shape[axis];
        Ok(self.push("concat", v, parts, move |c| {
            let g = c.grad.data();
            let mut offset = 0;
            sizes
                .iter()
                .enumerate()
                .map(|(k, &n)| {
                    let start = offset;
                    offset += n;
                    c.needs[k].then(|| {
                        let mut out = Vec::with_capacity(outer * n * inner);
                        for o in 0..outer {
                            let row = o * total * inner;
                            out.extend_from_slice(&g[row + start * inner..row + (start + n) * inner]);
                        }
                        Tensor::new(c.inputs[k].shape(), out).expect("part shape")
                    })
                })
                .collect()
        }))
    }

    /// Slice `start..start + len` of `axis`.
    pub fn narrow(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(Error::shape(
                "narrow",
                format!("{start}..{} of axis {axis} in {shape:?}", start + len),
            ));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let n = shape[axis];
        let x = self.value(a).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let row = o * n * inner;
            data.extend_from_slice(&x[row + start * inner..row + (start + len) * inner]);
        }
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        let v = Tensor::new(&out_shape, data)?;
        Ok(self.push("narrow", v, &[a], move |c| {
            let mut g = vec![T::zero(); numel(&shape)];
            let src = c.grad.data();
            for o in 0..outer {
                let row = o * n * inner;
                g[row + start * inner..row + (start + len) * inner]
                    .copy_from_slice(&src[o * len * inner..(o + 1) * len * inner]);
            }
            vec![Some(Tensor::new(&shape, g).expect("input shape"))]
        }))
    }

    /// Cuts `[B, C, Z, Y, X]` into non-overlapping `[pz, py, px]` blocks and
    /// flattens them: output `[B, T, C·pz·py·px]` with tokens in z, y, x order.
    pub fn patchify(&mut self, a: Var, patch: [usize; 3]) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.len() != 5 {
            return Err(Error::shape("patchify", format!("expected [B, C, Z, Y, X], got {s:?}")));
        }
        let names = ["z", "y", "x"];
        for k in 0..3 {
            if patch[k] == 0 || !s[2 + k].is_multiple_of(patch[k]) {
                return Err(Error::shape(
                    "patchify",
                    format!("axis {}: {} not divisible by patch {}", names[k], s[2 + k], patch[k]),
                ));
            }
        }
        let (b, ch) = (s[0], s[1]);
        let grid = [s[2] / patch[0], s[3] / patch[1], s[4] / patch[2]];
        let v8 = self.reshape(a, &[b, ch, grid[0], patch[0], grid[1], patch[1], grid[2], patch[2]])?;
        let p = self.permute(v8, &[0, 2, 4, 6, 1, 3, 5, 7])?;
        let tokens = grid.iter().product();
        self.reshape(p, &[b, tokens, ch * patch.iter().product::<usize>()])
    }
}
