use crate::autodiff::graph::{Graph, Var};
use crate::autodiff::tensor::{Element, Tensor};
use crate::error::{Error, Result};

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

fn zip_map<T: Element>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape(), data).expect("same shape")
}

impl<T: Element> Graph<T> {
    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let v = zip_map(self.value(a), self.value(b), |x, y| x + y);
        Ok(self.push("add", v, &[a, b], |c| vec![Some(c.grad.clone()), Some(c.grad.clone())]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let v = zip_map(self.value(a), self.value(b), |x, y| x - y);
        Ok(self.push("sub", v, &[a, b], |c| {
            vec![Some(c.grad.clone()), Some(c.grad.map(|g| -g))]
        }))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let v = zip_map(self.value(a), self.value(b), |x, y| x * y);
        Ok(self.push("mul", v, &[a, b], |c| {
            vec![
                c.needs[0].then(|| zip_map(c.grad, c.inputs[1], |g, y| g * y)),
                c.needs[1].then(|| zip_map(c.grad, c.inputs[0], |g, x| g * x)),
            ]
        }))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("div", a, b)?;
        let v = zip_map(self.value(a), self.value(b), |x, y| x / y);
        Ok(self.push("div", v, &[a, b], |c| {
            vec![
                c.needs[0].then(|| zip_map(c.grad, c.inputs[1], |g, y| g / y)),
                c.needs[1].then(|| {
                    let gy = zip_map(c.grad, c.output, |g, q| -g * q);
                    zip_map(&gy, c.inputs[1], |g, y| g / y)
                }),
            ]
        }))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let s = T::of(s);
        let v = self.value(a).map(|x| x + s);
        self.push("add_scalar", v, &[a], |c| vec![Some(c.grad.clone())])
    }

    pub fn mul_scalar(&mut self, a: Var, s: f64) -> Var {
        let s = T::of(s);
        let v = self.value(a).map(|x| x * s);
        self.push("mul_scalar", v, &[a], move |c| vec![Some(c.grad.map(|g| g * s))])
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.mul_scalar(a, -1.0)
    }

    /// `f` maps inputs to outputs; `df(x, y)` is the derivative at input `x`
    /// with output `y`.
    fn unary(
        &mut self,
        op: &'static str,
        a: Var,
        f: impl Fn(T) -> T,
        df: impl Fn(T, T) -> T + Send + 'static,
    ) -> Var {
        let v = self.value(a).map(f);
        self.push(op, v, &[a], move |c| {
            let data = c
                .grad
                .data()
                .iter()
                .zip(c.inputs[0].data())
                .zip(c.output.data())
                .map(|((&g, &x), &y)| g * df(x, y))
                .collect();
            vec![Some(Tensor::new(c.grad.shape(), data).expect("same shape"))]
        })
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary("tanh", a, |x| x.tanh(), |_, y| T::one() - y * y)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(
            "sigmoid",
            a,
            |x| T::one() / (T::one() + (-x).exp()),
            |_, y| y * (T::one() - y),
        )
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let s = T::of(slope);
        self.unary(
            "leaky_relu",
            a,
            move |x| if x > T::zero() { x } else { x * s },
            move |x, _| if x > T::zero() { T::one() } else { s },
        )
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.leaky_relu(a, 0.0)
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let (c, k) = (T::of(GELU_C), T::of(GELU_A));
        let half = T::of(0.5);
        let three = T::of(3.0);
        self.unary(
            "gelu",
            a,
            move |x| half * x * (T::one() + (c * (x + k * x * x * x)).tanh()),
            move |x, _| {
                let t = (c * (x + k * x * x * x)).tanh();
                half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + three * k * x * x)
            },
        )
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(
            "abs",
            a,
            |x| x.abs(),
            |x, _| {
                if x > T::zero() {
                    T::one()
                } else if x < T::zero() {
                    -T::one()
                } else {
                    T::zero()
                }
            },
        )
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary("exp", a, |x| x.exp(), |_, y| y)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary("square", a, |x| x * x, |x, _| x + x)
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let shape = self.shape(a).to_vec();
        let v = Tensor::scalar(self.value(a).sum());
        self.push("sum", v, &[a], move |c| vec![Some(Tensor::full(&shape, c.grad.item()))])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len();
        let s = self.sum(a);
        self.mul_scalar(s, 1.0 / n as f64)
    }

    /// Broadcasts `a` to `shape` in the usual right-aligned way: each axis of
    /// `a` is either 1 or equal to the target.
    pub fn expand(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let src = self.shape(a).to_vec();
        if src.len() > shape.len() {
            return Err(Error::shape("expand", format!("{src:?} to {shape:?}")));
        }
        let lead = shape.len() - src.len();
        let mut padded = vec![1; lead];
        padded.extend_from_slice(&src);
        for (ax, (&s, &t)) in padded.iter().zip(shape).enumerate() {
            if s != 1 && s != t {
                return Err(Error::shape(
                    "expand",
                    format!("axis {ax}: {s} cannot broadcast to {t} ({src:?} to {shape:?})"),
                ));
            }
        }
        let map = broadcast_map(&padded, shape);
        let v = Tensor::from_fn(shape, {
            let x = self.value(a).data();
            |i| x[map[i]]
        });
        let src_len = self.value(a).len();
        Ok(self.push("expand", v, &[a], move |c| {
            let mut g = vec![T::zero(); src_len];
            for (i, &gv) in c.grad.data().iter().enumerate() {
                g[map[i]] += gv;
            }
            vec![Some(Tensor::new(c.inputs[0].shape(), g).expect("source shape"))]
        }))
    }
}

/// Source flat index for every flat index of the broadcast target.
fn broadcast_map(src: &[usize], dst: &[usize]) -> Vec<usize> {
    let rank = dst.len();
    let mut src_strides = vec![0; rank];
    let mut acc = 1;
    for a in (0..rank).rev() {
        src_strides[a] = if src[a] == 1 { 0 } else { acc };
        acc *= src[a];
    }
    let total: usize = dst.iter().product();
    let mut out = Vec::with_capacity(total);
    let mut idx = vec![0usize; rank];
    for _ in 0..total {
        out.push(idx.iter().zip(&src_strides).map(|(i, s)| i * s).sum());
        for a in (0..rank).rev() {
            idx[a] += 1;
            if idx[a] < dst[a] {
                break;
            }
            idx[a] = 0;
        }
    }
    out
}
