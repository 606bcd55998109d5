use crate::autodiff::graph::{Graph, Var};
use crate::autodiff::tensor::{Element, Tensor};
use crate::error::{Error, Result};

/// Logits are clamped to ±this before the cross-entropy.
pub const LOGIT_CAP: f64 = 20.0;

impl<T: Element> Graph<T> {
    /// Mean binary cross-entropy of `sigmoid(logits)` against fixed targets.
    /// Logits beyond ±[`LOGIT_CAP`] are clamped and pass no gradient.
    pub fn bce_with_logits(&mut self, logits: Var, target: &Tensor<T>) -> Result<Var> {
        if self.shape(logits) != target.shape() {
            return Err(Error::shape(
                "bce_with_logits",
                format!("logits {:?} vs targets {:?}", self.shape(logits), target.shape()),
            ));
        }
        let cap = T::of(LOGIT_CAP);
        let n = T::of(target.len() as f64);
        let loss: T = self
            .value(logits)
            .data()
            .iter()
            .zip(target.data())
            .map(|(&x, &t)| {
                let x = x.max(-cap).min(cap);
                x.max(T::zero()) - x * t + (T::one() + (-x.abs()).exp()).ln()
            })
            .sum::<T>()
            / n;
        let t = target.clone();
        Ok(self.push("bce_with_logits", Tensor::scalar(loss), &[logits], move |c| {
            let g = c.grad.item() / n;
            let d = c
                .inputs[0]
                .data()
                .iter()
                .zip(t.data())
                .map(|(&x, &t)| {
                    if x.abs() > cap {
                        T::zero()
                    } else {
                        g * (T::one() / (T::one() + (-x).exp()) - t)
                    }
                })
                .collect();
            vec![Some(Tensor::new(c.inputs[0].shape(), d).expect("logit shape"))]
        }))
    }

    /// Mean absolute difference.
    pub fn l1(&mut self, a: Var, b: Var) -> Result<Var> {
        let d = self.sub(a, b)?;
        let m = self.abs(d);
        Ok(self.mean(m))
    }
}
