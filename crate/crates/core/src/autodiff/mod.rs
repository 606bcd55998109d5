//! Reverse-mode differentiation on dense tensors, with exactly the
//! operators the networks and losses need.
//!
//! A [`Graph`] records operations as they run. Calling
//! [`Graph::backward`] on a scalar sweeps the tape in reverse and leaves
//! gradients on the leaves made with [`Graph::input`].
//!
//! ```
//! use airway_refine::autodiff::{Graph, Tensor};
//!
//! let mut g = Graph::<f64>::new();
//! let x = g.input(Tensor::new(&[2], vec![0.0, 1.0]).unwrap());
//! let y = g.tanh(x);
//! let s = g.sum(y);
//! g.backward(s).unwrap();
//! let dx = g.grad(x).unwrap().data();
//! assert_eq!(dx[0], 1.0);
//! assert!((dx[1] - (1.0 - 1f64.tanh().powi(2))).abs() < 1e-15);
//! ```

mod attention;
mod gradcheck;
mod graph;
pub mod kernels;
pub mod ops;
mod params;
mod tensor;

pub use attention::{multi_head_attention, AttentionWeights};
pub use gradcheck::{grad_check, random_projection, GradCheckOptions, GradCheckReport};
pub use graph::{Backward, Graph, Var};
pub use params::{Bound, Checkpoint, ParamId, ParamStore};
pub use ops::LOGIT_CAP;
pub use tensor::{Element, Tensor};

#[cfg(test)]
mod tests;
