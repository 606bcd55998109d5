//! Differentiable operators, all as methods on [`crate::autodiff::Graph`].

mod elementwise;
mod linalg;
mod loss;
mod norm;
mod shape;
mod spatial;

pub use loss::LOGIT_CAP;
