//! Refinement of tubular binary segmentations with a 3D U-Net generator
//! trained against patch or transformer discriminators.
//!
//! The crate runs on the CPU from its own tensor tape
//! ([`autodiff`]). The pipeline modules are
//! [`synth`] for synthetic trees and corruption, [`skeleton`] and
//! [`metrics`] for evaluation, [`nets`] and [`losses`] for the model,
//! [`train`] for the loop and [`refine`] for inference. The book in `book/`
//! walks through each of them.

pub mod autodiff;
pub mod certify;
pub mod dataset;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod morphology;
pub mod nets;
pub mod patching;
pub mod refine;
pub mod rng;
pub mod skeleton;
pub mod synth;
pub mod train;
pub mod volume;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/volumes.md")]
    mod volumes {}
    #[doc = include_str!("../../../book/src/synthetic-data.md")]
    mod synthetic_data {}
    #[doc = include_str!("../../../book/src/skeletons.md")]
    mod skeletons {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/autodiff.md")]
    mod autodiff {}
    #[doc = include_str!("../../../book/src/networks.md")]
    mod networks {}
    #[doc = include_str!("../../../book/src/losses.md")]
    mod losses {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/refinement.md")]
    mod refinement {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
