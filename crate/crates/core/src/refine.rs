//! Deployment path: windowed generator inference over a whole case, stitched,
//! thresholded at 0 and reduced to its largest component.

use std::path::Path;

use rayon::prelude::*;

use crate::autodiff::{Checkpoint, Graph, ParamStore};
use crate::error::{Error, Result};
use crate::morphology::{largest_component, Connectivity};
use crate::nets::{batch_tensor, tensor_volume, Generator};
use crate::patching::{extract, stitch_mask, PatchGrid, StitchMode};
use crate::train::checkpoint_generator;
use crate::volume::{Dims, Mask3, Volume3};

#[derive(Clone, Debug, PartialEq)]
pub struct RefineConfig {
    pub patch_dims: Dims,
    pub stitch: StitchMode,
    /// Keep only the largest 26-connected component.
    pub lcc: bool,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            patch_dims: Dims::new(24, 24, 24),
            stitch: StitchMode::Mean,
            lcc: true,
        }
    }
}

/// A generator with its trained parameters.
#[derive(Clone, Debug)]
pub struct RefineModel {
    pub generator: Generator,
    pub params: ParamStore<f32>,
}

impl RefineModel {
    /// Reads the generator half of a training checkpoint.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let cfg = checkpoint_generator(ckpt)?;
        let (generator, mut params) = Generator::new(cfg, 0)?;
        params.load_from(ckpt, "g.")?;
        Ok(Self { generator, params })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }

    /// Raw `tanh` output for one aligned `(ct, prelim)` patch.
    pub fn infer_patch(&self, ct: &Volume3, prelim: &Volume3) -> Result<Volume3> {
        let mut g = Graph::<f32>::new();
        let p = self.params.bind_frozen(&mut g);
        let x = g.constant(batch_tensor(&[vec![ct, prelim]])?);
        let out = self.generator.forward(&mut g, &p, x)?;
        tensor_volume(g.value(out.output), 0, 0)
    }
}

/// Refined mask for one case; dims match the input.
pub fn refine_case(model: &RefineModel, ct: &Volume3, prelim: &Mask3, cfg: &RefineConfig) -> Result<Mask3> {
    if ct.dims() != prelim.dims() {
        return Err(Error::shape("refine_case", format!("image {} vs mask {}", ct.dims(), prelim.dims())));
    }
    let ct_p = ct.reflect_pad(cfg.patch_dims);
    let pr_p = prelim.to_volume().reflect_pad(cfg.patch_dims);
    let grid = PatchGrid::new(ct_p.dims(), cfg.patch_dims)?;
    let inputs: Vec<_> = extract(&ct_p, &grid)?.into_iter().zip(extract(&pr_p, &grid)?).collect();
    let outputs = inputs
        .par_iter()
        .map(|((o, c), (_, p))| Ok((*o, model.infer_patch(c, p)?)))
        .collect::<Result<Vec<_>>>()?;
    let mask = stitch_mask(&outputs, ct_p.dims(), cfg.stitch)?.crop([0; 3], ct.dims())?;
    Ok(if cfg.lcc {
        largest_component(&mask, Connectivity::TwentySix)
    } else {
        mask
    })
}
