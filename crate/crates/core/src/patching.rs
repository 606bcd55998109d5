//! Half-overlapping patch grids, extraction and stitching.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{Dims, Grid, Mask3, Volume3};

/// Patch size used on full-resolution CT.
pub const FULL_PATCH_DIMS: Dims = Dims {
    nx: 128,
    ny: 96,
    nz: 144,
};

/// Patch origins covering a volume with 50% overlap.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchGrid {
    pub patch_dims: Dims,
    pub stride: Dims,
    pub origins: Vec<[usize; 3]>,
    pub source_dims: Dims,
}

fn axis_origins(n: usize, p: usize, s: usize) -> Vec<usize> {
    let mut out = vec![0];
    let mut o = 0;
    while o + p < n {
        o = (o + s).min(n - p);
        out.push(o);
    }
    out
}

impl PatchGrid {
    /// Origins run in z, then y, then x order. The last window on each axis
    /// is clamped to end on the boundary.
    ///
    /// ```
    /// use airway_refine::patching::PatchGrid;
    /// use airway_refine::volume::Dims;
    ///
    /// let g = PatchGrid::new(Dims::cube(10), Dims::cube(4)).unwrap();
    /// assert_eq!(g.origins.len(), 64);
    /// assert_eq!(g.origins.last(), Some(&[6, 6, 6]));
    /// ```
    pub fn new(source_dims: Dims, patch_dims: Dims) -> Result<Self> {
        let (src, p) = (source_dims.as_array(), patch_dims.as_array());
        for k in 0..3 {
            if p[k] == 0 || p[k] % 2 != 0 {
                return Err(Error::InvalidArgument(format!(
                    "patch dims must be positive and even for 50% overlap, got {patch_dims}"
                )));
            }
            if p[k] > src[k] {
                return Err(Error::shape(
                    "patch grid",
                    format!("patch {patch_dims} larger than volume {source_dims}; pad first"),
                ));
            }
        }
        let stride = Dims::new(p[0] / 2, p[1] / 2, p[2] / 2);
        let ox = axis_origins(src[0], p[0], stride.nx);
        let oy = axis_origins(src[1], p[1], stride.ny);
        let oz = axis_origins(src[2], p[2], stride.nz);
        let mut origins = Vec::with_capacity(ox.len() * oy.len() * oz.len());
        for &z in &oz {
            for &y in &oy {
                for &x in &ox {
                    origins.push([x, y, z]);
                }
            }
        }
        Ok(Self {
            patch_dims,
            stride,
            origins,
            source_dims,
        })
    }

    pub fn len(&self) -> usize {
        self.origins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origins.is_empty()
    }
}

/// Cuts every patch of `grid` out of `vol`.
pub fn extract<T: Copy>(vol: &Grid<T>, grid: &PatchGrid) -> Result<Vec<([usize; 3], Grid<T>)>> {
    if vol.dims() != grid.source_dims {
        return Err(Error::shape(
            "extract",
            format!("volume {} but grid built for {}", vol.dims(), grid.source_dims),
        ));
    }
    grid.origins
        .iter()
        .map(|&o| Ok((o, vol.crop(o, grid.patch_dims)?)))
        .collect()
}

/// How overlapping patch predictions are merged into one mask.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StitchMode {
    /// Average soft outputs, then threshold at 0.
    #[default]
    Mean,
    /// Threshold each patch at 0, then majority vote with ties to foreground.
    BinaryVote,
}

impl FromStr for StitchMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Self::Mean),
            "binary-vote" => Ok(Self::BinaryVote),
            other => Err(Error::InvalidArgument(format!(
                "unknown stitch mode {other:?}; expected mean or binary-vote"
            ))),
        }
    }
}

/// Visits patches in origin order so sums do not depend on input order.
fn accumulate(
    patches: &[([usize; 3], Volume3)],
    full_dims: Dims,
    mut add: impl FnMut(usize, f32),
) -> Result<Vec<u32>> {
    let mut order: Vec<usize> = (0..patches.len()).collect();
    order.sort_by_key(|&i| {
        let o = patches[i].0;
        (o[2], o[1], o[0])
    });
    if let Some(w) = order.windows(2).find(|w| patches[w[0]].0 == patches[w[1]].0) {
        return Err(Error::InvalidArgument(format!(
            "duplicate patch origin {:?}",
            patches[w[0]].0
        )));
    }
    let mut count = vec![0u32; full_dims.len()];
    for i in order {
        let (o, p) = &patches[i];
        let pd = p.dims();
        if (0..3).any(|k| o[k] + pd.as_array()[k] > full_dims.as_array()[k]) {
            return Err(Error::shape(
                "stitch",
                format!("patch at {o:?} of size {pd} leaves {full_dims}"),
            ));
        }
        for z in 0..pd.nz {
            for y in 0..pd.ny {
                for x in 0..pd.nx {
                    let dst = full_dims.index(o[0] + x, o[1] + y, o[2] + z);
                    add(dst, p.get(x, y, z));
                    count[dst] += 1;
                }
            }
        }
    }
    if let Some(i) = count.iter().position(|&c| c == 0) {
        return Err(Error::InvalidArgument(format!(
            "voxel {:?} is not covered by any patch",
            full_dims.coords(i)
        )));
    }
    Ok(count)
}

/// Per-voxel mean of overlapping soft patches.
pub fn stitch(patches: &[([usize; 3], Volume3)], full_dims: Dims) -> Result<Volume3> {
    let mut sum = vec![0f64; full_dims.len()];
    let count = accumulate(patches, full_dims, |i, v| sum[i] += f64::from(v))?;
    let data = sum.iter().zip(&count).map(|(s, &c)| (s / f64::from(c)) as f32).collect();
    Volume3::from_vec(full_dims, data)
}

/// Stitches soft tanh-domain patches into a binary mask.
pub fn stitch_mask(patches: &[([usize; 3], Volume3)], full_dims: Dims, mode: StitchMode) -> Result<Mask3> {
    match mode {
        StitchMode::Mean => Ok(stitch(patches, full_dims)?.threshold(0.0)),
        StitchMode::BinaryVote => {
            let mut votes = vec![0u32; full_dims.len()];
            let count = accumulate(patches, full_dims, |i, v| votes[i] += u32::from(v > 0.0))?;
            let data = votes.iter().zip(&count).map(|(&v, &c)| u8::from(2 * v >= c)).collect();
            Mask3::from_vec(full_dims, data)
        }
    }
}

/// Runs `infer` over every window of `vol` and merges the results.
///
/// Volumes smaller than the patch are reflect-padded first and the output is
/// cropped back, so the result always has the dims of `vol`.
pub fn sliding_window(
    vol: &Volume3,
    patch_dims: Dims,
    mut infer: impl FnMut(&Volume3) -> Result<Volume3>,
) -> Result<Volume3> {
    let padded = vol.reflect_pad(patch_dims);
    let grid = PatchGrid::new(padded.dims(), patch_dims)?;
    let outputs = extract(&padded, &grid)?
        .into_iter()
        .map(|(o, p)| {
            let out = infer(&p)?;
            if out.dims() != patch_dims {
                return Err(Error::shape("sliding_window", format!("model returned {}", out.dims())));
            }
            Ok((o, out))
        })
        .collect::<Result<Vec<_>>>()?;
    let full = stitch(&outputs, padded.dims())?;
    full.crop([0; 3], vol.dims()).map(|v| v.with_spacing(vol.spacing()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_volume(d: Dims, seed: u64) -> Volume3 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Volume3::from_vec(d, (0..d.len()).map(|_| rng.random_range(-1.0f32..1.0)).collect()).unwrap()
    }

    #[test]
    fn eight_cubed_by_four() {
        let g = PatchGrid::new(Dims::cube(8), Dims::cube(4)).unwrap();
        assert_eq!(g.len(), 27);
        assert_eq!(g.stride, Dims::cube(2));
        for o in &g.origins {
            assert!(o.iter().all(|c| [0, 2, 4].contains(c)));
        }
    }

    #[test]
    fn whole_volume_patch() {
        let g = PatchGrid::new(Dims::new(6, 4, 8), Dims::new(6, 4, 8)).unwrap();
        assert_eq!(g.origins, vec![[0, 0, 0]]);
    }

    #[test]
    fn last_window_is_clamped() {
        let g = PatchGrid::new(Dims::cube(10), Dims::cube(4)).unwrap();
        assert_eq!(axis_origins(10, 4, 2), vec![0, 2, 4, 6]);
        assert_eq!(axis_origins(11, 4, 2), vec![0, 2, 4, 6, 7]);
        let mut covered = vec![false; 1000];
        for o in &g.origins {
            for z in 0..4 {
                for y in 0..4 {
                    for x in 0..4 {
                        covered[(o[2] + z) * 100 + (o[1] + y) * 10 + o[0] + x] = true;
                    }
                }
            }
        }
        assert!(covered.iter().all(|&c| c));
    }

    #[test]
    fn patch_larger_than_volume_or_odd() {
        assert!(PatchGrid::new(Dims::cube(4), Dims::cube(6)).is_err());
        assert!(PatchGrid::new(Dims::cube(8), Dims::new(4, 3, 4)).is_err());
    }

    #[test]
    fn extract_then_stitch_is_identity() {
        let v = random_volume(Dims::new(10, 8, 12), 1);
        let g = PatchGrid::new(v.dims(), Dims::new(4, 4, 6)).unwrap();
        let patches = extract(&v, &g).unwrap();
        assert!(patches.iter().all(|(_, p)| p.dims() == g.patch_dims));
        let back = stitch(&patches, v.dims()).unwrap();
        assert_eq!(back.data(), v.data());
    }

    #[test]
    fn constant_patches_and_half_overlap() {
        let d = Dims::new(6, 4, 4);
        let g = PatchGrid::new(d, Dims::new(4, 4, 4)).unwrap();
        let c: Vec<_> = g.origins.iter().map(|&o| (o, Volume3::constant(g.patch_dims, 0.25).unwrap())).collect();
        assert!(stitch(&c, d).unwrap().data().iter().all(|&v| v == 0.25));
        let two = vec![
            ([0, 0, 0], Volume3::constant(g.patch_dims, 0.0).unwrap()),
            ([2, 0, 0], Volume3::constant(g.patch_dims, 1.0).unwrap()),
        ];
        let s = stitch(&two, d).unwrap();
        assert_eq!(s.get(1, 0, 0), 0.0);
        assert_eq!(s.get(2, 1, 1), 0.5);
        assert_eq!(s.get(3, 3, 3), 0.5);
        assert_eq!(s.get(5, 0, 0), 1.0);
    }

    #[test]
    fn random_patches_match_brute_force_mean() {
        let d = Dims::cube(8);
        let g = PatchGrid::new(d, Dims::cube(4)).unwrap();
        let patches: Vec<_> = g
            .origins
            .iter()
            .enumerate()
            .map(|(i, &o)| (o, random_volume(g.patch_dims, 100 + i as u64)))
            .collect();
        let s = stitch(&patches, d).unwrap();
        for z in 0..8 {
            for y in 0..8 {
                for x in 0..8 {
                    let mut sum = 0f64;
                    let mut n = 0;
                    for (o, p) in &patches {
                        let inside = (0..3).all(|k| [x, y, z][k] >= o[k] && [x, y, z][k] < o[k] + 4);
                        if inside {
                            sum += f64::from(p.get(x - o[0], y - o[1], z - o[2]));
                            n += 1;
                        }
                    }
                    assert_eq!(s.get(x, y, z), (sum / n as f64) as f32);
                }
            }
        }
        let mut reversed = patches.clone();
        reversed.reverse();
        assert_eq!(stitch(&reversed, d).unwrap(), s);
    }

    #[test]
    fn uncovered_and_out_of_bounds() {
        let d = Dims::cube(6);
        let p = Volume3::zeros(Dims::cube(4));
        assert!(stitch(&[([0, 0, 0], p.clone())], d).is_err());
        assert!(stitch(&[([4, 0, 0], p)], d).is_err());
    }

    #[test]
    fn binary_vote_ties_go_to_foreground() {
        let d = Dims::new(6, 4, 4);
        let pd = Dims::cube(4);
        let two = vec![
            ([0, 0, 0], Volume3::constant(pd, -0.5).unwrap()),
            ([2, 0, 0], Volume3::constant(pd, 0.5).unwrap()),
        ];
        let m = stitch_mask(&two, d, StitchMode::BinaryVote).unwrap();
        assert!(!m.is_set(0, 0, 0));
        assert!(m.is_set(2, 0, 0));
        let mean = stitch_mask(&two, d, StitchMode::Mean).unwrap();
        assert!(!mean.is_set(2, 0, 0), "mean is exactly 0, not above it");
        assert_eq!("binary-vote".parse::<StitchMode>().unwrap(), StitchMode::BinaryVote);
        assert!("median".parse::<StitchMode>().is_err());
    }

    #[test]
    fn sliding_window_pads_small_volumes() {
        let v = random_volume(Dims::new(5, 6, 3), 9);
        let out = sliding_window(&v, Dims::cube(4), |p| Ok(p.clone())).unwrap();
        assert_eq!(out, v);
        let big = random_volume(Dims::new(10, 8, 12), 3);
        let out = sliding_window(&big, Dims::new(4, 4, 6), |p| Ok(p.clone())).unwrap();
        assert_eq!(out, big);
    }
}
