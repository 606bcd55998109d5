//! Synthetic branching-tube phantoms and the corruption model that turns
//! their ground truth into imperfect "preliminary" segmentations.
//!
//! Tubes are swept spheres along straight segments. Every bifurcation
//! splits into two children inside a plane perpendicular to the parent's
//! own bifurcation plane, so branch counts are known in closed form:
//! a tree of depth `d` has `2^(d+1) - 1` branches.

use rand::RngExt;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::morphology::Connectivity;
use crate::rng::{stream, Purpose};
use crate::skeleton::{branch_regions, decompose, skeletonize, NodeKind, TreeGraph};
use crate::volume::{Dims, Mask3, Volume3};

/// Lumen, wall and parenchyma intensity model in Hounsfield-like units:
/// `(mean, standard deviation)`.
pub const LUMEN_HU: (f32, f32) = (-1000.0, 50.0);
pub const WALL_HU: (f32, f32) = (100.0, 50.0);
pub const BACKGROUND_HU: (f32, f32) = (-850.0, 80.0);
/// Window mapped linearly onto `[0, 1]` (values outside are clipped).
pub const HU_WINDOW: (f32, f32) = (-1200.0, 300.0);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TreeSpec {
    pub dims: [usize; 3],
    /// Number of bifurcation generations; 0 is a single tube.
    pub depth: usize,
    pub root_radius: f64,
    /// Radius multiplier per generation, in `(0, 1)`.
    pub radius_decay: f64,
    /// Uniform range for every branch length, in voxels.
    pub branch_length: [f64; 2],
    /// Uniform range for the angle between parent and child, in degrees.
    pub branching_angle: [f64; 2],
    pub wall_thickness: f64,
    pub seed: u64,
}

fn default_wall() -> f64 {
    1.5
}

impl Default for TreeSpec {
    fn default() -> Self {
        Self {
            dims: [48, 48, 48],
            depth: 3,
            root_radius: 2.5,
            radius_decay: 0.75,
            branch_length: [7.0, 10.0],
            branching_angle: [25.0, 40.0],
            wall_thickness: default_wall(),
            seed: 0,
        }
    }
}

impl TreeSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.dims.contains(&0) {
            return bad(format!("dims {:?} must be positive", self.dims));
        }
        if !(self.radius_decay > 0.0 && self.radius_decay < 1.0) {
            return bad(format!("radius_decay {} must lie in (0, 1)", self.radius_decay));
        }
        if self.radius_at(self.depth) < 1.0 {
            return bad(format!(
                "radius {:.3} at generation {} is below 1 voxel",
                self.radius_at(self.depth),
                self.depth
            ));
        }
        let [lo, hi] = self.branch_length;
        if !(lo > 0.0 && lo <= hi) {
            return bad(format!("branch_length range {:?} is invalid", self.branch_length));
        }
        let [alo, ahi] = self.branching_angle;
        if !(0.0..=90.0).contains(&alo) || !(alo..=90.0).contains(&ahi) {
            return bad(format!("branching_angle range {:?} is invalid", self.branching_angle));
        }
        if self.wall_thickness.is_nan() || self.wall_thickness < 0.0 {
            return bad("wall_thickness must be non-negative".into());
        }
        Ok(())
    }

    pub fn radius_at(&self, generation: usize) -> f64 {
        self.root_radius * self.radius_decay.powi(generation as i32)
    }

    pub fn expected_branches(&self) -> usize {
        (1 << (self.depth + 1)) - 1
    }
}

type Vec3 = [f64; 3];

fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}
fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}
fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}
fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}
fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}
fn normalize(a: Vec3) -> Vec3 {
    scale(a, 1.0 / norm(a))
}

/// One straight tube piece of the phantom.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub start: Vec3,
    pub end: Vec3,
    pub radius: f64,
    pub generation: usize,
    pub parent: Option<usize>,
}

impl Segment {
    fn distance(&self, p: Vec3) -> f64 {
        let ab = add(self.end, scale(self.start, -1.0));
        let ap = add(p, scale(self.start, -1.0));
        let t = (dot(ap, ab) / dot(ab, ab)).clamp(0.0, 1.0);
        let q = add(self.start, scale(ab, t));
        let d = add(p, scale(q, -1.0));
        dot(d, d).sqrt()
    }
}

/// A generated phantom: image rescaled to `[0, 1]`, lumen mask, geometry.
#[derive(Clone, Debug)]
pub struct SyntheticTree {
    pub image: Volume3,
    pub gt: Mask3,
    pub segments: Vec<Segment>,
}

fn lay_out(spec: &TreeSpec) -> Result<Vec<Segment>> {
    let mut rng = stream(spec.seed, Purpose::TreeGeometry);
    let d = spec.dims;
    let margin0 = spec.root_radius + spec.wall_thickness + 1.0;
    let root_start = [(d[0] as f64 - 1.0) / 2.0, (d[1] as f64 - 1.0) / 2.0, margin0];
    // (start, direction, in-plane split axis, generation, parent)
    let mut queue = std::collections::VecDeque::from([(root_start, [0.0, 0.0, 1.0], [1.0, 0.0, 0.0], 0usize, None)]);
    let mut segments = Vec::new();
    let mut first_bad: Option<usize> = None;
    while let Some((start, dir, split, generation, parent)) = queue.pop_front() {
        let length = rng.random_range(spec.branch_length[0]..=spec.branch_length[1]);
        let end = add(start, scale(dir, length));
        let radius = spec.radius_at(generation);
        let margin = radius + spec.wall_thickness + 1.0;
        let inside = |p: Vec3| (0..3).all(|k| p[k] >= margin && p[k] <= d[k] as f64 - 1.0 - margin);
        if !(inside(start) && inside(end)) {
            first_bad = Some(first_bad.map_or(generation, |g| g.min(generation)));
        }
        let id = segments.len();
        segments.push(Segment {
            start,
            end,
            radius,
            generation,
            parent,
        });
        if generation < spec.depth {
            let normal = normalize(cross(dir, split));
            for sign in [1.0, -1.0] {
                let angle = rng
                    .random_range(spec.branching_angle[0]..=spec.branching_angle[1])
                    .to_radians();
                let child = normalize(add(scale(dir, angle.cos()), scale(split, sign * angle.sin())));
                queue.push_back((end, child, normal, generation + 1, Some(id)));
            }
        }
    }
    if let Some(generation) = first_collision(&segments, spec.wall_thickness) {
        first_bad = Some(first_bad.map_or(generation, |g| g.min(generation)));
    }
    match first_bad {
        Some(generation) => Err(Error::TreeDoesNotFit { generation }),
        None => Ok(segments),
    }
}

/// Lowest generation at which two segments that share no endpoint come
/// closer than their walls allow.
fn first_collision(segments: &[Segment], wall: f64) -> Option<usize> {
    const SAMPLES: usize = 16;
    let touching = |a: &Segment, b: &Segment| {
        let near = |p: Vec3, q: Vec3| norm(add(p, scale(q, -1.0))) < 1e-9;
        near(a.start, b.start) || near(a.start, b.end) || near(a.end, b.start) || near(a.end, b.end)
    };
    let mut worst: Option<usize> = None;
    for (i, a) in segments.iter().enumerate() {
        for b in &segments[i + 1..] {
            if touching(a, b) {
                continue;
            }
            let gap = (0..=SAMPLES)
                .map(|k| {
                    let t = k as f64 / SAMPLES as f64;
                    b.distance(add(scale(a.start, 1.0 - t), scale(a.end, t)))
                })
                .fold(f64::INFINITY, f64::min);
            if gap < a.radius + b.radius + 2.0 * wall {
                let g = a.generation.max(b.generation);
                worst = Some(worst.map_or(g, |w| w.min(g)));
            }
        }
    }
    worst
}

/// Like [`generate`], but when the tree does not fit, retries up to
/// `attempts` times with the seed's upper 32 bits set to the attempt number.
/// Returns the spec that succeeded.
pub fn generate_fitting(spec: &TreeSpec, attempts: usize) -> Result<(TreeSpec, SyntheticTree)> {
    let mut last = None;
    for a in 0..attempts.max(1) as u64 {
        let s = TreeSpec {
            seed: spec.seed ^ (a << 32),
            ..spec.clone()
        };
        match generate(&s) {
            Ok(t) => return Ok((s, t)),
            Err(e @ Error::TreeDoesNotFit { .. }) => last = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last.expect("at least one attempt"))
}

/// Builds image and lumen mask for `spec`. Deterministic in `spec.seed`.
pub fn generate(spec: &TreeSpec) -> Result<SyntheticTree> {
    spec.validate()?;
    let segments = lay_out(spec)?;
    let dims = Dims::from(spec.dims);
    // signed clearance: distance to a segment minus its radius, minimised
    let mut clearance = vec![f64::INFINITY; dims.len()];
    let reach = spec.wall_thickness + 1.0;
    for seg in &segments {
        let lo: Vec<usize> = (0..3)
            .map(|k| (seg.start[k].min(seg.end[k]) - seg.radius - reach).floor().max(0.0) as usize)
            .collect();
        let hi: Vec<usize> = (0..3)
            .map(|k| {
                ((seg.start[k].max(seg.end[k]) + seg.radius + reach).ceil() as usize).min(spec.dims[k] - 1)
            })
            .collect();
        for z in lo[2]..=hi[2] {
            for y in lo[1]..=hi[1] {
                for x in lo[0]..=hi[0] {
                    let c = seg.distance([x as f64, y as f64, z as f64]) - seg.radius;
                    let i = dims.index(x, y, z);
                    if c < clearance[i] {
                        clearance[i] = c;
                    }
                }
            }
        }
    }
    let gt_data: Vec<u8> = clearance.iter().map(|&c| u8::from(c <= 0.0)).collect();
    let gt = Mask3::from_vec(dims, gt_data)?;

    let mut rng = stream(spec.seed, Purpose::ImageNoise);
    let normal = |(m, s): (f32, f32)| Normal::new(m, s).expect("positive deviation");
    let (lumen, wall, background) = (normal(LUMEN_HU), normal(WALL_HU), normal(BACKGROUND_HU));
    let (lo, hi) = HU_WINDOW;
    let image: Vec<f32> = clearance
        .iter()
        .map(|&c| {
            let hu = if c <= 0.0 {
                lumen.sample(&mut rng)
            } else if c <= spec.wall_thickness {
                wall.sample(&mut rng)
            } else {
                background.sample(&mut rng)
            };
            ((hu - lo) / (hi - lo)).clamp(0.0, 1.0)
        })
        .collect();
    Ok(SyntheticTree {
        image: Volume3::from_vec(dims, image)?,
        gt,
        segments,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorruptionSpec {
    pub breakage_count: usize,
    /// Slab thickness removed at each breakage, in voxels.
    pub breakage_gap: usize,
    /// Probability of deleting each terminal branch.
    pub branch_deletion_prob: f64,
    /// Probability of flipping each voxel on the inner/outer boundary.
    pub boundary_noise_prob: f64,
    pub seed: u64,
}

impl Default for CorruptionSpec {
    fn default() -> Self {
        Self {
            breakage_count: 2,
            breakage_gap: 4,
            branch_deletion_prob: 0.3,
            boundary_noise_prob: 0.0,
            seed: 0,
        }
    }
}

impl CorruptionSpec {
    /// The spec that returns the input unchanged.
    pub fn identity() -> Self {
        Self {
            breakage_count: 0,
            breakage_gap: 1,
            branch_deletion_prob: 0.0,
            boundary_noise_prob: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("branch_deletion_prob", self.branch_deletion_prob),
            ("boundary_noise_prob", self.boundary_noise_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidArgument(format!("{name} {p} outside [0, 1]")));
            }
        }
        if self.breakage_gap < 1 {
            return Err(Error::InvalidArgument("breakage_gap must be at least 1".into()));
        }
        Ok(())
    }
}

/// The root branch: the one owning the most mask voxels (ties: smaller id).
pub fn root_branch(tree: &TreeGraph, regions: &[u32]) -> Option<usize> {
    let mut volume = vec![0usize; tree.branches.len() + 1];
    for &l in regions {
        volume[l as usize] += 1;
    }
    (1..volume.len()).max_by(|&a, &b| volume[a].cmp(&volume[b]).then(b.cmp(&a)))
}

/// Non-root branches that end in an endpoint.
pub fn terminal_branches(tree: &TreeGraph, root: Option<usize>) -> Vec<usize> {
    tree.branches
        .iter()
        .filter(|b| Some(b.id) != root)
        .filter(|b| {
            let kinds = [tree.nodes[b.start].kind, tree.nodes[b.end].kind];
            kinds.contains(&NodeKind::Endpoint) && kinds.contains(&NodeKind::BranchPoint)
        })
        .map(|b| b.id)
        .collect()
}

/// Emulates a first-stage segmentation: deletes terminal branches, cuts
/// breakages across branches, and jitters the boundary.
pub fn corrupt(gt: &Mask3, spec: &CorruptionSpec) -> Result<Mask3> {
    spec.validate()?;
    if gt.count() == 0 {
        return Err(Error::InvalidArgument("cannot corrupt an empty mask".into()));
    }
    let d = gt.dims();
    let tree = decompose(&skeletonize(gt), gt.spacing());
    let regions = branch_regions(gt, &tree);
    let root = root_branch(&tree, &regions);
    let mut out = gt.clone();

    let mut deleted = vec![false; tree.branches.len() + 1];
    if spec.branch_deletion_prob > 0.0 {
        let mut rng = stream(spec.seed, Purpose::BranchDeletion);
        for b in terminal_branches(&tree, root) {
            if rng.random_bool(spec.branch_deletion_prob) {
                deleted[b] = true;
            }
        }
        for (i, &l) in regions.iter().enumerate() {
            if deleted[l as usize] {
                out.set_index(i, false);
            }
        }
    }

    if spec.breakage_count > 0 {
        let gap = spec.breakage_gap;
        // slab centres keep one voxel clear of either end of the branch path
        let margin = gap / 2 + 1;
        let mut candidates: Vec<(usize, usize)> = tree
            .branches
            .iter()
            .filter(|b| !deleted[b.id])
            .flat_map(|b| {
                let n = b.path.len();
                (margin..n.saturating_sub(margin)).map(move |k| (b.id, k))
            })
            .collect();
        let mut rng = stream(spec.seed, Purpose::Breakage);
        for made in 0..spec.breakage_count {
            if candidates.is_empty() {
                return Err(Error::Domain(format!(
                    "only {made} interior positions available for {} breakages",
                    spec.breakage_count
                )));
            }
            let (bid, k) = candidates.swap_remove(rng.random_range(0..candidates.len()));
            candidates.retain(|&(b, j)| b != bid || j.abs_diff(k) > gap + 1);
            cut_slab(&mut out, gt, &tree.branches[bid - 1].path, k, gap);
        }
    }

    if spec.boundary_noise_prob > 0.0 {
        let mut rng = stream(spec.seed, Purpose::BoundaryNoise);
        let offsets = Connectivity::TwentySix.offsets();
        let snapshot = out.clone();
        for i in 0..d.len() {
            let [x, y, z] = d.coords(i);
            let on = snapshot.at(i) != 0;
            let boundary = offsets
                .iter()
                .any(|o| snapshot.is_set_signed(x as isize + o[0], y as isize + o[1], z as isize + o[2]) != on);
            if boundary && rng.random_bool(spec.boundary_noise_prob) {
                out.set_index(i, !on);
            }
        }
    }
    Ok(out)
}

/// Like [`corrupt`], but when the tree has too few positions for the
/// breakages, retries up to `attempts` times with the seed's upper 32 bits
/// set to the attempt number. Returns the spec that succeeded.
pub fn corrupt_fitting(gt: &Mask3, spec: &CorruptionSpec, attempts: usize) -> Result<(CorruptionSpec, Mask3)> {
    let mut last = None;
    for a in 0..attempts.max(1) as u64 {
        let s = CorruptionSpec {
            seed: spec.seed ^ (a << 32),
            ..spec.clone()
        };
        match corrupt(gt, &s) {
            Ok(m) => return Ok((s, m)),
            Err(e @ Error::Domain(_)) => last = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last.expect("at least one attempt"))
}

/// Clears the slab of `gap` voxel layers perpendicular to the path at `k`.
fn cut_slab(out: &mut Mask3, gt: &Mask3, path: &[[usize; 3]], k: usize, gap: usize) {
    let d = gt.dims();
    let at = |j: usize| {
        let p = path[j.min(path.len() - 1)];
        [p[0] as f64, p[1] as f64, p[2] as f64]
    };
    let centre = at(k);
    let tangent = normalize(add(at(k + 2), scale(at(k.saturating_sub(2)), -1.0)));
    // local lumen radius: distance to the nearest background voxel
    let mut radius = 1.0f64;
    'grow: for r in 1..(d.nx.max(d.ny).max(d.nz)) as isize {
        for dz in -r..=r {
            for dy in -r..=r {
                for dx in -r..=r {
                    let p = [centre[0] as isize + dx, centre[1] as isize + dy, centre[2] as isize + dz];
                    if !gt.is_set_signed(p[0], p[1], p[2]) {
                        radius = ((dx * dx + dy * dy + dz * dz) as f64).sqrt();
                        break 'grow;
                    }
                }
            }
        }
    }
    let reach = radius + 1.5;
    let half = gap as f64 / 2.0;
    let span = (reach.max(half) + 1.0).ceil() as isize;
    for dz in -span..=span {
        for dy in -span..=span {
            for dx in -span..=span {
                let v = [dx as f64, dy as f64, dz as f64];
                let along = dot(v, tangent);
                let across = add(v, scale(tangent, -along));
                if along.abs() <= half && dot(across, across).sqrt() <= reach {
                    let p = [centre[0] as isize + dx, centre[1] as isize + dy, centre[2] as isize + dz];
                    if let Some(i) = d.checked_index(p[0], p[1], p[2]) {
                        out.set_index(i, false);
                    }
                }
            }
        }
    }
}
