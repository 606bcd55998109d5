//! Binary morphology and connected-component analysis.

use crate::error::{Error, Result};
use crate::volume::{Dims, Mask3};

/// Cubic (box) structuring element of Chebyshev radius `radius`.
/// The 5×5×5 kernel used before discrimination is radius 2.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StructuringElement {
    pub radius: usize,
}

impl StructuringElement {
    pub const fn cube(radius: usize) -> Self {
        Self { radius }
    }

    pub const fn side(&self) -> usize {
        2 * self.radius + 1
    }
}

/// Box dilation with clipped borders. The box is separable, so this runs as
/// three running-maximum passes.
pub fn dilate(mask: &Mask3, se: StructuringElement) -> Mask3 {
    if se.radius == 0 {
        return mask.clone();
    }
    let d = mask.dims();
    let mut cur: Vec<u8> = mask.data().to_vec();
    let mut next = vec![0u8; cur.len()];
    let r = se.radius;
    let strides = [1, d.nx, d.nx * d.ny];
    let extents = d.as_array();
    for axis in 0..3 {
        let n = extents[axis];
        let stride = strides[axis];
        for (i, out) in next.iter_mut().enumerate() {
            let pos = (i / stride) % n;
            let lo = pos.saturating_sub(r);
            let hi = (pos + r).min(n - 1);
            let base = i - pos * stride;
            *out = u8::from((lo..=hi).any(|p| cur[base + p * stride] != 0));
        }
        std::mem::swap(&mut cur, &mut next);
    }
    Mask3::from_vec(d, cur)
        .expect("dilation preserves binary values")
        .with_spacing(mask.spacing())
}

/// Voxel adjacency used for components and skeleton graphs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Connectivity {
    /// Face neighbours.
    Six,
    /// Face and edge neighbours.
    Eighteen,
    /// Face, edge and corner neighbours.
    #[default]
    TwentySix,
}

impl Connectivity {
    pub fn from_count(n: u32) -> Result<Self> {
        match n {
            6 => Ok(Self::Six),
            18 => Ok(Self::Eighteen),
            26 => Ok(Self::TwentySix),
            other => Err(Error::InvalidArgument(format!(
                "connectivity must be 6, 18 or 26, got {other}"
            ))),
        }
    }

    /// Whether offset `(dx, dy, dz)` with components in `-1..=1` is a neighbour.
    pub fn admits(&self, dx: isize, dy: isize, dz: isize) -> bool {
        let nonzero = (dx != 0) as u8 + (dy != 0) as u8 + (dz != 0) as u8;
        match self {
            Self::Six => nonzero == 1,
            Self::Eighteen => (1..=2).contains(&nonzero),
            Self::TwentySix => nonzero >= 1,
        }
    }

    /// All neighbour offsets in a fixed z, y, x order.
    pub fn offsets(&self) -> Vec<[isize; 3]> {
        let mut out = Vec::with_capacity(26);
        for dz in -1..=1 {
            for dy in -1..=1 {
                for dx in -1..=1 {
                    if self.admits(dx, dy, dz) {
                        out.push([dx, dy, dz]);
                    }
                }
            }
        }
        out
    }

    /// Offsets that precede the centre in linear (x-fastest) scan order.
    fn backward_offsets(&self) -> Vec<[isize; 3]> {
        self.offsets()
            .into_iter()
            .filter(|o| (o[2], o[1], o[0]) < (0, 0, 0))
            .collect()
    }
}

/// Component labelling: `labels[i] == 0` is background; components are
/// numbered `1..=K` in order of their smallest linear index.
#[derive(Clone, Debug)]
pub struct Components {
    pub dims: Dims,
    pub labels: Vec<u32>,
    /// `sizes[k - 1]` is the voxel count of component `k`.
    pub sizes: Vec<usize>,
}

impl Components {
    pub fn count(&self) -> usize {
        self.sizes.len()
    }

    /// The mask of component `label`.
    pub fn mask_of(&self, label: u32) -> Mask3 {
        let data = self.labels.iter().map(|&l| u8::from(l == label)).collect();
        Mask3::from_vec(self.dims, data).expect("labels form a binary mask")
    }
}

struct DisjointSet {
    parent: Vec<u32>,
}

impl DisjointSet {
    fn find(&mut self, mut node: u32) -> u32 {
        let mut root = node;
        while self.parent[root as usize] != root {
            root = self.parent[root as usize];
        }
        while self.parent[node as usize] != root {
            let next = self.parent[node as usize];
            self.parent[node as usize] = root;
            node = next;
        }
        root
    }

    /// Keeps the smaller id as root so roots are the earliest provisional labels.
    fn union(&mut self, a: u32, b: u32) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi as usize] = lo;
        }
    }
}

/// Two-pass union-find labelling.
pub fn connected_components(mask: &Mask3, connectivity: Connectivity) -> Components {
    let d = mask.dims();
    let back = connectivity.backward_offsets();
    let mut provisional = vec![0u32; d.len()];
    let mut sets = DisjointSet { parent: vec![0] };
    for z in 0..d.nz {
        for y in 0..d.ny {
            for x in 0..d.nx {
                let i = d.index(x, y, z);
                if mask.at(i) == 0 {
                    continue;
                }
                let mut label = 0u32;
                for o in &back {
                    let Some(j) = d.checked_index(
                        x as isize + o[0],
                        y as isize + o[1],
                        z as isize + o[2],
                    ) else {
                        continue;
                    };
                    let lj = provisional[j];
                    if lj == 0 {
                        continue;
                    }
                    if label == 0 {
                        label = lj;
                    } else {
                        sets.union(label, lj);
                    }
                }
                if label == 0 {
                    label = sets.parent.len() as u32;
                    sets.parent.push(label);
                }
                provisional[i] = label;
            }
        }
    }
    let mut relabel = vec![0u32; sets.parent.len()];
    let mut sizes = Vec::new();
    let mut labels = provisional;
    for l in labels.iter_mut() {
        if *l == 0 {
            continue;
        }
        let root = sets.find(*l) as usize;
        if relabel[root] == 0 {
            sizes.push(0);
            relabel[root] = sizes.len() as u32;
        }
        *l = relabel[root];
        sizes[*l as usize - 1] += 1;
    }
    Components {
        dims: d,
        labels,
        sizes,
    }
}

/// Keeps the largest component. Equal sizes resolve to the component whose
/// smallest linear index comes first.
pub fn largest_component(mask: &Mask3, connectivity: Connectivity) -> Mask3 {
    let cc = connected_components(mask, connectivity);
    let Some(best) = cc
        .sizes
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
        .map(|(k, _)| k as u32 + 1)
    else {
        return Mask3::zeros(mask.dims()).with_spacing(mask.spacing());
    };
    cc.mask_of(best).with_spacing(mask.spacing())
}
