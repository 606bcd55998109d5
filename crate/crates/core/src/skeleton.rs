//! Centreline extraction by 3-D topological thinning and branch-graph
//! decomposition.
//!
//! Thinning removes border points one face direction at a time. A point is
//! deleted only when it is simple for the (26, 6) topology (exactly one
//! 26-component of object neighbours and exactly one 6-component of
//! background in the 18-neighbourhood touching it) and it is not an end
//! point. Candidates are collected in x, y, z scan order and then re-checked
//! sequentially, so the result does not depend on how the scan is split up.

use serde::Serialize;

use crate::morphology::Connectivity;
use crate::volume::{Dims, Mask3, Spacing};

/// Centreline voxels of a binary mask.
#[derive(Clone, Debug, PartialEq)]
pub struct Skeleton {
    pub mask: Mask3,
    pub source_dims: Dims,
}

impl Skeleton {
    pub fn count(&self) -> usize {
        self.mask.count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }
}

/// Face-neighbour offsets; the order fixes the directional sub-passes.
const FACE_DIRECTIONS: [[isize; 3]; 6] = [
    [0, -1, 0],
    [0, 1, 0],
    [1, 0, 0],
    [-1, 0, 0],
    [0, 0, 1],
    [0, 0, -1],
];

#[inline]
fn cube_index(dx: isize, dy: isize, dz: isize) -> usize {
    ((dz + 1) * 9 + (dy + 1) * 3 + (dx + 1)) as usize
}

fn neighbourhood(mask: &Mask3, x: usize, y: usize, z: usize) -> [bool; 27] {
    let mut n = [false; 27];
    let (x, y, z) = (x as isize, y as isize, z as isize);
    for dz in -1..=1 {
        for dy in -1..=1 {
            for dx in -1..=1 {
                n[cube_index(dx, dy, dz)] = mask.is_set_signed(x + dx, y + dy, z + dz);
            }
        }
    }
    n[13] = false;
    n
}

#[inline]
fn offset_of(i: usize) -> [isize; 3] {
    [(i % 3) as isize - 1, ((i / 3) % 3) as isize - 1, (i / 9) as isize - 1]
}

fn is_18_neighbour(i: usize) -> bool {
    let o = offset_of(i);
    let nz = o.iter().filter(|&&v| v != 0).count();
    (1..=2).contains(&nz)
}

fn is_6_neighbour(i: usize) -> bool {
    let o = offset_of(i);
    o.iter().filter(|&&v| v != 0).count() == 1
}

/// Counts components among `members` of the punctured 3×3×3 cube.
fn count_components(members: &[bool; 27], adjacency: Connectivity, require_face_contact: bool) -> usize {
    let mut seen = [false; 27];
    let mut count = 0;
    let mut stack = Vec::with_capacity(27);
    for start in 0..27 {
        if !members[start] || seen[start] {
            continue;
        }
        let mut touches_face = false;
        seen[start] = true;
        stack.push(start);
        while let Some(i) = stack.pop() {
            touches_face |= is_6_neighbour(i);
            let a = offset_of(i);
            for j in 0..27 {
                if !members[j] || seen[j] {
                    continue;
                }
                let b = offset_of(j);
                let (dx, dy, dz) = (b[0] - a[0], b[1] - a[1], b[2] - a[2]);
                if dx.abs() <= 1 && dy.abs() <= 1 && dz.abs() <= 1 && adjacency.admits(dx, dy, dz) {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        if !require_face_contact || touches_face {
            count += 1;
        }
    }
    count
}

/// (26, 6) simple-point test on a punctured neighbourhood.
fn is_simple(n: &[bool; 27]) -> bool {
    let fg_components = count_components(n, Connectivity::TwentySix, false);
    if fg_components != 1 {
        return false;
    }
    let mut bg = [false; 27];
    for i in 0..27 {
        bg[i] = i != 13 && is_18_neighbour(i) && !n[i];
    }
    count_components(&bg, Connectivity::Six, true) == 1
}

fn neighbour_count(n: &[bool; 27]) -> usize {
    n.iter().filter(|&&b| b).count()
}

fn deletable(mask: &Mask3, x: usize, y: usize, z: usize) -> bool {
    let n = neighbourhood(mask, x, y, z);
    neighbour_count(&n) > 1 && is_simple(&n)
}

/// Topology-preserving thinning to a one-voxel-wide centreline.
pub fn skeletonize(mask: &Mask3) -> Skeleton {
    let mut img = mask.clone();
    // Directional passes first only peel a border point whose opposite face
    // neighbour is still set, so a one-voxel-thick ribbon is narrowed across
    // its width instead of being eaten along its length. A final
    // unrestricted sweep removes whatever simple points are left.
    while thinning_sweep(&mut img, true) {}
    while thinning_sweep(&mut img, false) {}
    for _ in 0..SPUR_ROUNDS {
        if !prune_spurs(&mut img, mask) {
            break;
        }
        while thinning_sweep(&mut img, false) {}
    }
    Skeleton {
        mask: img,
        source_dims: mask.dims(),
    }
}

const SPUR_ROUNDS: usize = 3;

/// Distance from `p` to the nearest background voxel of `mask` (grid units).
fn clearance(mask: &Mask3, p: [usize; 3]) -> f64 {
    let d = mask.dims();
    let limit = d.nx.max(d.ny).max(d.nz) as isize;
    let mut best = f64::INFINITY;
    for r in 1..=limit {
        if (r - 1) as f64 >= best {
            break;
        }
        for dz in -r..=r {
            for dy in -r..=r {
                for dx in -r..=r {
                    if dx.abs().max(dy.abs()).max(dz.abs()) != r {
                        continue;
                    }
                    let q = [p[0] as isize + dx, p[1] as isize + dy, p[2] as isize + dz];
                    if !mask.is_set_signed(q[0], q[1], q[2]) {
                        best = best.min(((dx * dx + dy * dy + dz * dz) as f64).sqrt());
                    }
                }
            }
        }
    }
    best
}

/// Removes end branches shorter than twice the lumen clearance at their
/// junction plus two voxels.
/// These come from surface bumps, not from real branches.
fn prune_spurs(img: &mut Mask3, source: &Mask3) -> bool {
    let tree = decompose(
        &Skeleton {
            mask: img.clone(),
            source_dims: img.dims(),
        },
        [1.0; 3],
    );
    let mut pruned = false;
    for b in &tree.branches {
        let (s, e) = (tree.nodes[b.start].kind, tree.nodes[b.end].kind);
        let (junction, tip_first) = match (s, e) {
            (NodeKind::BranchPoint, NodeKind::Endpoint) => (b.path[0], false),
            (NodeKind::Endpoint, NodeKind::BranchPoint) => (b.path[b.path.len() - 1], true),
            _ => continue,
        };
        if b.length >= 2.0 * clearance(source, junction) + 2.0 {
            continue;
        }
        let n = b.path.len();
        let spur = if tip_first { &b.path[..n - 1] } else { &b.path[1..] };
        for p in spur {
            img.set(p[0], p[1], p[2], false);
        }
        pruned = true;
    }
    pruned
}

/// One round of the six directional sub-passes; returns whether anything changed.
fn thinning_sweep(img: &mut Mask3, require_backing: bool) -> bool {
    let d = img.dims();
    let mut changed = false;
    let mut candidates = Vec::new();
    for dir in FACE_DIRECTIONS {
        candidates.clear();
        for z in 0..d.nz {
            for y in 0..d.ny {
                for x in 0..d.nx {
                    if !img.is_set(x, y, z) {
                        continue;
                    }
                    let (xi, yi, zi) = (x as isize, y as isize, z as isize);
                    if img.is_set_signed(xi + dir[0], yi + dir[1], zi + dir[2]) {
                        continue;
                    }
                    if require_backing && !img.is_set_signed(xi - dir[0], yi - dir[1], zi - dir[2]) {
                        continue;
                    }
                    if deletable(img, x, y, z) {
                        candidates.push([x, y, z]);
                    }
                }
            }
        }
        for &[x, y, z] in &candidates {
            if deletable(img, x, y, z) {
                img.set(x, y, z, false);
                changed = true;
            }
        }
    }
    changed
}

/// Whether no simple non-end point remains.
pub fn is_thin(skeleton: &Skeleton) -> bool {
    let m = &skeleton.mask;
    let d = m.dims();
    m.foreground().all(|i| {
        let [x, y, z] = d.coords(i);
        !deletable(m, x, y, z)
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    /// One skeleton neighbour.
    Endpoint,
    /// A 26-connected cluster of voxels with three or more neighbours.
    BranchPoint,
    /// Stand-in node for a closed loop without end or branch points.
    Loop,
    /// A skeleton voxel with no neighbours.
    Isolated,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Node {
    pub id: usize,
    pub kind: NodeKind,
    pub voxels: Vec<[usize; 3]>,
    /// Branch ids attached to this node; loops appear twice.
    pub branches: Vec<usize>,
}

impl Node {
    pub fn degree(&self) -> usize {
        self.branches.len()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Branch {
    /// 1-based, matching the labels produced by [`branch_regions`].
    pub id: usize,
    pub start: usize,
    pub end: usize,
    /// Ordered voxels from the attachment voxel of `start` to that of `end`.
    pub path: Vec<[usize; 3]>,
    pub length: f64,
}

impl Branch {
    /// Path voxels strictly between the two node attachments.
    pub fn interior(&self) -> &[[usize; 3]] {
        if self.path.len() <= 2 {
            &[]
        } else {
            &self.path[1..self.path.len() - 1]
        }
    }
}

/// Skeleton decomposed into nodes and branches.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TreeGraph {
    pub dims: Dims,
    pub spacing: Spacing,
    pub nodes: Vec<Node>,
    pub branches: Vec<Branch>,
    /// Ids of isolated single-voxel nodes, which carry no branch.
    pub isolated: Vec<usize>,
}

impl TreeGraph {
    pub fn total_length(&self) -> f64 {
        self.branches.iter().map(|b| b.length).sum()
    }

    pub fn branch_point_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.kind == NodeKind::BranchPoint).count()
    }

    pub fn endpoint_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.kind == NodeKind::Endpoint).count()
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("tree graph serialises")
    }
}

/// Physical length of one voxel step: 1, √2 or √3 scaled by spacing.
pub fn step_length(a: [usize; 3], b: [usize; 3], spacing: Spacing) -> f64 {
    (0..3)
        .map(|k| {
            let d = (a[k] as f64 - b[k] as f64) * spacing[k];
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

pub fn path_length(path: &[[usize; 3]], spacing: Spacing) -> f64 {
    path.windows(2).map(|w| step_length(w[0], w[1], spacing)).sum()
}

/// Splits a thin skeleton into nodes and branches.
pub fn decompose(skeleton: &Skeleton, spacing: Spacing) -> TreeGraph {
    let m = &skeleton.mask;
    let d = m.dims();
    let offsets = Connectivity::TwentySix.offsets();
    let neighbours = |i: usize| -> Vec<usize> {
        let [x, y, z] = d.coords(i);
        offsets
            .iter()
            .filter_map(|o| d.checked_index(x as isize + o[0], y as isize + o[1], z as isize + o[2]))
            .filter(|&j| m.at(j) != 0)
            .collect()
    };
    let voxels: Vec<usize> = m.foreground().collect();
    let mut degree = vec![0usize; d.len()];
    for &i in &voxels {
        degree[i] = neighbours(i).len();
    }

    // node_of[i] = node id + 1 for node voxels
    let mut node_of = vec![0usize; d.len()];
    let mut nodes: Vec<Node> = Vec::new();
    let mut isolated = Vec::new();
    for &i in &voxels {
        if node_of[i] != 0 {
            continue;
        }
        let kind = match degree[i] {
            0 => NodeKind::Isolated,
            1 => NodeKind::Endpoint,
            2 => continue,
            _ => NodeKind::BranchPoint,
        };
        let id = nodes.len();
        let mut members = vec![i];
        node_of[i] = id + 1;
        if kind == NodeKind::BranchPoint {
            let mut k = 0;
            while k < members.len() {
                for j in neighbours(members[k]) {
                    if degree[j] >= 3 && node_of[j] == 0 {
                        node_of[j] = id + 1;
                        members.push(j);
                    }
                }
                k += 1;
            }
            members.sort_unstable();
        }
        if kind == NodeKind::Isolated {
            isolated.push(id);
        }
        nodes.push(Node {
            id,
            kind,
            voxels: members.iter().map(|&v| d.coords(v)).collect(),
            branches: Vec::new(),
        });
    }

    let mut visited = vec![false; d.len()];
    let mut branches: Vec<Branch> = Vec::new();
    let mut direct_links = std::collections::BTreeSet::new();
    let mut push_branch = |nodes: &mut Vec<Node>, start: usize, end: usize, path: Vec<usize>| {
        let path: Vec<[usize; 3]> = path.iter().map(|&v| d.coords(v)).collect();
        let id = branches.len() + 1;
        let length = path_length(&path, spacing);
        nodes[start].branches.push(id);
        nodes[end].branches.push(id);
        branches.push(Branch {
            id,
            start,
            end,
            path,
            length,
        });
    };

    // Trace from every node voxel through each unvisited path neighbour.
    let node_voxels: Vec<usize> = voxels.iter().copied().filter(|&i| node_of[i] != 0).collect();
    for &a in &node_voxels {
        let start = node_of[a] - 1;
        for b in neighbours(a) {
            if node_of[b] != 0 {
                let other = node_of[b] - 1;
                if other != start && a < b && direct_links.insert((a, b)) {
                    push_branch(&mut nodes, start, other, vec![a, b]);
                }
                continue;
            }
            if visited[b] {
                continue;
            }
            let mut path = vec![a, b];
            visited[b] = true;
            let mut prev = a;
            let mut cur = b;
            let end = loop {
                let next: Vec<usize> = neighbours(cur).into_iter().filter(|&n| n != prev).collect();
                // Prefer stepping into a node over continuing along the path.
                if let Some(&n) = next.iter().find(|&&n| node_of[n] != 0) {
                    path.push(n);
                    break node_of[n] - 1;
                }
                match next.iter().find(|&&n| !visited[n]) {
                    Some(&n) => {
                        visited[n] = true;
                        path.push(n);
                        prev = cur;
                        cur = n;
                    }
                    None => {
                        // dead end on already traced voxels; close on the start node
                        path.push(a);
                        break start;
                    }
                }
            };
            push_branch(&mut nodes, start, end, path);
        }
    }

    // Closed loops made only of path voxels.
    for &i in &voxels {
        if visited[i] || node_of[i] != 0 {
            continue;
        }
        let id = nodes.len();
        nodes.push(Node {
            id,
            kind: NodeKind::Loop,
            voxels: vec![d.coords(i)],
            branches: Vec::new(),
        });
        visited[i] = true;
        let mut path = vec![i];
        let mut prev = usize::MAX;
        let mut cur = i;
        loop {
            let next = neighbours(cur)
                .into_iter()
                .find(|&n| n != prev && !visited[n]);
            match next {
                Some(n) => {
                    visited[n] = true;
                    path.push(n);
                    prev = cur;
                    cur = n;
                }
                None => {
                    path.push(i);
                    break;
                }
            }
        }
        push_branch(&mut nodes, id, id, path);
    }

    TreeGraph {
        dims: d,
        spacing,
        nodes,
        branches,
        isolated,
    }
}

/// Assigns every foreground voxel of `gt` the id of its nearest branch
/// (Euclidean distance to the branch path; ties go to the smaller id).
/// Background voxels are 0. With no branches, everything is 0.
pub fn branch_regions(gt: &Mask3, tree: &TreeGraph) -> Vec<u32> {
    let d = gt.dims();
    let s = tree.spacing;
    let mut labels = vec![0u32; d.len()];
    let points: Vec<([f64; 3], u32)> = tree
        .branches
        .iter()
        .flat_map(|b| {
            b.path.iter().map(move |p| {
                (
                    [p[0] as f64 * s[0], p[1] as f64 * s[1], p[2] as f64 * s[2]],
                    b.id as u32,
                )
            })
        })
        .collect();
    if points.is_empty() {
        return labels;
    }
    for i in gt.foreground() {
        let [x, y, z] = d.coords(i);
        let q = [x as f64 * s[0], y as f64 * s[1], z as f64 * s[2]];
        let mut best = (f64::INFINITY, u32::MAX);
        for (p, id) in &points {
            let dist = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2);
            if dist < best.0 || (dist == best.0 && *id < best.1) {
                best = (dist, *id);
            }
        }
        labels[i] = best.1;
    }
    labels
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::morphology::{connected_components, dilate, StructuringElement};

    fn line_mask(d: Dims, len: usize) -> Mask3 {
        Mask3::from_fn(d, |x, y, z| y == d.ny / 2 && z == d.nz / 2 && x >= 2 && x < 2 + len)
    }

    /// Trunk along -z from the junction, two diagonal arms in the x-z plane.
    pub(crate) fn y_tree(arm: usize) -> Mask3 {
        let n = 2 * arm + 5;
        let c = (n / 2) as isize;
        let d = Dims::new(n, 5, n);
        let mut m = Mask3::zeros(d);
        m.set(c as usize, 2, c as usize, true);
        for k in 1..=arm as isize {
            m.set(c as usize, 2, (c - k) as usize, true);
            m.set((c + k) as usize, 2, (c + k) as usize, true);
            m.set((c - k) as usize, 2, (c + k) as usize, true);
        }
        m
    }

    #[test]
    fn straight_line_is_a_fixed_point() {
        let m = line_mask(Dims::new(14, 5, 5), 10);
        let s = skeletonize(&m);
        assert_eq!(s.mask, m);
        assert!(is_thin(&s));
    }

    #[test]
    fn empty_mask_gives_empty_skeleton() {
        let s = skeletonize(&Mask3::zeros(Dims::cube(6)));
        assert!(s.is_empty());
        let t = decompose(&s, [1.0; 3]);
        assert!(t.branches.is_empty() && t.nodes.is_empty());
    }

    #[test]
    fn solid_bar_thins_to_a_single_path() {
        let d = Dims::new(7, 7, 16);
        let bar = Mask3::from_fn(d, |x, y, z| (2..5).contains(&x) && (2..5).contains(&y) && (2..14).contains(&z));
        let s = skeletonize(&bar);
        assert!(s.mask.is_subset_of(&bar));
        assert!(is_thin(&s));
        assert_eq!(connected_components(&s.mask, Connectivity::TwentySix).count(), 1);
        let t = decompose(&s, [1.0; 3]);
        assert_eq!(t.branches.len(), 1, "{t:?}");
        assert_eq!(t.endpoint_count(), 2);
        let zs: Vec<usize> = t.nodes.iter().map(|n| n.voxels[0][2]).collect();
        let (lo, hi) = (*zs.iter().min().unwrap(), *zs.iter().max().unwrap());
        // end slabs: within one cross-section radius of the bar ends
        assert!(lo <= 3 && hi >= 12, "endpoints at z = {zs:?}");
    }

    #[test]
    fn line_decomposes_into_one_branch() {
        let t = decompose(&skeletonize(&line_mask(Dims::new(14, 5, 5), 10)), [1.0; 3]);
        assert_eq!(t.branches.len(), 1);
        assert_eq!(t.branches[0].length, 9.0);
        assert_eq!(t.endpoint_count(), 2);
        assert_eq!(t.branch_point_count(), 0);
    }

    #[test]
    fn spacing_scales_lengths() {
        let t = decompose(&skeletonize(&line_mask(Dims::new(14, 5, 5), 10)), [0.5, 2.0, 2.0]);
        assert!((t.total_length() - 4.5).abs() < 1e-12);
    }

    #[test]
    fn y_tree_has_three_branches() {
        let m = y_tree(5);
        let s = skeletonize(&m);
        assert_eq!(s.mask, m, "a one-voxel-wide Y is already thin");
        let t = decompose(&s, [1.0; 3]);
        assert_eq!(t.branches.len(), 3);
        assert_eq!(t.branch_point_count(), 1);
        assert_eq!(t.endpoint_count(), 3);
        let junction = t.nodes.iter().find(|n| n.kind == NodeKind::BranchPoint).unwrap();
        assert_eq!(junction.degree(), 3);
        let expected = 5.0 + 2.0 * 5.0 * 2f64.sqrt();
        assert!((t.total_length() - expected).abs() < 1e-12);
        // every non-node voxel sits in exactly one branch interior
        let interior: usize = t.branches.iter().map(|b| b.interior().len()).sum();
        let node_voxels: usize = t.nodes.iter().map(|n| n.voxels.len()).sum();
        assert_eq!(interior + node_voxels, s.count());
    }

    #[test]
    fn two_disjoint_lines() {
        let d = Dims::new(12, 7, 5);
        let m = Mask3::from_fn(d, |x, y, z| z == 2 && (y == 1 || y == 5) && (1..10).contains(&x));
        let t = decompose(&skeletonize(&m), [1.0; 3]);
        assert_eq!(t.branches.len(), 2);
        assert_eq!(t.endpoint_count(), 4);
    }

    #[test]
    fn isolated_voxel_and_loop() {
        let d = Dims::new(9, 9, 3);
        let mut m = Mask3::zeros(d);
        m.set(0, 0, 0, true);
        // octagonal ring: every voxel has exactly two neighbours
        for k in 4..6 {
            m.set(k, 3, 1, true);
            m.set(k, 6, 1, true);
            m.set(3, k, 1, true);
            m.set(6, k, 1, true);
        }
        let t = decompose(&Skeleton { mask: m, source_dims: d }, [1.0; 3]);
        assert_eq!(t.isolated.len(), 1);
        assert_eq!(t.branches.len(), 1);
        let b = &t.branches[0];
        assert_eq!(b.start, b.end);
        assert!((b.length - (4.0 + 4.0 * 2f64.sqrt())).abs() < 1e-12);
    }

    #[test]
    fn regions_partition_the_mask() {
        let line = line_mask(Dims::new(14, 5, 5), 10);
        let t = decompose(&skeletonize(&line), [1.0; 3]);
        let tube = dilate(&line, StructuringElement::cube(1));
        let r = branch_regions(&tube, &t);
        for (i, &v) in r.iter().enumerate() {
            assert_eq!(v == 1, tube.at(i) == 1);
        }

        let y = y_tree(6);
        let t = decompose(&skeletonize(&y), [1.0; 3]);
        let tube = dilate(&y, StructuringElement::cube(1));
        let r = branch_regions(&tube, &t);
        let mut counts = [0usize; 4];
        for i in 0..r.len() {
            assert_eq!(r[i] != 0, tube.at(i) == 1);
            counts[r[i] as usize] += 1;
        }
        assert!(counts[1..].iter().all(|&c| c > 0));
        assert_eq!(counts[1..].iter().sum::<usize>(), tube.count());

        assert!(branch_regions(&Mask3::zeros(Dims::cube(4)), &t).iter().all(|&l| l == 0));
    }
}
