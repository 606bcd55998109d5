//! Overlap, topology and tree-completeness metrics, plus the paired
//! signed-rank test used to compare methods case by case.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::skeleton::{branch_regions, decompose, skeletonize, step_length, Skeleton};
use crate::volume::Mask3;

/// Branches whose region is covered at least this much count as detected.
pub const BRANCH_DETECTION_RATIO: f64 = 0.8;

/// All per-case evaluation numbers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub iou: f64,
    pub dice: f64,
    pub dlr: f64,
    pub dbr: f64,
    pub precision: f64,
    pub leakage: f64,
    pub amr: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub detected_length: f64,
    pub total_length: f64,
    pub detected_branches: usize,
    pub total_branches: usize,
}

/// Voxel-overlap part of a [`MetricReport`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Overlap {
    pub iou: f64,
    pub dice: f64,
    /// Zero when `pred` is empty.
    pub precision: f64,
    pub leakage: f64,
    pub amr: f64,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

/// Tree-completeness part of a [`MetricReport`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeMetrics {
    pub dlr: f64,
    pub dbr: f64,
    pub detected_length: f64,
    pub total_length: f64,
    pub detected_branches: usize,
    pub total_branches: usize,
}

fn same_dims(op: &'static str, a: &Mask3, b: &Mask3) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::shape(op, format!("{} vs {}", a.dims(), b.dims())));
    }
    Ok(())
}

/// IoU, Dice, precision, leakage and airway miss ratio.
///
/// ```
/// use airway_refine::metrics::overlap_metrics;
/// use airway_refine::volume::{Dims, Mask3};
///
/// let gt = Mask3::from_fn(Dims::new(8, 1, 1), |x, _, _| x < 4);
/// let pred = Mask3::from_fn(Dims::new(8, 1, 1), |x, _, _| (1..7).contains(&x));
/// let m = overlap_metrics(&pred, &gt).unwrap();
/// assert_eq!((m.tp, m.fp, m.fn_), (3, 3, 1));
/// assert!((m.iou - 3.0 / 7.0).abs() < 1e-12);
/// ```
pub fn overlap_metrics(pred: &Mask3, gt: &Mask3) -> Result<Overlap> {
    same_dims("overlap_metrics", pred, gt)?;
    let v_y = gt.count();
    if v_y == 0 {
        return Err(Error::UndefinedMetric {
            metric: "leakage/amr",
            reason: "ground truth is empty".into(),
        });
    }
    let (mut tp, mut fp) = (0usize, 0usize);
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        match (p, g) {
            (1, 1) => tp += 1,
            (1, 0) => fp += 1,
            _ => {}
        }
    }
    let fn_ = v_y - tp;
    let union = tp + fp + fn_;
    let iou = tp as f64 / union as f64;
    Ok(Overlap {
        iou,
        dice: 2.0 * tp as f64 / (2 * tp + fp + fn_) as f64,
        precision: if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 },
        leakage: fp as f64 / v_y as f64,
        amr: fn_ as f64 / v_y as f64,
        tp,
        fp,
        fn_,
    })
}

/// Centreline Dice from hard skeletons.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClDice {
    pub score: f64,
    /// `None` when the prediction skeleton is empty.
    pub topology_precision: Option<f64>,
    /// `None` when the ground-truth skeleton is empty.
    pub topology_sensitivity: Option<f64>,
}

impl ClDice {
    /// True when either term was undefined and the score was forced to 0.
    pub fn is_degenerate(&self) -> bool {
        self.topology_precision.is_none() || self.topology_sensitivity.is_none()
    }
}

fn covered_fraction(skeleton: &Mask3, volume: &Mask3) -> Option<f64> {
    let n = skeleton.count();
    (n > 0).then(|| {
        let hit = skeleton.foreground().filter(|&i| volume.at(i) == 1).count();
        hit as f64 / n as f64
    })
}

pub fn cl_dice(pred: &Mask3, gt: &Mask3) -> Result<ClDice> {
    same_dims("cl_dice", pred, gt)?;
    let s_p = skeletonize(pred);
    let s_l = skeletonize(gt);
    let t_prec = covered_fraction(&s_p.mask, gt);
    let t_sens = covered_fraction(&s_l.mask, pred);
    let score = match (t_prec, t_sens) {
        (Some(p), Some(s)) if p + s > 0.0 => 2.0 * p * s / (p + s),
        _ => 0.0,
    };
    Ok(ClDice {
        score,
        topology_precision: t_prec,
        topology_sensitivity: t_sens,
    })
}

/// Fraction of centreline voxels covered by `pred`.
pub fn continuity_score(pred: &Mask3, centreline: &Skeleton) -> Result<f64> {
    same_dims("continuity_score", pred, &centreline.mask)?;
    covered_fraction(&centreline.mask, pred).ok_or_else(|| Error::UndefinedMetric {
        metric: "continuity",
        reason: "centreline is empty".into(),
    })
}

/// Detected length ratio and detected branch ratio against the skeleton of
/// `gt`. Lengths use the spacing stored on `gt`.
pub fn tree_metrics(pred: &Mask3, gt: &Mask3) -> Result<TreeMetrics> {
    same_dims("tree_metrics", pred, gt)?;
    let skeleton = skeletonize(gt);
    if skeleton.is_empty() {
        return Err(Error::UndefinedMetric {
            metric: "dlr/dbr",
            reason: "ground-truth skeleton is empty".into(),
        });
    }
    let tree = decompose(&skeleton, gt.spacing());
    let inside = |p: [usize; 3]| pred.is_set(p[0], p[1], p[2]);

    let mut detected_length = 0.0;
    let mut total_length = 0.0;
    for b in &tree.branches {
        for w in b.path.windows(2) {
            let step = step_length(w[0], w[1], tree.spacing);
            total_length += step;
            if inside(w[0]) && inside(w[1]) {
                detected_length += step;
            }
        }
    }
    let labels = branch_regions(gt, &tree);
    let nb = tree.branches.len();
    let mut region = vec![0usize; nb + 1];
    let mut covered = vec![0usize; nb + 1];
    for (i, &l) in labels.iter().enumerate() {
        if l > 0 {
            region[l as usize] += 1;
            if pred.at(i) == 1 {
                covered[l as usize] += 1;
            }
        }
    }
    let detected_branches = tree
        .branches
        .iter()
        .filter(|b| {
            let ratio = if region[b.id] > 0 {
                covered[b.id] as f64 / region[b.id] as f64
            } else {
                let hit = b.path.iter().filter(|&&p| inside(p)).count();
                hit as f64 / b.path.len() as f64
            };
            ratio >= BRANCH_DETECTION_RATIO
        })
        .count();
    // Isolated skeleton voxels are zero-length branches without a region.
    let isolated_hits = tree
        .isolated
        .iter()
        .filter(|&&n| tree.nodes[n].voxels.iter().all(|&p| inside(p)))
        .count();
    let total_branches = nb + tree.isolated.len();
    let dlr = if total_length > 0.0 {
        detected_length / total_length
    } else {
        isolated_hits as f64 / tree.isolated.len() as f64
    };
    Ok(TreeMetrics {
        dlr,
        dbr: (detected_branches + isolated_hits) as f64 / total_branches as f64,
        detected_length,
        total_length,
        detected_branches: detected_branches + isolated_hits,
        total_branches,
    })
}

/// Every metric for one case. `pred` should already be postprocessed.
pub fn evaluate(pred: &Mask3, gt: &Mask3) -> Result<MetricReport> {
    let o = overlap_metrics(pred, gt)?;
    let t = tree_metrics(pred, gt)?;
    Ok(MetricReport {
        iou: o.iou,
        dice: o.dice,
        dlr: t.dlr,
        dbr: t.dbr,
        precision: o.precision,
        leakage: o.leakage,
        amr: o.amr,
        tp: o.tp,
        fp: o.fp,
        fn_: o.fn_,
        detected_length: t.detected_length,
        total_length: t.total_length,
        detected_branches: t.detected_branches,
        total_branches: t.total_branches,
    })
}

/// Outcome of [`wilcoxon_signed_rank`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Wilcoxon {
    /// min(W+, W-).
    pub statistic: f64,
    pub p_value: f64,
    /// Pairs left after dropping zero differences.
    pub n: usize,
    pub exact: bool,
}

/// Largest sample size evaluated with the exact null distribution.
pub const WILCOXON_EXACT_MAX: usize = 25;

/// Two-sided paired signed-rank test on `a - b`.
///
/// ```
/// use airway_refine::metrics::wilcoxon_signed_rank;
///
/// let a = [0.9, 0.8, 0.85, 0.7, 0.95, 0.6];
/// let b = [0.5, 0.4, 0.45, 0.3, 0.55, 0.2];
/// let w = wilcoxon_signed_rank(&a, &b).unwrap();
/// assert_eq!(w.statistic, 0.0);
/// assert!((w.p_value - 0.03125).abs() < 1e-12);
/// ```
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<Wilcoxon> {
    if a.len() != b.len() {
        return Err(Error::InvalidArgument(format!(
            "paired samples differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|d| *d != 0.0).collect();
    let n = diffs.len();
    if n == 0 {
        return Ok(Wilcoxon {
            statistic: 0.0,
            p_value: 1.0,
            n: 0,
            exact: true,
        });
    }
    if n < 5 {
        return Err(Error::InvalidArgument(format!(
            "signed-rank test needs at least 5 non-zero differences, got {n}"
        )));
    }
    let (ranks, ties) = average_ranks(&diffs);
    let w_plus: f64 = diffs.iter().zip(&ranks).filter(|(d, _)| **d > 0.0).map(|(_, r)| r).sum();
    let total = (n * (n + 1)) as f64 / 2.0;
    let statistic = w_plus.min(total - w_plus);

    if n <= WILCOXON_EXACT_MAX {
        // Ranks are multiples of 1/2, so doubled ranks are integers.
        let doubled: Vec<usize> = ranks.iter().map(|r| (r * 2.0).round() as usize).collect();
        let max_sum: usize = doubled.iter().sum();
        let mut counts = vec![0f64; max_sum + 1];
        counts[0] = 1.0;
        let mut reach = 0;
        for &r in &doubled {
            for s in (0..=reach).rev() {
                if counts[s] != 0.0 {
                    counts[s + r] += counts[s];
                }
            }
            reach += r;
        }
        let limit = (statistic * 2.0).round() as usize;
        let tail: f64 = counts[..=limit].iter().sum();
        let p = 2.0 * tail / 2f64.powi(n as i32);
        return Ok(Wilcoxon {
            statistic,
            p_value: p.min(1.0),
            n,
            exact: true,
        });
    }

    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / 48.0;
    let sd = (nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term).sqrt();
    let z = ((statistic - mean).abs() - 0.5).max(0.0) / sd;
    let p = libm::erfc(z / std::f64::consts::SQRT_2);
    Ok(Wilcoxon {
        statistic,
        p_value: p.min(1.0),
        n,
        exact: false,
    })
}

/// Ranks of |d| with ties averaged, plus the size of each tie group.
fn average_ranks(d: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..d.len()).collect();
    order.sort_by(|&i, &j| d[i].abs().total_cmp(&d[j].abs()));
    let mut ranks = vec![0.0; d.len()];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && d[order[j]].abs() == d[order[i]].abs() {
            j += 1;
        }
        let avg = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = avg;
        }
        ties.push(j - i);
        i = j;
    }
    (ranks, ties)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::morphology::{dilate, StructuringElement};
    use crate::volume::{Axis, Dims};
    use proptest::prelude::*;
    use rand::{RngExt, SeedableRng};

    fn line(d: Dims, x0: usize, x1: usize) -> Mask3 {
        Mask3::from_fn(d, |x, y, z| y == d.ny / 2 && z == d.nz / 2 && (x0..x1).contains(&x))
    }

    #[test]
    fn identical_masks_are_perfect() {
        let gt = line(Dims::new(12, 5, 5), 1, 11);
        let o = overlap_metrics(&gt, &gt).unwrap();
        assert_eq!((o.iou, o.dice, o.precision, o.leakage, o.amr), (1.0, 1.0, 1.0, 0.0, 0.0));
        let t = tree_metrics(&gt, &gt).unwrap();
        assert_eq!((t.dlr, t.dbr), (1.0, 1.0));
    }

    #[test]
    fn disjoint_masks() {
        let d = Dims::new(8, 1, 1);
        let gt = Mask3::from_fn(d, |x, _, _| x < 4);
        let pred = Mask3::from_fn(d, |x, _, _| x >= 6);
        let o = overlap_metrics(&pred, &gt).unwrap();
        assert_eq!((o.iou, o.precision, o.leakage, o.amr), (0.0, 0.0, 0.5, 1.0));
    }

    #[test]
    fn hand_counted_overlap() {
        let d = Dims::new(8, 1, 1);
        let gt = Mask3::from_fn(d, |x, _, _| x < 4);
        let pred = Mask3::from_fn(d, |x, _, _| (1..7).contains(&x));
        let o = overlap_metrics(&pred, &gt).unwrap();
        assert!((o.iou - 3.0 / 7.0).abs() < 1e-15);
        assert!((o.dice - 0.6).abs() < 1e-15);
        assert!((o.precision - 0.5).abs() < 1e-15);
        assert!((o.leakage - 0.75).abs() < 1e-15);
        assert!((o.amr - 0.25).abs() < 1e-15);
        assert!((o.dice - 2.0 * o.iou / (o.iou + 1.0)).abs() < 1e-12);
    }

    #[test]
    fn empty_ground_truth_is_an_error() {
        let d = Dims::cube(3);
        let err = overlap_metrics(&Mask3::ones(d), &Mask3::zeros(d)).unwrap_err();
        assert!(matches!(err, Error::UndefinedMetric { .. }));
        assert!(tree_metrics(&Mask3::ones(d), &Mask3::zeros(d)).is_err());
    }

    #[test]
    fn mismatched_dims_are_rejected() {
        let a = Mask3::ones(Dims::cube(3));
        let b = Mask3::ones(Dims::cube(4));
        assert!(matches!(overlap_metrics(&a, &b), Err(Error::Shape { .. })));
    }

    #[test]
    fn cl_dice_of_identical_line_is_one() {
        let gt = line(Dims::new(12, 5, 5), 1, 11);
        let c = cl_dice(&gt, &gt).unwrap();
        assert_eq!(c.score, 1.0);
        assert!(!c.is_degenerate());
    }

    #[test]
    fn cl_dice_tolerates_a_thicker_tube() {
        let d = Dims::new(14, 7, 7);
        let gt = line(d, 2, 12);
        let pred = dilate(&gt, StructuringElement::cube(1));
        let c = cl_dice(&pred, &gt).unwrap();
        assert_eq!(c.topology_sensitivity, Some(1.0));
        assert_eq!(c.topology_precision, Some(1.0));
        assert_eq!(c.score, 1.0);
        assert!(overlap_metrics(&pred, &gt).unwrap().dice < 1.0);
    }

    #[test]
    fn cl_dice_of_half_a_line() {
        let d = Dims::new(14, 5, 5);
        let gt = line(d, 1, 13);
        let pred = line(d, 1, 7);
        let c = cl_dice(&pred, &gt).unwrap();
        assert_eq!(c.topology_precision, Some(1.0));
        assert_eq!(c.topology_sensitivity, Some(0.5));
        assert!((c.score - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn cl_dice_with_empty_prediction_is_flagged() {
        let d = Dims::new(14, 5, 5);
        let c = cl_dice(&Mask3::zeros(d), &line(d, 1, 13)).unwrap();
        assert_eq!(c.score, 0.0);
        assert!(c.is_degenerate());
    }

    #[test]
    fn continuity_counts_covered_centreline() {
        let d = Dims::new(12, 3, 3);
        let gt = line(d, 1, 11);
        let s = skeletonize(&gt);
        assert_eq!(s.count(), 10);
        assert_eq!(continuity_score(&gt, &s).unwrap(), 1.0);
        assert_eq!(continuity_score(&Mask3::zeros(d), &s).unwrap(), 0.0);
        let seven = line(d, 1, 8);
        assert!((continuity_score(&seven, &s).unwrap() - 0.7).abs() < 1e-15);
        let empty = skeletonize(&Mask3::zeros(d));
        assert!(continuity_score(&gt, &empty).is_err());
    }

    #[test]
    fn removing_one_arm_of_three() {
        let gt = crate::skeleton::tests::y_tree(6);
        let tree = decompose(&skeletonize(&gt), [1.0; 3]);
        assert_eq!(tree.branches.len(), 3);
        let c = gt.dims().nx / 2;
        // drop the +x diagonal arm but keep the junction voxel
        let pred = Mask3::from_fn(gt.dims(), |x, y, z| gt.is_set(x, y, z) && !(x > c && z > c));
        let t = tree_metrics(&pred, &gt).unwrap();
        assert!((t.dbr - 2.0 / 3.0).abs() < 1e-12);
        let trunk = 6.0;
        let arm = 6.0 * 2f64.sqrt();
        assert!((t.total_length - (trunk + 2.0 * arm)).abs() < 1e-12);
        assert!((t.dlr - (trunk + arm) / (trunk + 2.0 * arm)).abs() < 1e-12);
        assert_eq!((t.detected_branches, t.total_branches), (2, 3));
    }

    #[test]
    fn one_voxel_gap_costs_two_steps() {
        let d = Dims::new(14, 5, 5);
        let gt = line(d, 1, 13);
        let mut pred = gt.clone();
        pred.set(6, 2, 2, false);
        let t = tree_metrics(&pred, &gt).unwrap();
        assert_eq!(t.total_length, 11.0);
        assert_eq!(t.detected_length, 9.0);
    }

    #[test]
    fn gap_length_follows_spacing() {
        let d = Dims::new(14, 5, 5);
        let gt = line(d, 1, 13).with_spacing([0.5, 1.0, 1.0]);
        let mut pred = gt.clone();
        pred.set(6, 2, 2, false);
        let t = tree_metrics(&pred, &gt).unwrap();
        assert!((t.total_length - 5.5).abs() < 1e-12);
        assert!((t.detected_length - 4.5).abs() < 1e-12);
    }

    #[test]
    fn wilcoxon_degenerate_and_too_small() {
        let a = [0.3; 7];
        let w = wilcoxon_signed_rank(&a, &a).unwrap();
        assert_eq!(w.p_value, 1.0);
        assert!(wilcoxon_signed_rank(&[1.0, 2.0, 3.0], &[0.0; 3]).is_err());
        assert!(wilcoxon_signed_rank(&[1.0; 6], &[0.0; 5]).is_err());
    }

    #[test]
    fn wilcoxon_all_positive_six() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let w = wilcoxon_signed_rank(&a, &[0.0; 6]).unwrap();
        assert_eq!(w.statistic, 0.0);
        assert!((w.p_value - 2.0 / 64.0).abs() < 1e-15);
        assert!(w.exact);
    }

    /// Two-sided p-value by enumerating every sign assignment.
    fn brute_force(diffs: &[f64]) -> (f64, f64) {
        let (ranks, _) = average_ranks(diffs);
        let n = diffs.len();
        let total: f64 = ranks.iter().sum();
        let w_plus: f64 = diffs.iter().zip(&ranks).filter(|(d, _)| **d > 0.0).map(|(_, r)| r).sum();
        let stat = w_plus.min(total - w_plus);
        let mut hits = 0usize;
        for signs in 0u32..(1 << n) {
            let w: f64 = (0..n).filter(|k| signs >> k & 1 == 1).map(|k| ranks[k]).sum();
            if w.min(total - w) <= stat + 1e-9 {
                hits += 1;
            }
        }
        (stat, (hits as f64 / (1u64 << n) as f64).min(1.0))
    }

    #[test]
    fn wilcoxon_matches_enumeration_for_eight() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        for trial in 0..50 {
            let a: Vec<f64> = (0..8).map(|_| (rng.random_range(0..20) as f64) / 20.0).collect();
            let b: Vec<f64> = (0..8).map(|_| (rng.random_range(0..20) as f64) / 20.0).collect();
            let diffs: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).filter(|d| *d != 0.0).collect();
            if diffs.len() < 5 {
                continue;
            }
            let w = wilcoxon_signed_rank(&a, &b).unwrap();
            let (stat, p) = brute_force(&diffs);
            assert_eq!(w.statistic, stat, "trial {trial}");
            assert!((w.p_value - p).abs() < 1e-12, "trial {trial}: {} vs {p}", w.p_value);
        }
    }

    #[test]
    fn wilcoxon_normal_approximation_is_close_to_exact() {
        // n = 25 sits on both sides of the switch: compare against the exact
        // enumeration result at n = 26 computed with ranks 1..=26.
        let a: Vec<f64> = (1..=26).map(|k| if k % 3 == 0 { -(k as f64) } else { k as f64 }).collect();
        let zeros = vec![0.0; 26];
        let w = wilcoxon_signed_rank(&a, &zeros).unwrap();
        assert!(!w.exact);
        let mut counts = vec![0f64; 352];
        counts[0] = 1.0;
        for r in 1..=26usize {
            for s in (0..352 - r).rev() {
                counts[s + r] += counts[s];
            }
        }
        let tail: f64 = counts[..=w.statistic as usize].iter().sum();
        let exact = 2.0 * tail / 2f64.powi(26);
        assert!((w.p_value - exact).abs() < 2e-3, "{} vs {exact}", w.p_value);
    }

    fn random_mask(d: Dims, seed: u64, p: f64) -> Mask3 {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Mask3::from_fn(d, |_, _, _| rng.random_bool(p))
    }

    proptest! {
        #[test]
        fn dice_iou_identity_and_symmetry(seed in 0u64..1000) {
            let d = Dims::new(6, 5, 4);
            let a = random_mask(d, seed, 0.4);
            let b = random_mask(d, seed + 7919, 0.4);
            prop_assume!(a.count() > 0 && b.count() > 0);
            let ab = overlap_metrics(&a, &b).unwrap();
            let ba = overlap_metrics(&b, &a).unwrap();
            prop_assert!((ab.dice - 2.0 * ab.iou / (ab.iou + 1.0)).abs() < 1e-12);
            prop_assert_eq!(ab.iou, ba.iou);
            prop_assert_eq!(ab.dice, ba.dice);
        }

        #[test]
        fn adding_a_true_positive_never_hurts(seed in 0u64..200) {
            let d = Dims::new(10, 7, 7);
            let gt = dilate(&line(d, 1, 9), StructuringElement::cube(1));
            let pred = gt.and(&random_mask(d, seed, 0.5)).unwrap();
            let missing: Vec<usize> = gt.and_not(&pred).unwrap().foreground().collect();
            prop_assume!(!missing.is_empty());
            let mut more = pred.clone();
            more.set_index(missing[seed as usize % missing.len()], true);
            let centre = skeletonize(&gt);
            let (o0, o1) = (overlap_metrics(&pred, &gt).unwrap(), overlap_metrics(&more, &gt).unwrap());
            prop_assert!(o1.iou >= o0.iou);
            let (t0, t1) = (tree_metrics(&pred, &gt).unwrap(), tree_metrics(&more, &gt).unwrap());
            prop_assert!(t1.dlr >= t0.dlr);
            prop_assert!(continuity_score(&more, &centre).unwrap() >= continuity_score(&pred, &centre).unwrap());
        }

        #[test]
        fn overlap_is_flip_invariant(seed in 0u64..300) {
            let d = Dims::new(6, 5, 4);
            let a = random_mask(d, seed, 0.5);
            let b = random_mask(d, seed + 1, 0.5);
            prop_assume!(b.count() > 0);
            let m = overlap_metrics(&a, &b).unwrap();
            for axis in [Axis::X, Axis::Y] {
                let f = overlap_metrics(&a.flip(axis).unwrap(), &b.flip(axis).unwrap()).unwrap();
                prop_assert_eq!(m, f);
            }
        }
    }
}
