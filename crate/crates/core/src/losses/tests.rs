use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::{grad_check, GradCheckOptions};
use crate::metrics::cl_dice;
use crate::nets::{batch_tensor, prepare_disc_input, DiscriminatorConfig, PatchDiscriminatorConfig};
use crate::volume::{Dims, Mask3};

fn mask_tensor(m: &Mask3) -> Tensor<f64> {
    batch_tensor(&[vec![&m.to_volume()]]).unwrap()
}

fn unit_tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.random_range(0.05..0.95))
}

fn value<F>(f: F, a: &Tensor<f64>, b: &Tensor<f64>) -> f64
where
    F: Fn(&mut Graph<f64>, Var, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let (x, y) = (g.constant(a.clone()), g.constant(b.clone()));
    let l = f(&mut g, x, y).unwrap();
    g.value(l).item()
}

fn dice(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    value(soft_dice, a, b)
}

fn cl(a: &Tensor<f64>, b: &Tensor<f64>, iters: usize) -> f64 {
    value(|g, x, y| soft_cl_dice(g, x, y, iters), a, b)
}

fn ccf(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    value(l_ccf, a, b)
}

/// Square-section tube of half-width `r` along `axis` through the centre
/// of an `n³` grid (n odd), spanning `[2, n - 3]`, optionally with the slab
/// `gap` removed.
fn tube(n: usize, r: usize, axis: usize, gap: Option<(usize, usize)>) -> Mask3 {
    let c = n / 2;
    Mask3::from_fn(Dims::cube(n), |x, y, z| {
        let p = [x, y, z];
        let t = p[axis];
        let (u, v) = (p[(axis + 1) % 3].abs_diff(c), p[(axis + 2) % 3].abs_diff(c));
        let cut = gap.is_some_and(|(a, b)| (a..b).contains(&t));
        (2..n - 2).contains(&t) && u <= r && v <= r && !cut
    })
}

#[test]
fn soft_dice_hand_values() {
    let gt = Tensor::new(&[8], vec![1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
    assert_eq!(dice(&gt, &gt), 0.0);
    let inv = gt.map(|v| 1.0 - v);
    assert!((dice(&inv, &gt) - 1.0).abs() < 1e-6);
    let half = Tensor::full(&[8], 0.5);
    assert!((dice(&half, &gt) - 1.0 / 3.0).abs() < 1e-6);
    let zero = Tensor::zeros(&[8]);
    assert_eq!(dice(&zero, &zero), 0.0);
}

#[test]
fn soft_dice_rejects_mismatched_shapes() {
    let mut g = Graph::<f64>::new();
    let a = g.constant(Tensor::zeros(&[4]));
    let b = g.constant(Tensor::zeros(&[5]));
    assert!(soft_dice(&mut g, a, b).is_err());
}

#[test]
fn soft_cl_dice_on_lines_and_tubes() {
    let line = tube(13, 0, 2, None);
    let t = mask_tensor(&line);
    assert!(cl(&t, &t, 5) < 1e-3);
    let dilated = crate::morphology::dilate(&line, crate::morphology::StructuringElement::cube(1));
    let boxed = mask_tensor(&dilated);
    assert!(cl(&boxed, &t, 5) < 0.05);
    assert!(dice(&boxed, &t) > 0.2);
}

#[test]
fn soft_cl_dice_tracks_hard_cl_dice_on_tubes() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for case in 0..20 {
        let n = 33;
        let axis = rng.random_range(0..3);
        let r = rng.random_range(1..=3);
        let gt = tube(n, r, axis, None);
        let pred = match case % 3 {
            0 => {
                let a = rng.random_range(8..20);
                tube(n, r, axis, Some((a, a + rng.random_range(2..5))))
            }
            1 => tube(n, r + 1, axis, None),
            _ => tube(n, r - 1, axis, Some((12, 14))),
        };
        let hard = cl_dice(&pred, &gt).unwrap().score;
        let soft = 1.0 - cl(&mask_tensor(&pred), &mask_tensor(&gt), r + 1);
        assert!((hard - soft).abs() < 0.05, "case {case}: hard {hard} soft {soft} r {r}");
    }
}

#[test]
fn l_d_reductions() {
    let a = unit_tensor(&[1, 1, 6, 6, 6], 1);
    let b = unit_tensor(&[1, 1, 6, 6, 6], 2).map(f64::round);
    let d = dice(&a, &b);
    assert_eq!(value(|g, x, y| l_d(g, x, y, 0.0, 3), &a, &b), d);
    let c = cl(&a, &b, 3);
    let half = value(|g, x, y| l_d(g, x, y, 0.5, 3), &a, &b);
    assert!((half - (d + c) / 2.0).abs() < 1e-15);
    for alpha in [0.0, 0.2, 0.5] {
        assert!(value(|g, x, y| l_d(g, x, y, alpha, 3), &b, &b).abs() < 1e-6);
    }
    let mut g = Graph::<f64>::new();
    let (x, y) = (g.constant(a), g.constant(b));
    assert!(l_d(&mut g, x, y, 0.6, 3).is_err());
}

#[test]
fn ccf_hand_values() {
    let mut cl_mask = Tensor::zeros(&[20]);
    cl_mask.data_mut()[..10].fill(1.0);
    assert_eq!(ccf(&Tensor::ones(&[20]), &cl_mask), 0.0);
    assert_eq!(ccf(&Tensor::zeros(&[20]), &cl_mask), 1.0);
    assert_eq!(ccf(&Tensor::full(&[20], 0.5), &cl_mask), 0.5);
    let mut g = Graph::<f64>::new();
    let (x, y) = (g.constant(Tensor::ones(&[3])), g.constant(Tensor::zeros(&[3])));
    assert!(l_ccf(&mut g, x, y).is_err());
}

#[test]
fn ccf_is_monotone_in_the_prediction() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let cl_mask = Tensor::from_fn(&[64], |_| if rng.random_bool(0.3) { 1.0 } else { 0.0 });
    for s in 0..20 {
        let sub = unit_tensor(&[64], s);
        let sup = sub.map(|v| (v + 0.3).min(1.0));
        assert!(ccf(&sup, &cl_mask) <= ccf(&sub, &cl_mask));
    }
}

fn zero_weights() -> LossWeights {
    LossWeights {
        alpha_cl: 0.0,
        alpha: 0.0,
        beta: 0.0,
        gamma: 0.0,
        delta: 0.0,
        ..LossWeights::default()
    }
}

#[test]
fn layer_and_total_loss_weighting() {
    let out = unit_tensor(&[1, 1, 4, 4, 4], 1).map(|v| 2.0 * v - 1.0);
    let gt = unit_tensor(&[1, 1, 4, 4, 4], 2).map(f64::round);
    let run = |w: &LossWeights, adv: bool| {
        let mut g = Graph::<f64>::new();
        let (o, t) = (g.constant(out.clone()), g.constant(gt.clone()));
        let a = g.constant(Tensor::scalar(0.7));
        let l = layer_loss(&mut g, o, t, t, adv.then_some(a), w).unwrap();
        (g.value(l.total).item(), g.value(l.l1).item())
    };
    assert_eq!(run(&zero_weights(), true).0, 0.0);
    let (total, l1) = run(&LossWeights { alpha: 1.0, ..zero_weights() }, false);
    assert_eq!(total, l1);
    let (with, _) = run(&LossWeights { delta: 1.0, ..zero_weights() }, true);
    assert!((with - 0.7).abs() < 1e-15);

    let w = LossWeights {
        phi: [0.25, 0.25, 0.25, 1.0],
        ..LossWeights::default()
    };
    let mut g = Graph::<f64>::new();
    let layers: Vec<Var> = [0.4, 0.3, 0.2, 0.1].iter().map(|&v| g.constant(Tensor::scalar(v))).collect();
    let t = total_loss(&mut g, &layers, &w).unwrap();
    assert!((g.value(t).item() - 0.325).abs() < 1e-15);
    assert_eq!(w.layer_weights(3).unwrap(), vec![0.25, 0.25, 1.0]);
    assert!(w.layer_weights(5).is_err());
}

#[test]
fn weight_ranges_are_enforced() {
    assert!(LossWeights::default().validate().is_ok());
    assert!(LossWeights { alpha_cl: 0.51, ..LossWeights::default() }.validate().is_err());
    assert!(LossWeights { delta: 1.5, ..LossWeights::default() }.validate().is_err());
    let mut w = LossWeights::default();
    w.phi[2] = -0.1;
    assert!(w.validate().unwrap_err().to_string().contains("phi3"));
}

#[test]
fn adversarial_limits() {
    let cfg = DiscriminatorConfig::Patch(PatchDiscriminatorConfig::default());
    let (disc, mut params) = Discriminator::new(&cfg, 0).unwrap();
    for t in params.values_mut() {
        t.data_mut().fill(0.0);
    }
    let mut g = Graph::<f64>::new();
    let p = params.cast::<f64>().bind_frozen(&mut g);
    let real = g.constant(unit_tensor(&[2, 1, 24, 24, 24], 1));
    let fake = g.constant(unit_tensor(&[2, 1, 24, 24, 24], 2));
    let (d, gl) = adversarial_losses(&mut g, &disc, &p, real, fake).unwrap();
    let ln2 = std::f64::consts::LN_2;
    assert!((g.value(d).item() - 2.0 * ln2).abs() < 1e-12);
    assert!((g.value(gl).item() - ln2).abs() < 1e-12);

    let real = g.constant(Tensor::full(&[1, 1, 3, 3, 3], 1e6));
    let fake = g.constant(Tensor::full(&[1, 1, 3, 3, 3], -1e6));
    let d = discriminator_loss(&mut g, real, fake).unwrap();
    let gl = generator_adversarial_loss(&mut g, fake).unwrap();
    assert!(g.value(d).item() < 1e-8);
    assert!((g.value(gl).item() - 20.0).abs() < 1e-6);
    assert_eq!(disc_accuracy(g.value(real), g.value(fake)), 1.0);
}

fn check<F>(f: F, inputs: &[Tensor<f64>])
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let r = grad_check(f, inputs, GradCheckOptions::default()).unwrap();
    assert!(r.checked > 0);
    assert!(r.max_rel_error < 1e-4, "{r:?}");
}

#[test]
fn loss_gradients() {
    let shape = [1, 1, 6, 6, 6];
    for s in 0..3 {
        let p = unit_tensor(&shape, s);
        let gt = unit_tensor(&shape, 10 + s).map(f64::round);
        let soft_gt = unit_tensor(&shape, 20 + s);
        let cl_mask = gt.clone();
        check(|g, v| soft_dice(g, v[0], v[1]), &[p.clone(), soft_gt.clone()]);
        check(|g, v| soft_cl_dice(g, v[0], v[1], 3), &[p.clone(), soft_gt.clone()]);
        check(|g, v| l_d(g, v[0], v[1], 0.3, 3), &[p.clone(), soft_gt.clone()]);
        check(
            |g, v| {
                let c = g.constant(cl_mask.clone());
                l_ccf(g, v[0], c)
            },
            std::slice::from_ref(&p),
        );
        let out = p.map(|v| 2.0 * v - 1.0);
        check(
            |g, v| {
                let (t, c) = (g.constant(gt.clone()), g.constant(cl_mask.clone()));
                let adv = g.square(v[0]);
                let adv = g.mean(adv);
                let l = layer_loss(g, v[0], t, c, Some(adv), &LossWeights::default())?;
                Ok(l.total)
            },
            &[out],
        );
    }
}

#[test]
fn adversarial_gradients_reach_the_generator_output() {
    let cfg = DiscriminatorConfig::Patch(PatchDiscriminatorConfig {
        channels: vec![2, 2, 1],
        ..PatchDiscriminatorConfig::default()
    });
    let (disc, params) = Discriminator::new(&cfg, 3).unwrap();
    let p64 = params.cast::<f64>();
    let ct = unit_tensor(&[1, 1, 22, 22, 22], 4);
    let gt = unit_tensor(&[1, 1, 22, 22, 22], 5).map(f64::round);
    let out = unit_tensor(&[1, 1, 22, 22, 22], 6).map(|v| 2.0 * v - 1.0);
    let build = |g: &mut Graph<f64>, x: Var, pick_d: bool| -> Result<Var> {
        let p = p64.bind_frozen(g);
        let c = g.constant(ct.clone());
        let t = g.constant(gt.clone());
        let real = prepare_disc_input(g, c, t, 2)?;
        let soft = to_unit(g, x);
        let fake = prepare_disc_input(g, c, soft, 2)?;
        let (d, gl) = adversarial_losses(g, &disc, &p, real, fake)?;
        Ok(if pick_d { d } else { gl })
    };
    let r = grad_check(|g, v| build(g, v[0], false), std::slice::from_ref(&out), GradCheckOptions::eps(1e-6).sampled(60)).unwrap();
    assert!(r.max_rel_error < 1e-4, "{r:?}");
    let mut g = Graph::<f64>::new();
    let x = g.input(out.clone());
    let gl = build(&mut g, x, false).unwrap();
    g.backward(gl).unwrap();
    assert!(g.grad(x).unwrap().max_abs() > 0.0);
    // fakes are detached inside the discriminator loss
    let mut g = Graph::<f64>::new();
    let x = g.input(out);
    let d = build(&mut g, x, true).unwrap();
    g.backward(d).unwrap();
    assert!(g.grad(x).is_none_or(|t| t.max_abs() == 0.0));
}

#[test]
fn losses_stay_finite_on_soft_inputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for s in 0..10 {
        let p = Tensor::from_fn(&[1, 1, 5, 5, 5], |_| if rng.random_bool(0.3) { 0.0 } else { rng.random_range(0.0..=1.0) });
        let q = unit_tensor(&[1, 1, 5, 5, 5], s).map(|v| if v < 0.5 { 0.0 } else { v });
        for v in [dice(&p, &q), cl(&p, &q, 5), ccf(&p, &q), cl(&Tensor::zeros(&[1, 1, 5, 5, 5]), &q, 2)] {
            assert!(v.is_finite() && (0.0..=1.0 + 1e-12).contains(&v), "{v}");
        }
    }
}

#[test]
fn pyramid_halves_with_max_pool() {
    let mut t = Tensor::<f64>::zeros(&[1, 1, 8, 8, 8]);
    t.data_mut()[0] = 1.0;
    let p = target_pyramid(&t, 4).unwrap();
    let shapes: Vec<_> = p.iter().map(|t| t.shape()[2]).collect();
    assert_eq!(shapes, vec![8, 4, 2, 1]);
    assert!(p.iter().all(|t| t.data()[0] == 1.0 && t.sum() == 1.0));
}
