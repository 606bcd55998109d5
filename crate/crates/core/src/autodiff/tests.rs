use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Result;

fn rand_tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn check<F>(f: F, inputs: &[Tensor<f64>])
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let r = grad_check(f, inputs, GradCheckOptions::default().sampled(40)).unwrap();
    assert!(r.checked > 0, "nothing checked");
    assert!(r.max_rel_error < 1e-4, "{r:?}");
}

fn project(g: &mut Graph<f64>, v: Var) -> Result<Var> {
    random_projection(g, v, 99)
}

#[allow(clippy::needless_range_loop)]
fn conv_oracle(x: &Tensor<f64>, w: &Tensor<f64>, bias: &[f64], stride: usize, pad: usize) -> Tensor<f64> {
    let (xs, ws) = (x.shape(), w.shape());
    let (b, ci, co, k) = (xs[0], xs[1], ws[0], ws[2]);
    let out = |n: usize| (n + 2 * pad - k) / stride + 1;
    let (oz, oy, ox) = (out(xs[2]), out(xs[3]), out(xs[4]));
    let xi = |n, c, z, y, xx| (((n * ci + c) * xs[2] + z) * xs[3] + y) * xs[4] + xx;
    let wi = |o, c, a, bb, cc| (((o * ci + c) * k + a) * k + bb) * k + cc;
    let mut res = vec![0.0; b * co * oz * oy * ox];
    let mut idx = 0;
    for n in 0..b {
        for o in 0..co {
            for z in 0..oz {
                for y in 0..oy {
                    for xx in 0..ox {
                        let mut acc = 0.0;
                        for c in 0..ci {
                            for a in 0..k {
                                for bb in 0..k {
                                    for cc in 0..k {
                                        let sz = (z * stride + a) as isize - pad as isize;
                                        let sy = (y * stride + bb) as isize - pad as isize;
                                        let sx = (xx * stride + cc) as isize - pad as isize;
                                        let inside = (0..xs[2] as isize).contains(&sz)
                                            && (0..xs[3] as isize).contains(&sy)
                                            && (0..xs[4] as isize).contains(&sx);
                                        let v = if inside {
                                            x.data()[xi(n, c, sz as usize, sy as usize, sx as usize)]
                                        } else {
                                            0.0
                                        };
                                        acc += w.data()[wi(o, c, a, bb, cc)] * v;
                                    }
                                }
                            }
                        }
                        res[idx] = acc + bias[o];
                        idx += 1;
                    }
                }
            }
        }
    }
    Tensor::new(&[b, co, oz, oy, ox], res).unwrap()
}

#[test]
fn conv3d_matches_nested_loops_bit_for_bit() {
    let cases = [
        ([1, 1, 4, 4, 4], [1, 1, 3, 3, 3], 1, 1),
        ([2, 3, 5, 4, 6], [4, 3, 3, 3, 3], 1, 0),
        ([1, 2, 8, 7, 6], [3, 2, 4, 4, 4], 2, 1),
        ([2, 2, 5, 5, 5], [2, 2, 1, 1, 1], 1, 0),
        ([1, 1, 6, 6, 6], [2, 1, 3, 3, 3], 2, 2),
    ];
    for (i, (xs, ws, stride, pad)) in cases.into_iter().enumerate() {
        let x = rand_tensor(&xs, i as u64);
        let w = rand_tensor(&ws, 100 + i as u64);
        let bias = rand_tensor(&[ws[0]], 200 + i as u64);
        let mut g = Graph::new();
        let (xv, wv, bv) = (g.constant(x.clone()), g.constant(w.clone()), g.constant(bias.clone()));
        let y = g.conv3d(xv, wv, Some(bv), stride, pad).unwrap();
        let want = conv_oracle(&x, &w, bias.data(), stride, pad);
        assert_eq!(g.shape(y), want.shape(), "case {i}");
        let bits = |t: &Tensor<f64>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(g.value(y)), bits(&want), "case {i}");
    }
}

#[test]
fn identity_kernel_returns_the_input() {
    let x = rand_tensor(&[1, 2, 3, 4, 5], 7);
    let mut w = Tensor::zeros(&[2, 2, 1, 1, 1]);
    w.data_mut()[0] = 1.0;
    w.data_mut()[3] = 1.0;
    let mut g = Graph::new();
    let (xv, wv) = (g.constant(x.clone()), g.constant(w));
    let y = g.conv3d(xv, wv, None, 1, 0).unwrap();
    assert_eq!(g.value(y), &x);
}

#[test]
fn single_precision_conv_tracks_double() {
    let x = rand_tensor(&[2, 3, 6, 6, 6], 1);
    let w = rand_tensor(&[4, 3, 3, 3, 3], 2);
    let run = |x: Tensor<f64>, w: Tensor<f64>| {
        let mut g = Graph::<f32>::new();
        let (xv, wv) = (g.constant(x.cast()), g.constant(w.cast()));
        let y = g.conv3d(xv, wv, None, 1, 1).unwrap();
        g.value(y).cast::<f64>()
    };
    let lo = run(x.clone(), w.clone());
    let hi = conv_oracle(&x, &w, &[0.0; 4], 1, 1);
    for (a, b) in lo.data().iter().zip(hi.data()) {
        assert!((a - b).abs() < 1e-5, "{a} vs {b}");
    }
}

#[test]
fn shared_subexpressions_accumulate() {
    let mut g = Graph::<f64>::new();
    let x = g.input(Tensor::new(&[3], vec![-1.0, 0.5, 2.0]).unwrap());
    let sq = g.mul(x, x).unwrap();
    let y = g.add(sq, x).unwrap();
    let t = g.tanh(x);
    let y = g.add(y, t).unwrap();
    let s = g.sum(y);
    g.backward(s).unwrap();
    for (d, v) in g.grad(x).unwrap().data().iter().zip([-1.0f64, 0.5, 2.0]) {
        let want = 2.0 * v + 1.0 + (1.0 - v.tanh().powi(2));
        assert!((d - want).abs() < 1e-14);
    }
}

#[test]
fn constants_get_no_gradient_and_non_scalar_loss_fails() {
    let mut g = Graph::<f64>::new();
    let c = g.constant(Tensor::ones(&[2]));
    let x = g.input(Tensor::ones(&[2]));
    let y = g.mul(c, x).unwrap();
    assert!(g.backward(y).is_err());
    let s = g.sum(y);
    g.backward(s).unwrap();
    assert!(g.grad(c).is_none());
    assert_eq!(g.grad(x).unwrap().data(), &[1.0, 1.0]);
}

#[test]
fn detached_values_block_gradients() {
    let mut g = Graph::<f64>::new();
    let x = g.input(Tensor::scalar(3.0));
    let d = g.detach(x);
    let y = g.mul(x, d).unwrap();
    g.backward(y).unwrap();
    assert_eq!(g.grad(x).unwrap().item(), 3.0);
}

#[test]
fn elementwise_gradients() {
    for (i, shape) in [vec![5], vec![2, 3], vec![2, 1, 3, 2, 2]].iter().enumerate() {
        let s = i as u64 * 10;
        let a = rand_tensor(shape, s);
        let b = rand_tensor(shape, s + 1);
        let pos = b.map(|v| v.abs() + 0.5);
        check(|g, v| { let y = g.add(v[0], v[1])?; project(g, y) }, &[a.clone(), b.clone()]);
        check(|g, v| { let y = g.sub(v[0], v[1])?; project(g, y) }, &[a.clone(), b.clone()]);
        check(|g, v| { let y = g.mul(v[0], v[1])?; project(g, y) }, &[a.clone(), b.clone()]);
        check(|g, v| { let y = g.div(v[0], v[1])?; project(g, y) }, &[a.clone(), pos.clone()]);
        check(|g, v| { let y = g.add_scalar(v[0], 0.3); let y = g.mul_scalar(y, -2.0); let y = g.neg(y); project(g, y) }, std::slice::from_ref(&a));
        check(|g, v| { let y = g.tanh(v[0]); project(g, y) }, std::slice::from_ref(&a));
        check(|g, v| { let y = g.sigmoid(v[0]); project(g, y) }, std::slice::from_ref(&a));
        check(|g, v| { let y = g.leaky_relu(v[0], 0.2); project(g, y) }, std::slice::from_ref(&a));
        check(|g, v| { let y = g.relu(v[0]); project(g, y) }, std::slice::from_ref(&a));
        check(|g, v| { let y = g.gelu(v[0]); project(g, y) }, std::slice::from_ref(&a));
        check(|g, v| { let y = g.abs(v[0]); project(g, y) }, std::slice::from_ref(&a));
        check(|g, v| { let y = g.exp(v[0]); project(g, y) }, std::slice::from_ref(&a));
        check(|g, v| { let y = g.square(v[0]); project(g, y) }, std::slice::from_ref(&a));
        check(|g, v| { let y = g.square(v[0]); Ok(g.mean(y)) }, std::slice::from_ref(&a));
    }
}

#[test]
fn broadcast_gradients() {
    for (from, to) in [(vec![3], vec![2, 3]), (vec![1, 4], vec![3, 4]), (vec![2, 1, 1], vec![2, 3, 2])] {
        let a = rand_tensor(&from, 5);
        check(|g, v| { let y = g.expand(v[0], &to)?; project(g, y) }, &[a]);
    }
}

#[test]
fn leaky_relu_kink_is_skipped_not_failed() {
    let x = Tensor::new(&[3], vec![0.0, 0.5, -0.5]).unwrap();
    let r = grad_check(
        |g, v| {
            let y = g.leaky_relu(v[0], 0.2);
            Ok(g.sum(y))
        },
        &[x],
        GradCheckOptions::default(),
    )
    .unwrap();
    assert_eq!(r.skipped, vec![(0, 0)]);
    assert_eq!(r.checked, 2);
    assert!(r.max_rel_error < 1e-8);
}

#[test]
fn shape_gradients() {
    let a = rand_tensor(&[2, 3, 4], 1);
    let b = rand_tensor(&[2, 2, 4], 2);
    check(|g, v| { let y = g.reshape(v[0], &[6, 4])?; project(g, y) }, std::slice::from_ref(&a));
    check(|g, v| { let y = g.permute(v[0], &[2, 0, 1])?; project(g, y) }, std::slice::from_ref(&a));
    check(|g, v| { let y = g.transpose(v[0])?; project(g, y) }, std::slice::from_ref(&a));
    check(|g, v| { let y = g.concat(&[v[0], v[1]], 1)?; project(g, y) }, &[a.clone(), b.clone()]);
    check(|g, v| { let y = g.narrow(v[0], 2, 1, 2)?; project(g, y) }, std::slice::from_ref(&a));
    let vol = rand_tensor(&[1, 2, 4, 2, 6], 3);
    check(|g, v| { let y = g.patchify(v[0], [2, 2, 3])?; project(g, y) }, &[vol]);
    let c = rand_tensor(&[3, 1, 2], 4);
    let d = rand_tensor(&[3, 5, 2], 5);
    check(|g, v| { let y = g.concat(&[v[0], v[1]], 1)?; project(g, y) }, &[c, d]);
}

#[test]
fn linalg_gradients() {
    let cases = [(vec![3, 4], vec![4, 2]), (vec![2, 3, 4], vec![2, 4, 5]), (vec![2, 2, 3, 4], vec![4, 3])];
    for (i, (sa, sb)) in cases.into_iter().enumerate() {
        let a = rand_tensor(&sa, i as u64);
        let b = rand_tensor(&sb, 10 + i as u64);
        check(|g, v| { let y = g.matmul(v[0], v[1])?; project(g, y) }, &[a, b]);
    }
    for (i, xs) in [vec![5, 3], vec![2, 4, 3], vec![1, 1, 3]].into_iter().enumerate() {
        let x = rand_tensor(&xs, 20 + i as u64);
        let w = rand_tensor(&[2, 3], 30 + i as u64);
        let bias = rand_tensor(&[2], 40 + i as u64);
        check(|g, v| { let y = g.linear(v[0], v[1], Some(v[2]))?; project(g, y) }, &[x.clone(), w.clone(), bias]);
        check(|g, v| { let y = g.linear(v[0], v[1], None)?; project(g, y) }, &[x, w]);
    }
    for (i, s) in [vec![4], vec![3, 5], vec![2, 2, 3]].into_iter().enumerate() {
        let x = rand_tensor(&s, 50 + i as u64).map(|v| 3.0 * v);
        check(|g, v| { let y = g.softmax(v[0])?; project(g, y) }, &[x]);
    }
}

#[test]
fn softmax_rows_sum_to_one_even_for_large_logits() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(Tensor::new(&[2, 3], vec![1000.0, 1001.0, 999.0, -5.0, 0.0, 5.0]).unwrap());
    let y = g.softmax(x).unwrap();
    let d = g.value(y).data();
    assert!(d.iter().all(|v| v.is_finite()));
    assert!((d[..3].iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert!((d[3..].iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn conv_gradients() {
    let cases = [
        ([1, 1, 4, 4, 4], [2, 1, 3, 3, 3], 1, 1),
        ([2, 2, 5, 4, 3], [1, 2, 3, 3, 3], 1, 0),
        ([1, 2, 6, 6, 6], [2, 2, 4, 4, 4], 2, 1),
    ];
    for (i, (xs, ws, stride, pad)) in cases.into_iter().enumerate() {
        let x = rand_tensor(&xs, i as u64);
        let w = rand_tensor(&ws, 10 + i as u64);
        let b = rand_tensor(&[ws[0]], 20 + i as u64);
        check(
            |g, v| { let y = g.conv3d(v[0], v[1], Some(v[2]), stride, pad)?; project(g, y) },
            &[x, w, b],
        );
    }
}

#[test]
fn pool_and_upsample_gradients() {
    for (i, s) in [[1, 1, 4, 4, 4], [2, 2, 3, 5, 4], [1, 3, 6, 2, 2]].into_iter().enumerate() {
        let x = rand_tensor(&s, i as u64);
        check(|g, v| { let y = g.max_pool3d(v[0], 2, 2, 0)?; project(g, y) }, std::slice::from_ref(&x));
        check(|g, v| { let y = g.min_pool3d(v[0], 3, 1, 1)?; project(g, y) }, std::slice::from_ref(&x));
        check(|g, v| { let y = g.max_pool3d(v[0], 3, 1, 1)?; project(g, y) }, std::slice::from_ref(&x));
        check(|g, v| { let y = g.avg_pool3d(v[0], 3, 1, 1)?; project(g, y) }, std::slice::from_ref(&x));
        check(|g, v| { let y = g.upsample2x(v[0])?; project(g, y) }, &[x]);
    }
}

#[test]
fn max_pool_routes_gradient_to_the_winner() {
    let mut g = Graph::<f64>::new();
    let x = g.input(Tensor::from_fn(&[1, 1, 2, 2, 2], |i| if i == 5 { 9.0 } else { i as f64 * 0.1 }));
    let y = g.max_pool3d(x, 2, 2, 0).unwrap();
    assert_eq!(g.value(y).item(), 9.0);
    let s = g.sum(y);
    g.backward(s).unwrap();
    let d = g.grad(x).unwrap().data();
    assert_eq!(d.iter().sum::<f64>(), 1.0);
    assert_eq!(d[5], 1.0);
}

#[test]
fn norm_gradients() {
    for (i, s) in [[1, 2, 2, 2, 3], [2, 3, 3, 2, 2], [2, 1, 4, 1, 3]].into_iter().enumerate() {
        let x = rand_tensor(&s, i as u64);
        let gamma = rand_tensor(&[s[1]], 10 + i as u64);
        let beta = rand_tensor(&[s[1]], 20 + i as u64);
        check(|g, v| { let y = g.instance_norm(v[0], v[1], v[2], 1e-5)?; project(g, y) }, &[x, gamma, beta]);
    }
    for (i, s) in [vec![3, 4], vec![2, 3, 5], vec![1, 6]].into_iter().enumerate() {
        let d = *s.last().unwrap();
        let x = rand_tensor(&s, 30 + i as u64);
        let gamma = rand_tensor(&[d], 40 + i as u64);
        let beta = rand_tensor(&[d], 50 + i as u64);
        check(|g, v| { let y = g.layer_norm(v[0], v[1], v[2], 1e-5)?; project(g, y) }, &[x, gamma, beta]);
    }
}

#[test]
fn instance_norm_output_is_standardised() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(rand_tensor(&[1, 2, 3, 3, 3], 8).map(|v| 5.0 * v + 2.0));
    let gamma = g.constant(Tensor::ones(&[2]));
    let beta = g.constant(Tensor::zeros(&[2]));
    let y = g.instance_norm(x, gamma, beta, 0.0).unwrap();
    for ch in g.value(y).data().chunks(27) {
        let mean = ch.iter().sum::<f64>() / 27.0;
        let var = ch.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 27.0;
        assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-10);
    }
}

#[test]
fn loss_gradients() {
    for (i, s) in [vec![4], vec![2, 3], vec![1, 1, 2, 2, 2]].into_iter().enumerate() {
        let x = rand_tensor(&s, i as u64).map(|v| 4.0 * v);
        let target = rand_tensor(&s, 10 + i as u64).map(|v| if v > 0.0 { 1.0 } else { 0.0 });
        check(|g, v| g.bce_with_logits(v[0], &target), std::slice::from_ref(&x));
        let y = rand_tensor(&s, 20 + i as u64);
        check(|g, v| g.l1(v[0], v[1]), &[x, y]);
    }
}

#[test]
fn bce_is_finite_and_flat_past_the_cap() {
    let mut g = Graph::<f64>::new();
    let x = g.input(Tensor::new(&[2], vec![1e4, -1e4]).unwrap());
    let l = g.bce_with_logits(x, &Tensor::new(&[2], vec![0.0, 1.0]).unwrap()).unwrap();
    assert!((g.value(l).item() - LOGIT_CAP).abs() < 1e-6);
    g.backward(l).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[0.0, 0.0]);
}

fn attention_inputs(d: usize, seed: u64) -> Vec<Tensor<f64>> {
    (0..4)
        .flat_map(|i| [rand_tensor(&[d, d], seed + 2 * i), rand_tensor(&[d], seed + 2 * i + 1)])
        .collect()
}

fn weights(v: &[Var]) -> AttentionWeights {
    AttentionWeights {
        wq: v[0],
        bq: v[1],
        wk: v[2],
        bk: v[3],
        wv: v[4],
        bv: v[5],
        wo: v[6],
        bo: v[7],
    }
}

#[test]
fn attention_gradients() {
    for (i, (xs, heads)) in [(vec![3, 4], 2), (vec![2, 3, 4], 1), (vec![1, 5, 6], 3)].into_iter().enumerate() {
        let d = *xs.last().unwrap();
        let mut inputs = attention_inputs(d, 100 * i as u64);
        inputs.push(rand_tensor(&xs, 7 + i as u64));
        check(
            |g, v| {
                let y = multi_head_attention(g, v[8], &weights(v), heads)?;
                project(g, y)
            },
            &inputs,
        );
    }
}

#[test]
fn single_token_attention_is_value_then_output_projection() {
    let d = 4;
    let params = attention_inputs(d, 3);
    let x = rand_tensor(&[1, d], 9);
    let mut g = Graph::<f64>::new();
    let v: Vec<Var> = params.iter().map(|t| g.constant(t.clone())).collect();
    let xv = g.constant(x);
    let y = multi_head_attention(&mut g, xv, &weights(&v), 2).unwrap();
    let vv = g.linear(xv, v[4], Some(v[5])).unwrap();
    let want = g.linear(vv, v[6], Some(v[7])).unwrap();
    for (a, b) in g.value(y).data().iter().zip(g.value(want).data()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn zero_queries_attend_uniformly() {
    let d = 4;
    let mut params = attention_inputs(d, 5);
    params[0] = Tensor::zeros(&[d, d]);
    params[1] = Tensor::zeros(&[d]);
    params[6] = Tensor::from_fn(&[d, d], |i| if i % (d + 1) == 0 { 1.0 } else { 0.0 });
    params[7] = Tensor::zeros(&[d]);
    let x = rand_tensor(&[3, d], 11);
    let mut g = Graph::<f64>::new();
    let v: Vec<Var> = params.iter().map(|t| g.constant(t.clone())).collect();
    let xv = g.constant(x);
    let y = multi_head_attention(&mut g, xv, &weights(&v), 2).unwrap();
    let vals = g.linear(xv, v[4], Some(v[5])).unwrap();
    let vals = g.value(vals).data().to_vec();
    for t in 0..3 {
        for j in 0..d {
            let mean = (vals[j] + vals[d + j] + vals[2 * d + j]) / 3.0;
            assert!((g.value(y).data()[t * d + j] - mean).abs() < 1e-12);
        }
    }
}

#[test]
fn attention_rejects_indivisible_heads() {
    let mut g = Graph::<f64>::new();
    let v: Vec<Var> = attention_inputs(4, 0).into_iter().map(|t| g.constant(t)).collect();
    let x = g.constant(Tensor::zeros(&[2, 4]));
    assert!(multi_head_attention(&mut g, x, &weights(&v), 3).is_err());
}

#[test]
fn grad_check_catches_a_wrong_gradient() {
    let x = rand_tensor(&[4], 1);
    let r = grad_check(
        |g, v| {
            let d = g.detach(v[0]);
            let y = g.mul(v[0], d)?;
            Ok(g.sum(y))
        },
        &[x],
        GradCheckOptions::default(),
    )
    .unwrap();
    assert!(r.max_rel_error > 0.3, "{r:?}");
}
