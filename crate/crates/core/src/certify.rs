//! Named finite-difference checks over every graph operator, every training
//! loss and the toy networks, all in `f64`.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::{
    grad_check, multi_head_attention, random_projection, AttentionWeights, Bound, GradCheckOptions, GradCheckReport,
    Graph, ParamStore, Tensor, Var,
};
use crate::error::Result;
use crate::losses::{
    discriminator_loss, generator_adversarial_loss, l_ccf, l_d, layer_loss, soft_cl_dice, soft_dice, LossWeights,
};
use crate::nets::{
    prepare_disc_input, Generator, GeneratorConfig, PatchDiscriminator, PatchDiscriminatorConfig, VitDiscriminator,
    VitDiscriminatorConfig,
};

/// Largest accepted relative error.
pub const TOLERANCE: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckKind {
    Operator,
    Loss,
    Network,
}

#[derive(Clone, Copy)]
pub struct Check {
    pub name: &'static str,
    pub kind: CheckKind,
    run: fn() -> Result<GradCheckReport>,
}

impl Check {
    pub fn run(&self) -> Result<GradCheckReport> {
        (self.run)()
    }
}

fn rand_tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn unit_tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.random_range(0.05..0.95))
}

fn projected(
    f: impl Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
    inputs: &[Tensor<f64>],
) -> Result<GradCheckReport> {
    grad_check(
        |g, v| {
            let y = f(g, v)?;
            random_projection(g, y, 99)
        },
        inputs,
        GradCheckOptions::default().sampled(40),
    )
}

fn scalar(f: impl Fn(&mut Graph<f64>, &[Var]) -> Result<Var>, inputs: &[Tensor<f64>]) -> Result<GradCheckReport> {
    grad_check(f, inputs, GradCheckOptions::default().sampled(60))
}

/// Checks a network against its parameters and its input.
fn network(
    params: &ParamStore<f32>,
    x: Tensor<f64>,
    f: impl Fn(&mut Graph<f64>, &Bound, Var) -> Result<Var>,
) -> Result<GradCheckReport> {
    let mut inputs: Vec<Tensor<f64>> = params.cast::<f64>().iter().map(|(_, t)| t.clone()).collect();
    inputs.push(x);
    let n = inputs.len();
    grad_check(
        |g, v| {
            let y = f(g, &Bound::from_vars(v[..n - 1].to_vec()), v[n - 1])?;
            random_projection(g, y, 5)
        },
        &inputs,
        GradCheckOptions::eps(1e-6).sampled(4),
    )
}

fn binary(f: fn(&mut Graph<f64>, Var, Var) -> Result<Var>, positive_b: bool) -> Result<GradCheckReport> {
    let a = rand_tensor(&[2, 1, 3, 2], 1);
    let b = rand_tensor(&[2, 1, 3, 2], 2);
    let b = if positive_b { b.map(|v| v.abs() + 0.5) } else { b };
    projected(|g, v| f(g, v[0], v[1]), &[a, b])
}

fn unary(f: fn(&mut Graph<f64>, Var) -> Var) -> Result<GradCheckReport> {
    projected(|g, v| Ok(f(g, v[0])), &[rand_tensor(&[2, 3, 2], 3)])
}

fn volume_op(f: fn(&mut Graph<f64>, Var) -> Result<Var>) -> Result<GradCheckReport> {
    projected(|g, v| f(g, v[0]), &[rand_tensor(&[2, 2, 3, 5, 4], 4)])
}

fn attention_weights(v: &[Var]) -> AttentionWeights {
    AttentionWeights {
        wq: v[1],
        bq: v[2],
        wk: v[3],
        bk: v[4],
        wv: v[5],
        bv: v[6],
        wo: v[7],
        bo: v[8],
    }
}

fn toy_generator() -> GeneratorConfig {
    GeneratorConfig {
        levels: 3,
        base_channels: 4,
        ..GeneratorConfig::default()
    }
}

fn loss_inputs(seed: u64) -> (Tensor<f64>, Tensor<f64>) {
    let shape = [1, 1, 6, 6, 6];
    (unit_tensor(&shape, seed), unit_tensor(&shape, seed + 10).map(f64::round))
}

macro_rules! check {
    ($name:expr, $kind:ident, $body:expr) => {
        Check {
            name: $name,
            kind: CheckKind::$kind,
            run: || $body,
        }
    };
}

/// All checks, operators first.
pub fn suite() -> Vec<Check> {
    vec![
        check!("add", Operator, binary(|g, a, b| g.add(a, b), false)),
        check!("sub", Operator, binary(|g, a, b| g.sub(a, b), false)),
        check!("mul", Operator, binary(|g, a, b| g.mul(a, b), false)),
        check!("div", Operator, binary(|g, a, b| g.div(a, b), true)),
        check!("add_scalar", Operator, unary(|g, x| g.add_scalar(x, 0.3))),
        check!("mul_scalar", Operator, unary(|g, x| g.mul_scalar(x, -2.0))),
        check!("neg", Operator, unary(|g, x| g.neg(x))),
        check!("abs", Operator, unary(|g, x| g.abs(x))),
        check!("exp", Operator, unary(|g, x| g.exp(x))),
        check!("square", Operator, unary(|g, x| g.square(x))),
        check!("tanh", Operator, unary(|g, x| g.tanh(x))),
        check!("sigmoid", Operator, unary(|g, x| g.sigmoid(x))),
        check!("relu", Operator, unary(|g, x| g.relu(x))),
        check!("leaky_relu", Operator, unary(|g, x| g.leaky_relu(x, 0.2))),
        check!("gelu", Operator, unary(|g, x| g.gelu(x))),
        check!(
            "sum",
            Operator,
            scalar(|g, v| { let y = g.square(v[0]); Ok(g.sum(y)) }, &[rand_tensor(&[3, 4], 5)])
        ),
        check!(
            "mean",
            Operator,
            scalar(|g, v| { let y = g.square(v[0]); Ok(g.mean(y)) }, &[rand_tensor(&[3, 4], 6)])
        ),
        check!("expand", Operator, projected(|g, v| g.expand(v[0], &[2, 3, 2]), &[rand_tensor(&[2, 1, 1], 7)])),
        check!("reshape", Operator, projected(|g, v| g.reshape(v[0], &[6, 4]), &[rand_tensor(&[2, 3, 4], 8)])),
        check!(
            "permute",
            Operator,
            projected(|g, v| g.permute(v[0], &[2, 0, 1]), &[rand_tensor(&[2, 3, 4], 9)])
        ),
        check!("transpose", Operator, projected(|g, v| g.transpose(v[0]), &[rand_tensor(&[2, 3, 4], 10)])),
        check!(
            "concat",
            Operator,
            projected(|g, v| g.concat(&[v[0], v[1]], 1), &[rand_tensor(&[2, 3, 4], 11), rand_tensor(&[2, 2, 4], 12)])
        ),
        check!("narrow", Operator, projected(|g, v| g.narrow(v[0], 2, 1, 2), &[rand_tensor(&[2, 3, 4], 13)])),
        check!(
            "patchify",
            Operator,
            projected(|g, v| g.patchify(v[0], [2, 2, 3]), &[rand_tensor(&[1, 2, 4, 2, 6], 14)])
        ),
        check!(
            "matmul",
            Operator,
            projected(|g, v| g.matmul(v[0], v[1]), &[rand_tensor(&[2, 3, 4], 15), rand_tensor(&[2, 4, 5], 16)])
        ),
        check!(
            "linear",
            Operator,
            projected(
                |g, v| g.linear(v[0], v[1], Some(v[2])),
                &[rand_tensor(&[2, 4, 3], 17), rand_tensor(&[2, 3], 18), rand_tensor(&[2], 19)]
            )
        ),
        check!(
            "softmax",
            Operator,
            projected(|g, v| g.softmax(v[0]), &[rand_tensor(&[3, 5], 20).map(|x| 3.0 * x)])
        ),
        check!(
            "conv3d",
            Operator,
            projected(
                |g, v| g.conv3d(v[0], v[1], Some(v[2]), 2, 1),
                &[rand_tensor(&[1, 2, 6, 6, 6], 21), rand_tensor(&[2, 2, 4, 4, 4], 22), rand_tensor(&[2], 23)]
            )
        ),
        check!("max_pool3d", Operator, volume_op(|g, x| g.max_pool3d(x, 2, 2, 0))),
        check!("min_pool3d", Operator, volume_op(|g, x| g.min_pool3d(x, 3, 1, 1))),
        check!("avg_pool3d", Operator, volume_op(|g, x| g.avg_pool3d(x, 3, 1, 1))),
        check!("upsample2x", Operator, volume_op(|g, x| g.upsample2x(x))),
        check!(
            "instance_norm",
            Operator,
            projected(
                |g, v| g.instance_norm(v[0], v[1], v[2], 1e-5),
                &[rand_tensor(&[2, 3, 3, 2, 2], 24), rand_tensor(&[3], 25), rand_tensor(&[3], 26)]
            )
        ),
        check!(
            "layer_norm",
            Operator,
            projected(
                |g, v| g.layer_norm(v[0], v[1], v[2], 1e-5),
                &[rand_tensor(&[2, 3, 5], 27), rand_tensor(&[5], 28), rand_tensor(&[5], 29)]
            )
        ),
        check!(
            "bce_with_logits",
            Operator,
            scalar(
                |g, v| g.bce_with_logits(v[0], &rand_tensor(&[2, 3], 31).map(|t| f64::from(t > 0.0))),
                &[rand_tensor(&[2, 3], 30).map(|x| 4.0 * x)]
            )
        ),
        check!("l1", Operator, scalar(|g, v| g.l1(v[0], v[1]), &[rand_tensor(&[2, 3], 32), rand_tensor(&[2, 3], 33)])),
        check!("multi_head_attention", Operator, {
            let d = 4;
            let mut inputs = vec![rand_tensor(&[2, 3, d], 34)];
            for i in 0..4 {
                inputs.push(rand_tensor(&[d, d], 35 + 2 * i));
                inputs.push(rand_tensor(&[d], 36 + 2 * i));
            }
            projected(|g, v| multi_head_attention(g, v[0], &attention_weights(v), 2), &inputs)
        }),
        check!("soft_dice", Loss, {
            let (p, gt) = loss_inputs(40);
            scalar(|g, v| soft_dice(g, v[0], v[1]), &[p, gt])
        }),
        check!("soft_cl_dice", Loss, {
            let (p, _) = loss_inputs(41);
            scalar(|g, v| soft_cl_dice(g, v[0], v[1], 3), &[p, unit_tensor(&[1, 1, 6, 6, 6], 42)])
        }),
        check!("l_d", Loss, {
            let (p, _) = loss_inputs(43);
            scalar(|g, v| l_d(g, v[0], v[1], 0.3, 3), &[p, unit_tensor(&[1, 1, 6, 6, 6], 44)])
        }),
        check!("l_ccf", Loss, {
            let (p, cl) = loss_inputs(45);
            scalar(
                |g, v| {
                    let c = g.constant(cl.clone());
                    l_ccf(g, v[0], c)
                },
                &[p],
            )
        }),
        check!("l1_loss", Loss, {
            let (p, gt) = loss_inputs(46);
            scalar(|g, v| g.l1(v[0], v[1]), &[p, gt])
        }),
        check!("layer_loss", Loss, {
            let (p, gt) = loss_inputs(47);
            let out = p.map(|v| 2.0 * v - 1.0);
            scalar(
                |g, v| {
                    let t = g.constant(gt.clone());
                    let c = g.constant(gt.clone());
                    Ok(layer_loss(g, v[0], t, c, Some(v[1]), &LossWeights::default())?.total)
                },
                &[out, Tensor::scalar(0.7)],
            )
        }),
        check!(
            "discriminator_loss",
            Loss,
            scalar(
                |g, v| discriminator_loss(g, v[0], v[1]),
                &[rand_tensor(&[1, 1, 2, 2, 2], 48), rand_tensor(&[1, 1, 2, 2, 2], 49)]
            )
        ),
        check!(
            "generator_adversarial_loss",
            Loss,
            scalar(|g, v| generator_adversarial_loss(g, v[0]), &[rand_tensor(&[1, 1, 2, 2, 2], 50)])
        ),
        check!("disc_input_dilation", Loss, {
            let ct = unit_tensor(&[1, 1, 5, 5, 5], 51);
            scalar(
                |g, v| {
                    let c = g.constant(ct.clone());
                    let y = prepare_disc_input(g, c, v[0], 1)?;
                    random_projection(g, y, 52)
                },
                &[unit_tensor(&[1, 1, 5, 5, 5], 53)],
            )
        }),
        check!("generator", Network, {
            let (net, params) = Generator::new(toy_generator(), 6)?;
            network(&params, rand_tensor(&[1, 2, 8, 8, 8], 7), |g, p, x| {
                let o = net.forward(g, p, x)?;
                let mut total = random_projection(g, o.output, 8)?;
                for (i, a) in o.aux.into_iter().enumerate() {
                    let s = random_projection(g, a, 9 + i as u64)?;
                    total = g.add(total, s)?;
                }
                Ok(total)
            })
        }),
        check!("patch_discriminator", Network, {
            let cfg = PatchDiscriminatorConfig {
                channels: vec![2, 3, 1],
                ..PatchDiscriminatorConfig::default()
            };
            let (net, params) = PatchDiscriminator::new(cfg, 2)?;
            network(&params, rand_tensor(&[1, 1, 22, 22, 22], 3), |g, p, x| net.forward(g, p, x))
        }),
        check!("vit_discriminator", Network, {
            let cfg = VitDiscriminatorConfig {
                input_dims: [8, 8, 8],
                patch_dims: [4, 4, 4],
                layers: 1,
                hidden: 8,
                mlp: 16,
                heads: 2,
                ..VitDiscriminatorConfig::default()
            };
            let (net, params) = VitDiscriminator::new(cfg, 4)?;
            network(&params, rand_tensor(&[2, 1, 8, 8, 8], 5), |g, p, x| net.forward(g, p, x))
        }),
    ]
}
