use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};

use super::graph::{Graph, Var};
use super::tensor::Tensor;

/// Settings for [`grad_check`].
#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    pub eps: f64,
    /// Check at most this many randomly chosen elements per input.
    pub max_elements: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            eps: 1e-3,
            max_elements: None,
            seed: 0,
        }
    }
}

impl GradCheckOptions {
    pub fn eps(eps: f64) -> Self {
        Self {
            eps,
            ..Self::default()
        }
    }

    pub fn sampled(mut self, n: usize) -> Self {
        self.max_elements = Some(n);
        self
    }
}

/// Outcome of [`grad_check`].
#[derive(Clone, Debug, Default, Serialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// (input index, element index) of the worst element.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
    /// Elements where the function looked non-differentiable.
    pub skipped: Vec<(usize, usize)>,
}

/// Compares analytic gradients of the scalar built by `f` against central
/// differences, in 64-bit.
///
/// Each element's numerical derivative is the Richardson combination of
/// central differences at `eps` and `eps / 2`. An element is skipped as a
/// kink when those two disagree, or when the gap between forward and
/// backward slopes fails to shrink with the step. Errors are relative to
/// `max(|analytic|, |numeric|)`, floored at 1% of the input's largest
/// analytic gradient and at `1e-8 * max(1, |f|)`, so inputs whose true
/// gradient is zero compare against rounding noise rather than each other.
///
/// ```
/// use airway_refine::autodiff::{grad_check, GradCheckOptions, Tensor};
///
/// let x = Tensor::new(&[3], vec![0.3, -0.7, 1.1]).unwrap();
/// let report = grad_check(
///     |g, v| {
///         let t = g.tanh(v[0]);
///         Ok(g.sum(t))
///     },
///     &[x],
///     GradCheckOptions::default(),
/// )
/// .unwrap();
/// assert!(report.max_rel_error < 1e-6);
/// ```
pub fn grad_check<F>(f: F, inputs: &[Tensor<f64>], opts: GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        scalar(&g, out)
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let base = scalar(&g, out)?;
    g.backward(out)?;
    let noise = 1e-8 * base.abs().max(1.0);
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| g.grad(*v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = GradCheckReport::default();
    let mut values = inputs.to_vec();
    let h = opts.eps;
    for (k, input) in inputs.iter().enumerate() {
        let n = input.len();
        let elements: Vec<usize> = match opts.max_elements {
            Some(m) if m < n => {
                let mut e = sample(&mut rng, n, m).into_vec();
                e.sort_unstable();
                e
            }
            _ => (0..n).collect(),
        };
        let floor = (1e-2 * analytic[k].max_abs()).max(noise);
        for i in elements {
            let x0 = input.data()[i];
            let mut at = |dx: f64| -> Result<f64> {
                values[k].data_mut()[i] = x0 + dx;
                let r = eval(&values);
                values[k].data_mut()[i] = x0;
                r
            };
            let (f0, fp1, fm1) = (at(0.0)?, at(h)?, at(-h)?);
            let (fp2, fm2) = (at(h / 2.0)?, at(-h / 2.0)?);
            let d1 = (fp1 - fm1) / (2.0 * h);
            let d2 = (fp2 - fm2) / h;
            // one-sided slope gaps: shrink with h when smooth, stay put at a kink
            let j1 = (fp1 - 2.0 * f0 + fm1) / h;
            let j2 = (fp2 - 2.0 * f0 + fm2) / (h / 2.0);
            let scale = d1.abs().max(d2.abs()).max(floor);
            let kink_between = (d1 - d2).abs() > 1e-3 * scale;
            let kink_at = j2.abs() > 1e-6 * scale && j2.abs() > 0.75 * j1.abs();
            if kink_between || kink_at {
                report.skipped.push((k, i));
                continue;
            }
            let numeric = (4.0 * d2 - d1) / 3.0;
            let a = analytic[k].data()[i];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            report.checked += 1;
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((k, i));
            }
        }
    }
    Ok(report)
}

fn scalar(g: &Graph<f64>, v: Var) -> Result<f64> {
    let t = g.value(v);
    if t.len() != 1 {
        return Err(Error::shape("grad_check", format!("function must return a scalar, got {:?}", t.shape())));
    }
    Ok(t.item())
}

/// Reduces a tensor to a scalar with fixed pseudo-random weights, so every
/// output element contributes a distinct gradient.
pub fn random_projection(g: &mut Graph<f64>, v: Var, seed: u64) -> Result<Var> {
    use rand::RngExt;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = g.shape(v).to_vec();
    let w = Tensor::from_fn(&shape, |_| rng.random_range(-1.0..1.0));
    let w = g.constant(w);
    let p = g.mul(v, w)?;
    Ok(g.sum(p))
}
