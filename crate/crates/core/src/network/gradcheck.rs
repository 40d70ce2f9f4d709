//! Central finite-difference verification of the analytic gradients.

use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{backward_segment, forward_segment, loss_ce, Activation, GradBundle, Model};
use crate::error::Result;
use crate::linalg::Matrix;

const STEP: f64 = 1e-5;
/// Magnitudes below this are compared absolutely. Rounding in the loss
/// leaves about 1e-11 of noise in a central difference at `STEP`, so smaller
/// gradients cannot be resolved to a useful relative precision.
const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_param_rel_error: f64,
    pub max_input_rel_error: f64,
    /// Error of `<input_grad, v>` against the finite difference along a random
    /// direction `v`.
    pub directional_rel_error: f64,
    pub checked: usize,
    /// Coordinates skipped because every tried step crossed a ReLU kink.
    pub kink_skips: usize,
    pub tolerance: f64,
    pub passed: bool,
}

fn rel_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

/// Gradients of mean cross-entropy over a full forward pass.
pub fn analytic_gradients(model: &Model, x: &Matrix, labels: &[usize]) -> Result<GradBundle> {
    let cache = forward_segment(model, 1, model.depth(), x, None)?;
    let (_, g) = loss_ce(cache.output(), labels)?;
    backward_segment(model, &cache, &g, None)
}

fn loss(model: &Model, x: &Matrix, labels: &[usize]) -> Result<f64> {
    Ok(loss_ce(&model.logits(x)?, labels)?.0)
}

fn relu_pattern(model: &Model, x: &Matrix) -> Result<Vec<bool>> {
    let cache = forward_segment(model, 1, model.depth(), x, None)?;
    let mut pat = Vec::new();
    for (l, pre) in model.layers.iter().zip(&cache.pre) {
        if l.activation == Activation::Relu {
            pat.extend(pre.as_slice().iter().map(|v| *v > 0.0));
        }
    }
    Ok(pat)
}

/// Central difference of `f` in one coordinate, shrinking the step while it
/// crosses a ReLU kink. `None` when no step stays on one linear piece.
fn central_difference<F>(base: &[bool], mut eval: F) -> Result<Option<f64>>
where
    F: FnMut(f64) -> Result<(f64, Vec<bool>)>,
{
    let mut h = STEP;
    for _ in 0..4 {
        let (fp, pp) = eval(h)?;
        let (fm, pm) = eval(-h)?;
        if pp == base && pm == base {
            return Ok(Some((fp - fm) / (2.0 * h)));
        }
        h /= 10.0;
    }
    Ok(None)
}

/// Checks the gradients produced by `grad_fn` against central differences on
/// every parameter and input coordinate.
pub fn grad_check_with<F>(
    model: &Model,
    x: &Matrix,
    labels: &[usize],
    tolerance: f64,
    grad_fn: F,
) -> Result<GradCheckReport>
where
    F: Fn(&Model, &Matrix, &[usize]) -> Result<GradBundle>,
{
    let grads = grad_fn(model, x, labels)?;
    let base = relu_pattern(model, x)?;
    let mut max_param = 0.0f64;
    let mut max_input = 0.0f64;
    let mut checked = 0;
    let mut kink_skips = 0;

    let mut probe = model.clone();
    for l in 0..model.depth() {
        let n_w = model.layers[l].weights.as_slice().len();
        let n_b = model.layers[l].bias.len();
        for idx in 0..n_w + n_b {
            let analytic = if idx < n_w {
                grads.param_grads[l].weights.as_slice()[idx]
            } else {
                grads.param_grads[l].bias[idx - n_w]
            };
            let fd = central_difference(&base, |h| {
                probe.clone_from(model);
                if idx < n_w {
                    probe.layers[l].weights.as_mut_slice()[idx] += h;
                } else {
                    probe.layers[l].bias[idx - n_w] += h;
                }
                Ok((loss(&probe, x, labels)?, relu_pattern(&probe, x)?))
            })?;
            match fd {
                Some(fd) => {
                    max_param = max_param.max(rel_error(analytic, fd));
                    checked += 1;
                }
                None => kink_skips += 1,
            }
        }
    }

    for idx in 0..x.as_slice().len() {
        let analytic = grads.input_grad.as_slice()[idx];
        let fd = central_difference(&base, |h| {
            let mut xp = x.clone();
            xp.as_mut_slice()[idx] += h;
            Ok((loss(model, &xp, labels)?, relu_pattern(model, &xp)?))
        })?;
        match fd {
            Some(fd) => {
                max_input = max_input.max(rel_error(analytic, fd));
                checked += 1;
            }
            None => kink_skips += 1,
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(model.seed ^ 0x9e37_79b9_7f4a_7c15);
    let dir: Vec<f64> = (0..x.as_slice().len())
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    let analytic_dir: f64 = grads.input_grad.as_slice().iter().zip(&dir).map(|(g, v)| g * v).sum();
    let fd_dir = central_difference(&base, |h| {
        let mut xp = x.clone();
        for (v, d) in xp.as_mut_slice().iter_mut().zip(&dir) {
            *v += h * d;
        }
        Ok((loss(model, &xp, labels)?, relu_pattern(model, &xp)?))
    })?;
    let directional = match fd_dir {
        Some(fd) => {
            checked += 1;
            rel_error(analytic_dir, fd)
        }
        None => {
            kink_skips += 1;
            0.0
        }
    };

    let passed = max_param < tolerance && max_input < tolerance && directional < tolerance;
    Ok(GradCheckReport {
        max_param_rel_error: max_param,
        max_input_rel_error: max_input,
        directional_rel_error: directional,
        checked,
        kink_skips,
        tolerance,
        passed,
    })
}

/// [`grad_check_with`] on a random 3-sample batch derived from the model seed.
pub fn grad_check(model: &Model, tolerance: f64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(model.seed.wrapping_add(1));
    let d0 = model.width(0);
    let batch = 3;
    let data = (0..batch * d0).map(|_| StandardNormal.sample(&mut rng)).collect();
    let x = Matrix::new(batch, d0, data)?;
    let classes = model.num_classes();
    let labels: Vec<usize> = (0..batch).map(|i| i % classes).collect();
    grad_check_with(model, &x, &labels, tolerance, analytic_gradients)
}
