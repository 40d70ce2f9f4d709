//! Projected gradient descent in input space and at intermediate layers.
//!
//! At the input (`target_layer = 0`) the ball lives in input coordinates.
//! At a hidden layer the search runs over `δ̃` in the ball and the applied
//! perturbation is `scale ⊙ δ̃`, where `scale` is the layer's typical feature
//! spread on the batch (see [`perturbation_scale`]), so one radius means the
//! same thing at layers of very different magnitude. The ball stays
//! isotropic: dead or constant units are perturbed as much as live ones.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{norm2, Matrix, SCALE_FLOOR};
use crate::network::{argmax_rows, backward_input, forward_span, loss_ce, Model, OpCounter, Phase};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Norm {
    #[default]
    Linf,
    L2,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct AttackConfig {
    pub epsilon: f64,
    pub alpha: f64,
    pub steps: usize,
    pub norm: Norm,
    pub init_sigma: f64,
    pub seed: u64,
    pub target_layer: usize,
}

impl AttackConfig {
    /// Linf attack at the input with `alpha = 2.5 ε / P` (at most `2 ε`) and
    /// `σ = ε / 2`.
    pub fn new(epsilon: f64, steps: usize, seed: u64) -> Self {
        Self {
            epsilon,
            alpha: (2.5 / steps.max(1) as f64).min(2.0) * epsilon,
            steps,
            norm: Norm::Linf,
            init_sigma: epsilon / 2.0,
            seed,
            target_layer: 0,
        }
    }

    pub fn at_layer(mut self, target_layer: usize) -> Self {
        self.target_layer = target_layer;
        self
    }

    /// `ε = 0` is accepted as the null attack.
    pub fn validate(&self) -> Result<()> {
        let bad = |name, reason: alloc::string::String| Err(Error::InvalidParameter { name, reason });
        if !(self.epsilon >= 0.0) || !self.epsilon.is_finite() {
            return bad("epsilon", format!("must be finite and >= 0, got {}", self.epsilon));
        }
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return bad("alpha", format!("must be finite and >= 0, got {}", self.alpha));
        }
        if self.epsilon > 0.0 && self.alpha > 2.0 * self.epsilon {
            return bad(
                "alpha",
                format!("{} exceeds 2 * epsilon = {}", self.alpha, 2.0 * self.epsilon),
            );
        }
        if self.steps == 0 {
            return bad("steps", "must be >= 1".into());
        }
        if !(self.init_sigma >= 0.0) || !self.init_sigma.is_finite() {
            return bad("init_sigma", format!("must be finite and >= 0, got {}", self.init_sigma));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackResult {
    /// Per-sample perturbation in standardized units.
    pub delta: Matrix,
    /// Per-feature factor mapping `delta` to activation units.
    pub scale: Vec<f64>,
    /// Batch loss before each of the `P` steps.
    pub loss_trace: Vec<f64>,
    /// Samples whose prediction differs from the clean prediction.
    pub success_mask: Vec<bool>,
    pub adversarial_predictions: Vec<usize>,
}

impl AttackResult {
    /// `x + scale ⊙ delta`.
    pub fn perturbed(&self, x: &Matrix) -> Matrix {
        apply_delta(x, &self.delta, &self.scale)
    }
}

/// Projection onto the `ε`-ball, row by row.
pub fn project_ball(delta: &Matrix, epsilon: f64, norm: Norm) -> Matrix {
    let mut out = delta.clone();
    project_in_place(&mut out, epsilon, norm);
    out
}

fn project_in_place(delta: &mut Matrix, epsilon: f64, norm: Norm) {
    let eps = epsilon.max(0.0);
    match norm {
        Norm::Linf => delta
            .as_mut_slice()
            .iter_mut()
            .for_each(|v| *v = v.clamp(-eps, eps)),
        Norm::L2 => {
            for r in 0..delta.rows() {
                let row = delta.row_mut(r);
                let n = norm2(row);
                if n > eps {
                    let f = eps / n;
                    row.iter_mut().for_each(|v| *v *= f);
                }
            }
        }
    }
}

/// Norm of each row under `norm`.
pub fn row_norms(delta: &Matrix, norm: Norm) -> Vec<f64> {
    delta
        .iter_rows()
        .map(|r| match norm {
            Norm::Linf => r.iter().fold(0.0f64, |m, v| m.max(v.abs())),
            Norm::L2 => norm2(r),
        })
        .collect()
}

/// Root-mean-square of the per-feature sample standard deviations of `rep`,
/// floored and repeated for every feature; all ones for `target_layer = 0`
/// or fewer than two rows.
pub fn perturbation_scale(rep: &Matrix, target_layer: usize) -> Vec<f64> {
    let (n, d) = rep.shape();
    if target_layer == 0 || n < 2 {
        return vec![1.0; d];
    }
    let mut mean = vec![0.0; d];
    for row in rep.iter_rows() {
        mean.iter_mut().zip(row).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut ss = 0.0;
    for row in rep.iter_rows() {
        for (v, m) in row.iter().zip(&mean) {
            ss += (v - m) * (v - m);
        }
    }
    let s = libm::sqrt(ss / ((n - 1) * d) as f64).max(SCALE_FLOOR);
    vec![s; d]
}

fn apply_delta(x: &Matrix, delta: &Matrix, scale: &[f64]) -> Matrix {
    let mut out = x.clone();
    for r in 0..out.rows() {
        for ((o, d), s) in out.row_mut(r).iter_mut().zip(delta.row(r)).zip(scale) {
            *o += s * d;
        }
    }
    out
}

/// Output of the PGD loop without the final evaluation pass.
pub(crate) struct PgdRun {
    pub delta: Matrix,
    pub loss_trace: Vec<f64>,
}

/// PGD over layers `target_layer+1..=n` starting from the cached
/// representation `rep`. Every forward and backward pass is charged to the
/// counter's current phase.
pub(crate) fn pgd_delta(
    model: &Model,
    cfg: &AttackConfig,
    rep: &Matrix,
    labels: &[usize],
    scale: &[f64],
    stream: u64,
    mut counter: Option<&mut OpCounter>,
) -> Result<PgdRun> {
    let l = cfg.target_layer;
    let n = model.depth();
    let (rows, cols) = rep.shape();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(stream);
    let mut delta = Matrix::zeros(rows, cols);
    if cfg.init_sigma > 0.0 {
        for v in delta.as_mut_slice() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v = cfg.init_sigma * z;
        }
    }
    project_in_place(&mut delta, cfg.epsilon, cfg.norm);

    let mut loss_trace = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let input = apply_delta(rep, &delta, scale);
        let cache = forward_span(model, l + 1, n, &input, counter.as_deref_mut())?;
        let (loss, g_out) = loss_ce(cache.output(), labels)?;
        if !loss.is_finite() {
            return Err(Error::AttackNonFinite { step });
        }
        loss_trace.push(loss);
        let g_in = if cache.is_empty() {
            g_out
        } else {
            backward_input(model, &cache, &g_out, counter.as_deref_mut())?
        };
        for r in 0..rows {
            let g: Vec<f64> = g_in.row(r).iter().zip(scale).map(|(g, s)| g * s).collect();
            let d = delta.row_mut(r);
            match cfg.norm {
                Norm::Linf => {
                    for (dv, gv) in d.iter_mut().zip(&g) {
                        if *gv > 0.0 {
                            *dv += cfg.alpha;
                        } else if *gv < 0.0 {
                            *dv -= cfg.alpha;
                        }
                    }
                }
                Norm::L2 => {
                    let gn = norm2(&g);
                    if gn > 0.0 {
                        for (dv, gv) in d.iter_mut().zip(&g) {
                            *dv += cfg.alpha * gv / gn;
                        }
                    }
                }
            }
        }
        project_in_place(&mut delta, cfg.epsilon, cfg.norm);
    }
    Ok(PgdRun { delta, loss_trace })
}

fn check_attack_input(model: &Model, cfg: &AttackConfig, x: &Matrix, labels: &[usize]) -> Result<()> {
    cfg.validate()?;
    if cfg.target_layer > model.depth() {
        return Err(Error::OutOfRange {
            name: "target_layer",
            value: cfg.target_layer,
            min: 0,
            max: model.depth(),
        });
    }
    let expected = model.width(cfg.target_layer);
    if x.cols() != expected {
        return Err(Error::DimensionMismatch {
            context: "pgd input width",
            expected,
            got: x.cols(),
        });
    }
    if labels.len() != x.rows() {
        return Err(Error::DimensionMismatch {
            context: "pgd labels",
            expected: x.rows(),
            got: labels.len(),
        });
    }
    if x.rows() == 0 {
        return Err(Error::Empty("pgd batch"));
    }
    Ok(())
}

/// PGD on `x`, the representation at `cfg.target_layer` (the raw input for
/// layer 0), using RNG stream 0.
pub fn pgd(
    model: &Model,
    cfg: &AttackConfig,
    x: &Matrix,
    labels: &[usize],
    counter: Option<&mut OpCounter>,
) -> Result<AttackResult> {
    pgd_stream(model, cfg, x, labels, 0, counter)
}

/// [`pgd`] with an explicit RNG stream, so that disjoint batches attacked
/// under one seed draw independent initializations.
///
/// The PGD steps are charged to the counter's current phase; the two
/// prediction passes that fill `success_mask` are charged to
/// [`Phase::Inference`].
pub fn pgd_stream(
    model: &Model,
    cfg: &AttackConfig,
    x: &Matrix,
    labels: &[usize],
    stream: u64,
    mut counter: Option<&mut OpCounter>,
) -> Result<AttackResult> {
    check_attack_input(model, cfg, x, labels)?;
    let scale = perturbation_scale(x, cfg.target_layer);
    let run = pgd_delta(model, cfg, x, labels, &scale, stream, counter.as_deref_mut())?;
    let l = cfg.target_layer;
    let n = model.depth();
    let saved = counter.as_ref().map(|c| c.current_phase());
    if let Some(c) = counter.as_deref_mut() {
        c.set_phase(Phase::Inference);
    }
    let clean = argmax_rows(forward_span(model, l + 1, n, x, counter.as_deref_mut())?.output());
    let adv_in = apply_delta(x, &run.delta, &scale);
    let adv = argmax_rows(forward_span(model, l + 1, n, &adv_in, counter.as_deref_mut())?.output());
    if let (Some(c), Some(p)) = (counter, saved) {
        c.set_phase(p);
    }
    let success_mask = clean.iter().zip(&adv).map(|(a, b)| a != b).collect();
    Ok(AttackResult {
        delta: run.delta,
        scale,
        loss_trace: run.loss_trace,
        success_mask,
        adversarial_predictions: adv,
    })
}

/// Rows per attacked chunk in [`robust_accuracy`]; chunk `i` uses RNG stream `i`.
pub const EVAL_CHUNK: usize = 256;

/// Fraction of samples classified correctly.
pub fn clean_accuracy(model: &Model, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Empty("clean_accuracy dataset"));
    }
    let pred = model.predict(&data.x)?;
    let hits = pred.iter().zip(&data.y).filter(|(p, y)| p == y).count();
    Ok(hits as f64 / data.len() as f64)
}

/// Fraction of samples still classified correctly after input-space PGD.
/// `cfg.target_layer` is ignored: evaluation always attacks the input.
pub fn robust_accuracy(model: &Model, data: &Dataset, cfg: &AttackConfig) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Empty("robust_accuracy dataset"));
    }
    let cfg = AttackConfig {
        target_layer: 0,
        ..cfg.clone()
    };
    cfg.validate()?;
    let mut hits = 0;
    let n = data.len();
    for (chunk, start) in (0..n).step_by(EVAL_CHUNK).enumerate() {
        let idx: Vec<usize> = (start..(start + EVAL_CHUNK).min(n)).collect();
        let x = data.x.select_rows(&idx);
        let y: Vec<usize> = idx.iter().map(|&i| data.y[i]).collect();
        let res = pgd_stream(model, &cfg, &x, &y, chunk as u64, None)?;
        hits += res
            .adversarial_predictions
            .iter()
            .zip(&y)
            .filter(|(p, t)| p == t)
            .count();
    }
    Ok(hits as f64 / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::DatasetMeta;
    use crate::network::{init_model, Activation, Architecture, Layer};

    fn linear_binary(w: &[f64]) -> Model {
        // logits (0, w·x): class 1 iff w·x > 0
        let d = w.len();
        let mut weights = Matrix::zeros(d, 2);
        for (i, v) in w.iter().enumerate() {
            weights[(i, 1)] = *v;
        }
        let layer = Layer {
            weights,
            bias: vec![0.0; 2],
            activation: Activation::Softmax,
        };
        Model::from_layers(vec![layer], None, 0).unwrap()
    }

    fn dataset(x: Matrix, y: Vec<usize>) -> Dataset {
        let d = x.cols();
        Dataset::new(
            x,
            y,
            2,
            DatasetMeta {
                generator: "test".into(),
                intrinsic_k: d,
                ambient_d: d,
                noise_sigma: 0.0,
                margin: 0.0,
                seed: 0,
            },
        )
        .unwrap()
    }

    fn mlp(seed: u64) -> Model {
        let a = Architecture::new(
            vec![6, 8, 5, 3],
            vec![Activation::Relu, Activation::Tanh, Activation::Softmax],
        )
        .unwrap();
        init_model(&a, seed).unwrap()
    }

    fn batch(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..rows * cols).map(|_| StandardNormal.sample(&mut rng)).collect();
        Matrix::new(rows, cols, data).unwrap()
    }

    #[test]
    fn projection_examples() {
        let eps = 0.3;
        let inside = Matrix::from_rows(&[[0.1, -0.2]]).unwrap();
        assert_eq!(project_ball(&inside, eps, Norm::Linf), inside);
        assert_eq!(project_ball(&inside, eps, Norm::L2), inside);
        let d = Matrix::from_rows(&[[3.0 * eps, -0.5 * eps]]).unwrap();
        assert_eq!(
            project_ball(&d, eps, Norm::Linf),
            Matrix::from_rows(&[[eps, -0.5 * eps]]).unwrap()
        );
        let d = Matrix::from_rows(&[[0.6 * 2.0 * eps, 0.8 * 2.0 * eps]]).unwrap();
        let p = project_ball(&d, eps, Norm::L2);
        assert!((norm2(p.row(0)) - eps).abs() < 1e-12);
        assert!((p[(0, 0)] / p[(0, 1)] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        assert!(AttackConfig::new(0.1, 5, 0).validate().is_ok());
        assert!(AttackConfig::new(0.0, 5, 0).validate().is_ok());
        let mut c = AttackConfig::new(0.1, 5, 0);
        c.alpha = 0.3;
        assert!(c.validate().is_err());
        c = AttackConfig::new(0.1, 0, 0);
        assert!(c.validate().is_err());
        c = AttackConfig::new(-0.1, 1, 0);
        assert!(c.validate().is_err());
    }

    #[test]
    fn single_step_is_fgsm() {
        let m = linear_binary(&[1.0, -2.0, 0.5]);
        let x = Matrix::from_rows(&[[0.3, 0.1, -0.4], [-1.0, 0.2, 0.7]]).unwrap();
        let y = [1, 0];
        let mut cfg = AttackConfig::new(0.2, 1, 3);
        cfg.alpha = cfg.epsilon;
        cfg.init_sigma = 0.0;
        let res = pgd(&m, &cfg, &x, &y, None).unwrap();
        let (_, g) = loss_ce(&m.logits(&x).unwrap(), &y).unwrap();
        let gx = g.matmul_t(&m.layer(1).weights).unwrap();
        for (d, g) in res.delta.as_slice().iter().zip(gx.as_slice()) {
            assert_eq!(*d, 0.2 * g.signum());
        }
    }

    #[test]
    fn tiny_epsilon_changes_nothing() {
        let m = mlp(1);
        let x = batch(20, 6, 2);
        let y: Vec<usize> = (0..20).map(|i| i % 3).collect();
        let res = pgd(&m, &AttackConfig::new(1e-12, 10, 0), &x, &y, None).unwrap();
        assert!(res.success_mask.iter().all(|s| !s));
        assert_eq!(res.adversarial_predictions, m.predict(&x).unwrap());
    }

    #[test]
    fn linear_worst_case_flips_thin_margin() {
        let w = [1.0, -2.0, 0.5];
        let m = linear_binary(&w);
        let eps = 0.1;
        // margins 0.3 < ε‖w‖₁ = 0.35 and 0.4 > 0.35
        let x = Matrix::from_rows(&[[0.3, 0.0, 0.0], [0.4, 0.0, 0.0]]).unwrap();
        let res = pgd(&m, &AttackConfig::new(eps, 10, 0), &x, &[1, 1], None).unwrap();
        assert_eq!(res.success_mask, vec![true, false]);
    }

    #[test]
    fn ball_holds_after_every_step() {
        let m = mlp(4);
        let x = batch(10, 6, 5);
        let y: Vec<usize> = (0..10).map(|i| i % 3).collect();
        for norm in [Norm::Linf, Norm::L2] {
            for layer in [0, 1, 2] {
                let rep = m.representation(&x, layer).unwrap();
                for steps in 1..=6 {
                    let mut cfg = AttackConfig::new(0.25, 6, 9).at_layer(layer);
                    cfg.norm = norm;
                    cfg.init_sigma = 0.5;
                    cfg.steps = steps;
                    let res = pgd(&m, &cfg, &rep, &y, None).unwrap();
                    assert_eq!(res.loss_trace.len(), steps);
                    for n in row_norms(&res.delta, norm) {
                        assert!(n <= 0.25 + 1e-9, "{norm:?} l={layer} step={steps} {n}");
                    }
                }
            }
        }
    }

    #[test]
    fn convex_loss_trace_nondecreasing() {
        let m = linear_binary(&[0.7, -0.3, 1.1, 0.2]);
        let x = batch(30, 4, 8);
        let y: Vec<usize> = (0..30).map(|i| i % 2).collect();
        let res = pgd(&m, &AttackConfig::new(0.3, 15, 1), &x, &y, None).unwrap();
        for w in res.loss_trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-9, "{:?}", res.loss_trace);
        }
    }

    #[test]
    fn deterministic_per_seed_and_stream() {
        let m = mlp(2);
        let x = batch(8, 6, 3);
        let y: Vec<usize> = (0..8).map(|i| i % 3).collect();
        let cfg = AttackConfig::new(0.2, 5, 77);
        assert_eq!(pgd(&m, &cfg, &x, &y, None).unwrap(), pgd(&m, &cfg, &x, &y, None).unwrap());
        let a = pgd_stream(&m, &cfg, &x, &y, 1, None).unwrap();
        assert_ne!(a.delta, pgd(&m, &cfg, &x, &y, None).unwrap().delta);
    }

    #[test]
    fn latent_attack_charges_only_upper_layers() {
        let m = mlp(3);
        let x = batch(7, 6, 1);
        let y: Vec<usize> = (0..7).map(|i| i % 3).collect();
        let rep = m.representation(&x, 1).unwrap();
        let mut c = OpCounter::new();
        c.set_phase(Phase::AeGeneration);
        let steps = 4;
        pgd(&m, &AttackConfig::new(0.1, steps, 0).at_layer(1), &rep, &y, Some(&mut c)).unwrap();
        let ae = c.phase(Phase::AeGeneration);
        let suffix = (7 * (8 * 5 + 5 * 3)) as u64;
        assert_eq!(ae.forward, steps as u64 * suffix);
        assert_eq!(ae.backward, steps as u64 * suffix);
        assert_eq!(c.layer_forward(Phase::AeGeneration, 1), 0);
        assert_eq!(c.phase(Phase::Inference).forward, 2 * suffix);
        assert_eq!(c.current_phase(), Phase::AeGeneration);
    }

    #[test]
    fn latent_scale_is_rms_batch_std() {
        // variances 2 and 0 average to 1
        let rep = Matrix::from_rows(&[[1.0, 5.0], [3.0, 5.0]]).unwrap();
        let s = perturbation_scale(&rep, 2);
        assert!((s[0] - 1.0).abs() < 1e-15 && s[1] == s[0]);
        assert_eq!(perturbation_scale(&Matrix::from_rows(&[[4.0], [4.0]]).unwrap(), 1), vec![SCALE_FLOOR]);
        assert_eq!(perturbation_scale(&rep, 0), vec![1.0, 1.0]);
    }

    #[test]
    fn robust_accuracy_examples() {
        let m = linear_binary(&[1.0, 1.0]);
        let x = Matrix::from_rows(&[[2.0, 2.0], [-2.0, -1.0], [0.05, 0.0], [1.0, -2.0]]).unwrap();
        let d = dataset(x, vec![1, 0, 1, 1]);
        let clean = clean_accuracy(&m, &d).unwrap();
        assert_eq!(clean, 0.75);
        let null = AttackConfig::new(0.0, 3, 0);
        assert_eq!(robust_accuracy(&m, &d, &null).unwrap(), clean);
        // reach ε‖w‖₁ = 0.2 flips only the 0.05 margin point
        let r = robust_accuracy(&m, &d, &AttackConfig::new(0.1, 10, 0).at_layer(5)).unwrap();
        assert_eq!(r, 0.5);
    }

    #[test]
    fn rejects_bad_inputs() {
        let m = mlp(0);
        let x = batch(3, 6, 0);
        assert!(pgd(&m, &AttackConfig::new(0.1, 2, 0).at_layer(1), &x, &[0, 1, 2], None).is_err());
        assert!(pgd(&m, &AttackConfig::new(0.1, 2, 0).at_layer(4), &x, &[0, 1, 2], None).is_err());
        assert!(pgd(&m, &AttackConfig::new(0.1, 2, 0), &x, &[0, 1], None).is_err());
    }
}
