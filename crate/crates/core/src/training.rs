//! Standard training, input-space adversarial training, latent adversarial
//! training at a fixed layer, and SMAAT.
//!
//! All regimes share the same loop: plain SGD on mean cross-entropy over
//! mini-batches whose order is reshuffled each epoch from `cfg.seed`. The
//! attack RNG is independent of the batch order: batch `b` of epoch `e` uses
//! stream `e * batches_per_epoch + b` under `cfg.attack.seed`.

use alloc::format;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attack::{clean_accuracy, perturbation_scale, pgd_delta, robust_accuracy, AttackConfig};
use crate::data::{shuffled_indices, Dataset};
use crate::error::{Error, Result};
use crate::id::{profile_network, IdProfile, SelectionMode};
use crate::linalg::Matrix;
use crate::network::{
    backward_segment, forward_segment, forward_span, loss_ce, GradBundle, Model, OpCounter, Phase,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum TrainMode {
    Standard,
    At,
    LatentAt,
    Smaat,
}

impl TrainMode {
    pub fn as_str(self) -> &'static str {
        match self {
            TrainMode::Standard => "standard",
            TrainMode::At => "at",
            TrainMode::LatentAt => "latent_at",
            TrainMode::Smaat => "smaat",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Training attack; its `target_layer` is replaced by the layer the mode
    /// perturbs.
    pub attack: AttackConfig,
    #[cfg_attr(feature = "serde", serde(default))]
    pub layer_override: Option<usize>,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::InvalidParameter {
                name: "lr",
                reason: format!("must be finite and >= 0, got {}", self.lr),
            });
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidParameter {
                name: "batch_size",
                reason: "must be >= 1".into(),
            });
        }
        if self.mode != TrainMode::Standard {
            self.attack.validate()?;
        }
        Ok(())
    }

    fn expect_mode(&self, mode: TrainMode) -> Result<()> {
        if self.mode != mode {
            return Err(Error::InvalidParameter {
                name: "mode",
                reason: format!("expected {}, got {}", mode.as_str(), self.mode.as_str()),
            });
        }
        self.validate()
    }
}

/// Held-out data and the input-space attack used to score a finished run.
#[derive(Debug, Clone, Copy)]
pub struct Evaluation<'a> {
    pub data: &'a Dataset,
    pub attack: &'a AttackConfig,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RunReport {
    pub mode: TrainMode,
    /// Layer the training attack perturbed (`0` for input-space AT).
    pub selected_layer: Option<usize>,
    pub clean_accuracy: f64,
    pub robust_accuracy: f64,
    /// Mean batch loss per epoch, measured at the perturbed point.
    pub epoch_losses: Vec<f64>,
    /// MACs spent by training; evaluation is not counted.
    pub cost: OpCounter,
    /// Seconds; the core never reads a clock and leaves this at 0.
    pub wall_time: f64,
    pub epsilon: f64,
    pub steps: usize,
    pub seed: u64,
}

struct BatchCtx<'a> {
    x: &'a Matrix,
    y: &'a [usize],
    stream: u64,
    epoch: usize,
    batch: usize,
}

fn check_finite(loss: f64, ctx: &BatchCtx) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::Divergence {
            epoch: ctx.epoch,
            batch: ctx.batch,
        })
    }
}

fn run_loop<F>(
    model: &mut Model,
    data: &Dataset,
    cfg: &TrainConfig,
    counter: &mut OpCounter,
    mut step: F,
) -> Result<Vec<f64>>
where
    F: FnMut(&mut Model, &BatchCtx, &mut OpCounter) -> Result<f64>,
{
    if data.is_empty() {
        return Err(Error::Empty("training dataset"));
    }
    if data.x.cols() != model.width(0) {
        return Err(Error::DimensionMismatch {
            context: "training input width",
            expected: model.width(0),
            got: data.x.cols(),
        });
    }
    if data.classes > model.num_classes() {
        return Err(Error::LabelOutOfRange {
            label: data.classes - 1,
            classes: model.num_classes(),
        });
    }
    let n = data.len();
    let per_epoch = n.div_ceil(cfg.batch_size);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let order = shuffled_indices(n, &mut rng);
        let mut sum = 0.0;
        for (batch, idx) in order.chunks(cfg.batch_size).enumerate() {
            let x = data.x.select_rows(idx);
            let y: Vec<usize> = idx.iter().map(|&i| data.y[i]).collect();
            let ctx = BatchCtx {
                x: &x,
                y: &y,
                stream: (epoch * per_epoch + batch) as u64,
                epoch,
                batch,
            };
            // a non-finite attack loss means the weights already blew up
            let loss = step(model, &ctx, counter).map_err(|e| match e {
                Error::AttackNonFinite { .. } => Error::Divergence { epoch, batch },
                e => e,
            })?;
            sum += loss * idx.len() as f64;
        }
        losses.push(sum / n as f64);
    }
    Ok(losses)
}

fn finish(
    model: Model,
    cfg: &TrainConfig,
    layer: Option<usize>,
    epoch_losses: Vec<f64>,
    cost: OpCounter,
    eval: &Evaluation,
) -> Result<(Model, RunReport)> {
    let clean = clean_accuracy(&model, eval.data)?;
    let robust = robust_accuracy(&model, eval.data, eval.attack)?;
    let (epsilon, steps) = match cfg.mode {
        TrainMode::Standard => (0.0, 0),
        _ => (cfg.attack.epsilon, cfg.attack.steps),
    };
    let report = RunReport {
        mode: cfg.mode,
        selected_layer: layer,
        clean_accuracy: clean,
        robust_accuracy: robust,
        epoch_losses,
        cost,
        wall_time: 0.0,
        epsilon,
        steps,
        seed: cfg.seed,
    };
    Ok((model, report))
}

/// One descent step on the clean loss over all layers.
fn standard_step(model: &mut Model, ctx: &BatchCtx, lr: f64, counter: &mut OpCounter) -> Result<f64> {
    counter.set_phase(Phase::ParameterUpdate);
    let cache = forward_segment(model, 1, model.depth(), ctx.x, Some(counter))?;
    let (loss, g) = loss_ce(cache.output(), ctx.y)?;
    check_finite(loss, ctx)?;
    let grads = backward_segment(model, &cache, &g, Some(counter))?;
    model.apply_gradients(&grads, lr);
    Ok(loss)
}

/// Mini-batch SGD on clean cross-entropy. Layers below
/// `model.frozen_below` stay fixed.
pub fn train_standard(
    model: &Model,
    data: &Dataset,
    cfg: &TrainConfig,
    eval: &Evaluation,
) -> Result<(Model, RunReport)> {
    cfg.expect_mode(TrainMode::Standard)?;
    let mut m = model.clone();
    let mut cost = OpCounter::new();
    let lr = cfg.lr;
    let losses = run_loop(&mut m, data, cfg, &mut cost, |m, ctx, c| standard_step(m, ctx, lr, c))?;
    finish(m, cfg, None, losses, cost, eval)
}

/// Input-space PGD followed by one descent step at `x + δ`.
pub fn train_at(
    model: &Model,
    data: &Dataset,
    cfg: &TrainConfig,
    eval: &Evaluation,
) -> Result<(Model, RunReport)> {
    cfg.expect_mode(TrainMode::At)?;
    let attack = cfg.attack.clone().at_layer(0);
    let mut m = model.clone();
    let mut cost = OpCounter::new();
    let lr = cfg.lr;
    let losses = run_loop(&mut m, data, cfg, &mut cost, |m, ctx, c| {
        let ones = perturbation_scale(ctx.x, 0);
        c.set_phase(Phase::AeGeneration);
        let run = pgd_delta(m, &attack, ctx.x, ctx.y, &ones, ctx.stream, Some(c))?;
        let xa = ctx.x.add(&run.delta)?;
        standard_step(m, &BatchCtx { x: &xa, ..*ctx }, lr, c)
    })?;
    finish(m, cfg, Some(0), losses, cost, eval)
}

fn check_hidden_layer(model: &Model, l: usize) -> Result<()> {
    if l == 0 || l >= model.depth() {
        return Err(Error::OutOfRange {
            name: "layer",
            value: l,
            min: 1,
            max: model.depth().saturating_sub(1),
        });
    }
    Ok(())
}

fn concat_grads(lower: GradBundle, upper: Option<GradBundle>) -> GradBundle {
    let mut param_grads = lower.param_grads;
    if let Some(u) = upper {
        param_grads.extend(u.param_grads);
    }
    GradBundle {
        first: lower.first,
        param_grads,
        input_grad: lower.input_grad,
    }
}

/// PGD on the layer-`l` representation; the descent step updates every
/// layer, the ones below `l` through the clean path that produced the
/// representation.
pub fn train_latent_at(
    model: &Model,
    data: &Dataset,
    cfg: &TrainConfig,
    l: usize,
    eval: &Evaluation,
) -> Result<(Model, RunReport)> {
    cfg.expect_mode(TrainMode::LatentAt)?;
    check_hidden_layer(model, l)?;
    let attack = cfg.attack.clone().at_layer(l);
    let n = model.depth();
    let mut m = model.clone();
    let mut cost = OpCounter::new();
    let lr = cfg.lr;
    let losses = run_loop(&mut m, data, cfg, &mut cost, |m, ctx, c| {
        c.set_phase(Phase::ParameterUpdate);
        let prefix = forward_segment(m, 1, l, ctx.x, Some(c))?;
        let rep = prefix.output();
        let scale = perturbation_scale(rep, l);
        c.set_phase(Phase::AeGeneration);
        let run = pgd_delta(m, &attack, rep, ctx.y, &scale, ctx.stream, Some(c))?;
        c.set_phase(Phase::ParameterUpdate);
        let adv = apply_scaled(rep, &run.delta, &scale);
        let suffix = forward_segment(m, l + 1, n, &adv, Some(c))?;
        let (loss, g) = loss_ce(suffix.output(), ctx.y)?;
        check_finite(loss, ctx)?;
        let upper = backward_segment(m, &suffix, &g, Some(c))?;
        let lower = backward_segment(m, &prefix, &upper.input_grad, Some(c))?;
        m.apply_gradients(&concat_grads(lower, Some(upper)), lr);
        Ok(loss)
    })?;
    finish(m, cfg, Some(l), losses, cost, eval)
}

fn apply_scaled(rep: &Matrix, delta: &Matrix, scale: &[f64]) -> Matrix {
    let mut out = rep.clone();
    for r in 0..out.rows() {
        for ((o, d), s) in out.row_mut(r).iter_mut().zip(delta.row(r)).zip(scale) {
            *o += s * d;
        }
    }
    out
}

/// Checks that `profile` describes `model`: widths agree and the selected
/// layer exists.
pub fn check_profile(model: &Model, profile: &IdProfile) -> Result<()> {
    for e in &profile.entries {
        if e.layer > model.depth() || model.width(e.layer) != e.width {
            return Err(Error::ProfileMismatch(format!(
                "entry for layer {} has width {}, model depth {} dims {:?}",
                e.layer,
                e.width,
                model.depth(),
                model.dims()
            )));
        }
    }
    if profile.selected_layer == 0 || profile.selected_layer > model.depth() {
        return Err(Error::ProfileMismatch(format!(
            "selected layer {} outside 1..={}",
            profile.selected_layer,
            model.depth()
        )));
    }
    Ok(())
}

/// The SMAAT layer: `cfg.layer_override` if set, else the profile's choice.
pub fn resolve_smaat_layer(model: &Model, cfg: &TrainConfig, profile: &IdProfile) -> Result<usize> {
    check_profile(model, profile)?;
    let l = cfg.layer_override.unwrap_or(profile.selected_layer);
    if l == 0 || l > model.depth() {
        return Err(Error::OutOfRange {
            name: "layer_override",
            value: l,
            min: 1,
            max: model.depth(),
        });
    }
    Ok(l)
}

/// SMAAT: freeze layers below `l*`, run the prefix once per batch, attack the
/// cached layer-`l*` representation and update layers `l*..=n` only.
///
/// The returned model carries `frozen_below = l*`.
pub fn train_smaat(
    model: &Model,
    data: &Dataset,
    cfg: &TrainConfig,
    profile: &IdProfile,
    eval: &Evaluation,
) -> Result<(Model, RunReport)> {
    cfg.expect_mode(TrainMode::Smaat)?;
    let ls = resolve_smaat_layer(model, cfg, profile)?;
    let attack = cfg.attack.clone().at_layer(ls);
    let n = model.depth();
    let mut m = model.clone();
    m.set_frozen_below(Some(ls))?;
    let mut cost = OpCounter::new();
    let lr = cfg.lr;
    let losses = run_loop(&mut m, data, cfg, &mut cost, |m, ctx, c| {
        c.set_phase(Phase::AeGeneration);
        let below = forward_span(m, 1, ls - 1, ctx.x, Some(c))?.into_output();
        let top = forward_segment(m, ls, ls, &below, Some(c))?;
        let mid = top.output();
        let scale = perturbation_scale(mid, ls);
        let run = pgd_delta(m, &attack, mid, ctx.y, &scale, ctx.stream, Some(c))?;
        c.set_phase(Phase::ParameterUpdate);
        let adv = apply_scaled(mid, &run.delta, &scale);
        let suffix = forward_span(m, ls + 1, n, &adv, Some(c))?;
        let (loss, g) = loss_ce(suffix.output(), ctx.y)?;
        check_finite(loss, ctx)?;
        let (upper, g_mid) = if suffix.is_empty() {
            (None, g)
        } else {
            let u = backward_segment(m, &suffix, &g, Some(c))?;
            let gm = u.input_grad.clone();
            (Some(u), gm)
        };
        let lower = backward_segment(m, &top, &g_mid, Some(c))?;
        m.apply_gradients(&concat_grads(lower, upper), lr);
        Ok(loss)
    })?;
    finish(m, cfg, Some(ls), losses, cost, eval)
}

/// Dispatches on `cfg.mode`. SMAAT profiles the model on the training inputs
/// when no profile is given; latent AT requires `cfg.layer_override`.
pub fn train(
    model: &Model,
    data: &Dataset,
    cfg: &TrainConfig,
    profile: Option<&IdProfile>,
    eval: &Evaluation,
) -> Result<(Model, RunReport)> {
    match cfg.mode {
        TrainMode::Standard => train_standard(model, data, cfg, eval),
        TrainMode::At => train_at(model, data, cfg, eval),
        TrainMode::LatentAt => {
            let l = cfg.layer_override.ok_or(Error::InvalidParameter {
                name: "layer_override",
                reason: "latent_at needs a layer".into(),
            })?;
            train_latent_at(model, data, cfg, l, eval)
        }
        TrainMode::Smaat => match profile {
            Some(p) => train_smaat(model, data, cfg, p, eval),
            None => {
                let p = profile_network(model, &data.x, SelectionMode::Normalized)?;
                train_smaat(model, data, cfg, &p, eval)
            }
        },
    }
}

/// Per-sample AE-generation MACs `(numerator, denominator)` of the speedup
/// ratio: `P * S_total` for input-space AT against the prefix pass plus `P`
/// suffix passes for SMAAT.
pub fn speedup_terms(dims: &[usize], l_star: usize, steps: usize) -> Result<(u64, u64)> {
    if dims.len() < 2 || dims.contains(&0) {
        return Err(Error::InvalidArchitecture(format!("bad dims {dims:?}")));
    }
    let n = dims.len() - 1;
    if l_star == 0 || l_star > n {
        return Err(Error::OutOfRange {
            name: "l_star",
            value: l_star,
            min: 1,
            max: n,
        });
    }
    if steps == 0 {
        return Err(Error::InvalidParameter {
            name: "steps",
            reason: "must be >= 1".into(),
        });
    }
    let mac = |l: usize| (dims[l - 1] * dims[l]) as u64;
    let p = steps as u64;
    let total: u64 = (1..=n).map(mac).sum();
    let prefix: u64 = (1..=l_star).map(mac).sum();
    let suffix = total - prefix;
    Ok((p * total, prefix + p * suffix))
}

/// Ratio of AE-generation MACs, input-space AT over SMAAT at layer `l_star`.
pub fn analytic_speedup(dims: &[usize], l_star: usize, steps: usize) -> Result<f64> {
    let (num, den) = speedup_terms(dims, l_star, steps)?;
    Ok(num as f64 / den as f64)
}

fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = alloc::vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with average ranks for ties. `None` when either
/// side is constant or the lengths differ.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / libm::sqrt(sxx * syy))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_subspace_classes;
    use crate::id::IdEntry;
    use crate::network::{init_model, Activation, Architecture};
    use alloc::vec;

    fn arch(dims: &[usize]) -> Architecture {
        let n = dims.len() - 1;
        let mut acts = vec![Activation::Relu; n - 1];
        acts.push(Activation::Softmax);
        Architecture::new(dims.to_vec(), acts).unwrap()
    }

    fn cfg(mode: TrainMode, epsilon: f64) -> TrainConfig {
        TrainConfig {
            mode,
            epochs: 3,
            lr: 0.1,
            batch_size: 16,
            attack: AttackConfig::new(epsilon, 3, 11),
            layer_override: None,
            seed: 5,
        }
    }

    fn data() -> Dataset {
        gen_subspace_classes(60, 6, 2, 2, 3.0, 0.0, 1).unwrap()
    }

    fn profile_for(model: &Model, l: usize) -> IdProfile {
        let entries = (0..=model.depth())
            .map(|i| IdEntry::new(i, model.width(i), 1.0))
            .collect();
        let mut p = IdProfile::new(entries, SelectionMode::Normalized).unwrap();
        p.selected_layer = l;
        p
    }

    #[test]
    fn zero_lr_leaves_model_unchanged() {
        let d = data();
        let m = init_model(&arch(&[6, 8, 5, 2]), 1).unwrap();
        let ev_attack = AttackConfig::new(0.1, 2, 0);
        let ev = Evaluation { data: &d, attack: &ev_attack };
        for mode in [TrainMode::Standard, TrainMode::At, TrainMode::LatentAt, TrainMode::Smaat] {
            let mut c = cfg(mode, 0.2);
            c.lr = 0.0;
            c.layer_override = Some(2);
            let (out, _) = train(&m, &d, &c, Some(&profile_for(&m, 2)), &ev).unwrap();
            assert_eq!(out.layers, m.layers, "{mode:?}");
        }
    }

    #[test]
    fn same_seed_same_report() {
        let d = data();
        let m = init_model(&arch(&[6, 8, 2]), 2).unwrap();
        let ev_attack = AttackConfig::new(0.1, 2, 0);
        let ev = Evaluation { data: &d, attack: &ev_attack };
        let c = cfg(TrainMode::At, 0.2);
        assert_eq!(train_at(&m, &d, &c, &ev).unwrap(), train_at(&m, &d, &c, &ev).unwrap());
    }

    #[test]
    fn null_attack_matches_standard_trajectory() {
        let d = data();
        let m = init_model(&arch(&[6, 8, 5, 2]), 3).unwrap();
        let ev_attack = AttackConfig::new(0.0, 1, 0);
        let ev = Evaluation { data: &d, attack: &ev_attack };
        let (_, base) = train_standard(&m, &d, &cfg(TrainMode::Standard, 0.0), &ev).unwrap();
        let (_, at) = train_at(&m, &d, &cfg(TrainMode::At, 0.0), &ev).unwrap();
        let (_, lat) = train_latent_at(&m, &d, &cfg(TrainMode::LatentAt, 0.0), 2, &ev).unwrap();
        for r in [&at, &lat] {
            for (a, b) in r.epoch_losses.iter().zip(&base.epoch_losses) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn null_smaat_is_last_layers_fine_tuning() {
        let d = data();
        let m = init_model(&arch(&[6, 8, 5, 2]), 4).unwrap();
        let ev_attack = AttackConfig::new(0.0, 1, 0);
        let ev = Evaluation { data: &d, attack: &ev_attack };
        let (sm, _) = train_smaat(&m, &d, &cfg(TrainMode::Smaat, 0.0), &profile_for(&m, 2), &ev).unwrap();
        let mut frozen = m.clone();
        frozen.set_frozen_below(Some(2)).unwrap();
        let (ft, _) = train_standard(&frozen, &d, &cfg(TrainMode::Standard, 0.0), &ev).unwrap();
        assert_eq!(sm.layers[0], m.layers[0]);
        for (a, b) in sm.layers.iter().zip(&ft.layers) {
            for (u, v) in a.weights.as_slice().iter().zip(b.weights.as_slice()) {
                assert!((u - v).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn smaat_freezes_and_caches() {
        let d = data();
        let m = init_model(&arch(&[6, 8, 7, 5, 2]), 5).unwrap();
        let ev_attack = AttackConfig::new(0.1, 1, 0);
        let ev = Evaluation { data: &d, attack: &ev_attack };
        let c = cfg(TrainMode::Smaat, 0.3);
        let (out, rep) = train_smaat(&m, &d, &c, &profile_for(&m, 3), &ev).unwrap();
        assert_eq!(out.layers[..2], m.layers[..2]);
        assert_ne!(out.layers[2], m.layers[2]);
        assert_eq!(out.frozen_below, Some(3));
        let samples = (c.epochs * d.len()) as u64;
        for (l, w) in [(1, 6 * 8), (2, 8 * 7), (3, 7 * 5)] {
            assert_eq!(rep.cost.layer_forward(Phase::AeGeneration, l), samples * w);
            assert_eq!(rep.cost.layer_forward(Phase::ParameterUpdate, l), 0);
        }
        assert_eq!(rep.cost.layer_forward(Phase::AeGeneration, 4), samples * 10 * 3);
    }

    #[test]
    fn counted_ratio_equals_formula() {
        let dims = [784, 128, 128, 2];
        let d = gen_subspace_classes(10, 784, 3, 2, 3.0, 0.0, 0).unwrap();
        let m = init_model(&arch(&dims), 0).unwrap();
        let ev_attack = AttackConfig::new(0.0, 1, 0);
        let ev = Evaluation { data: &d, attack: &ev_attack };
        let mut c = cfg(TrainMode::At, 0.1);
        c.epochs = 1;
        c.attack = AttackConfig::new(0.1, 5, 0);
        let (_, at) = train_at(&m, &d, &c, &ev).unwrap();
        c.mode = TrainMode::Smaat;
        let (_, sm) = train_smaat(&m, &d, &c, &profile_for(&m, 3), &ev).unwrap();
        let (num, den) = speedup_terms(&dims, 3, 5).unwrap();
        assert_eq!(at.cost.ae_macs(), num * 10);
        assert_eq!(sm.cost.ae_macs(), den * 10);
        assert_eq!(at.cost.ae_macs() * den, sm.cost.ae_macs() * num);
    }

    #[test]
    fn latent_ae_cost_excludes_lower_layers() {
        let d = data();
        let m = init_model(&arch(&[6, 8, 5, 2]), 6).unwrap();
        let ev_attack = AttackConfig::new(0.0, 1, 0);
        let ev = Evaluation { data: &d, attack: &ev_attack };
        let (_, r) = train_latent_at(&m, &d, &cfg(TrainMode::LatentAt, 0.2), 2, &ev).unwrap();
        assert_eq!(r.cost.layer_forward(Phase::AeGeneration, 1), 0);
        assert_eq!(r.cost.layer_forward(Phase::AeGeneration, 2), 0);
        assert!(r.cost.layer_forward(Phase::AeGeneration, 3) > 0);
        assert!(train_latent_at(&m, &d, &cfg(TrainMode::LatentAt, 0.2), 3, &ev).is_err());
    }

    #[test]
    fn speedup_limits() {
        let dims = [784, 128, 128, 2];
        // l* = n leaves an empty suffix: one prefix pass against P full chains
        assert_eq!(analytic_speedup(&dims, 3, 5).unwrap(), 5.0);
        let r = analytic_speedup(&dims, 2, 5).unwrap();
        let s = (784 * 128 + 128 * 128 + 128 * 2) as f64;
        assert!((r - 5.0 * s / (s - 256.0 + 5.0 * 256.0)).abs() < 1e-12);
        let r1 = analytic_speedup(&[2, 500, 500, 2], 1, 5).unwrap();
        assert!((1.0..1.01).contains(&r1));
        assert!(analytic_speedup(&dims, 0, 5).is_err());
        assert!(analytic_speedup(&dims, 4, 5).is_err());
    }

    #[test]
    fn separable_blobs_reach_high_accuracy() {
        let d = gen_subspace_classes(200, 2, 2, 2, 6.0, 0.0, 3).unwrap();
        let a = Architecture::new(vec![2, 2], vec![Activation::Softmax]).unwrap();
        let m = init_model(&a, 0).unwrap();
        let ev_attack = AttackConfig::new(0.0, 1, 0);
        let ev = Evaluation { data: &d, attack: &ev_attack };
        let mut c = cfg(TrainMode::Standard, 0.0);
        c.epochs = 20;
        let (_, r) = train_standard(&m, &d, &c, &ev).unwrap();
        assert!(r.clean_accuracy >= 0.98, "{}", r.clean_accuracy);
        assert_eq!(r.epoch_losses.len(), 20);
    }

    #[test]
    fn divergence_reports_epoch() {
        let d = data();
        let m = init_model(&arch(&[6, 8, 2]), 0).unwrap();
        let ev_attack = AttackConfig::new(0.0, 1, 0);
        let ev = Evaluation { data: &d, attack: &ev_attack };
        let mut c = cfg(TrainMode::Standard, 0.0);
        c.lr = 1e300;
        assert!(matches!(train_standard(&m, &d, &c, &ev), Err(Error::Divergence { .. })));
    }

    #[test]
    fn profile_mismatch_rejected() {
        let d = data();
        let m = init_model(&arch(&[6, 8, 2]), 0).unwrap();
        let other = init_model(&arch(&[6, 9, 2]), 0).unwrap();
        let ev_attack = AttackConfig::new(0.0, 1, 0);
        let ev = Evaluation { data: &d, attack: &ev_attack };
        let p = profile_for(&other, 1);
        assert!(matches!(
            train_smaat(&m, &d, &cfg(TrainMode::Smaat, 0.1), &p, &ev),
            Err(Error::ProfileMismatch(_))
        ));
        assert!(train_at(&m, &d, &cfg(TrainMode::Smaat, 0.1), &ev).is_err());
    }

    #[test]
    fn spearman_oracle() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]), Some(1.0));
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), Some(-1.0));
        assert_eq!(spearman(&[1.0, 2.0], &[1.0, 1.0]), None);
        // ties: ranks y = (1.5, 1.5, 3) against x = (1, 2, 3)
        let r = spearman(&[1.0, 2.0, 3.0], &[5.0, 5.0, 9.0]).unwrap();
        assert!((r - 0.866_025_403_784_438_6).abs() < 1e-12);
    }
}
