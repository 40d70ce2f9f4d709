//! Config-driven experiment steps shared by the CLI and the benchmarks.

use std::time::Instant;

use rayon::prelude::*;

use smaat_core::attack::{pgd_stream, AttackConfig, EVAL_CHUNK};
use smaat_core::data::{gen_curved_classes, gen_subspace_classes, Dataset};
use smaat_core::id::{profile_network, IdProfile};
use smaat_core::manifold::{analyze_layer, off_manifold_ratio, projection_error, LayerAnalysis};
use smaat_core::network::{init_model, Model};
use smaat_core::training::{self, Evaluation, RunReport, TrainConfig, TrainMode};
use smaat_core::Matrix;

use crate::config::{DatasetSpec, RunConfig};
use crate::error::{LabError, Result};
use crate::io::{dataset_hash, load_dataset, read_json};
use crate::report::{FrontierRow, ManifoldRow};

pub fn generate(spec: &DatasetSpec) -> Result<Dataset> {
    Ok(match spec {
        DatasetSpec::Subspace {
            n,
            ambient_d,
            intrinsic_k,
            classes,
            margin,
            noise_sigma,
            seed,
        } => gen_subspace_classes(*n, *ambient_d, *intrinsic_k, *classes, *margin, *noise_sigma, *seed)?,
        DatasetSpec::Curved { n, ambient_d, seed } => gen_curved_classes(*n, *ambient_d, *seed)?,
        DatasetSpec::File { dir, name } => load_dataset(dir, name)?,
    })
}

/// Train and test splits in the generator's coordinates.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub train: Dataset,
    pub test: Dataset,
    /// Hash of the full dataset before splitting.
    pub hash: String,
}

pub fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    let data = generate(&cfg.dataset)?;
    let hash = dataset_hash(&data);
    let n_test = ((data.len() as f64) * cfg.test_fraction).round() as usize;
    if n_test == 0 || n_test >= data.len() {
        return Err(LabError::config("test_fraction", format!("leaves an empty split of {} rows", data.len())));
    }
    let (train, test) = data.split_at(data.len() - n_test);
    Ok(Prepared { train, test, hash })
}

/// Freshly initialized model, standard-trained first when the config asks.
pub fn build_model(cfg: &RunConfig, data: &Prepared) -> Result<Model> {
    let model = init_model(&cfg.architecture()?, cfg.model.seed)?;
    let Some(p) = &cfg.pretrain else {
        return Ok(model);
    };
    let pre = TrainConfig {
        mode: TrainMode::Standard,
        epochs: p.epochs,
        lr: p.lr,
        batch_size: p.batch_size,
        attack: cfg.train.attack.clone(),
        layer_override: None,
        seed: cfg.train.seed,
    };
    let eval = Evaluation {
        data: &data.test,
        attack: &cfg.attack_eval,
    };
    let (m, _) = training::train_standard(&model, &data.train, &pre, &eval)?;
    Ok(m)
}

/// The profile named in the config, or one computed on the training inputs.
pub fn profile(cfg: &RunConfig, model: &Model, data: &Prepared) -> Result<IdProfile> {
    match &cfg.profile {
        Some(path) => {
            let p: IdProfile = read_json(path)?;
            training::check_profile(model, &p).map_err(|e| LabError::config("profile", e.to_string()))?;
            Ok(p)
        }
        None => Ok(profile_network(model, &data.train.x, cfg.selection)?),
    }
}

/// Runs the configured regime and fills in the wall time.
pub fn run(cfg: &RunConfig, model: &Model, data: &Prepared, profile: Option<&IdProfile>) -> Result<(Model, RunReport)> {
    let eval = Evaluation {
        data: &data.test,
        attack: &cfg.attack_eval,
    };
    let start = Instant::now();
    let (m, mut report) = training::train(model, &data.train, &cfg.train, profile, &eval)?;
    report.wall_time = start.elapsed().as_secs_f64();
    Ok((m, report))
}

/// Latent AT at every hidden layer, starting each run from `model`.
pub fn sweep_layers(cfg: &RunConfig, model: &Model, data: &Prepared) -> Result<Vec<FrontierRow>> {
    let n = model.depth();
    (1..n)
        .into_par_iter()
        .map(|l| {
            let mut c = cfg.clone();
            c.train.mode = TrainMode::LatentAt;
            c.train.layer_override = Some(l);
            let (_, r) = run(&c, model, data, None)?;
            Ok(FrontierRow {
                layer: l,
                clean_acc: r.clean_accuracy,
                robust_acc: r.robust_accuracy,
                ae_macs: r.cost.ae_macs(),
                dataset_hash: data.hash.clone(),
            })
        })
        .collect()
}

/// Input-space PGD examples for every row of `data`, attacked in the same
/// chunks and RNG streams as robust accuracy.
pub fn adversarial_inputs(model: &Model, data: &Dataset, attack: &AttackConfig) -> Result<Matrix> {
    let cfg = attack.clone().at_layer(0);
    let n = data.len();
    let mut out = Vec::with_capacity(n * data.x.cols());
    for (chunk, start) in (0..n).step_by(EVAL_CHUNK).enumerate() {
        let idx: Vec<usize> = (start..(start + EVAL_CHUNK).min(n)).collect();
        let x = data.x.select_rows(&idx);
        let y: Vec<usize> = idx.iter().map(|&i| data.y[i]).collect();
        let res = pgd_stream(model, &cfg, &x, &y, chunk as u64, None)?;
        out.extend_from_slice(res.perturbed(&x).as_slice());
    }
    Ok(Matrix::new(n, data.x.cols(), out)?)
}

/// Mean projection error of each row of `reps` at the analysis' `k`.
pub fn mean_projection_error(a: &LayerAnalysis, reps: &Matrix) -> Result<f64> {
    let mut total = 0.0;
    for row in reps.iter_rows() {
        total += projection_error(&a.manifold, row, a.k)?.1;
    }
    Ok(total / reps.rows() as f64)
}

/// Per-layer manifold statistics of clean test samples against input-space
/// AEs propagated through the network, with the manifolds fit per layer on
/// the training set.
pub fn manifold_report(cfg: &RunConfig, model: &Model, data: &Prepared) -> Result<Vec<(ManifoldRow, LayerAnalysis)>> {
    let adv = adversarial_inputs(model, &data.test, &cfg.attack_eval)?;
    let fit = model.all_representations(&data.train.x)?;
    let clean = model.all_representations(&data.test.x)?;
    let attacked = model.all_representations(&adv)?;
    (0..=model.depth())
        .into_par_iter()
        .map(|l| {
            let a = analyze_layer(&fit[l], l, cfg.manifold)?;
            let c = off_manifold_ratio(&a.manifold, &clean[l], a.k, a.gamma_sample)?;
            let d = off_manifold_ratio(&a.manifold, &attacked[l], a.k, a.gamma_sample)?;
            let row = ManifoldRow {
                layer: l,
                width: model.width(l),
                clean_mean_err: c.mean_error,
                adv_mean_err: d.mean_error,
                clean_ofm: c.ratio,
                adv_ofm: d.ratio,
            };
            Ok((row, a))
        })
        .collect()
}
