//! The `smaat` command line.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};

use smaat_core::attack::{clean_accuracy, robust_accuracy};
use smaat_core::id::IdProfile;
use smaat_core::training::TrainMode;

use crate::config::{load_config, ReportFormat, RunConfig};
use crate::error::{LabError, Result};
use crate::experiment::{self, Prepared};
use crate::io::{load_checkpoint, save_checkpoint, save_dataset, save_manifold, write_atomic, write_json};
use crate::report::*;

#[derive(Debug, Parser)]
#[command(name = "smaat", version, about = "Manifold-aware adversarial training lab")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides `output_dir`.
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,
    /// Overrides every seed except the dataset's.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Upper bound on concurrent runs in sweeps.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Emit only this report format.
    #[arg(long, global = true, value_enum)]
    pub format: Option<FormatArg>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FormatArg {
    Json,
    Csv,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Per-layer intrinsic dimension and the selected SMAAT layer.
    Profile,
    /// Train with the configured regime and write checkpoints and reports.
    Train {
        /// Precomputed profile JSON for SMAAT.
        #[arg(long)]
        profile: Option<PathBuf>,
        /// Number of runs with seeds base, base + 1, ...
        #[arg(long, default_value_t = 1)]
        seeds: u64,
    },
    /// Latent AT at every hidden layer; writes the robustness frontier.
    SweepLayers,
    /// Clean and robust accuracy of a checkpoint on the test split.
    AttackEval {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Projection-error statistics of clean and attacked test samples.
    ManifoldReport {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Generate the configured dataset and save it.
    GenData {
        #[arg(long)]
        name: String,
    },
}

struct Ctx {
    cfg: RunConfig,
    hash: String,
    out: PathBuf,
}

impl Ctx {
    fn new(g: &Global) -> Result<Self> {
        let path = g
            .config
            .as_deref()
            .ok_or_else(|| LabError::config("--config", "a configuration file is required"))?;
        let mut cfg = load_config(path)?;
        if let Some(o) = &g.output {
            cfg.output_dir = o.clone();
        }
        if let Some(s) = g.seed {
            cfg = cfg.with_seed(s);
        }
        if let Some(f) = g.format {
            cfg.report_formats = vec![match f {
                FormatArg::Json => ReportFormat::Json,
                FormatArg::Csv => ReportFormat::Csv,
            }];
        }
        cfg.validate()?;
        let hash = cfg.hash();
        let out = cfg.output_dir.clone();
        Ok(Self { cfg, hash, out })
    }

    fn provenance(&self, cfg: &RunConfig, data_hash: &str) -> Provenance {
        Provenance::new(self.hash.clone(), cfg.train.seed, data_hash.to_string())
    }

    fn emit_json<T: serde::Serialize>(&self, stem: &str, value: &T) -> Result<()> {
        if self.cfg.wants(ReportFormat::Json) {
            write_json(&self.out.join(format!("{stem}.json")), value)?;
        }
        Ok(())
    }

    fn emit_csv(&self, stem: &str, body: &str, p: &Provenance) -> Result<()> {
        if self.cfg.wants(ReportFormat::Csv) {
            let text = format!("{body}{}", provenance_footer(p));
            write_atomic(&self.out.join(format!("{stem}.csv")), text.as_bytes())?;
        }
        Ok(())
    }
}

pub fn run(cli: Cli) -> Result<()> {
    if let Some(j) = cli.global.jobs {
        if j == 0 {
            return Err(LabError::config("--jobs", "must be at least 1"));
        }
        // fails only if a pool already exists, which keeps its size
        let _ = rayon::ThreadPoolBuilder::new().num_threads(j).build_global();
    }
    let ctx = Ctx::new(&cli.global)?;
    match cli.command {
        Command::Profile => cmd_profile(&ctx).map(|_| ()),
        Command::Train { profile, seeds } => cmd_train(&ctx, profile, seeds, cli.global.seed.is_some()),
        Command::SweepLayers => cmd_sweep(&ctx),
        Command::AttackEval { checkpoint } => cmd_attack_eval(&ctx, &checkpoint),
        Command::ManifoldReport { checkpoint } => cmd_manifold(&ctx, &checkpoint),
        Command::GenData { name } => cmd_gen_data(&ctx, &name),
    }
}

fn write_profile(ctx: &Ctx, cfg: &RunConfig, data: &Prepared, p: &IdProfile) -> Result<()> {
    let prov = ctx.provenance(cfg, &data.hash);
    ctx.emit_json(
        "profile",
        &ProfileRecord {
            provenance: prov.clone(),
            profile: p.clone(),
        },
    )?;
    ctx.emit_csv("profile", &profile_csv(p), &prov)
}

fn cmd_profile(ctx: &Ctx) -> Result<IdProfile> {
    let data = experiment::prepare(&ctx.cfg)?;
    let model = experiment::build_model(&ctx.cfg, &data)?;
    let p = experiment::profile(&ctx.cfg, &model, &data)?;
    write_profile(ctx, &ctx.cfg, &data, &p)?;
    print!("{}", profile_table(&p));
    Ok(p)
}

fn cmd_train(ctx: &Ctx, profile: Option<PathBuf>, seeds: u64, seed_given: bool) -> Result<()> {
    if seeds == 0 {
        return Err(LabError::config("--seeds", "must be at least 1"));
    }
    let mut base_cfg = ctx.cfg.clone();
    if let Some(p) = profile {
        if !p.exists() {
            return Err(LabError::config("--profile", format!("{} does not exist", p.display())));
        }
        base_cfg.profile = Some(p);
    }
    if base_cfg.train.mode == TrainMode::Standard {
        warn!("standard mode ignores the train.attack settings");
    }
    let data = experiment::prepare(&base_cfg)?;
    let base_seed = base_cfg.train.seed;
    let mut summary = String::from(RUN_CSV_HEADER);
    summary.push('\n');
    for i in 0..seeds {
        let cfg = if seeds > 1 || seed_given {
            base_cfg.clone().with_seed(base_seed + i)
        } else {
            base_cfg.clone()
        };
        let seed = cfg.train.seed;
        let stem = format!("run-{}-seed{seed}", cfg.train.mode.as_str());
        let prov = ctx.provenance(&cfg, &data.hash);
        let model = experiment::build_model(&cfg, &data)?;
        let profile = if cfg.train.mode == TrainMode::Smaat {
            let p = experiment::profile(&cfg, &model, &data)?;
            if cfg.profile.is_none() {
                info!("no profile given; profiled the model, l* = {}", p.selected_layer);
                write_profile(ctx, &cfg, &data, &p)?;
            }
            Some(p)
        } else {
            None
        };
        match experiment::run(&cfg, &model, &data, profile.as_ref()) {
            Ok((trained, report)) => {
                save_checkpoint(&ctx.out.join(format!("model-{}-seed{seed}.smck", cfg.train.mode.as_str())), &trained)?;
                let row = run_csv_row(&report);
                ctx.emit_json(
                    &stem,
                    &RunRecord {
                        provenance: prov.clone(),
                        status: RunStatus::Ok,
                        error: None,
                        report: Some(report.clone()),
                    },
                )?;
                ctx.emit_csv(&stem, &format!("{RUN_CSV_HEADER}\n{row}\n"), &prov)?;
                println!(
                    "{} seed {seed}: clean {:.4} robust {:.4} ae_macs {}",
                    report.mode.as_str(),
                    report.clean_accuracy,
                    report.robust_accuracy,
                    report.cost.ae_macs()
                );
                summary.push_str(&row);
                summary.push('\n');
            }
            Err(e) => {
                let record = RunRecord {
                    provenance: prov,
                    status: RunStatus::Failed,
                    error: Some(e.to_string()),
                    report: None,
                };
                write_json(&ctx.out.join(format!("{stem}.json")), &record)?;
                return Err(e);
            }
        }
    }
    if seeds > 1 {
        let prov = Provenance::new(ctx.hash.clone(), base_seed, data.hash.clone());
        ctx.emit_csv("runs", &summary, &prov)?;
    }
    Ok(())
}

fn cmd_sweep(ctx: &Ctx) -> Result<()> {
    if ctx.cfg.train.mode != TrainMode::LatentAt {
        return Err(LabError::config("train.mode", "sweep-layers needs latent_at"));
    }
    let data = experiment::prepare(&ctx.cfg)?;
    let model = experiment::build_model(&ctx.cfg, &data)?;
    let rows = experiment::sweep_layers(&ctx.cfg, &model, &data)?;
    let prov = ctx.provenance(&ctx.cfg, &data.hash);
    let rho = frontier_spearman(&rows);
    ctx.emit_json(
        "frontier",
        &FrontierRecord {
            provenance: prov.clone(),
            rows: rows.clone(),
            spearman: rho,
        },
    )?;
    ctx.emit_csv("frontier", &frontier_csv(&rows), &prov)?;
    for r in &rows {
        println!("layer {}: clean {:.4} robust {:.4} ae_macs {}", r.layer, r.clean_acc, r.robust_acc, r.ae_macs);
    }
    match rho {
        Some(v) => println!("spearman(layer, robust) = {v:.4}"),
        None => println!("spearman(layer, robust) undefined"),
    }
    Ok(())
}

fn checkpoint_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn cmd_attack_eval(ctx: &Ctx, checkpoint: &Path) -> Result<()> {
    let model = load_checkpoint(checkpoint)?;
    let data = experiment::prepare(&ctx.cfg)?;
    let a = &ctx.cfg.attack_eval;
    let record = AttackEvalRecord {
        provenance: ctx.provenance(&ctx.cfg, &data.hash),
        checkpoint: checkpoint_name(checkpoint),
        clean_accuracy: clean_accuracy(&model, &data.test)?,
        robust_accuracy: robust_accuracy(&model, &data.test, a)?,
        epsilon: a.epsilon,
        steps: a.steps,
    };
    ctx.emit_json("attack_eval", &record)?;
    ctx.emit_csv("attack_eval", &attack_eval_csv(&record), &record.provenance)?;
    println!("clean {:.4} robust {:.4}", record.clean_accuracy, record.robust_accuracy);
    Ok(())
}

fn cmd_manifold(ctx: &Ctx, checkpoint: &Path) -> Result<()> {
    let model = load_checkpoint(checkpoint)?;
    let data = experiment::prepare(&ctx.cfg)?;
    let profile = experiment::profile(&ctx.cfg, &model, &data)?;
    let layers = experiment::manifold_report(&ctx.cfg, &model, &data)?;
    let dir = ctx.out.join("manifolds");
    for (row, a) in &layers {
        save_manifold(&dir, &format!("layer{}", row.layer), a, ctx.cfg.manifold)?;
    }
    let rows: Vec<ManifoldRow> = layers.into_iter().map(|(r, _)| r).collect();
    let prov = ctx.provenance(&ctx.cfg, &data.hash);
    ctx.emit_json(
        "manifold",
        &ManifoldRecord {
            provenance: prov.clone(),
            selected_layer: profile.selected_layer,
            rows: rows.clone(),
        },
    )?;
    ctx.emit_csv("manifold", &manifold_csv(&rows), &prov)?;
    print!("{}", manifold_csv(&rows));
    Ok(())
}

fn cmd_gen_data(ctx: &Ctx, name: &str) -> Result<()> {
    let data = experiment::generate(&ctx.cfg.dataset)?;
    let paths = save_dataset(&ctx.out, name, &data)?;
    println!("{} rows -> {}", data.len(), paths.x.display());
    Ok(())
}
