//! Strict JSON run configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use smaat_core::attack::AttackConfig;
use smaat_core::id::SelectionMode;
use smaat_core::manifold::GammaPolicy;
use smaat_core::network::{Activation, Architecture};
use smaat_core::training::{TrainConfig, TrainMode};

use crate::error::{LabError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    Subspace {
        n: usize,
        ambient_d: usize,
        intrinsic_k: usize,
        classes: usize,
        margin: f64,
        #[serde(default)]
        noise_sigma: f64,
        seed: u64,
    },
    Curved {
        n: usize,
        ambient_d: usize,
        seed: u64,
    },
    /// Files `<dir>/<name>.{x.smm1,y.bin,meta.json}`.
    File { dir: PathBuf, name: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub dims: Vec<usize>,
    pub activations: Vec<Activation>,
    pub seed: u64,
}

/// Standard training applied before the configured regime.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainSpec {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Csv,
}

fn default_formats() -> Vec<ReportFormat> {
    vec![ReportFormat::Json, ReportFormat::Csv]
}

fn default_test_fraction() -> f64 {
    0.25
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetSpec,
    /// Trailing share of the rows held out for evaluation.
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    pub model: ModelSpec,
    #[serde(default)]
    pub pretrain: Option<PretrainSpec>,
    pub train: TrainConfig,
    pub attack_eval: AttackConfig,
    pub output_dir: PathBuf,
    #[serde(default = "default_formats")]
    pub report_formats: Vec<ReportFormat>,
    /// Precomputed profile JSON for SMAAT; computed on demand when absent.
    #[serde(default)]
    pub profile: Option<PathBuf>,
    #[serde(default)]
    pub selection: SelectionMode,
    #[serde(default)]
    pub manifold: GammaPolicy,
}

/// Parses `text` and reports the offending field path on failure.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let mut path = e.path().to_string();
        let message = e.into_inner().to_string();
        // tagged enums buffer their fields, so the path stops at the enum
        if let Some(field) = unknown_field(&message) {
            if !path.ends_with(field) {
                path = format!("{path}.{field}");
            }
        }
        LabError::config(path, message)
    })
}

fn unknown_field(message: &str) -> Option<&str> {
    let rest = message.strip_prefix("unknown field `")?;
    rest.split('`').next()
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
    let cfg = parse_config(&text)?;
    Ok(cfg.relative_to(path.parent().unwrap_or(Path::new("."))))
}

fn core_field(prefix: &str, e: smaat_core::Error) -> LabError {
    match e {
        smaat_core::Error::InvalidParameter { name, reason } => LabError::config(format!("{prefix}.{name}"), reason),
        other => LabError::config(prefix, other.to_string()),
    }
}

impl RunConfig {
    /// Resolves relative paths against the directory holding the config.
    pub fn relative_to(mut self, base: &Path) -> Self {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let DatasetSpec::File { dir, .. } = &mut self.dataset {
            fix(dir);
        }
        if let Some(p) = &mut self.profile {
            fix(p);
        }
        self
    }

    /// Replaces every seed except the dataset's with `seed`.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.model.seed = seed;
        self.train.seed = seed;
        self.train.attack.seed = seed;
        self.attack_eval.seed = seed;
        self
    }

    pub fn architecture(&self) -> Result<Architecture> {
        Architecture::new(self.model.dims.clone(), self.model.activations.clone())
            .map_err(|e| LabError::config("model", e.to_string()))
    }

    /// Checks values and referenced paths and creates the output directory.
    pub fn validate(&self) -> Result<()> {
        match &self.dataset {
            DatasetSpec::Subspace {
                n,
                ambient_d,
                intrinsic_k,
                classes,
                margin,
                noise_sigma,
                ..
            } => {
                if *n < 4 {
                    return Err(LabError::config("dataset.n", "need at least 4 rows"));
                }
                if intrinsic_k > ambient_d || *intrinsic_k == 0 {
                    return Err(LabError::config("dataset.intrinsic_k", "must lie in 1..=ambient_d"));
                }
                if *classes < 2 {
                    return Err(LabError::config("dataset.classes", "need at least 2 classes"));
                }
                if !(*margin > 0.0) {
                    return Err(LabError::config("dataset.margin", "must be positive"));
                }
                if !(*noise_sigma >= 0.0) {
                    return Err(LabError::config("dataset.noise_sigma", "must be nonnegative"));
                }
            }
            DatasetSpec::Curved { n, ambient_d, .. } => {
                if *n < 4 {
                    return Err(LabError::config("dataset.n", "need at least 4 rows"));
                }
                if *ambient_d < 3 {
                    return Err(LabError::config("dataset.ambient_d", "curved data needs at least 3"));
                }
            }
            DatasetSpec::File { dir, name } => {
                let p = crate::io::dataset_paths(dir, name);
                for f in [&p.x, &p.y, &p.meta] {
                    if !f.exists() {
                        return Err(LabError::config("dataset", format!("{} does not exist", f.display())));
                    }
                }
            }
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(LabError::config("test_fraction", "must lie in (0, 1)"));
        }
        let arch = self.architecture()?;
        let input = match &self.dataset {
            DatasetSpec::Subspace { ambient_d, .. } | DatasetSpec::Curved { ambient_d, .. } => Some(*ambient_d),
            DatasetSpec::File { .. } => None,
        };
        if let Some(d) = input {
            if arch.dims[0] != d {
                return Err(LabError::config(
                    "model.dims",
                    format!("input width {} differs from dataset ambient_d {d}", arch.dims[0]),
                ));
            }
        }
        if let Some(p) = &self.pretrain {
            if p.batch_size == 0 || !(p.lr >= 0.0) {
                return Err(LabError::config("pretrain", "batch_size must be >= 1 and lr >= 0"));
            }
        }
        self.train.validate().map_err(|e| match e {
            smaat_core::Error::InvalidParameter { name, reason }
                if ["epsilon", "alpha", "steps", "init_sigma"].contains(&name) =>
            {
                LabError::config(format!("train.attack.{name}"), reason)
            }
            other => core_field("train", other),
        })?;
        self.attack_eval.validate().map_err(|e| core_field("attack_eval", e))?;
        if self.attack_eval.target_layer != 0 {
            return Err(LabError::config(
                "attack_eval.target_layer",
                "evaluation attacks run at the input; use 0",
            ));
        }
        let n_layers = arch.dims.len() - 1;
        if let Some(l) = self.train.layer_override {
            let max = if self.train.mode == TrainMode::Smaat { n_layers } else { n_layers - 1 };
            if l == 0 || l > max {
                return Err(LabError::config("train.layer_override", format!("must lie in 1..={max}")));
            }
        }
        if let Some(p) = &self.profile {
            if !p.exists() {
                return Err(LabError::config("profile", format!("{} does not exist", p.display())));
            }
        }
        if self.report_formats.is_empty() {
            return Err(LabError::config("report_formats", "choose at least one of json, csv"));
        }
        std::fs::create_dir_all(&self.output_dir)
            .map_err(|e| LabError::config("output_dir", format!("{}: {e}", self.output_dir.display())))?;
        Ok(())
    }

    /// SHA-256 of the canonical JSON encoding. The output directory does not
    /// affect results and is left out.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn wants(&self, f: ReportFormat) -> bool {
        self.report_formats.contains(&f)
    }
}
