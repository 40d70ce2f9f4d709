//! JSON and CSV renderings of profiles, run reports, sweeps and manifold
//! statistics.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use smaat_core::id::IdProfile;
use smaat_core::training::{spearman, RunReport};


pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Fields every emitted report carries.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    pub dataset_hash: String,
}

impl Provenance {
    pub fn new(config_hash: String, seed: u64, dataset_hash: String) -> Self {
        Self {
            version: VERSION.to_string(),
            config_hash,
            seed,
            dataset_hash,
        }
    }
}

/// Trailing comment line that carries the provenance of a CSV report.
pub fn provenance_footer(p: &Provenance) -> String {
    format!(
        "# version={} config_hash={} seed={} dataset_hash={}\n",
        p.version, p.config_hash, p.seed, p.dataset_hash
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileRecord {
    pub provenance: Provenance,
    pub profile: IdProfile,
}

pub const PROFILE_CSV_HEADER: &str = "layer,width,id,normalized_id,selected";

pub fn profile_csv(p: &IdProfile) -> String {
    let mut s = String::from(PROFILE_CSV_HEADER);
    s.push('\n');
    for e in &p.entries {
        let sel = u8::from(e.layer == p.selected_layer);
        let _ = writeln!(s, "{},{},{},{},{}", e.layer, e.width, e.id, e.normalized_id, sel);
    }
    s
}

/// Human-readable table printed by the `profile` command.
pub fn profile_table(p: &IdProfile) -> String {
    let mut s = format!("selected layer l* = {}\n", p.selected_layer);
    s.push_str(" layer  width         id   normalized\n");
    for e in &p.entries {
        let mark = if e.layer == p.selected_layer { " *" } else { "" };
        let _ = writeln!(s, "{:>6} {:>6} {:>10.4} {:>12.6}{mark}", e.layer, e.width, e.id, e.normalized_id);
    }
    let v = p.normalized_violations();
    if !v.is_empty() {
        let _ = writeln!(s, "normalized ID above 1 at layers {v:?}");
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub provenance: Provenance,
    pub status: RunStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub report: Option<RunReport>,
}

pub const RUN_CSV_HEADER: &str =
    "mode,layer,epsilon,steps,seed,clean_acc,robust_acc,ae_macs,total_macs,wall_time";

pub fn run_csv_row(r: &RunReport) -> String {
    let layer = r.selected_layer.map(|l| l.to_string()).unwrap_or_default();
    format!(
        "{},{},{},{},{},{},{},{},{},{}",
        r.mode.as_str(),
        layer,
        r.epsilon,
        r.steps,
        r.seed,
        r.clean_accuracy,
        r.robust_accuracy,
        r.cost.ae_macs(),
        r.cost.total_macs(),
        r.wall_time
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontierRow {
    pub layer: usize,
    pub clean_acc: f64,
    pub robust_acc: f64,
    pub ae_macs: u64,
    pub dataset_hash: String,
}

pub const FRONTIER_CSV_HEADER: &str = "layer,clean_acc,robust_acc,ae_macs,dataset_hash";

/// One row per layer and a footer `spearman,<rho>` of layer index against
/// robust accuracy (empty when undefined).
pub fn frontier_csv(rows: &[FrontierRow]) -> String {
    let mut s = String::from(FRONTIER_CSV_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(s, "{},{},{},{},{}", r.layer, r.clean_acc, r.robust_acc, r.ae_macs, r.dataset_hash);
    }
    let _ = writeln!(s, "spearman,{},,,", frontier_spearman(rows).map(|v| v.to_string()).unwrap_or_default());
    s
}

pub fn frontier_spearman(rows: &[FrontierRow]) -> Option<f64> {
    let x: Vec<f64> = rows.iter().map(|r| r.layer as f64).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.robust_acc).collect();
    spearman(&x, &y)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontierRecord {
    pub provenance: Provenance,
    pub rows: Vec<FrontierRow>,
    pub spearman: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifoldRow {
    pub layer: usize,
    pub width: usize,
    pub clean_mean_err: f64,
    pub adv_mean_err: f64,
    pub clean_ofm: f64,
    pub adv_ofm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifoldRecord {
    pub provenance: Provenance,
    /// SMAAT layer of the checkpoint's ID profile on the training inputs.
    pub selected_layer: usize,
    pub rows: Vec<ManifoldRow>,
}

pub const MANIFOLD_CSV_HEADER: &str = "layer,width,clean_mean_err,adv_mean_err,clean_ofm,adv_ofm";

pub fn manifold_csv(rows: &[ManifoldRow]) -> String {
    let mut s = String::from(MANIFOLD_CSV_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.layer, r.width, r.clean_mean_err, r.adv_mean_err, r.clean_ofm, r.adv_ofm
        );
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackEvalRecord {
    pub provenance: Provenance,
    pub checkpoint: String,
    pub clean_accuracy: f64,
    pub robust_accuracy: f64,
    pub epsilon: f64,
    pub steps: usize,
}

pub const ATTACK_EVAL_CSV_HEADER: &str = "checkpoint,epsilon,steps,clean_acc,robust_acc";

pub fn attack_eval_csv(r: &AttackEvalRecord) -> String {
    format!(
        "{ATTACK_EVAL_CSV_HEADER}\n{},{},{},{},{}\n",
        r.checkpoint, r.epsilon, r.steps, r.clean_accuracy, r.robust_accuracy
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use smaat_core::id::{IdEntry, SelectionMode};

    #[test]
    fn profile_csv_layout() {
        let p = IdProfile::new(
            vec![IdEntry::new(0, 4, 2.0), IdEntry::new(1, 4, 1.0), IdEntry::new(2, 2, 1.0)],
            SelectionMode::Normalized,
        )
        .unwrap();
        assert_eq!(
            profile_csv(&p),
            "layer,width,id,normalized_id,selected\n0,4,2,0.5,0\n1,4,1,0.25,1\n2,2,1,0.5,0\n"
        );
    }

    #[test]
    fn frontier_footer_recomputes_rank() {
        let rows: Vec<FrontierRow> = [0.2, 0.5, 0.4]
            .iter()
            .enumerate()
            .map(|(i, r)| FrontierRow {
                layer: i + 1,
                clean_acc: 1.0,
                robust_acc: *r,
                ae_macs: 10,
                dataset_hash: "h".into(),
            })
            .collect();
        let csv = frontier_csv(&rows);
        assert!(csv.ends_with("spearman,0.5,,,\n"), "{csv}");
        assert_eq!(csv.lines().count(), 5);
    }

    #[test]
    fn footer_is_a_comment_line() {
        let p = Provenance::new("abc".into(), 7, "def".into());
        let f = provenance_footer(&p);
        assert_eq!(f, format!("# version={VERSION} config_hash=abc seed=7 dataset_hash=def\n"));
    }
}

