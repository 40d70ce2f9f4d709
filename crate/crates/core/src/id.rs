//! twoNN intrinsic-dimension estimation and layer selection.
//!
//! For each point the ratio `mu = r2 / r1` of second- to first-neighbour
//! distance is Pareto distributed with shape equal to the intrinsic
//! dimension `I`, so `-ln(1 - F(mu)) = I * ln(mu)`. `I` is the least-squares
//! slope of that line through the origin over the empirical CDF.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::{nearest_two_distances, Matrix};
use crate::network::Model;

pub const DEFAULT_DISCARD_FRACTION: f64 = 0.10;
const MIN_DISTINCT_POINTS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct IdEstimate {
    pub id_value: f64,
    /// Ratios that entered the regression.
    pub points_used: usize,
    pub discard_fraction: f64,
    /// RMS residual of the regression.
    pub fit_residual: f64,
}

/// Fits the twoNN line to a set of neighbour-distance ratios.
///
/// Ratios are sorted ascending and given plotting positions `F = i / N`
/// (`i` 1-based). The largest `max(1, ceil(discard_fraction * N))` ratios are
/// dropped, which always removes the `F = 1` singularity.
pub fn twonn_from_ratios(ratios: &[f64], discard_fraction: f64) -> Result<IdEstimate> {
    if !(0.0..0.5).contains(&discard_fraction) {
        return Err(Error::InvalidParameter {
            name: "discard_fraction",
            reason: format!("must lie in [0, 0.5), got {discard_fraction}"),
        });
    }
    if ratios.iter().any(|m| !m.is_finite() || *m < 1.0) {
        return Err(Error::DegenerateRatios("ratios must be finite and >= 1".into()));
    }
    let n = ratios.len();
    let discard = (libm::ceil(discard_fraction * n as f64) as usize).max(1);
    let used = n.saturating_sub(discard);
    if used < MIN_DISTINCT_POINTS / 2 {
        return Err(Error::TooFewSamples {
            context: "twonn",
            needed: MIN_DISTINCT_POINTS,
            got: n,
        });
    }
    let mut mu = ratios.to_vec();
    mu.sort_by(f64::total_cmp);
    let (mut sxx, mut sxy) = (0.0, 0.0);
    let mut xs = Vec::with_capacity(used);
    for (i, m) in mu.iter().take(used).enumerate() {
        let f = (i + 1) as f64 / n as f64;
        let x = libm::log(*m);
        let y = -libm::log(1.0 - f);
        sxx += x * x;
        sxy += x * y;
        xs.push((x, y));
    }
    if sxx == 0.0 {
        return Err(Error::DegenerateRatios(format!(
            "all {used} retained ratios equal 1 (every point is equidistant from its two nearest neighbours)"
        )));
    }
    let id = sxy / sxx;
    let rss: f64 = xs.iter().map(|(x, y)| (y - id * x) * (y - id * x)).sum();
    Ok(IdEstimate {
        id_value: id,
        points_used: used,
        discard_fraction,
        fit_residual: libm::sqrt(rss / used as f64),
    })
}

/// Removes exact duplicate rows, keeping the first occurrence.
fn dedup_rows(points: &Matrix) -> Matrix {
    let mut seen = BTreeSet::new();
    let keep: Vec<usize> = (0..points.rows())
        .filter(|&i| {
            let key: Vec<u64> = points.row(i).iter().map(|v| (v + 0.0).to_bits()).collect();
            seen.insert(key)
        })
        .collect();
    if keep.len() == points.rows() {
        points.clone()
    } else {
        points.select_rows(&keep)
    }
}

/// twoNN estimate on a point cloud (rows are points). Duplicate points are
/// removed before the neighbour search.
pub fn twonn_id(points: &Matrix, discard_fraction: f64) -> Result<IdEstimate> {
    let distinct = dedup_rows(points);
    if distinct.rows() < MIN_DISTINCT_POINTS {
        return Err(Error::TooFewSamples {
            context: "twonn_id distinct points",
            needed: MIN_DISTINCT_POINTS,
            got: distinct.rows(),
        });
    }
    let nd = nearest_two_distances(&distinct)?;
    let ratios: Vec<f64> = nd.pairs.iter().map(|p| p.r2 / p.r1).collect();
    twonn_from_ratios(&ratios, discard_fraction)
}

/// Which ID value the layer-selection rule compares.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum SelectionMode {
    /// `I_l / d_l`.
    #[default]
    Normalized,
    Raw,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct IdEntry {
    pub layer: usize,
    pub width: usize,
    pub id: f64,
    pub normalized_id: f64,
}

impl IdEntry {
    pub fn new(layer: usize, width: usize, id: f64) -> Self {
        Self {
            layer,
            width,
            id,
            normalized_id: id / width as f64,
        }
    }

    fn value(&self, mode: SelectionMode) -> f64 {
        match mode {
            SelectionMode::Normalized => self.normalized_id,
            SelectionMode::Raw => self.id,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct IdProfile {
    pub entries: Vec<IdEntry>,
    pub selected_layer: usize,
    pub mode: SelectionMode,
}

impl IdProfile {
    /// Builds a profile from entries and applies [`select_layer`].
    pub fn new(mut entries: Vec<IdEntry>, mode: SelectionMode) -> Result<Self> {
        entries.sort_by_key(|e| e.layer);
        let selected_layer = select_layer(&entries, mode)?;
        Ok(Self {
            entries,
            selected_layer,
            mode,
        })
    }

    /// Layers whose normalized ID exceeds 1 (the estimate is larger than the width).
    pub fn normalized_violations(&self) -> Vec<usize> {
        self.entries
            .iter()
            .filter(|e| e.normalized_id > 1.0)
            .map(|e| e.layer)
            .collect()
    }

    pub fn widths(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.width).collect()
    }
}

/// The deepest layer `l >= 1` whose ID is `<=` the ID of every earlier layer
/// `1 <= i < l`. The input entry (layer 0) never takes part.
pub fn select_layer(entries: &[IdEntry], mode: SelectionMode) -> Result<usize> {
    let mut best = None;
    let mut running_min = f64::INFINITY;
    for e in entries.iter().filter(|e| e.layer >= 1) {
        let v = e.value(mode);
        if v <= running_min {
            best = Some(e.layer);
        }
        running_min = running_min.min(v);
    }
    best.ok_or(Error::Empty("select_layer: no layer with index >= 1"))
}

/// twoNN profile of every layer `0..=n` on `fit_set`.
pub fn profile_network(model: &Model, fit_set: &Matrix, mode: SelectionMode) -> Result<IdProfile> {
    profile_network_with(model, fit_set, mode, DEFAULT_DISCARD_FRACTION)
}

pub fn profile_network_with(
    model: &Model,
    fit_set: &Matrix,
    mode: SelectionMode,
    discard_fraction: f64,
) -> Result<IdProfile> {
    let reps = model.all_representations(fit_set)?;
    let mut entries = Vec::with_capacity(reps.len());
    for (l, r) in reps.iter().enumerate() {
        let est = twonn_id(r, discard_fraction)?;
        entries.push(IdEntry::new(l, r.cols(), est.id_value));
    }
    IdProfile::new(entries, mode)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn pareto_ratios(n: usize, id: f64) -> Vec<f64> {
        (1..=n)
            .map(|i| {
                let u = i as f64 / n as f64;
                if i == n {
                    1e6
                } else {
                    libm::pow(1.0 - u, -1.0 / id)
                }
            })
            .collect()
    }

    fn entries(values: &[f64]) -> Vec<IdEntry> {
        values
            .iter()
            .enumerate()
            .map(|(i, v)| IdEntry {
                layer: i + 1,
                width: 10,
                id: v * 10.0,
                normalized_id: *v,
            })
            .collect()
    }

    #[test]
    fn exact_pareto_recovered() {
        let est = twonn_from_ratios(&pareto_ratios(1000, 5.0), 0.1).unwrap();
        assert!((est.id_value - 5.0).abs() < 1e-6, "{est:?}");
        assert_eq!(est.points_used, 900);
        let doubled = twonn_from_ratios(&pareto_ratios(2000, 5.0), 0.1).unwrap();
        assert!((doubled.id_value - est.id_value).abs() < 1e-6);
    }

    #[test]
    fn zero_discard_still_drops_top() {
        let est = twonn_from_ratios(&pareto_ratios(100, 3.0), 0.0).unwrap();
        assert_eq!(est.points_used, 99);
        assert!((est.id_value - 3.0).abs() < 1e-9);
    }

    #[test]
    fn degenerate_ratios() {
        assert!(matches!(
            twonn_from_ratios(&[1.0; 50], 0.1),
            Err(Error::DegenerateRatios(_))
        ));
        assert!(twonn_from_ratios(&[1.5; 5], 0.1).is_err());
        assert!(twonn_from_ratios(&[1.5; 50], 0.6).is_err());
    }

    #[test]
    fn lattice_is_degenerate() {
        let rows: Vec<[f64; 1]> = (0..40).map(|i| [i as f64]).collect();
        // interior points of an evenly spaced line have r1 = r2; the two
        // endpoints (ratio 2) fall in the discarded tail
        let m = Matrix::from_rows(&rows).unwrap();
        assert!(matches!(twonn_id(&m, 0.1), Err(Error::DegenerateRatios(_))));
        let rows: Vec<[f64; 1]> = (0..40).map(|i| [(i % 10) as f64]).collect();
        assert!(matches!(
            twonn_id(&Matrix::from_rows(&rows).unwrap(), 0.1),
            Err(Error::TooFewSamples { .. })
        ));
    }

    #[test]
    fn select_examples() {
        assert_eq!(select_layer(&entries(&[0.8, 0.6, 0.5, 0.7]), SelectionMode::Normalized).unwrap(), 3);
        assert_eq!(select_layer(&entries(&[0.9, 0.7, 0.5, 0.2]), SelectionMode::Normalized).unwrap(), 4);
        assert_eq!(select_layer(&entries(&[0.1, 0.3, 0.5, 0.7]), SelectionMode::Normalized).unwrap(), 1);
        assert_eq!(select_layer(&entries(&[0.5, 0.4, 0.4, 0.6]), SelectionMode::Normalized).unwrap(), 3);
        assert!(select_layer(&[], SelectionMode::Normalized).is_err());
    }

    #[test]
    fn select_ignores_input_layer() {
        let mut e = entries(&[0.8, 0.9]);
        e.insert(0, IdEntry::new(0, 10, 0.1));
        assert_eq!(select_layer(&e, SelectionMode::Normalized).unwrap(), 1);
    }

    #[test]
    fn raw_mode_can_differ() {
        let e = vec![IdEntry::new(1, 10, 5.0), IdEntry::new(2, 4, 3.0), IdEntry::new(3, 2, 1.9)];
        // normalized: 0.5, 0.75, 0.95 -> layer 1; raw: 5, 3, 1.9 -> layer 3
        assert_eq!(select_layer(&e, SelectionMode::Normalized).unwrap(), 1);
        assert_eq!(select_layer(&e, SelectionMode::Raw).unwrap(), 3);
    }
}
