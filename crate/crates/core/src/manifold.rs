//! Linear eigenspace model of a layer's representation manifold.
//!
//! A [`LayerManifold`] is fitted on the standardized representations of a
//! reference set. The projection error of a sample onto the top-`k`
//! eigenvectors measures how far it lies from that subspace; samples whose
//! error exceeds `gamma` are off-manifold.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::{covariance, norm2, standardize, sym_eigen, EigenBasis, Matrix, StandardizeStats};

#[derive(Debug, Clone, PartialEq)]
pub struct LayerManifold {
    pub layer_index: usize,
    pub dim: usize,
    pub stats: StandardizeStats,
    pub basis: EigenBasis,
    pub n_fit: usize,
    /// Set when `n_fit - 1 < dim`; eigenvalues past the sample rank are zeroed.
    pub rank_deficient: bool,
}

/// Fits standardization statistics and the covariance eigenbasis of `reps`.
pub fn fit_layer_manifold(reps: &Matrix, layer_index: usize) -> Result<LayerManifold> {
    let n = reps.rows();
    if n < 2 {
        return Err(Error::TooFewSamples {
            context: "fit_layer_manifold",
            needed: 2,
            got: n,
        });
    }
    let (xbar, stats) = standardize(reps, None)?;
    let mut basis = sym_eigen(&covariance(&xbar)?)?;
    let dim = reps.cols();
    for v in basis.values.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    let rank = n - 1;
    let rank_deficient = rank < dim;
    if rank_deficient {
        basis.values[rank..].iter_mut().for_each(|v| *v = 0.0);
    }
    Ok(LayerManifold {
        layer_index,
        dim,
        stats,
        basis,
        n_fit: n,
        rank_deficient,
    })
}

impl LayerManifold {
    fn check_k(&self, k: usize) -> Result<()> {
        if k == 0 || k > self.dim {
            return Err(Error::OutOfRange {
                name: "k",
                value: k,
                min: 1,
                max: self.dim,
            });
        }
        Ok(())
    }

    /// Coordinates of the standardized sample in the eigenbasis.
    fn coefficients(&self, xbar: &[f64]) -> Vec<f64> {
        let u = &self.basis.vectors;
        let mut c = vec![0.0; self.dim];
        for (i, &xi) in xbar.iter().enumerate() {
            for (cj, uij) in c.iter_mut().zip(u.row(i)) {
                *cj += xi * uij;
            }
        }
        c
    }

    /// Residual norms for every `k` in `1..=dim`, computed from the tail of
    /// the eigen-coefficients. Nonincreasing in `k` and exactly zero at `dim`.
    fn residual_curve(&self, x: &[f64]) -> Result<Vec<f64>> {
        let xbar = self.stats.apply_vec(x)?;
        let c = self.coefficients(&xbar);
        let mut tail = vec![0.0; self.dim];
        let mut acc = 0.0;
        for k in (0..self.dim).rev() {
            tail[k] = libm::sqrt(acc);
            acc += c[k] * c[k];
        }
        Ok(tail)
    }

    /// Sum of `‖x̄‖₂` over the rows of `reps`.
    pub fn total_standardized_norm(&self, reps: &Matrix) -> Result<f64> {
        let mut total = 0.0;
        for row in reps.iter_rows() {
            total += norm2(&self.stats.apply_vec(row)?);
        }
        Ok(total)
    }

    /// `Σ_x ‖e^k(x)‖₂` for `k = 1..=dim` (entry `k - 1`).
    pub fn total_error_curve(&self, reps: &Matrix) -> Result<Vec<f64>> {
        if reps.rows() == 0 {
            return Err(Error::Empty("total_error_curve"));
        }
        let mut total = vec![0.0; self.dim];
        for row in reps.iter_rows() {
            for (t, r) in total.iter_mut().zip(self.residual_curve(row)?) {
                *t += r;
            }
        }
        Ok(total)
    }
}

/// Residual of the standardized `x` after projecting onto the top-`k`
/// eigenvectors, and its Euclidean norm.
pub fn projection_error(m: &LayerManifold, x: &[f64], k: usize) -> Result<(Vec<f64>, f64)> {
    m.check_k(k)?;
    let xbar = m.stats.apply_vec(x)?;
    let u = &m.basis.vectors;
    let mut coef = vec![0.0; k];
    for (i, &xi) in xbar.iter().enumerate() {
        for (c, uij) in coef.iter_mut().zip(&u.row(i)[..k]) {
            *c += xi * uij;
        }
    }
    let mut e = xbar;
    for (i, ei) in e.iter_mut().enumerate() {
        let proj: f64 = coef.iter().zip(&u.row(i)[..k]).map(|(c, uij)| c * uij).sum();
        *ei -= proj;
    }
    let norm = norm2(&e);
    Ok((e, norm))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigenDimension {
    pub k: usize,
    /// No `k` met the budget; `k = dim` was returned.
    pub saturated: bool,
}

/// Smallest `k` whose summed projection error over `fit_reps` is `<= gamma`.
pub fn eigen_dimension(m: &LayerManifold, fit_reps: &Matrix, gamma: f64) -> Result<EigenDimension> {
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::InvalidParameter {
            name: "gamma",
            reason: alloc::format!("must be positive and finite, got {gamma}"),
        });
    }
    let curve = m.total_error_curve(fit_reps)?;
    Ok(match curve.iter().position(|&t| t <= gamma) {
        Some(i) => EigenDimension {
            k: i + 1,
            saturated: false,
        },
        None => EigenDimension {
            k: m.dim,
            saturated: true,
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum ManifoldLabel {
    /// Off-manifold: projection error strictly above `gamma`.
    Ofm,
    /// On-manifold: projection error at most `gamma`.
    Onm,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ManifoldVerdict {
    pub error_norm: f64,
    pub k_used: usize,
    pub gamma: f64,
    pub label: ManifoldLabel,
}

pub fn classify(m: &LayerManifold, x: &[f64], k: usize, gamma: f64) -> Result<ManifoldVerdict> {
    let (_, error_norm) = projection_error(m, x, k)?;
    Ok(verdict(error_norm, k, gamma))
}

fn verdict(error_norm: f64, k: usize, gamma: f64) -> ManifoldVerdict {
    let label = if error_norm > gamma {
        ManifoldLabel::Ofm
    } else {
        ManifoldLabel::Onm
    };
    ManifoldVerdict {
        error_norm,
        k_used: k,
        gamma,
        label,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OffManifoldStats {
    /// Fraction of rows classified off-manifold.
    pub ratio: f64,
    pub mean_error: f64,
    pub median_error: f64,
}

pub fn off_manifold_ratio(m: &LayerManifold, batch: &Matrix, k: usize, gamma: f64) -> Result<OffManifoldStats> {
    if batch.rows() == 0 {
        return Err(Error::Empty("off_manifold_ratio"));
    }
    let mut errors = Vec::with_capacity(batch.rows());
    let mut ofm = 0usize;
    for row in batch.iter_rows() {
        let v = classify(m, row, k, gamma)?;
        if v.label == ManifoldLabel::Ofm {
            ofm += 1;
        }
        errors.push(v.error_norm);
    }
    let n = errors.len();
    let mean_error = errors.iter().sum::<f64>() / n as f64;
    Ok(OffManifoldStats {
        ratio: ofm as f64 / n as f64,
        mean_error,
        median_error: median(&mut errors),
    })
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Nearest-rank percentile, `q` in `(0, 1]`.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = libm::ceil(q * v.len() as f64) as usize;
    v[rank.clamp(1, v.len()) - 1]
}

/// How the two thresholds are derived from a fit set.
///
/// `gamma_total = rho * Σ_x ‖x̄‖₂` is the budget for [`eigen_dimension`];
/// the per-sample classification threshold is the `percentile` quantile of
/// fit-set projection errors at the resulting `k`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GammaPolicy {
    pub rho: f64,
    pub percentile: f64,
}

impl Default for GammaPolicy {
    fn default() -> Self {
        Self {
            rho: 0.05,
            percentile: 0.95,
        }
    }
}

/// A fitted manifold together with the thresholds chosen by a [`GammaPolicy`].
#[derive(Debug, Clone, PartialEq)]
pub struct LayerAnalysis {
    pub manifold: LayerManifold,
    pub k: usize,
    pub saturated: bool,
    pub gamma_total: f64,
    pub gamma_sample: f64,
}

pub fn analyze_layer(reps: &Matrix, layer_index: usize, policy: GammaPolicy) -> Result<LayerAnalysis> {
    let manifold = fit_layer_manifold(reps, layer_index)?;
    let norm_total = manifold.total_standardized_norm(reps)?;
    // an all-constant layer standardizes to zero; any positive budget works
    let gamma_total = if norm_total > 0.0 {
        policy.rho * norm_total
    } else {
        f64::MIN_POSITIVE
    };
    let ed = eigen_dimension(&manifold, reps, gamma_total)?;
    let mut errs = Vec::with_capacity(reps.rows());
    for row in reps.iter_rows() {
        errs.push(projection_error(&manifold, row, ed.k)?.1);
    }
    let gamma_sample = percentile(&errs, policy.percentile);
    Ok(LayerAnalysis {
        manifold,
        k: ed.k,
        saturated: ed.saturated,
        gamma_total,
        gamma_sample,
    })
}
