//! Synthetic labelled datasets with a known intrinsic dimension.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{dot, norm2, Matrix, StandardizeStats};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct DatasetMeta {
    pub generator: String,
    pub intrinsic_k: usize,
    pub ambient_d: usize,
    pub noise_sigma: f64,
    pub margin: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Matrix,
    pub y: Vec<usize>,
    pub classes: usize,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn new(x: Matrix, y: Vec<usize>, classes: usize, meta: DatasetMeta) -> Result<Self> {
        if x.rows() != y.len() {
            return Err(Error::DimensionMismatch {
                context: "dataset labels",
                expected: x.rows(),
                got: y.len(),
            });
        }
        if classes < 2 {
            return Err(Error::InvalidParameter {
                name: "classes",
                reason: format!("need at least 2 classes, got {classes}"),
            });
        }
        if let Some(&label) = y.iter().find(|&&l| l >= classes) {
            return Err(Error::LabelOutOfRange { label, classes });
        }
        if meta.intrinsic_k > meta.ambient_d || meta.ambient_d != x.cols() {
            return Err(Error::InvalidParameter {
                name: "meta",
                reason: format!(
                    "intrinsic_k = {}, ambient_d = {} for {} columns",
                    meta.intrinsic_k,
                    meta.ambient_d,
                    x.cols()
                ),
            });
        }
        Ok(Self { x, y, classes, meta })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            x: self.x.select_rows(indices),
            y: indices.iter().map(|&i| self.y[i]).collect(),
            classes: self.classes,
            meta: self.meta.clone(),
        }
    }

    /// First `n_train` rows and the remainder.
    pub fn split_at(&self, n_train: usize) -> (Self, Self) {
        let n_train = n_train.min(self.len());
        let train: Vec<usize> = (0..n_train).collect();
        let test: Vec<usize> = (n_train..self.len()).collect();
        (self.select(&train), self.select(&test))
    }

    /// Applies input standardization (fitted elsewhere) to the features.
    pub fn standardized(&self, stats: &StandardizeStats) -> Result<Self> {
        Ok(Self {
            x: stats.apply(&self.x)?,
            ..self.clone()
        })
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.classes];
        for &l in &self.y {
            c[l] += 1;
        }
        c
    }
}

/// `d x k` matrix with orthonormal columns drawn from a seeded Gaussian.
pub fn random_orthonormal(d: usize, k: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(k);
    while cols.len() < k {
        let mut v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut *rng)).collect();
        // two passes of Gram-Schmidt for numerical orthogonality
        for _ in 0..2 {
            for c in &cols {
                let p = dot(&v, c);
                v.iter_mut().zip(c).for_each(|(a, b)| *a -= p * b);
            }
        }
        let n = norm2(&v);
        if n > 1e-6 {
            v.iter_mut().for_each(|a| *a /= n);
            cols.push(v);
        }
    }
    let mut m = Matrix::zeros(d, k);
    for (j, c) in cols.iter().enumerate() {
        for (i, v) in c.iter().enumerate() {
            m[(i, j)] = *v;
        }
    }
    m
}

fn uniform_in_ball(k: usize, radius: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut v: Vec<f64> = (0..k).map(|_| StandardNormal.sample(&mut *rng)).collect();
    let n = norm2(&v).max(f64::MIN_POSITIVE);
    let u: f64 = rng.random();
    let r = radius * libm::pow(u, 1.0 / k as f64);
    v.iter_mut().for_each(|a| *a *= r / n);
    v
}

/// Radius of the per-class uniform jitter ball in [`gen_subspace_classes`].
pub const JITTER_RADIUS: f64 = 1.0;

/// Class centroids on the integer grid scaled by `margin`, centred at the
/// origin. Pairwise distances are at least `margin`.
pub fn grid_centroids(classes: usize, k: usize, margin: f64) -> Result<Vec<Vec<f64>>> {
    if !(margin > 0.0) || !margin.is_finite() {
        return Err(Error::InfeasibleMargin(format!(
            "margin must be positive and finite, got {margin}"
        )));
    }
    if k == 0 {
        return Err(Error::InfeasibleMargin("intrinsic dimension must be >= 1".into()));
    }
    let mut side = 1usize;
    while libm::pow(side as f64, k as f64) < classes as f64 {
        side += 1;
    }
    let mut pts = Vec::with_capacity(classes);
    for idx in 0..classes {
        let mut rem = idx;
        let mut p = vec![0.0; k];
        for c in p.iter_mut() {
            *c = (rem % side) as f64 * margin;
            rem /= side;
        }
        pts.push(p);
    }
    let mut mean = vec![0.0; k];
    for p in &pts {
        mean.iter_mut().zip(p).for_each(|(m, v)| *m += v / classes as f64);
    }
    for p in pts.iter_mut() {
        p.iter_mut().zip(&mean).for_each(|(v, m)| *v -= m);
    }
    Ok(pts)
}

/// `classes` compact blobs in a random `intrinsic_k`-dimensional linear
/// subspace of `R^ambient_d`.
///
/// Centroids sit on a `margin`-spaced grid inside the subspace; points are
/// centroid plus uniform jitter in a `k`-ball of radius [`JITTER_RADIUS`],
/// embedded by a seeded orthonormal map, plus isotropic ambient Gaussian
/// noise of scale `noise_sigma`. Labels cycle `0, 1, .., C-1`.
pub fn gen_subspace_classes(
    n: usize,
    ambient_d: usize,
    intrinsic_k: usize,
    classes: usize,
    margin: f64,
    noise_sigma: f64,
    seed: u64,
) -> Result<Dataset> {
    if intrinsic_k > ambient_d {
        return Err(Error::InvalidParameter {
            name: "intrinsic_k",
            reason: format!("{intrinsic_k} exceeds ambient dimension {ambient_d}"),
        });
    }
    if classes < 2 {
        return Err(Error::InvalidParameter {
            name: "classes",
            reason: format!("need at least 2 classes, got {classes}"),
        });
    }
    if !(noise_sigma >= 0.0) {
        return Err(Error::InvalidParameter {
            name: "noise_sigma",
            reason: format!("must be nonnegative, got {noise_sigma}"),
        });
    }
    let centroids = grid_centroids(classes, intrinsic_k, margin)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let basis = random_orthonormal(ambient_d, intrinsic_k, &mut rng);
    let mut x = Matrix::zeros(n, ambient_d);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % classes;
        let z: Vec<f64> = uniform_in_ball(intrinsic_k, JITTER_RADIUS, &mut rng)
            .iter()
            .zip(&centroids[c])
            .map(|(j, m)| j + m)
            .collect();
        let row = x.row_mut(i);
        for (a, r) in row.iter_mut().enumerate() {
            *r = dot(basis.row(a), &z);
        }
        if noise_sigma > 0.0 {
            for r in row.iter_mut() {
                let e: f64 = StandardNormal.sample(&mut rng);
                *r += noise_sigma * e;
            }
        }
        y.push(c);
    }
    Dataset::new(
        x,
        y,
        classes,
        DatasetMeta {
            generator: "subspace".into(),
            intrinsic_k,
            ambient_d,
            noise_sigma,
            margin,
            seed,
        },
    )
}

pub const CURVE_NOISE_SIGMA: f64 = 1e-4;

/// Two interleaved half-circle arcs (a "two moons" layout) in a random plane
/// of `R^ambient_d`, with tiny isotropic noise. Classes alternate so each has
/// exactly `n / 2` points for even `n`.
pub fn gen_curved_classes(n: usize, ambient_d: usize, seed: u64) -> Result<Dataset> {
    if ambient_d < 3 {
        return Err(Error::InvalidParameter {
            name: "ambient_d",
            reason: format!("curved data needs ambient_d >= 3, got {ambient_d}"),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let basis = random_orthonormal(ambient_d, 2, &mut rng);
    let mut x = Matrix::zeros(n, ambient_d);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % 2;
        let t: f64 = rng.random_range(0.0..core::f64::consts::PI);
        let p = if c == 0 {
            [libm::cos(t), libm::sin(t)]
        } else {
            [1.0 - libm::cos(t), 0.5 - libm::sin(t)]
        };
        let row = x.row_mut(i);
        for (a, r) in row.iter_mut().enumerate() {
            let e: f64 = StandardNormal.sample(&mut rng);
            *r = basis[(a, 0)] * p[0] + basis[(a, 1)] * p[1] + CURVE_NOISE_SIGMA * e;
        }
        y.push(c);
    }
    Dataset::new(
        x,
        y,
        2,
        DatasetMeta {
            generator: "curved".into(),
            intrinsic_k: 1,
            ambient_d,
            noise_sigma: CURVE_NOISE_SIGMA,
            margin: 0.0,
            seed,
        },
    )
}

/// Seeded permutation of `0..n`.
pub fn shuffled_indices(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn subspace_is_deterministic_and_seed_sensitive() {
        let a = gen_subspace_classes(50, 8, 3, 3, 4.0, 0.0, 1).unwrap();
        assert_eq!(a, gen_subspace_classes(50, 8, 3, 3, 4.0, 0.0, 1).unwrap());
        assert_ne!(a.x, gen_subspace_classes(50, 8, 3, 3, 4.0, 0.0, 2).unwrap().x);
        assert_eq!(a.class_counts(), vec![17, 17, 16]);
    }

    #[test]
    fn subspace_argument_errors() {
        assert!(gen_subspace_classes(10, 3, 4, 2, 1.0, 0.0, 0).is_err());
        assert!(matches!(
            gen_subspace_classes(10, 5, 2, 2, 0.0, 0.0, 0),
            Err(Error::InfeasibleMargin(_))
        ));
        assert!(gen_subspace_classes(10, 5, 2, 1, 1.0, 0.0, 0).is_err());
    }

    #[test]
    fn centroid_margin_holds_exactly() {
        for (c, k) in [(2, 1), (5, 2), (9, 3), (17, 4)] {
            let pts = grid_centroids(c, k, 2.5).unwrap();
            let mut min = f64::INFINITY;
            for i in 0..c {
                for j in (i + 1)..c {
                    let d: f64 = pts[i].iter().zip(&pts[j]).map(|(a, b)| (a - b) * (a - b)).sum();
                    min = min.min(d.sqrt());
                }
            }
            assert!(min >= 2.5 - 1e-12, "{c} {k} {min}");
        }
    }

    #[test]
    fn noiseless_points_lie_in_subspace() {
        let d = gen_subspace_classes(100, 10, 2, 2, 3.0, 0.0, 5).unwrap();
        let (xb, _) = crate::linalg::standardize(&d.x, None).unwrap();
        let e = crate::linalg::sym_eigen(&crate::linalg::covariance(&xb).unwrap()).unwrap();
        assert!(e.values[2..].iter().all(|v| v.abs() < 1e-8));
    }

    #[test]
    fn curved_balance_and_errors() {
        let d = gen_curved_classes(200, 5, 3).unwrap();
        assert_eq!(d.class_counts(), vec![100, 100]);
        assert_eq!(d.meta.intrinsic_k, 1);
        assert!(gen_curved_classes(10, 2, 0).is_err());
    }

    #[test]
    fn orthonormal_columns() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let q = random_orthonormal(12, 5, &mut rng);
        let g = q.t_matmul(&q).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((g[(i, j)] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dataset_validation() {
        let meta = DatasetMeta {
            generator: "t".into(),
            intrinsic_k: 1,
            ambient_d: 2,
            noise_sigma: 0.0,
            margin: 1.0,
            seed: 0,
        };
        let x = Matrix::zeros(3, 2);
        assert!(Dataset::new(x.clone(), vec![0, 1], 2, meta.clone()).is_err());
        assert!(Dataset::new(x.clone(), vec![0, 1, 2], 2, meta.clone()).is_err());
        assert!(Dataset::new(x.clone(), vec![0, 1, 1], 1, meta.clone()).is_err());
        assert!(Dataset::new(x, vec![0, 1, 1], 2, meta).is_ok());
    }
}
