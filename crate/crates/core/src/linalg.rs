//! Dense row-major matrices and the handful of decompositions the rest of the
//! crate leans on: per-column standardization, covariance, a cyclic Jacobi
//! eigensolver for symmetric matrices and exact first/second nearest-neighbour
//! distances.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Index, IndexMut};

use crate::error::{Error, Result};

/// Lower bound on a standardization scale. Columns whose sample deviation is
/// below this are treated as constant.
pub const SCALE_FLOOR: f64 = 1e-8;

/// Dense `rows x cols` real matrix stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::DimensionMismatch {
                context: "Matrix::new",
                expected: rows * cols,
                got: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("Matrix::new"));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    /// Builds a matrix from equally sized rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::DimensionMismatch {
                    context: "Matrix::from_rows",
                    expected: cols,
                    got: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, data)
    }

    pub fn diag(values: &[f64]) -> Self {
        let mut m = Self::zeros(values.len(), values.len());
        for (i, v) in values.iter().enumerate() {
            m[(i, i)] = *v;
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact panics on a zero chunk size
        let cols = self.cols.max(1);
        self.data.chunks_exact(cols).take(self.rows)
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn select_rows(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Self {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    /// `self * rhs`.
    pub fn matmul(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.cols != rhs.rows {
            return Err(Error::DimensionMismatch {
                context: "matmul",
                expected: self.cols,
                got: rhs.rows,
            });
        }
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            let a = self.row(i);
            let o = out.row_mut(i);
            for (k, &aik) in a.iter().enumerate() {
                if aik == 0.0 {
                    continue;
                }
                for (oj, bj) in o.iter_mut().zip(rhs.row(k)) {
                    *oj += aik * bj;
                }
            }
        }
        Ok(out)
    }

    /// `selfᵀ * rhs` without materializing the transpose.
    pub fn t_matmul(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.rows != rhs.rows {
            return Err(Error::DimensionMismatch {
                context: "t_matmul",
                expected: self.rows,
                got: rhs.rows,
            });
        }
        let mut out = Matrix::zeros(self.cols, rhs.cols);
        for r in 0..self.rows {
            let a = self.row(r);
            let b = rhs.row(r);
            for (i, &ai) in a.iter().enumerate() {
                if ai == 0.0 {
                    continue;
                }
                for (oj, bj) in out.row_mut(i).iter_mut().zip(b) {
                    *oj += ai * bj;
                }
            }
        }
        Ok(out)
    }

    /// `self * rhsᵀ` without materializing the transpose.
    pub fn matmul_t(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.cols != rhs.cols {
            return Err(Error::DimensionMismatch {
                context: "matmul_t",
                expected: self.cols,
                got: rhs.cols,
            });
        }
        let mut out = Matrix::zeros(self.rows, rhs.rows);
        for i in 0..self.rows {
            let a = self.row(i);
            for j in 0..rhs.rows {
                out[(i, j)] = dot(a, rhs.row(j));
            }
        }
        Ok(out)
    }

    /// Elementwise sum with a matrix of the same shape.
    pub fn add(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.shape() != rhs.shape() {
            return Err(Error::DimensionMismatch {
                context: "add",
                expected: self.data.len(),
                got: rhs.data.len(),
            });
        }
        let data = self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect();
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm2(a: &[f64]) -> f64 {
    libm::sqrt(dot(a, a))
}

/// Per-dimension affine map `x -> (x - mean) / scale`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StandardizeStats {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl StandardizeStats {
    /// Column means and sample standard deviations (floored at [`SCALE_FLOOR`]).
    pub fn fit(x: &Matrix) -> Result<Self> {
        if x.rows() == 0 || x.cols() == 0 {
            return Err(Error::Empty("standardize"));
        }
        let n = x.rows() as f64;
        let mut mean = vec![0.0; x.cols()];
        for row in x.iter_rows() {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; x.cols()];
        for row in x.iter_rows() {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                let d = v - m;
                *s += d * d;
            }
        }
        let denom = if x.rows() > 1 { n - 1.0 } else { 1.0 };
        let scale = var
            .into_iter()
            .map(|s| {
                let sd = libm::sqrt(s / denom);
                if sd > SCALE_FLOOR {
                    sd
                } else {
                    SCALE_FLOOR
                }
            })
            .collect();
        Ok(Self { mean, scale })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.dim() {
            return Err(Error::DimensionMismatch {
                context: "standardize",
                expected: self.dim(),
                got: x.cols(),
            });
        }
        let mut out = x.clone();
        for i in 0..out.rows() {
            self.apply_in_place(out.row_mut(i));
        }
        Ok(out)
    }

    /// Standardizes a single vector.
    pub fn apply_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                context: "standardize",
                expected: self.dim(),
                got: x.len(),
            });
        }
        let mut v = x.to_vec();
        self.apply_in_place(&mut v);
        Ok(v)
    }

    fn apply_in_place(&self, row: &mut [f64]) {
        for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.scale) {
            *v = (*v - m) / s;
        }
    }
}

/// Standardizes the columns of `x`. With `stats = None` the statistics are
/// fitted on `x` and returned for reuse on other batches.
pub fn standardize(x: &Matrix, stats: Option<&StandardizeStats>) -> Result<(Matrix, StandardizeStats)> {
    if x.rows() == 0 {
        return Err(Error::Empty("standardize"));
    }
    let stats = match stats {
        Some(s) => s.clone(),
        None => StandardizeStats::fit(x)?,
    };
    let out = stats.apply(x)?;
    Ok((out, stats))
}

/// `XbarᵀXbar / (n - 1)` for a standardized sample matrix (samples as rows).
pub fn covariance(xbar: &Matrix) -> Result<Matrix> {
    let n = xbar.rows();
    if n < 2 {
        return Err(Error::TooFewSamples {
            context: "covariance",
            needed: 2,
            got: n,
        });
    }
    let d = xbar.cols();
    let mut c = Matrix::zeros(d, d);
    for row in xbar.iter_rows() {
        for i in 0..d {
            let ri = row[i];
            if ri == 0.0 {
                continue;
            }
            for j in i..d {
                c[(i, j)] += ri * row[j];
            }
        }
    }
    let inv = 1.0 / (n as f64 - 1.0);
    for i in 0..d {
        for j in i..d {
            let v = c[(i, j)] * inv;
            c[(i, j)] = v;
            c[(j, i)] = v;
        }
    }
    Ok(c)
}

/// Eigen-decomposition of a symmetric matrix.
///
/// Columns of `vectors` are orthonormal eigenvectors; `values` are sorted in
/// descending order. Each eigenvector is signed so that its largest-magnitude
/// entry is positive (first such entry on ties).
#[derive(Debug, Clone, PartialEq)]
pub struct EigenBasis {
    pub vectors: Matrix,
    pub values: Vec<f64>,
}

impl EigenBasis {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// `U diag(values) Uᵀ`.
    pub fn reconstruct(&self) -> Matrix {
        let n = self.dim();
        let u = &self.vectors;
        let mut out = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let mut s = 0.0;
                for k in 0..n {
                    s += u[(i, k)] * self.values[k] * u[(j, k)];
                }
                out[(i, j)] = s;
            }
        }
        out
    }
}

const SYMMETRY_TOL: f64 = 1e-10;
const MAX_SWEEPS: usize = 100;

/// Cyclic Jacobi eigensolver.
pub fn sym_eigen(c: &Matrix) -> Result<EigenBasis> {
    let (rows, cols) = c.shape();
    if rows != cols {
        return Err(Error::NotSquare { rows, cols });
    }
    let n = rows;
    let tol = SYMMETRY_TOL * c.max_abs().max(1.0);
    for i in 0..n {
        for j in (i + 1)..n {
            let dev = (c[(i, j)] - c[(j, i)]).abs();
            if dev > tol {
                return Err(Error::NotSymmetric {
                    row: i,
                    col: j,
                    deviation: dev,
                });
            }
        }
    }
    if !c.all_finite() {
        return Err(Error::NonFinite("sym_eigen"));
    }

    let mut a = c.clone();
    for i in 0..n {
        for j in (i + 1)..n {
            let m = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = m;
            a[(j, i)] = m;
        }
    }
    let mut v = Matrix::identity(n);
    let frob2: f64 = a.as_slice().iter().map(|x| x * x).sum();

    for _ in 0..MAX_SWEEPS {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += a[(p, q)] * a[(p, q)];
            }
        }
        if off == 0.0 || off <= 1e-32 * frob2 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq.abs() < f64::MIN_POSITIVE {
                    continue;
                }
                let app = a[(p, p)];
                let aqq = a[(q, q)];
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta.abs() > 1e150 {
                    0.5 / theta
                } else {
                    let sgn = if theta >= 0.0 { 1.0 } else { -1.0 };
                    sgn / (theta.abs() + libm::sqrt(theta * theta + 1.0))
                };
                let cs = 1.0 / libm::sqrt(t * t + 1.0);
                let sn = t * cs;
                for k in 0..n {
                    if k == p || k == q {
                        continue;
                    }
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    let nkp = cs * akp - sn * akq;
                    let nkq = sn * akp + cs * akq;
                    a[(k, p)] = nkp;
                    a[(p, k)] = nkp;
                    a[(k, q)] = nkq;
                    a[(q, k)] = nkq;
                }
                a[(p, p)] = app - t * apq;
                a[(q, q)] = aqq + t * apq;
                a[(p, q)] = 0.0;
                a[(q, p)] = 0.0;
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = cs * vkp - sn * vkq;
                    v[(k, q)] = sn * vkp + cs * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| a[(y, y)].total_cmp(&a[(x, x)]).then(x.cmp(&y)));
    let mut vectors = Matrix::zeros(n, n);
    let mut values = Vec::with_capacity(n);
    for (dst, &src) in order.iter().enumerate() {
        values.push(a[(src, src)]);
        let mut pivot = 0;
        for k in 0..n {
            if v[(k, src)].abs() > v[(pivot, src)].abs() {
                pivot = k;
            }
        }
        let sign = if v[(pivot, src)] < 0.0 { -1.0 } else { 1.0 };
        for k in 0..n {
            vectors[(k, dst)] = sign * v[(k, src)];
        }
    }
    Ok(EigenBasis { vectors, values })
}

/// First and second nearest-neighbour distances of one retained point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeighborPair {
    pub index: usize,
    pub r1: f64,
    pub r2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NearestDistances {
    /// One entry per retained point, in input row order.
    pub pairs: Vec<NeighborPair>,
    /// Rows dropped because another row coincides with them exactly.
    pub excluded: usize,
}

/// Exact nearest and second-nearest neighbour distances by full scan.
///
/// A row that has an exact duplicate elsewhere in `points` is excluded
/// (all copies), and zero distances are never used as neighbour distances.
pub fn nearest_two_distances(points: &Matrix) -> Result<NearestDistances> {
    nearest_two_distances_range(points, 0..points.rows())
}

/// Same as [`nearest_two_distances`] restricted to query rows in `range`.
/// Concatenating the results of disjoint ranges (and summing `excluded`)
/// reproduces the full call exactly.
pub fn nearest_two_distances_range(
    points: &Matrix,
    range: core::ops::Range<usize>,
) -> Result<NearestDistances> {
    let n = points.rows();
    if n < 3 {
        return Err(Error::TooFewSamples {
            context: "nearest_two_distances",
            needed: 3,
            got: n,
        });
    }
    let mut pairs = Vec::with_capacity(range.len());
    let mut excluded = 0;
    for i in range {
        let pi = points.row(i);
        let mut best = [f64::INFINITY; 2];
        let mut duplicate = false;
        for j in 0..n {
            if j == i {
                continue;
            }
            let d2: f64 = pi
                .iter()
                .zip(points.row(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            if d2 == 0.0 {
                duplicate = true;
                break;
            }
            if d2 < best[0] {
                best[1] = best[0];
                best[0] = d2;
            } else if d2 < best[1] {
                best[1] = d2;
            }
        }
        if duplicate {
            excluded += 1;
        } else if best[1].is_finite() {
            pairs.push(NeighborPair {
                index: i,
                r1: libm::sqrt(best[0]),
                r2: libm::sqrt(best[1]),
            });
        }
    }
    Ok(NearestDistances { pairs, excluded })
}
