//! Dense linear-algebra kernels used by the estimator.
//!
//! Matrices are stored row-major as `f64`. Heavy products and the symmetric
//! eigensolver are delegated to `nalgebra`; everything else (sign fixing,
//! completion of rank-deficient singular bases, the randomized range finder)
//! lives here.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Condition numbers above this are treated as numerically singular.
pub const SINGULARITY_THRESHOLD: f64 = 1e12;

/// Above this value of `min(rows, cols)` the randomized backend is used.
pub const GRAM_BACKEND_LIMIT: usize = 2000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("entry buffer has length {got}, expected {expected}")]
    Shape { expected: usize, got: usize },
    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    Convergence { iterations: usize, residual: f64 },
    #[error("matrix is numerically singular (condition number {condition:e})")]
    Singular { condition: f64 },
}

/// Row-major dense matrix of finite `f64` values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, LinalgError> {
        if data.len() != rows * cols {
            return Err(LinalgError::Shape {
                expected: rows * cols,
                got: data.len(),
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(LinalgError::NonFinite {
                row: pos / cols.max(1),
                col: pos % cols.max(1),
            });
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from a slice of equally long rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self, LinalgError> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != cols {
                return Err(LinalgError::Dimension(format!(
                    "row {i} has {} entries, expected {cols}",
                    row.len()
                )));
            }
            data.extend_from_slice(row);
        }
        Self::new(rows.len(), cols, data)
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    pub fn diagonal(values: &[f64]) -> Self {
        let n = values.len();
        Self::from_fn(n, n, |i, j| if i == j { values[i] } else { 0.0 })
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

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    /// Overwrites one entry. Panics if the value is not finite.
    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        assert!(value.is_finite(), "non-finite value {value} at ({row}, {col})");
        self.data[row * self.cols + col] = value;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.cols.max(1)).take(self.rows)
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
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

    /// Returns a matrix whose column `k` is column `perm[k]` of `self`.
    pub fn select_columns(&self, perm: &[usize]) -> Self {
        Self::from_fn(self.rows, perm.len(), |i, k| self.get(i, perm[k]))
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self::from_fn(self.rows, self.cols, |i, j| self.get(i, j) * factor)
    }

    pub fn matmul(&self, other: &DenseMatrix) -> Result<Self, LinalgError> {
        if self.cols != other.rows {
            return Err(LinalgError::Dimension(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(Self::from_nalgebra(&(self.to_nalgebra() * other.to_nalgebra())))
    }

    /// `selfᵀ · other` without materializing the transpose.
    pub fn tr_matmul(&self, other: &DenseMatrix) -> Result<Self, LinalgError> {
        if self.rows != other.rows {
            return Err(LinalgError::Dimension(format!(
                "cannot multiply ({}x{})ᵀ by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(Self::from_nalgebra(
            &self.to_nalgebra().tr_mul(&other.to_nalgebra()),
        ))
    }

    pub fn sub(&self, other: &DenseMatrix) -> Result<Self, LinalgError> {
        if self.shape() != other.shape() {
            return Err(LinalgError::Dimension(format!(
                "cannot subtract {:?} from {:?}",
                other.shape(),
                self.shape()
            )));
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Largest absolute entrywise difference. Panics on shape mismatch.
    pub fn max_abs_diff(&self, other: &DenseMatrix) -> f64 {
        assert_eq!(self.shape(), other.shape(), "shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn min_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub(crate) fn to_nalgebra(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }

    pub(crate) fn from_nalgebra(m: &DMatrix<f64>) -> Self {
        let (rows, cols) = m.shape();
        Self::from_fn(rows, cols, |i, j| m[(i, j)])
    }
}

/// Truncated rank-K factorization `M ≈ U diag(sigma) Vᵀ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvdFactors {
    pub u: DenseMatrix,
    pub sigma: Vec<f64>,
    pub v: DenseMatrix,
}

impl SvdFactors {
    pub fn rank(&self) -> usize {
        self.sigma.len()
    }

    pub fn reconstruct(&self) -> DenseMatrix {
        let us = DenseMatrix::from_fn(self.u.rows(), self.rank(), |i, k| {
            self.u.get(i, k) * self.sigma[k]
        });
        let vt = self.v.transpose();
        us.matmul(&vt).expect("conforming factors")
    }

    /// Keeps only the leading `k` triplets.
    pub fn truncate(&self, k: usize) -> SvdFactors {
        let cols: Vec<usize> = (0..k.min(self.rank())).collect();
        SvdFactors {
            u: self.u.select_columns(&cols),
            sigma: self.sigma[..cols.len()].to_vec(),
            v: self.v.select_columns(&cols),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SvdBackend {
    /// Gram for `min(rows, cols) <= GRAM_BACKEND_LIMIT`, randomized otherwise.
    Auto,
    /// Eigendecomposition of the smaller Gram matrix.
    Gram,
    /// Randomized subspace iteration.
    Randomized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvdOptions {
    pub backend: SvdBackend,
    pub seed: u64,
    pub oversampling: usize,
    /// Power iterations always performed by the randomized backend.
    pub power_iterations: usize,
    /// Iteration cap for both the eigensolver and the randomized refinement.
    pub max_iterations: usize,
    /// Relative tolerance on singular value change for the randomized backend.
    pub tolerance: f64,
}

impl Default for SvdOptions {
    fn default() -> Self {
        Self {
            backend: SvdBackend::Auto,
            seed: 0x0005_eed0_f5bd,
            oversampling: 10,
            power_iterations: 4,
            max_iterations: 300,
            tolerance: 1e-10,
        }
    }
}

/// Top-`k` singular triplets with the default options.
pub fn truncated_svd(m: &DenseMatrix, k: usize) -> Result<SvdFactors, LinalgError> {
    truncated_svd_with(m, k, &SvdOptions::default())
}

pub fn truncated_svd_with(
    m: &DenseMatrix,
    k: usize,
    opts: &SvdOptions,
) -> Result<SvdFactors, LinalgError> {
    let small = m.rows().min(m.cols());
    if k == 0 || k > small {
        return Err(LinalgError::Dimension(format!(
            "rank {k} outside 1..={small} for a {}x{} matrix",
            m.rows(),
            m.cols()
        )));
    }
    let backend = match opts.backend {
        SvdBackend::Auto if small <= GRAM_BACKEND_LIMIT => SvdBackend::Gram,
        SvdBackend::Auto => SvdBackend::Randomized,
        other => other,
    };
    let mut factors = match backend {
        SvdBackend::Randomized => randomized_svd(m, k, opts)?,
        _ => gram_svd(m, k, opts)?,
    };
    apply_sign_convention(&mut factors);
    Ok(factors)
}

fn gram_svd(m: &DenseMatrix, k: usize, opts: &SvdOptions) -> Result<SvdFactors, LinalgError> {
    let a = m.to_nalgebra();
    // Eigenvectors of the smaller Gram matrix give one side; the other side is
    // recovered by a product with `a`.
    let tall = a.nrows() >= a.ncols();
    let gram = if tall { a.tr_mul(&a) } else { &a * a.transpose() };
    let eig = SymmetricEigen::try_new(gram, f64::EPSILON, opts.max_iterations.max(1) * 100)
        .ok_or(LinalgError::Convergence {
            iterations: opts.max_iterations.max(1) * 100,
            residual: f64::NAN,
        })?;
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&x, &y| eig.eigenvalues[y].total_cmp(&eig.eigenvalues[x]).then(x.cmp(&y)));
    let basis = eig.eigenvectors.select_columns(&order[..k]);
    let (u, sigma, v) = if tall {
        let (u, sigma) = complete_side(&a, &basis);
        (u, sigma, basis)
    } else {
        let at = a.transpose();
        let (v, sigma) = complete_side(&at, &basis);
        (basis, sigma, v)
    };
    Ok(sort_triplets(u, sigma, v))
}

/// Given orthonormal right vectors `basis` of `a`, returns the matching left
/// vectors and singular values `‖a b_j‖`. Columns of numerically zero
/// singular value are completed to an orthonormal set.
fn complete_side(a: &DMatrix<f64>, basis: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>) {
    let image = a * basis;
    let sigma: Vec<f64> = image.column_iter().map(|c| c.norm()).collect();
    (normalize_columns(image, &sigma), sigma)
}

/// Scales column `j` by `1/sigma[j]` and reorthonormalizes; columns with a
/// numerically zero norm are replaced by unit vectors orthogonal to the rest.
fn normalize_columns(mut image: DMatrix<f64>, sigma: &[f64]) -> DMatrix<f64> {
    let sigma_max = sigma.iter().copied().fold(0.0, f64::max);
    let cutoff = sigma_max * 1e-13;
    let n = image.nrows();
    let mut next_unit = 0;
    for j in 0..image.ncols() {
        let mut ok = false;
        if sigma[j] > cutoff && sigma[j] > 0.0 {
            let scaled = image.column(j) / sigma[j];
            image.set_column(j, &scaled);
            ok = orthonormalize_against(&mut image, j);
        }
        while !ok {
            // numerically null direction: substitute the next unit vector
            let mut e = nalgebra::DVector::zeros(n);
            e[next_unit % n] = 1.0;
            next_unit += 1;
            image.set_column(j, &e);
            ok = orthonormalize_against(&mut image, j);
        }
    }
    image
}

/// One-sided Jacobi SVD of a dense matrix: `(U, sigma, V)` with
/// `min(rows, cols)` triplets, sigma descending. Accurate on rank-deficient
/// input, and used for every small decomposition in the crate.
pub(crate) fn jacobi_svd(a: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>, DMatrix<f64>) {
    if a.nrows() < a.ncols() {
        let (u, s, v) = jacobi_svd(&a.transpose());
        return (v, s, u);
    }
    let m = a.ncols();
    let mut w = a.clone();
    let mut v = DMatrix::<f64>::identity(m, m);
    for _sweep in 0..80 {
        let mut rotated = false;
        for p in 0..m {
            for q in p + 1..m {
                let alpha = w.column(p).norm_squared();
                let beta = w.column(q).norm_squared();
                let gamma = w.column(p).dot(&w.column(q));
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_columns(&mut w, p, q, c, s);
                rotate_columns(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }
    let sigma: Vec<f64> = w.column_iter().map(|c| c.norm()).collect();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&x, &y| sigma[y].total_cmp(&sigma[x]).then(x.cmp(&y)));
    let w = w.select_columns(&order);
    let v = v.select_columns(&order);
    let sigma: Vec<f64> = order.iter().map(|&i| sigma[i]).collect();
    (normalize_columns(w, &sigma), sigma, v)
}

fn rotate_columns(m: &mut DMatrix<f64>, p: usize, q: usize, c: f64, s: f64) {
    for r in 0..m.nrows() {
        let (x, y) = (m[(r, p)], m[(r, q)]);
        m[(r, p)] = c * x - s * y;
        m[(r, q)] = s * x + c * y;
    }
}

/// Minimum-norm least-squares solution of `a x = b`, discarding singular
/// values below `rcond · sigma_max`.
pub(crate) fn least_squares(a: &DMatrix<f64>, b: &nalgebra::DVector<f64>, rcond: f64) -> nalgebra::DVector<f64> {
    let (u, sigma, v) = jacobi_svd(a);
    let top = sigma.first().copied().unwrap_or(0.0);
    let mut x = nalgebra::DVector::zeros(a.ncols());
    for (j, &s) in sigma.iter().enumerate() {
        if s > rcond * top && s > 0.0 {
            let coef = u.column(j).dot(b) / s;
            x.axpy(coef, &v.column(j), 1.0);
        }
    }
    x
}

/// Two passes of modified Gram-Schmidt of column `j` against columns `0..j`.
/// Returns false when the column collapses.
fn orthonormalize_against(m: &mut DMatrix<f64>, j: usize) -> bool {
    let before = m.column(j).norm();
    for _ in 0..2 {
        for p in 0..j {
            let proj = m.column(p).dot(&m.column(j));
            let prev = m.column(p).clone_owned();
            let mut col = m.column_mut(j);
            col.axpy(-proj, &prev, 1.0);
        }
    }
    let norm = m.column(j).norm();
    if norm <= 0.5 * before || norm == 0.0 {
        return false;
    }
    let scaled = m.column(j) / norm;
    m.set_column(j, &scaled);
    true
}

fn sort_triplets(u: DMatrix<f64>, sigma: Vec<f64>, v: DMatrix<f64>) -> SvdFactors {
    let mut order: Vec<usize> = (0..sigma.len()).collect();
    order.sort_by(|&x, &y| sigma[y].total_cmp(&sigma[x]).then(x.cmp(&y)));
    SvdFactors {
        u: DenseMatrix::from_nalgebra(&u.select_columns(&order)),
        sigma: order.iter().map(|&i| sigma[i]).collect(),
        v: DenseMatrix::from_nalgebra(&v.select_columns(&order)),
    }
}

fn orthonormal_range(y: DMatrix<f64>) -> DMatrix<f64> {
    y.qr().q()
}

fn randomized_svd(m: &DenseMatrix, k: usize, opts: &SvdOptions) -> Result<SvdFactors, LinalgError> {
    let a = m.to_nalgebra();
    let (rows, cols) = a.shape();
    let width = (k + opts.oversampling).min(rows.min(cols));
    let mut rng = ChaCha20Rng::seed_from_u64(opts.seed);
    let omega = DMatrix::<f64>::from_fn(cols, width, |_, _| StandardNormal.sample(&mut rng));
    let mut q = orthonormal_range(&a * omega);

    let top_values = |q: &DMatrix<f64>| -> Vec<f64> {
        let (_, mut s, _) = jacobi_svd(&(q.transpose() * &a));
        s.truncate(k);
        s
    };

    let mut previous: Option<Vec<f64>> = None;
    let mut residual = f64::INFINITY;
    let mut converged = false;
    for iter in 0..opts.max_iterations.max(opts.power_iterations) {
        let z = orthonormal_range(a.tr_mul(&q));
        q = orthonormal_range(&a * z);
        if iter + 1 < opts.power_iterations {
            continue;
        }
        let current = top_values(&q);
        if let Some(prev) = &previous {
            let scale = current[0].max(f64::MIN_POSITIVE);
            residual = current
                .iter()
                .zip(prev)
                .map(|(c, p)| (c - p).abs())
                .fold(0.0, f64::max)
                / scale;
            if residual <= opts.tolerance {
                converged = true;
                break;
            }
        }
        previous = Some(current);
    }
    if !converged {
        return Err(LinalgError::Convergence {
            iterations: opts.max_iterations,
            residual,
        });
    }

    // SVD of the small projected matrix b = qᵀa, lifted back by q.
    let (u_small, sigma, v) = jacobi_svd(&(q.transpose() * &a));
    let u = &q * u_small.columns(0, k);
    Ok(SvdFactors {
        u: DenseMatrix::from_nalgebra(&u),
        sigma: sigma[..k].to_vec(),
        v: DenseMatrix::from_nalgebra(&v.columns(0, k).into_owned()),
    })
}

/// Flips column pairs so that the largest-magnitude entry of each U column is
/// nonnegative (first occurrence wins on ties).
pub fn apply_sign_convention(f: &mut SvdFactors) {
    for k in 0..f.rank() {
        let mut best = 0usize;
        let mut best_abs = -1.0;
        for i in 0..f.u.rows() {
            let a = f.u.get(i, k).abs();
            if a > best_abs {
                best_abs = a;
                best = i;
            }
        }
        if f.u.get(best, k) < 0.0 {
            for i in 0..f.u.rows() {
                let x = f.u.get(i, k);
                f.u.set(i, k, -x);
            }
            for j in 0..f.v.rows() {
                let x = f.v.get(j, k);
                f.v.set(j, k, -x);
            }
        }
    }
}

/// All singular values in descending order.
pub fn singular_values(m: &DenseMatrix) -> Vec<f64> {
    if m.rows() == 0 || m.cols() == 0 {
        return Vec::new();
    }
    jacobi_svd(&m.to_nalgebra()).1
}

/// Ratio of the largest to the smallest of the `min(rows, cols)` singular
/// values; `+inf` when the smallest is zero.
pub fn condition_number(m: &DenseMatrix) -> f64 {
    let s = singular_values(m);
    match (s.first(), s.last()) {
        (Some(&hi), Some(&lo)) if lo > 0.0 => hi / lo,
        (Some(_), Some(_)) => f64::INFINITY,
        _ => f64::NAN,
    }
}

pub fn invert_square(m: &DenseMatrix) -> Result<DenseMatrix, LinalgError> {
    if m.rows() != m.cols() {
        return Err(LinalgError::Dimension(format!(
            "cannot invert a non-square {}x{} matrix",
            m.rows(),
            m.cols()
        )));
    }
    if m.rows() == 0 {
        return Ok(DenseMatrix::zeros(0, 0));
    }
    let condition = condition_number(m);
    if !(condition <= SINGULARITY_THRESHOLD) {
        return Err(LinalgError::Singular { condition });
    }
    let inv = m
        .to_nalgebra()
        .lu()
        .try_inverse()
        .ok_or(LinalgError::Singular { condition })?;
    Ok(DenseMatrix::from_nalgebra(&inv))
}

/// Number of singular values strictly above `tol · sigma_max`.
pub fn numerical_rank(m: &DenseMatrix, tol: f64) -> usize {
    let s = singular_values(m);
    let Some(&top) = s.first() else { return 0 };
    if top == 0.0 {
        return 0;
    }
    s.iter().filter(|&&v| v > tol * top).count()
}
