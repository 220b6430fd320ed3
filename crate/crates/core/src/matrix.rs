//! Dense square-matrix primitives: SVD, singular-value soft-thresholding,
//! norms and masked projections.
//!
//! Decompositions are backed by `nalgebra`. Symmetric inputs take an
//! eigendecomposition route (singular values are the absolute eigenvalues),
//! which is what every matrix built by the solver and detector hits.

use nalgebra::{DMatrix, SymmetricEigen, SVD};

use crate::error::{Error, Result};

/// Singular values at or below this are treated as numerically zero.
pub const RANK_TOL: f64 = 1e-10;

/// A dense `n x n` real matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix(DMatrix<f64>);

impl DenseMatrix {
    pub fn zeros(n: usize) -> Self {
        DenseMatrix(DMatrix::zeros(n, n))
    }

    pub fn identity(n: usize) -> Self {
        DenseMatrix(DMatrix::identity(n, n))
    }

    pub fn from_fn(n: usize, f: impl FnMut(usize, usize) -> f64) -> Self {
        DenseMatrix(DMatrix::from_fn(n, n, f))
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        let n = d.len();
        Self::from_fn(n, |i, j| if i == j { d[i] } else { 0.0 })
    }

    /// Builds a matrix from row vectors; every row must have `rows.len()` entries.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        for row in rows {
            if row.len() != n {
                return Err(Error::DimensionMismatch { expected: n, found: row.len() });
            }
        }
        Ok(Self::from_fn(n, |i, j| rows[i][j]))
    }

    pub fn from_inner(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::DimensionMismatch { expected: m.nrows(), found: m.ncols() });
        }
        Ok(DenseMatrix(m))
    }

    pub fn as_inner(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn n(&self) -> usize {
        self.0.nrows()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.0[(i, j)] = v;
    }

    /// Column-major view of the entries.
    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        self.0.as_mut_slice()
    }

    /// Exact symmetry check.
    pub fn is_symmetric(&self) -> bool {
        let n = self.n();
        (0..n).all(|j| (j + 1..n).all(|i| self.0[(i, j)] == self.0[(j, i)]))
    }

    pub fn check_finite(&self) -> Result<()> {
        let n = self.n();
        for j in 0..n {
            for i in 0..n {
                if !self.0[(i, j)].is_finite() {
                    return Err(Error::NonFinite { row: i, col: j });
                }
            }
        }
        Ok(())
    }

    pub fn sub(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        same_dim(self, other)?;
        Ok(DenseMatrix(&self.0 - &other.0))
    }

    pub fn add(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        same_dim(self, other)?;
        Ok(DenseMatrix(&self.0 + &other.0))
    }

    pub fn scale(&self, c: f64) -> DenseMatrix {
        DenseMatrix(&self.0 * c)
    }

    pub fn transpose(&self) -> DenseMatrix {
        DenseMatrix(self.0.transpose())
    }

    /// Entrywise truncation `sign(x) * min(|x|, a)`.
    pub fn clip(&self, a: f64) -> DenseMatrix {
        DenseMatrix(self.0.map(|x| x.clamp(-a, a)))
    }

    /// Overwrites the strict lower triangle with the upper one.
    pub(crate) fn mirror_upper(&mut self) {
        let n = self.n();
        for j in 0..n {
            for i in j + 1..n {
                self.0[(i, j)] = self.0[(j, i)];
            }
        }
    }

    pub fn fro_norm(&self) -> f64 {
        fro_norm(self)
    }

    pub fn sup_norm(&self) -> f64 {
        sup_norm(self)
    }
}

fn same_dim(a: &DenseMatrix, b: &DenseMatrix) -> Result<()> {
    if a.n() != b.n() {
        return Err(Error::DimensionMismatch { expected: a.n(), found: b.n() });
    }
    Ok(())
}

/// Symmetric boolean observation pattern.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    n: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn filled(n: usize, value: bool) -> Self {
        Mask { n, bits: vec![value; n * n] }
    }

    /// Evaluates `f` on the upper triangle (`i <= j`) and mirrors it.
    pub fn from_upper_fn(n: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut mask = Mask::filled(n, false);
        for i in 0..n {
            for j in i..n {
                mask.set(i, j, f(i, j));
            }
        }
        mask
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.n + j]
    }

    /// Sets both `(i, j)` and `(j, i)`.
    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: bool) {
        self.bits[i * self.n + j] = v;
        self.bits[j * self.n + i] = v;
    }

    pub fn complement(&self) -> Mask {
        Mask { n: self.n, bits: self.bits.iter().map(|b| !b).collect() }
    }

    pub fn count_observed(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|i| (i + 1..self.n).all(|j| self.get(i, j) == self.get(j, i)))
    }
}

/// `W = U diag(d) V^T` with `d` descending.
#[derive(Clone, Debug)]
pub struct SvdFactors {
    pub u: DMatrix<f64>,
    pub d: Vec<f64>,
    pub v: DMatrix<f64>,
}

impl SvdFactors {
    pub fn reconstruct(&self) -> DenseMatrix {
        let mut ud = self.u.clone();
        for (k, dk) in self.d.iter().enumerate() {
            ud.column_mut(k).scale_mut(*dk);
        }
        DenseMatrix(ud * self.v.transpose())
    }
}

fn iteration_cap(n: usize) -> usize {
    (10 * n).max(30)
}

fn failure(w: &DenseMatrix) -> Error {
    Error::NumericalFailure { n: w.n(), fro: fro_norm(w), sup: sup_norm(w) }
}

/// Full dense SVD with singular values sorted in descending order.
pub fn svd(w: &DenseMatrix) -> Result<SvdFactors> {
    w.check_finite()?;
    let n = w.n();
    if n == 0 {
        return Ok(SvdFactors { u: DMatrix::zeros(0, 0), d: Vec::new(), v: DMatrix::zeros(0, 0) });
    }
    let dec = SVD::try_new(w.0.clone(), true, true, f64::EPSILON, iteration_cap(n))
        .ok_or_else(|| failure(w))?;
    let u = dec.u.ok_or_else(|| failure(w))?;
    let v = dec.v_t.ok_or_else(|| failure(w))?.transpose();
    Ok(SvdFactors { u, d: dec.singular_values.iter().copied().collect(), v })
}

fn symmetric_eigen(w: &DenseMatrix) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    SymmetricEigen::try_new(w.0.clone(), f64::EPSILON, iteration_cap(w.n())).ok_or_else(|| failure(w))
}

/// Result of singular-value soft-thresholding.
#[derive(Clone, Debug)]
pub struct Shrunk {
    pub matrix: DenseMatrix,
    /// `(d_i - lambda)_+`, descending.
    pub singular_values: Vec<f64>,
}

impl Shrunk {
    pub fn numerical_rank(&self) -> usize {
        self.singular_values.iter().filter(|d| **d > RANK_TOL).count()
    }
}

/// `S_lambda(W) = U diag((d_i - lambda)_+) V^T`.
pub fn svd_soft_threshold(w: &DenseMatrix, lambda: f64) -> Result<DenseMatrix> {
    soft_threshold_spectrum(w, lambda).map(|s| s.matrix)
}

/// Soft-thresholding that also reports the shrunken spectrum.
pub fn soft_threshold_spectrum(w: &DenseMatrix, lambda: f64) -> Result<Shrunk> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::config(format!("lambda must be a finite nonnegative number, got {lambda}")));
    }
    w.check_finite()?;
    if w.is_symmetric() {
        shrink_symmetric(w, lambda)
    } else {
        shrink_general(w, lambda)
    }
}

// For symmetric W = sum mu_i v_i v_i^T the singular triplets are
// (|mu_i|, sign(mu_i) v_i, v_i), so the shrinkage keeps the eigenvectors and
// shrinks |mu_i| toward zero.
fn shrink_symmetric(w: &DenseMatrix, lambda: f64) -> Result<Shrunk> {
    let n = w.n();
    let eig = symmetric_eigen(w)?;
    let keep: Vec<usize> = (0..n).filter(|&k| eig.eigenvalues[k].abs() > lambda).collect();

    let mut singular_values: Vec<f64> =
        eig.eigenvalues.iter().map(|mu| (mu.abs() - lambda).max(0.0)).collect();
    singular_values.sort_by(|a, b| b.total_cmp(a));

    let mut out = DMatrix::zeros(n, n);
    if !keep.is_empty() {
        let vk = eig.eigenvectors.select_columns(&keep);
        let mut scaled = vk.clone();
        for (c, &k) in keep.iter().enumerate() {
            let mu = eig.eigenvalues[k];
            scaled.column_mut(c).scale_mut(mu.signum() * (mu.abs() - lambda));
        }
        out.gemm(1.0, &scaled, &vk.transpose(), 0.0);
    }
    let mut matrix = DenseMatrix(out);
    matrix.mirror_upper();
    Ok(Shrunk { matrix, singular_values })
}

fn shrink_general(w: &DenseMatrix, lambda: f64) -> Result<Shrunk> {
    let mut f = svd(w)?;
    for d in f.d.iter_mut() {
        *d = (*d - lambda).max(0.0);
    }
    let matrix = f.reconstruct();
    Ok(Shrunk { matrix, singular_values: f.d })
}

/// Copies entries of `a` where the mask is set, zero elsewhere.
pub fn masked_project(a: &DenseMatrix, mask: &Mask) -> Result<DenseMatrix> {
    if a.n() != mask.n() {
        return Err(Error::DimensionMismatch { expected: a.n(), found: mask.n() });
    }
    Ok(DenseMatrix::from_fn(a.n(), |i, j| if mask.get(i, j) { a.get(i, j) } else { 0.0 }))
}

pub fn fro_norm(a: &DenseMatrix) -> f64 {
    a.0.norm()
}

pub fn sup_norm(a: &DenseMatrix) -> f64 {
    a.0.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

/// Largest singular value.
pub fn op_norm(a: &DenseMatrix) -> Result<f64> {
    a.check_finite()?;
    if a.n() == 0 {
        return Ok(0.0);
    }
    if a.is_symmetric() {
        let vals = a.0.symmetric_eigenvalues();
        Ok(vals.iter().fold(0.0_f64, |m, x| m.max(x.abs())))
    } else {
        let dec = SVD::try_new(a.0.clone(), false, false, f64::EPSILON, iteration_cap(a.n()))
            .ok_or_else(|| failure(a))?;
        Ok(dec.singular_values.iter().fold(0.0_f64, |m, x| m.max(*x)))
    }
}

/// Decides `op_norm(a) < bound` for symmetric `a`, skipping the
/// eigenvalue computation when cheap bounds settle it:
/// `max_j ||a e_j|| <= ||a||_op <= ||a||_F`.
pub(crate) fn op_norm_below(a: &DenseMatrix, bound: f64) -> Result<bool> {
    if fro_norm(a) < bound {
        return Ok(true);
    }
    let max_col = a.0.column_iter().fold(0.0_f64, |m, c| m.max(c.norm()));
    if max_col >= bound {
        return Ok(false);
    }
    Ok(op_norm(a)? < bound)
}
