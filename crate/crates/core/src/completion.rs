//! Multi-copy soft-impute: completes the common low-rank graphon behind a
//! window of partially observed adjacency matrices.
//!
//! Each iteration fills the unobserved entries of every snapshot with the
//! current (truncated) estimate, averages over the window and applies
//! singular-value soft-thresholding. Averaging only needs two per-window
//! sufficient statistics, the mean of the observed values and the fraction
//! of snapshots in which each entry is missing, so an iteration costs one
//! `n x n` decomposition regardless of the window length.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::calibration::CalibrationProfile;
use crate::error::{Error, Result};
use crate::matrix::{self, DenseMatrix, Mask};

/// One time step: observed adjacency `y` (zero where unobserved) and its mask.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskedSnapshot {
    t: usize,
    y: DenseMatrix,
    omega: Mask,
}

impl MaskedSnapshot {
    pub fn new(t: usize, y: DenseMatrix, omega: Mask) -> Result<Self> {
        let bad = |reason: String| Error::InvalidSnapshot { t, reason };
        if t == 0 {
            return Err(bad("time index must be positive".into()));
        }
        if y.n() != omega.n() {
            return Err(Error::DimensionMismatch { expected: y.n(), found: omega.n() });
        }
        if !y.is_symmetric() {
            return Err(bad("adjacency is not symmetric".into()));
        }
        if !omega.is_symmetric() {
            return Err(bad("mask is not symmetric".into()));
        }
        let n = y.n();
        for i in 0..n {
            for j in 0..n {
                let v = y.get(i, j);
                if !(0.0..=1.0).contains(&v) {
                    return Err(bad(format!("entry ({i}, {j}) = {v} outside [0, 1]")));
                }
                if v != 0.0 && !omega.get(i, j) {
                    return Err(bad(format!("entry ({i}, {j}) is nonzero but unobserved")));
                }
            }
        }
        Ok(MaskedSnapshot { t, y, omega })
    }

    pub fn fully_observed(t: usize, y: DenseMatrix) -> Result<Self> {
        let n = y.n();
        Self::new(t, y, Mask::filled(n, true))
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn n(&self) -> usize {
        self.y.n()
    }

    pub fn y(&self) -> &DenseMatrix {
        &self.y
    }

    pub fn omega(&self) -> &Mask {
        &self.omega
    }

    /// Same observation under a different time index.
    pub fn with_t(&self, t: usize) -> Self {
        MaskedSnapshot { t, y: self.y.clone(), omega: self.omega.clone() }
    }
}

/// How the solver loop exited.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvergedBy {
    /// Masked-difference operator-norm and sup-norm conditions both held.
    OpNormCriterion,
    /// Successive iterates closer than `fro_tol` in Frobenius norm.
    FroFallback,
    IterCap,
}

#[derive(Clone, Debug)]
pub struct SolverConfig {
    pub lambda: f64,
    /// Entrywise truncation level, in `(0, 1]`.
    pub a: f64,
    pub max_iters: usize,
    /// Defaults to `1e-7 * n` when unset.
    pub fro_tol: Option<f64>,
    /// Warm start; zero matrix when unset.
    pub init: Option<DenseMatrix>,
}

pub const DEFAULT_MAX_ITERS: usize = 500;

impl SolverConfig {
    pub fn new(lambda: f64) -> Self {
        SolverConfig { lambda, a: 1.0, max_iters: DEFAULT_MAX_ITERS, fro_tol: None, init: None }
    }

    pub fn with_truncation(mut self, a: f64) -> Self {
        self.a = a;
        self
    }

    pub fn with_max_iters(mut self, max_iters: usize) -> Self {
        self.max_iters = max_iters;
        self
    }

    pub fn with_fro_tol(mut self, tol: f64) -> Self {
        self.fro_tol = Some(tol);
        self
    }

    pub fn with_init(mut self, init: DenseMatrix) -> Self {
        self.init = Some(init);
        self
    }

    fn validate(&self, n: usize) -> Result<()> {
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return Err(Error::config(format!("lambda must be positive, got {}", self.lambda)));
        }
        if !(self.a > 0.0 && self.a <= 1.0) {
            return Err(Error::config(format!("truncation level must lie in (0, 1], got {}", self.a)));
        }
        if self.max_iters == 0 {
            return Err(Error::config("max_iters must be at least 1"));
        }
        if let Some(tol) = self.fro_tol {
            if !(tol >= 0.0) {
                return Err(Error::config(format!("fro_tol must be nonnegative, got {tol}")));
            }
        }
        if let Some(init) = &self.init {
            if init.n() != n {
                return Err(Error::DimensionMismatch { expected: n, found: init.n() });
            }
            init.check_finite()?;
        }
        Ok(())
    }
}

/// Completed matrix for one window.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphonEstimate {
    /// Final iterate, truncated at `a`.
    pub m_hat: DenseMatrix,
    /// Shrunken spectrum of the final iterate (before truncation), descending.
    pub singular_values: Vec<f64>,
    pub numerical_rank: usize,
    pub iters_used: usize,
    pub converged_by: ConvergedBy,
    /// `||M_k - M_{k-1}||_F` for `k = 2..=iters_used`.
    pub step_norms: Vec<f64>,
}

/// Sufficient statistics of a window of snapshots.
#[derive(Clone, Debug)]
pub struct WindowStats {
    len: usize,
    /// `(1/L) sum_t Y(t)` (entries are already zero off the mask).
    observed_mean: DMatrix<f64>,
    /// `(1/L) #{t : entry unobserved at t}`.
    missing_frac: DMatrix<f64>,
}

impl WindowStats {
    /// Builds the statistics with compensated summation, so the result does
    /// not depend on the order of the snapshots.
    pub fn from_snapshots(window: &[MaskedSnapshot]) -> Result<Self> {
        let first = window.first().ok_or(Error::EmptyWindow)?;
        let n = first.n();
        for s in window {
            if s.n() != n {
                return Err(Error::DimensionMismatch { expected: n, found: s.n() });
            }
        }
        let len = window.len();
        let mut sum = vec![0.0_f64; n * n];
        let mut comp = vec![0.0_f64; n * n];
        let mut missing = vec![0_u32; n * n];
        for s in window {
            for (idx, &v) in s.y.as_slice().iter().enumerate() {
                // Neumaier summation
                let t = sum[idx] + v;
                if sum[idx].abs() >= v.abs() {
                    comp[idx] += (sum[idx] - t) + v;
                } else {
                    comp[idx] += (v - t) + sum[idx];
                }
                sum[idx] = t;
            }
            for j in 0..n {
                for i in 0..n {
                    if !s.omega.get(i, j) {
                        missing[j * n + i] += 1;
                    }
                }
            }
        }
        let l = len as f64;
        let observed_mean = DMatrix::from_iterator(n, n, sum.iter().zip(&comp).map(|(s, c)| (s + c) / l));
        let missing_frac = DMatrix::from_iterator(n, n, missing.iter().map(|&c| c as f64 / l));
        Ok(WindowStats { len, observed_mean, missing_frac })
    }

    /// From already-aggregated window sums (column-major) of the observed
    /// values and the missing counts.
    pub(crate) fn from_sums(len: usize, observed_sum: &DMatrix<f64>, missing_count: &DMatrix<f64>) -> Self {
        let l = len as f64;
        WindowStats { len, observed_mean: observed_sum / l, missing_frac: missing_count / l }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn n(&self) -> usize {
        self.observed_mean.nrows()
    }
}

/// Runs the solver on a window of snapshots.
pub fn soft_impute_window(window: &[MaskedSnapshot], config: &SolverConfig) -> Result<GraphonEstimate> {
    let stats = WindowStats::from_snapshots(window)?;
    soft_impute_stats(&stats, config)
}

/// Runs the solver on precomputed window statistics.
pub fn soft_impute_stats(stats: &WindowStats, config: &SolverConfig) -> Result<GraphonEstimate> {
    let n = stats.n();
    config.validate(n)?;
    let lambda = config.lambda;
    let a = config.a;
    let fro_tol = config.fro_tol.unwrap_or(1e-7 * n as f64);

    let mut m_tilde = match &config.init {
        Some(init) => init.clip(a),
        None => DenseMatrix::zeros(n),
    };
    let mut previous: Option<DenseMatrix> = None;
    let mut step_norms = Vec::new();
    let mut w = DenseMatrix::zeros(n);
    let mut masked_diff = DenseMatrix::zeros(n);

    for iter in 1..=config.max_iters {
        // W = mean over t of [Y(t) on Omega(t) + M~ off Omega(t)]
        for (((dst, obs), q), mt) in w
            .as_mut_slice()
            .iter_mut()
            .zip(stats.observed_mean.as_slice())
            .zip(stats.missing_frac.as_slice())
            .zip(m_tilde.as_slice())
        {
            *dst = obs + q * mt;
        }
        if w.check_finite().is_err() {
            return Err(Error::NanIterate { iteration: iter });
        }
        let shrunk = matrix::soft_threshold_spectrum(&w, lambda)?;
        let hat = shrunk.matrix;
        if hat.check_finite().is_err() {
            return Err(Error::NanIterate { iteration: iter });
        }

        // mean over t of (M^ - M~) restricted to the complement of Omega(t)
        let mut sup_diff = 0.0_f64;
        for (((dst, h), mt), q) in masked_diff
            .as_mut_slice()
            .iter_mut()
            .zip(hat.as_slice())
            .zip(m_tilde.as_slice())
            .zip(stats.missing_frac.as_slice())
        {
            let d = h - mt;
            sup_diff = sup_diff.max(d.abs());
            *dst = q * d;
        }
        let op_ok = sup_diff < a && matrix::op_norm_below(&masked_diff, lambda / 3.0)?;

        let step = previous.as_ref().map(|p| matrix::fro_norm(&hat.sub(p).expect("same n")));
        if let Some(s) = step {
            step_norms.push(s);
        }

        let converged_by = if op_ok {
            Some(ConvergedBy::OpNormCriterion)
        } else if step.is_some_and(|s| s < fro_tol) {
            Some(ConvergedBy::FroFallback)
        } else if iter == config.max_iters {
            Some(ConvergedBy::IterCap)
        } else {
            None
        };

        // The exit check reads the pre-truncation iterate; truncation follows.
        let truncated = hat.clip(a);
        if let Some(converged_by) = converged_by {
            let numerical_rank = shrunk.singular_values.iter().filter(|d| **d > matrix::RANK_TOL).count();
            if converged_by == ConvergedBy::IterCap {
                log::warn!("soft-impute hit the iteration cap ({iter}) with lambda = {lambda}");
            }
            return Ok(GraphonEstimate {
                m_hat: truncated,
                singular_values: shrunk.singular_values,
                numerical_rank,
                iters_used: iter,
                converged_by,
                step_norms,
            });
        }
        m_tilde = truncated;
        previous = Some(hat);
    }
    unreachable!("loop returns at the iteration cap")
}

/// Penalty level for a window of `window_len` snapshots:
/// `c_lambda * window_len^{-1/2} * (m * sqrt(n * rho) + sqrt(log(4 / alpha)))`.
pub fn lambda_for_window(window_len: usize, profile: &CalibrationProfile) -> Result<f64> {
    if window_len == 0 {
        return Err(Error::config("window length must be at least 1"));
    }
    if !(profile.alpha > 0.0 && profile.alpha < 1.0) {
        return Err(Error::config(format!("alpha must lie in (0, 1), got {}", profile.alpha)));
    }
    let noise = profile.m * (profile.n as f64 * profile.rho).sqrt() + (4.0 / profile.alpha).ln().sqrt();
    Ok(profile.c_lambda * noise / (window_len as f64).sqrt())
}
