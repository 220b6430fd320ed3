//! Tuning the detector from a change-free training prefix.
//!
//! [`estimate_profile`] fills in the model parameters that enter the penalty
//! and threshold formulas. [`fit_ceps`] then replays the detector on random
//! time-permutations of the training data and picks the threshold constant
//! so that at most a fraction `alpha` of the replays would have alarmed.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::completion::{lambda_for_window, soft_impute_window, MaskedSnapshot, SolverConfig};
use crate::detector::Detector;
pub use crate::detector::GridMode;
use crate::error::{Error, Result};

/// Lower bound on a fitted `c_eps` (reached when every replayed statistic is zero).
pub const CEPS_FLOOR: f64 = 1e-6;
pub const DEFAULT_PERMUTATIONS: usize = 100;
pub const DEFAULT_C_LAMBDA: f64 = 2.0 / 3.0;

/// Parameters instantiating the penalty and threshold formulas.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationProfile {
    pub n: usize,
    /// Entrywise sparsity.
    pub rho: f64,
    /// Minimum observation probability.
    pub p: f64,
    /// Maximum observation probability.
    pub m: f64,
    pub r: usize,
    pub alpha: f64,
    pub c_lambda: f64,
    pub c_eps: Option<f64>,
    /// Solver truncation level.
    pub a: f64,
    pub grid_mode: GridMode,
}

impl CalibrationProfile {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.n == 0 {
            return fail("n must be positive".into());
        }
        if !(self.p > 0.0 && self.p <= self.m && self.m <= 1.0) {
            return fail(format!("need 0 < p <= m <= 1, got p={}, m={}", self.p, self.m));
        }
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return fail(format!("rho must lie in (0, 1], got {}", self.rho));
        }
        if self.r == 0 {
            return fail("rank must be at least 1".into());
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return fail(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        if !(self.c_lambda > 0.0 && self.c_lambda.is_finite()) {
            return fail(format!("c_lambda must be positive, got {}", self.c_lambda));
        }
        if !(self.a > 0.0 && self.a <= 1.0) {
            return fail(format!("a must lie in (0, 1], got {}", self.a));
        }
        if let Some(c) = self.c_eps {
            if !(c > 0.0 && c.is_finite()) {
                return fail(format!("c_eps must be positive, got {c}"));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let profile: CalibrationProfile = serde_json::from_str(s)?;
        profile.validate()?;
        Ok(profile)
    }
}

/// Type-1 (inverse empirical CDF) quantile of already sorted values:
/// the `ceil(q * N)`-th order statistic.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of an empty sample");
    // the slack absorbs representation error in products such as 0.95 * 100
    let rank = (q * sorted.len() as f64 - 1e-9).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    quantile_sorted(&sorted, q)
}

/// Estimates `rho`, `p`, `m` and `r` from change-free training data.
///
/// The penalty needs `rho` and `m` before they are known, so the training
/// window is completed twice: first with `rho = m = 1`, then with the
/// estimates from the first pass. `c_eps` is left unset.
pub fn estimate_profile(training: &[MaskedSnapshot], alpha: f64) -> Result<CalibrationProfile> {
    estimate_profile_with(training, alpha, DEFAULT_C_LAMBDA)
}

/// [`estimate_profile`] with a non-default penalty constant.
pub fn estimate_profile_with(training: &[MaskedSnapshot], alpha: f64, c_lambda: f64) -> Result<CalibrationProfile> {
    if !(c_lambda > 0.0 && c_lambda.is_finite()) {
        return Err(Error::config(format!("c_lambda must be positive, got {c_lambda}")));
    }
    if training.len() < 2 {
        return Err(Error::Calibration(format!(
            "need at least 2 training snapshots, got {}",
            training.len()
        )));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::config(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let n = training[0].n();
    let len = training.len();

    let mut observed_count = vec![0usize; n * n];
    for snap in training {
        if snap.n() != n {
            return Err(Error::DimensionMismatch { expected: n, found: snap.n() });
        }
        for i in 0..n {
            for j in 0..n {
                if snap.omega().get(i, j) {
                    observed_count[i * n + j] += 1;
                }
            }
        }
    }
    let mut freq: Vec<f64> = observed_count.iter().map(|&c| c as f64 / len as f64).collect();
    freq.sort_by(f64::total_cmp);
    let m = quantile_sorted(&freq, 0.95);
    let p = quantile_sorted(&freq, 0.05);
    if p <= 0.0 {
        let never = freq.iter().filter(|f| **f == 0.0).count();
        return Err(Error::Calibration(format!(
            "estimated minimum observation probability is 0 ({never} of {} entries never observed)",
            n * n
        )));
    }

    let mut profile = CalibrationProfile {
        n,
        rho: 1.0,
        p: p.min(1.0),
        m: 1.0,
        r: 1,
        alpha,
        c_lambda,
        c_eps: None,
        a: 1.0,
        grid_mode: GridMode::Dyadic,
    };
    let first = complete_training(training, &profile)?;
    profile.rho = sparsity(&first.0)?;
    profile.m = m;
    let (entries, rank) = complete_training(training, &profile)?;
    profile.rho = sparsity(&entries)?;
    profile.r = if rank == 0 {
        log::warn!("training estimate has rank 0; using r = 1");
        1
    } else {
        rank
    };
    profile.validate()?;
    Ok(profile)
}

fn complete_training(training: &[MaskedSnapshot], profile: &CalibrationProfile) -> Result<(Vec<f64>, usize)> {
    let lambda = lambda_for_window(training.len(), profile)?;
    let est = soft_impute_window(training, &SolverConfig::new(lambda).with_truncation(profile.a))?;
    Ok((est.m_hat.as_slice().to_vec(), est.numerical_rank))
}

fn sparsity(entries: &[f64]) -> Result<f64> {
    let rho = quantile(entries, 0.95);
    if rho <= 0.0 {
        return Err(Error::Calibration(
            "95% quantile of the completed training matrix is not positive".into(),
        ));
    }
    Ok(rho.min(1.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PermutationReport {
    pub k: usize,
    /// Per permutation, in permutation order: the smallest `c_eps` at which
    /// that replay would still alarm, `max_{s,t} (D_{s,t} / shape_{s,t})^2`.
    pub per_perm_required_ceps: Vec<f64>,
    pub chosen_ceps: f64,
    /// Fraction of replays with `required >= chosen_ceps`.
    pub crossing_rate_at_chosen: f64,
    /// True when every replayed statistic was zero and the floor was used.
    pub floored: bool,
}

/// Time permutation `index` of `0..len`, drawn from its own stream of the
/// root seed with a Fisher-Yates shuffle.
pub fn permutation(len: usize, seed: u64, index: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut rng);
    order
}

/// Training snapshots reordered by `order` and re-indexed `1..=len`.
pub fn permuted(training: &[MaskedSnapshot], order: &[usize]) -> Vec<MaskedSnapshot> {
    order.iter().enumerate().map(|(t, &idx)| training[idx].with_t(t + 1)).collect()
}

/// Largest `(D_{s,t} / shape_{s,t})^2` over every pair the detector evaluates.
pub fn required_ceps(sequence: &[MaskedSnapshot], profile: &CalibrationProfile) -> Result<f64> {
    let mut detector = Detector::scan_only(profile.clone())?;
    let mut worst = 0.0_f64;
    for snap in sequence {
        let outcome = detector.step(snap.clone())?;
        for pair in &outcome.evaluated_pairs {
            worst = worst.max((pair.statistic / pair.shape).powi(2));
        }
    }
    Ok(worst)
}

/// Chooses `c_eps` from `k` permutation replays of the training data.
///
/// The choice sits just above the `ceil((1 - alpha) k)`-th order statistic of
/// the per-permutation requirements, so at most `floor(alpha k)` replays
/// cross (a replay exactly at the chosen value would count as crossing).
pub fn fit_ceps(
    training: &[MaskedSnapshot],
    profile: &CalibrationProfile,
    k: usize,
    seed: u64,
) -> Result<PermutationReport> {
    if k == 0 {
        return Err(Error::config("number of permutations must be at least 1"));
    }
    if training.len() < 2 {
        return Err(Error::Calibration("need at least 2 training snapshots".into()));
    }
    let mut scan_profile = profile.clone();
    scan_profile.c_eps = None;
    scan_profile.validate()?;

    let required: Vec<f64> = (0..k)
        .into_par_iter()
        .map(|idx| {
            let order = permutation(training.len(), seed, idx);
            required_ceps(&permuted(training, &order), &scan_profile)
        })
        .collect::<Result<_>>()?;

    Ok(choose_ceps(required, profile.alpha))
}

pub(crate) fn choose_ceps(required: Vec<f64>, alpha: f64) -> PermutationReport {
    let k = required.len();
    let mut sorted = required.clone();
    sorted.sort_by(f64::total_cmp);
    let order_stat = quantile_sorted(&sorted, 1.0 - alpha);
    let above = order_stat * (1.0 + 1e-9);
    let floored = above < CEPS_FLOOR;
    if floored {
        log::warn!("all permutation statistics are (near) zero; c_eps floored at {CEPS_FLOOR}");
    }
    let chosen = above.max(CEPS_FLOOR);
    let crossings = required.iter().filter(|r| **r >= chosen).count();
    PermutationReport {
        k,
        per_perm_required_ceps: required,
        chosen_ceps: chosen,
        crossing_rate_at_chosen: crossings as f64 / k as f64,
        floored,
    }
}

/// `estimate_profile` followed by `fit_ceps`; returns the completed profile.
pub fn calibrate(
    training: &[MaskedSnapshot],
    alpha: f64,
    k: usize,
    seed: u64,
    grid_mode: GridMode,
) -> Result<(CalibrationProfile, PermutationReport)> {
    let mut profile = estimate_profile(training, alpha)?;
    profile.grid_mode = grid_mode;
    let report = fit_ceps(training, &profile, k, seed)?;
    profile.c_eps = Some(report.chosen_ceps);
    Ok((profile, report))
}
