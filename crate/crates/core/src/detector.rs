//! Online change-point detection over a stream of masked snapshots.
//!
//! At every time `t >= 2` the detector compares the completed prefix
//! `M^_{0:s}` with the completed suffix `M^_{s:t}` for each candidate split
//! `s`, and raises an alarm the first time
//! `||M^_{0:s} - M^_{s:t}||_F >= eps_{s,t}` for some `s`.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::calibration::CalibrationProfile;
use crate::completion::{
    lambda_for_window, soft_impute_stats, GraphonEstimate, MaskedSnapshot, SolverConfig, WindowStats,
    DEFAULT_MAX_ITERS,
};
use crate::error::{Error, Result};
use crate::matrix::{fro_norm, DenseMatrix};

/// Which split points are scanned at each time step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridMode {
    /// `{max(t - 2^j, 1) : j >= 0}`.
    #[default]
    Dyadic,
    /// Every `s` in `1..t`.
    Full,
}

/// Candidate split points for time `t`, ascending. Empty for `t < 2`.
pub fn candidate_grid(t: usize, mode: GridMode) -> Vec<usize> {
    if t < 2 {
        return Vec::new();
    }
    match mode {
        GridMode::Full => (1..t).collect(),
        GridMode::Dyadic => {
            let mut grid = Vec::new();
            let mut step = 1usize;
            loop {
                let s = t.saturating_sub(step).max(1);
                grid.push(s);
                if s == 1 {
                    break;
                }
                step <<= 1;
            }
            grid.reverse();
            grid
        }
    }
}

/// The `c_eps`-free factor of the threshold:
/// `sqrt(r rho n m / p^2) * (sqrt(log(s/alpha)/s) + sqrt(log(t/alpha)/(t-s)))`.
pub fn threshold_shape(s: usize, t: usize, profile: &CalibrationProfile) -> Result<f64> {
    if s == 0 || s >= t {
        return Err(Error::config(format!("split point must satisfy 1 <= s < t, got s={s}, t={t}")));
    }
    if !(profile.p > 0.0) {
        return Err(Error::config("minimum observation probability p must be positive"));
    }
    if !(profile.alpha > 0.0 && profile.alpha < 1.0) {
        return Err(Error::config(format!("alpha must lie in (0, 1), got {}", profile.alpha)));
    }
    let scale = (profile.r as f64 * profile.rho * profile.n as f64 * profile.m).sqrt() / profile.p;
    let (s, t) = (s as f64, t as f64);
    let alpha = profile.alpha;
    Ok(scale * (((s / alpha).ln() / s).sqrt() + ((t / alpha).ln() / (t - s)).sqrt()))
}

/// `eps_{s,t}`; requires a fitted `c_eps`.
pub fn threshold_eps(s: usize, t: usize, profile: &CalibrationProfile) -> Result<f64> {
    let c_eps = profile.c_eps.ok_or_else(|| Error::config("profile has no fitted c_eps"))?;
    Ok(c_eps.sqrt() * threshold_shape(s, t, profile)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluatedPair {
    pub s: usize,
    pub statistic: f64,
    pub threshold: f64,
    /// Threshold divided by `sqrt(c_eps)`.
    pub shape: f64,
}

impl EvaluatedPair {
    pub fn crosses(&self) -> bool {
        self.statistic >= self.threshold
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Alarm {
    pub t: usize,
    pub s: usize,
    pub statistic: f64,
    pub threshold: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionOutcome {
    pub t: usize,
    pub alarm: Option<Alarm>,
    /// Ascending in `s`.
    pub evaluated_pairs: Vec<EvaluatedPair>,
}

impl DetectionOutcome {
    pub fn max_statistic(&self) -> Option<f64> {
        self.evaluated_pairs.iter().map(|p| p.statistic).reduce(f64::max)
    }

    /// The pair closest to (or furthest past) its threshold.
    pub fn binding(&self) -> Option<&EvaluatedPair> {
        self.evaluated_pairs
            .iter()
            .max_by(|a, b| (a.statistic / a.threshold).total_cmp(&(b.statistic / b.threshold)))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Status {
    Monitoring,
    Alarmed(Alarm),
}

#[derive(Clone, Debug)]
pub struct DetectorOptions {
    pub max_iters: usize,
    pub fro_tol: Option<f64>,
    /// Initialize suffix and prefix solves from the nearest estimate already
    /// computed instead of zero.
    pub warm_start: bool,
}

impl Default for DetectorOptions {
    fn default() -> Self {
        DetectorOptions { max_iters: DEFAULT_MAX_ITERS, fro_tol: None, warm_start: true }
    }
}

/// Streaming detector state. Feed snapshots with [`Detector::step`].
#[derive(Clone, Debug)]
pub struct Detector {
    profile: CalibrationProfile,
    c_eps: f64,
    options: DetectorOptions,
    t: usize,
    history: Vec<MaskedSnapshot>,
    // cumulative sums over 1..=t; index 0 is the empty sum
    cum_observed: Vec<DMatrix<f64>>,
    cum_missing: Vec<DMatrix<f64>>,
    prefix_cache: BTreeMap<usize, GraphonEstimate>,
    previous_suffix: BTreeMap<usize, DenseMatrix>,
    status: Status,
}

impl Detector {
    /// Detector with the profile's fitted `c_eps`.
    pub fn new(profile: CalibrationProfile) -> Result<Self> {
        let c_eps = profile.c_eps.ok_or_else(|| Error::config("profile has no fitted c_eps"))?;
        Self::build(profile, c_eps)
    }

    /// Detector whose thresholds are infinite: it computes every statistic
    /// and never alarms. Used to replay training data during calibration.
    pub fn scan_only(profile: CalibrationProfile) -> Result<Self> {
        Self::build(profile, f64::INFINITY)
    }

    fn build(profile: CalibrationProfile, c_eps: f64) -> Result<Self> {
        profile.validate()?;
        if !(c_eps > 0.0) {
            return Err(Error::config(format!("c_eps must be positive, got {c_eps}")));
        }
        let n = profile.n;
        Ok(Detector {
            profile,
            c_eps,
            options: DetectorOptions::default(),
            t: 0,
            history: Vec::new(),
            cum_observed: vec![DMatrix::zeros(n, n)],
            cum_missing: vec![DMatrix::zeros(n, n)],
            prefix_cache: BTreeMap::new(),
            previous_suffix: BTreeMap::new(),
            status: Status::Monitoring,
        })
    }

    pub fn with_options(mut self, options: DetectorOptions) -> Self {
        self.options = options;
        self
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn status(&self) -> Status {
        self.status
    }

    pub fn profile(&self) -> &CalibrationProfile {
        &self.profile
    }

    pub fn history(&self) -> &[MaskedSnapshot] {
        &self.history
    }

    pub fn cached_prefixes(&self) -> impl Iterator<Item = usize> + '_ {
        self.prefix_cache.keys().copied()
    }

    /// Ingests the snapshot for time `t + 1` and scans the candidate grid.
    pub fn step(&mut self, snapshot: MaskedSnapshot) -> Result<DetectionOutcome> {
        if let Status::Alarmed(alarm) = self.status {
            return Err(Error::AlreadyAlarmed { at: alarm.t });
        }
        if snapshot.t() != self.t + 1 {
            return Err(Error::NonContiguous { expected: self.t + 1, found: snapshot.t() });
        }
        if snapshot.n() != self.profile.n {
            return Err(Error::DimensionMismatch { expected: self.profile.n, found: snapshot.n() });
        }

        let n = self.profile.n;
        let mut observed = self.cum_observed[self.t].clone();
        observed += snapshot.y().as_inner();
        let mut missing = self.cum_missing[self.t].clone();
        let omega = snapshot.omega();
        for j in 0..n {
            for i in 0..n {
                if !omega.get(i, j) {
                    missing[(i, j)] += 1.0;
                }
            }
        }
        self.cum_observed.push(observed);
        self.cum_missing.push(missing);
        self.history.push(snapshot);
        self.t += 1;
        let t = self.t;

        let mut pairs = Vec::new();
        let mut suffixes = BTreeMap::new();
        for s in candidate_grid(t, self.profile.grid_mode) {
            let prefix = self.prefix_estimate(s)?.m_hat.clone();
            let suffix = self.solve_window(s, t, nearest(&self.previous_suffix, s))?;
            let statistic = fro_norm(&prefix.sub(&suffix.m_hat)?);
            let shape = threshold_shape(s, t, &self.profile)?;
            pairs.push(EvaluatedPair { s, statistic, threshold: self.c_eps.sqrt() * shape, shape });
            suffixes.insert(s, suffix.m_hat);
        }
        self.previous_suffix = suffixes;

        // smallest crossing s: the longest suffix window
        let alarm = pairs
            .iter()
            .find(|p| p.crosses())
            .map(|p| Alarm { t, s: p.s, statistic: p.statistic, threshold: p.threshold });
        if let Some(a) = alarm {
            self.status = Status::Alarmed(a);
        }
        Ok(DetectionOutcome { t, alarm, evaluated_pairs: pairs })
    }

    fn prefix_estimate(&mut self, s: usize) -> Result<&GraphonEstimate> {
        if !self.prefix_cache.contains_key(&s) {
            let init = nearest(&self.prefix_cache, s).map(|e| e.m_hat.clone());
            let est = self.solve_window(0, s, init.as_ref())?;
            self.prefix_cache.insert(s, est);
        }
        Ok(&self.prefix_cache[&s])
    }

    /// Completes the window of snapshots `start+1 ..= end`.
    fn solve_window(&self, start: usize, end: usize, init: Option<&DenseMatrix>) -> Result<GraphonEstimate> {
        let len = end - start;
        let stats = WindowStats::from_sums(
            len,
            &(&self.cum_observed[end] - &self.cum_observed[start]),
            &(&self.cum_missing[end] - &self.cum_missing[start]),
        );
        let mut config = SolverConfig::new(lambda_for_window(len, &self.profile)?)
            .with_truncation(self.profile.a)
            .with_max_iters(self.options.max_iters);
        if let Some(tol) = self.options.fro_tol {
            config = config.with_fro_tol(tol);
        }
        if let (true, Some(init)) = (self.options.warm_start, init) {
            config = config.with_init(init.clone());
        }
        soft_impute_stats(&stats, &config)
    }
}

// Entry with the key closest to `s`, preferring the smaller key on ties.
fn nearest<V>(map: &BTreeMap<usize, V>, s: usize) -> Option<&V> {
    let below = map.range(..=s).next_back();
    let above = map.range(s..).next();
    match (below, above) {
        (Some((kb, vb)), Some((ka, va))) => Some(if s - kb <= ka - s { vb } else { va }),
        (Some((_, v)), None) | (None, Some((_, v))) => Some(v),
        (None, None) => None,
    }
}

/// Result of replaying a whole sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OfflineRun {
    pub alarm: Option<Alarm>,
    /// One outcome per ingested time step, up to and including the alarm.
    pub trace: Vec<DetectionOutcome>,
}

impl OfflineRun {
    pub fn alarm_time(&self) -> Option<usize> {
        self.alarm.map(|a| a.t)
    }
}

/// Folds [`Detector::step`] over `sequence`, stopping at the first alarm.
pub fn run_offline(sequence: &[MaskedSnapshot], profile: &CalibrationProfile) -> Result<OfflineRun> {
    run_with(Detector::new(profile.clone())?, sequence)
}

pub fn run_with(mut detector: Detector, sequence: &[MaskedSnapshot]) -> Result<OfflineRun> {
    if sequence.is_empty() {
        return Err(Error::EmptyWindow);
    }
    let mut trace = Vec::with_capacity(sequence.len());
    for snapshot in sequence {
        let outcome = detector.step(snapshot.clone())?;
        let alarm = outcome.alarm;
        trace.push(outcome);
        if alarm.is_some() {
            return Ok(OfflineRun { alarm, trace });
        }
    }
    Ok(OfflineRun { alarm: None, trace })
}
