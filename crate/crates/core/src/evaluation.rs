//! Repetition harness: detection delay and proportion of false alarms over
//! seeded replications of a scenario.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::calibration::{calibrate, CalibrationProfile, DEFAULT_PERMUTATIONS};
use crate::detector::{run_offline, GridMode};
use crate::error::{Error, Result};
use crate::simulation::{generate_stream_with, generate_training, CounterRng, DrawKind, ScenarioSpec};

pub const CSV_HEADER: &str = "scenario,pi,alpha,n_runs,mean_delay,delay_stderr,pfa,censored";
pub const DEFAULT_T_TRAIN: usize = 200;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    /// Alarm before the change (or any alarm on a change-free stream).
    FalseAlarm,
    /// Alarm at or after the change.
    Detected,
    /// No alarm by `T`; the alarm time is taken as `T`.
    Censored,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub rep: usize,
    pub seed: u64,
    pub spec_hash: String,
    pub alarm_time: Option<usize>,
    pub delta: Option<usize>,
    pub total_t: usize,
    pub outcome: Outcome,
    /// `min(T, alarm) - delta` when that is non-negative.
    pub delay: Option<usize>,
}

impl RunRecord {
    pub fn classify(
        rep: usize,
        seed: u64,
        spec_hash: &str,
        alarm_time: Option<usize>,
        delta: Option<usize>,
        total_t: usize,
    ) -> Self {
        let outcome = match (alarm_time, delta) {
            (None, _) => Outcome::Censored,
            (Some(_), None) => Outcome::FalseAlarm,
            (Some(a), Some(d)) if a < d => Outcome::FalseAlarm,
            (Some(_), Some(_)) => Outcome::Detected,
        };
        let delay = delta.and_then(|d| alarm_time.unwrap_or(total_t).min(total_t).checked_sub(d));
        RunRecord {
            rep,
            seed,
            spec_hash: spec_hash.to_string(),
            alarm_time,
            delta,
            total_t,
            outcome,
            delay,
        }
    }

    pub fn false_alarm(&self) -> bool {
        self.outcome == Outcome::FalseAlarm
    }

    pub fn censored(&self) -> bool {
        self.outcome == Outcome::Censored
    }
}

/// A repetition that could not be completed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvalidRun {
    pub rep: usize,
    pub seed: u64,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub scenario: String,
    pub pi: f64,
    pub alpha: f64,
    pub n_runs: usize,
    /// Mean of `min(T, alarm) - delta` over runs where it is non-negative.
    pub mean_delay: Option<f64>,
    pub delay_stderr: Option<f64>,
    pub pfa: f64,
    pub censored: usize,
    /// Repetitions excluded because calibration or detection failed.
    #[serde(default)]
    pub invalid: usize,
}

/// Aggregates valid runs into one row. The result does not depend on the
/// order of `records`.
pub fn aggregate(scenario: &str, pi: f64, alpha: f64, records: &[RunRecord], invalid: usize) -> MetricRow {
    let n_runs = records.len();
    let mut delays: Vec<f64> = records.iter().filter_map(|r| r.delay.map(|d| d as f64)).collect();
    delays.sort_by(f64::total_cmp);
    let k = delays.len() as f64;
    let mean_delay = (!delays.is_empty()).then(|| delays.iter().sum::<f64>() / k);
    let delay_stderr = mean_delay.filter(|_| delays.len() >= 2).map(|mean| {
        let ss: f64 = delays.iter().map(|d| (d - mean).powi(2)).sum();
        (ss / (k - 1.0)).sqrt() / k.sqrt()
    });
    let false_alarms = records.iter().filter(|r| r.false_alarm()).count();
    MetricRow {
        scenario: scenario.to_string(),
        pi,
        alpha,
        n_runs,
        mean_delay,
        delay_stderr,
        pfa: if n_runs == 0 { 0.0 } else { false_alarms as f64 / n_runs as f64 },
        censored: records.iter().filter(|r| r.censored()).count(),
        invalid,
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricTable {
    pub rows: Vec<MetricRow>,
}

impl MetricTable {
    pub fn push(&mut self, row: MetricRow) {
        self.rows.push(row);
    }

    /// Sorts rows by `(scenario, pi, alpha)`.
    pub fn sort(&mut self) {
        self.rows.sort_by(|a, b| {
            a.scenario
                .cmp(&b.scenario)
                .then(a.pi.total_cmp(&b.pi))
                .then(a.alpha.total_cmp(&b.alpha))
        });
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
        w.write_record(CSV_HEADER.split(','))?;
        for r in &self.rows {
            let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
            w.write_record([
                r.scenario.clone(),
                r.pi.to_string(),
                r.alpha.to_string(),
                r.n_runs.to_string(),
                opt(r.mean_delay),
                opt(r.delay_stderr),
                r.pfa.to_string(),
                r.censored.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Where each repetition's calibration profile comes from.
#[derive(Clone, Debug, Default, PartialEq)]
pub enum ProfileSource {
    /// Fresh training stream and calibration for every repetition.
    #[default]
    CalibratePerRun,
    /// One calibration shared by all repetitions.
    Shared,
    /// A given, already calibrated profile.
    Fixed(CalibrationProfile),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub alpha: f64,
    pub t_train: usize,
    pub permutations: usize,
    pub grid_mode: GridMode,
    pub profile_source: ProfileSource,
    /// Worker threads; `None` uses the global rayon pool.
    pub workers: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            alpha: 0.05,
            t_train: DEFAULT_T_TRAIN,
            permutations: DEFAULT_PERMUTATIONS,
            grid_mode: GridMode::Dyadic,
            profile_source: ProfileSource::CalibratePerRun,
            workers: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub row: MetricRow,
    pub records: Vec<RunRecord>,
    pub invalid: Vec<InvalidRun>,
    /// The shared or fixed profile, if one was used.
    pub shared_profile: Option<CalibrationProfile>,
}

/// First 16 hex digits of the SHA-256 of the spec's JSON form.
pub fn spec_hash(spec: &ScenarioSpec) -> Result<String> {
    let digest = Sha256::digest(serde_json::to_vec(spec)?);
    Ok(digest.iter().take(8).map(|b| format!("{b:02x}")).collect())
}

struct RepSeeds {
    sample: u64,
    training: u64,
    permutation: u64,
}

fn rep_seeds(base_seed: u64, rep: u64) -> RepSeeds {
    let root = CounterRng::new(base_seed);
    RepSeeds {
        sample: root.derive(DrawKind::ScenarioSeed, rep),
        training: root.derive(DrawKind::TrainingSeed, rep),
        permutation: root.derive(DrawKind::PermutationSeed, rep),
    }
}

fn calibrate_for(spec: &ScenarioSpec, config: &ExperimentConfig, training_seed: u64, perm_seed: u64) -> Result<CalibrationProfile> {
    let training = generate_training(spec, config.t_train, training_seed)?;
    let (profile, _) = calibrate(&training, config.alpha, config.permutations, perm_seed, config.grid_mode)?;
    Ok(profile)
}

/// Runs `n_reps` seeded repetitions of `spec` and aggregates them.
///
/// The graphons come from `spec.seed`; every repetition draws its own test
/// stream (and, when calibrating per run, its own training stream and
/// permutations) from seeds derived from `base_seed` and the repetition index.
pub fn run_experiment(
    spec: &ScenarioSpec,
    n_reps: usize,
    config: &ExperimentConfig,
    base_seed: u64,
) -> Result<ExperimentResult> {
    if n_reps == 0 {
        return Err(Error::config("n_reps must be at least 1"));
    }
    if !(config.alpha > 0.0 && config.alpha < 1.0) {
        return Err(Error::config(format!("alpha must lie in (0, 1), got {}", config.alpha)));
    }
    spec.validate()?;
    let hash = spec_hash(spec)?;

    let shared = match &config.profile_source {
        ProfileSource::CalibratePerRun => None,
        ProfileSource::Shared => {
            // Index n_reps is never used by a repetition.
            let seeds = rep_seeds(base_seed, n_reps as u64);
            Some(calibrate_for(spec, config, seeds.training, seeds.permutation)?)
        }
        ProfileSource::Fixed(p) => {
            if p.n != spec.n {
                return Err(Error::DimensionMismatch { expected: spec.n, found: p.n });
            }
            if p.c_eps.is_none() {
                return Err(Error::config("fixed profile has no c_eps"));
            }
            Some(p.clone())
        }
    };

    let one = |rep: usize| -> std::result::Result<RunRecord, InvalidRun> {
        let seeds = rep_seeds(base_seed, rep as u64);
        let fail = |e: Error| InvalidRun { rep, seed: seeds.sample, reason: e.to_string() };
        let profile = match &shared {
            Some(p) => p.clone(),
            None => calibrate_for(spec, config, seeds.training, seeds.permutation).map_err(fail)?,
        };
        let stream = generate_stream_with(spec, seeds.sample).map_err(fail)?;
        let run = run_offline(&stream.snapshots, &profile).map_err(fail)?;
        log::debug!("{} rep {rep}: alarm {:?}", spec.name(), run.alarm_time());
        Ok(RunRecord::classify(rep, seeds.sample, &hash, run.alarm_time(), spec.delta, spec.total_t))
    };

    let results: Vec<_> = match config.workers {
        Some(w) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(w.max(1))
                .build()
                .map_err(|e| Error::config(format!("cannot build worker pool: {e}")))?;
            pool.install(|| (0..n_reps).into_par_iter().map(one).collect())
        }
        None => (0..n_reps).into_par_iter().map(one).collect(),
    };

    let mut records = Vec::with_capacity(n_reps);
    let mut invalid = Vec::new();
    for r in results {
        match r {
            Ok(rec) => records.push(rec),
            Err(bad) => {
                log::warn!("repetition {} excluded: {}", bad.rep, bad.reason);
                invalid.push(bad);
            }
        }
    }
    let row = aggregate(spec.name(), spec.pi, config.alpha, &records, invalid.len());
    Ok(ExperimentResult { row, records, invalid, shared_profile: shared })
}
