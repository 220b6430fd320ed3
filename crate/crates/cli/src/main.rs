use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context};
use clap::{CommandFactory, Parser, Subcommand, ValueEnum};
use netcp_core::evaluation::InvalidRun;
use netcp_core::stream_io::{read_truth, truth_sidecar_path, write_truth};
use netcp_core::{
    estimate_profile_with, fit_ceps, generate_stream, generate_training, read_stream_file, run_experiment,
    write_stream_file, Alarm, CalibrationProfile, CounterRng, Detector, DetectorOptions, DrawKind, Emission,
    ExperimentConfig, GridMode, GroundTruth, MetricRow, MetricTable, Outcome, ProfileSource, RunRecord, ScenarioSpec,
    DEFAULT_C_LAMBDA, DEFAULT_PERMUTATIONS,
};

mod follow;

const EXIT_ALARM: u8 = 3;
const EXIT_CALIBRATION: u8 = 4;

#[derive(Parser, Debug)]
#[command(name = "netcp", version, about = "Online change-point detection for networks with missing edges")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample a stream from a scenario spec.
    Simulate {
        spec: PathBuf,
        out: PathBuf,
        /// Replaces the seed in the spec file.
        #[arg(long, env = "NETCP_SEED")]
        seed: Option<u64>,
        /// Write a change-free stream of this length from the pre-change graphon instead.
        #[arg(long, value_name = "LEN")]
        training: Option<usize>,
        /// Also write unobserved entries.
        #[arg(long)]
        full: bool,
    },
    /// Fit a calibration profile on a change-free training stream.
    Calibrate {
        train: PathBuf,
        out: PathBuf,
        #[arg(long, default_value_t = 0.05, value_parser = parse_alpha)]
        alpha: f64,
        /// Number of time permutations.
        #[arg(short, long, default_value_t = DEFAULT_PERMUTATIONS)]
        k: usize,
        #[arg(long, env = "NETCP_SEED", default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = GridArg::Dyadic)]
        grid_mode: GridArg,
        #[arg(long, default_value_t = DEFAULT_C_LAMBDA)]
        c_lambda: f64,
    },
    /// Run the detector over a stream.
    Detect {
        stream: PathBuf,
        profile: PathBuf,
        /// Keep reading records appended to the stream file.
        #[arg(long)]
        follow: bool,
        #[arg(long, default_value_t = 200, value_name = "MS")]
        poll_ms: u64,
        /// In follow mode, stop after this long without new records.
        #[arg(long, default_value_t = 5000, value_name = "MS")]
        idle_timeout_ms: u64,
        /// Replaces the profile's threshold constant.
        #[arg(long)]
        c_eps: Option<f64>,
        #[arg(long)]
        max_iters: Option<usize>,
    },
    /// Run repeated experiments for every spec, pi and alpha and write a metric table.
    Benchmark {
        spec_dir: PathBuf,
        #[arg(long, value_delimiter = ',', required = true, value_parser = parse_alpha)]
        alpha: Vec<f64>,
        #[arg(long, value_delimiter = ',', required = true)]
        pi: Vec<f64>,
        #[arg(long, default_value_t = 100)]
        n_reps: usize,
        #[arg(long)]
        out: PathBuf,
        /// Also write the table as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long, env = "NETCP_SEED", default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = netcp_core::evaluation::DEFAULT_T_TRAIN)]
        t_train: usize,
        #[arg(short, long, default_value_t = DEFAULT_PERMUTATIONS)]
        k: usize,
        /// Calibrate once per setting instead of once per repetition.
        #[arg(long)]
        shared_profile: bool,
        #[arg(long, value_enum, default_value_t = GridArg::Dyadic)]
        grid_mode: GridArg,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum GridArg {
    Dyadic,
    Full,
}

impl From<GridArg> for GridMode {
    fn from(g: GridArg) -> Self {
        match g {
            GridArg::Dyadic => GridMode::Dyadic,
            GridArg::Full => GridMode::Full,
        }
    }
}

fn parse_alpha(s: &str) -> Result<f64, String> {
    let a: f64 = s.parse().map_err(|_| format!("'{s}' is not a number"))?;
    if a > 0.0 && a < 1.0 {
        Ok(a)
    } else {
        Err(format!("alpha must lie in (0, 1), got {a}"))
    }
}

fn usage_error(msg: impl std::fmt::Display) -> ! {
    Cli::command().error(clap::error::ErrorKind::ValueValidation, msg).exit()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            let calibration = err
                .chain()
                .any(|e| matches!(e.downcast_ref::<netcp_core::Error>(), Some(netcp_core::Error::Calibration(_))));
            ExitCode::from(if calibration { EXIT_CALIBRATION } else { 1 })
        }
    }
}

fn run(command: Command) -> anyhow::Result<u8> {
    match command {
        Command::Simulate { spec, out, seed, training, full } => simulate(&spec, &out, seed, training, full),
        Command::Calibrate { train, out, alpha, k, seed, grid_mode, c_lambda } => {
            calibrate(&train, &out, alpha, k, seed, grid_mode.into(), c_lambda)
        }
        Command::Detect { stream, profile, follow, poll_ms, idle_timeout_ms, c_eps, max_iters } => {
            let mut profile = read_profile(&profile)?;
            if let Some(c) = c_eps {
                if !(c > 0.0) {
                    usage_error(format!("--c-eps must be positive, got {c}"));
                }
                profile.c_eps = Some(c);
            }
            let mut options = DetectorOptions::default();
            if let Some(m) = max_iters {
                options.max_iters = m;
            }
            let detector = Detector::new(profile)?.with_options(options);
            let truth = load_truth(&stream)?;
            let report = if follow {
                let poll = Duration::from_millis(poll_ms);
                follow::follow(&stream, detector, poll, Duration::from_millis(idle_timeout_ms))?
            } else {
                batch(&stream, detector)?
            };
            Ok(print_report(&report, truth.as_ref()))
        }
        Command::Benchmark {
            spec_dir,
            alpha,
            pi,
            n_reps,
            out,
            json,
            workers,
            seed,
            t_train,
            k,
            shared_profile,
            grid_mode,
        } => {
            if pi.is_empty() || alpha.is_empty() {
                usage_error("--pi and --alpha need at least one value");
            }
            if let Some(bad) = pi.iter().find(|p| !(**p > 0.0 && **p <= 1.0)) {
                usage_error(format!("pi must lie in (0, 1], got {bad}"));
            }
            if n_reps == 0 {
                usage_error("--n-reps must be at least 1");
            }
            let config = ExperimentConfig {
                alpha: alpha[0],
                t_train,
                permutations: k,
                grid_mode: grid_mode.into(),
                profile_source: if shared_profile { ProfileSource::Shared } else { ProfileSource::CalibratePerRun },
                workers,
            };
            benchmark(&spec_dir, &alpha, &pi, n_reps, &out, json.as_deref(), config, seed)
        }
    }
}

fn read_spec(path: &Path) -> anyhow::Result<ScenarioSpec> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    ScenarioSpec::from_json(&text).with_context(|| format!("parsing spec {}", path.display()))
}

fn read_profile(path: &Path) -> anyhow::Result<CalibrationProfile> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    CalibrationProfile::from_json(&text).with_context(|| format!("parsing profile {}", path.display()))
}

fn simulate(spec_path: &Path, out: &Path, seed: Option<u64>, training: Option<usize>, full: bool) -> anyhow::Result<u8> {
    let mut spec = read_spec(spec_path)?;
    if let Some(s) = seed {
        spec.seed = s;
    }
    let emission = if full { Emission::Full } else { Emission::Compact };
    let (snapshots, truth) = match training {
        Some(0) => usage_error("--training needs a positive length"),
        Some(len) => {
            let sample_seed = CounterRng::new(spec.seed).derive(DrawKind::TrainingSeed, 0);
            let snaps = generate_training(&spec, len, sample_seed)?;
            let mut nc = spec.clone();
            nc.delta = None;
            nc.total_t = len;
            let truth = generate_stream(&nc)?.truth;
            (snaps, truth)
        }
        None => {
            let g = generate_stream(&spec)?;
            (g.snapshots, g.truth)
        }
    };
    write_stream_file(out, &snapshots, spec.self_loops, emission)
        .with_context(|| format!("writing {}", out.display()))?;
    write_truth(&truth_sidecar_path(out), &truth)?;
    eprintln!(
        "wrote {} snapshots of n={} to {} (delta={:?}, kappa={:.4})",
        snapshots.len(),
        spec.n,
        out.display(),
        truth.delta,
        truth.kappa
    );
    Ok(0)
}

fn calibrate(
    train: &Path,
    out: &Path,
    alpha: f64,
    k: usize,
    seed: u64,
    grid_mode: GridMode,
    c_lambda: f64,
) -> anyhow::Result<u8> {
    if k == 0 {
        usage_error("-k must be at least 1");
    }
    if !(c_lambda > 0.0 && c_lambda.is_finite()) {
        usage_error(format!("--c-lambda must be positive, got {c_lambda}"));
    }
    let (_, snapshots) = read_stream_file(train).with_context(|| format!("reading {}", train.display()))?;
    let mut profile = estimate_profile_with(&snapshots, alpha, c_lambda)?;
    profile.grid_mode = grid_mode;
    let report = fit_ceps(&snapshots, &profile, k, seed)?;
    profile.c_eps = Some(report.chosen_ceps);
    fs::write(out, profile.to_json()? + "\n").with_context(|| format!("writing {}", out.display()))?;
    eprintln!(
        "rho={:.4} p={:.4} m={:.4} r={} c_eps={:.6e} ({} permutations, crossing rate {:.3})",
        profile.rho, profile.p, profile.m, profile.r, report.chosen_ceps, report.k, report.crossing_rate_at_chosen
    );
    Ok(0)
}

/// What a detection run ended with.
#[derive(Debug)]
pub(crate) struct Report {
    pub alarm: Option<Alarm>,
    /// Last time step processed.
    pub t: usize,
}

fn batch(stream: &Path, mut detector: Detector) -> anyhow::Result<Report> {
    let (header, snapshots) = read_stream_file(stream).with_context(|| format!("reading {}", stream.display()))?;
    if header.n != detector.profile().n {
        bail!("stream has n={} but the profile was fitted for n={}", header.n, detector.profile().n);
    }
    for snap in snapshots {
        let outcome = detector.step(snap)?;
        if let Some(alarm) = outcome.alarm {
            return Ok(Report { alarm: Some(alarm), t: outcome.t });
        }
    }
    Ok(Report { alarm: None, t: detector.t() })
}

fn load_truth(stream: &Path) -> anyhow::Result<Option<GroundTruth>> {
    let path = truth_sidecar_path(stream);
    if !path.exists() {
        return Ok(None);
    }
    Ok(Some(read_truth(&path).with_context(|| format!("reading {}", path.display()))?))
}

fn print_report(report: &Report, truth: Option<&GroundTruth>) -> u8 {
    match report.alarm {
        Some(a) => println!("ALARM t={} s={} stat={:.6} thresh={:.6}", a.t, a.s, a.statistic, a.threshold),
        None => println!("NO-ALARM t_max={}", report.t),
    }
    if let Some(truth) = truth {
        let rec = RunRecord::classify(0, 0, "", report.alarm.map(|a| a.t), truth.delta, report.t);
        let delta = truth.delta.map_or("none".to_string(), |d| d.to_string());
        match (rec.outcome, rec.delay) {
            (Outcome::FalseAlarm, _) => println!("FALSE-ALARM delta={delta}"),
            (Outcome::Detected, Some(d)) => println!("DETECTED delta={delta} delay={d}"),
            (Outcome::Censored, Some(d)) => println!("CENSORED delta={delta} delay={d}"),
            (_, None) => println!("NO-CHANGE delta={delta}"),
        }
    }
    if report.alarm.is_some() {
        EXIT_ALARM
    } else {
        0
    }
}

#[allow(clippy::too_many_arguments)]
fn benchmark(
    spec_dir: &Path,
    alphas: &[f64],
    pis: &[f64],
    n_reps: usize,
    out: &Path,
    json: Option<&Path>,
    base: ExperimentConfig,
    seed: u64,
) -> anyhow::Result<u8> {
    let mut spec_paths: Vec<PathBuf> = fs::read_dir(spec_dir)
        .with_context(|| format!("reading {}", spec_dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    spec_paths.sort();
    if spec_paths.is_empty() {
        bail!("no *.json scenario specs in {}", spec_dir.display());
    }
    let specs: Vec<ScenarioSpec> = spec_paths.iter().map(|p| read_spec(p)).collect::<anyhow::Result<_>>()?;

    let total = specs.len() * pis.len() * alphas.len();
    let mut table = MetricTable::default();
    let mut done = 0;
    for spec in &specs {
        for &pi in pis {
            for &alpha in alphas {
                done += 1;
                let mut spec = spec.clone();
                spec.pi = pi;
                let config = ExperimentConfig { alpha, ..base.clone() };
                eprintln!("[{done}/{total}] {} pi={pi} alpha={alpha}: {n_reps} repetitions", spec.name());
                let row = match run_experiment(&spec, n_reps, &config, seed) {
                    Ok(res) => {
                        report_invalid(&res.invalid);
                        res.row
                    }
                    Err(err) => {
                        eprintln!("  failed: {err}");
                        MetricRow {
                            scenario: spec.name().to_string(),
                            pi,
                            alpha,
                            n_runs: 0,
                            mean_delay: None,
                            delay_stderr: None,
                            pfa: 0.0,
                            censored: 0,
                            invalid: n_reps,
                        }
                    }
                };
                eprintln!(
                    "  n_runs={} mean_delay={:?} pfa={} censored={}",
                    row.n_runs, row.mean_delay, row.pfa, row.censored
                );
                table.push(row);
            }
        }
    }
    table.sort();
    let file = fs::File::create(out).with_context(|| format!("creating {}", out.display()))?;
    table.write_csv(file)?;
    if let Some(path) = json {
        fs::write(path, table.to_json()? + "\n").with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(0)
}

fn report_invalid(invalid: &[InvalidRun]) {
    for bad in invalid {
        eprintln!("  repetition {} excluded: {}", bad.rep, bad.reason);
    }
}
