//! Online change-point detection for sequences of partially observed
//! networks.
//!
//! Each snapshot is a symmetric 0/1 adjacency matrix of which only the
//! entries in a mask are seen. The underlying edge-probability matrix is
//! estimated on a prefix and a suffix window by nuclear-norm penalized
//! matrix completion (soft-impute), and an alarm is raised when the
//! Frobenius distance between the two estimates crosses a threshold
//! calibrated on change-free training data.
//!
//! ```no_run
//! use netcp_core::{calibrate, generate_stream, generate_training, run_offline, GridMode, ScenarioSpec};
//!
//! let spec = ScenarioSpec::scenario1(0.9, 7);
//! let training = generate_training(&spec, 200, 1).unwrap();
//! let (profile, _) = calibrate(&training, 0.05, 100, 2, GridMode::Dyadic).unwrap();
//! let stream = generate_stream(&spec).unwrap();
//! let run = run_offline(&stream.snapshots, &profile).unwrap();
//! println!("alarm at {:?}", run.alarm_time());
//! ```

pub mod calibration;
pub mod completion;
pub mod detector;
pub mod error;
pub mod evaluation;
pub mod matrix;
pub mod simulation;
pub mod stream_io;

pub use calibration::{
    calibrate, estimate_profile, estimate_profile_with, fit_ceps, CalibrationProfile, PermutationReport, DEFAULT_C_LAMBDA,
    DEFAULT_PERMUTATIONS,
};
pub use completion::{
    lambda_for_window, soft_impute_stats, soft_impute_window, ConvergedBy, GraphonEstimate, MaskedSnapshot,
    SolverConfig, WindowStats,
};
pub use detector::{
    candidate_grid, run_offline, run_with, threshold_eps, Alarm, DetectionOutcome, Detector, DetectorOptions,
    EvaluatedPair, GridMode, OfflineRun, Status,
};
pub use error::{Error, Result};
pub use evaluation::{
    aggregate, run_experiment, ExperimentConfig, ExperimentResult, MetricRow, MetricTable, Outcome, ProfileSource,
    RunRecord, CSV_HEADER,
};
pub use matrix::{fro_norm, op_norm, sup_norm, svd, svd_soft_threshold, DenseMatrix, Mask, Shrunk, SvdFactors};
pub use simulation::{
    generate_stream, generate_stream_with, generate_training, CounterRng, DrawKind, GeneratedStream, GroundTruth,
    ScenarioKind, ScenarioSpec,
};
pub use stream_io::{read_stream, read_stream_file, write_stream, write_stream_file, Emission, StreamHeader, StreamParser};
