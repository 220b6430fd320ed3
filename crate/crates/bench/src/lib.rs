//! Inputs shared by the benchmarks.

use netcp_core::{generate_stream, CalibrationProfile, DenseMatrix, GridMode, MaskedSnapshot, ScenarioSpec};

/// Scenario-1 stream of `len` snapshots at `n = 100`.
pub fn scenario1_snapshots(pi: f64, len: usize) -> Vec<MaskedSnapshot> {
    let mut spec = ScenarioSpec::scenario1(pi, 17);
    spec.total_t = len.max(2);
    spec.delta = None;
    generate_stream(&spec).expect("valid scenario").snapshots
}

/// Entrywise mean of the observed values of a window, a typical input to
/// the proximal step.
pub fn window_mean(snapshots: &[MaskedSnapshot]) -> DenseMatrix {
    let n = snapshots[0].n();
    let len = snapshots.len() as f64;
    DenseMatrix::from_fn(n, |i, j| snapshots.iter().map(|s| s.y().get(i, j)).sum::<f64>() / len)
}

/// Profile of the kind calibration produces for Scenario 1 at `pi = 0.9`.
pub fn scenario1_profile() -> CalibrationProfile {
    CalibrationProfile {
        n: 100,
        rho: 0.49,
        p: 0.865,
        m: 0.935,
        r: 23,
        alpha: 0.05,
        c_lambda: netcp_core::DEFAULT_C_LAMBDA,
        c_eps: Some(0.032),
        a: 1.0,
        grid_mode: GridMode::Dyadic,
    }
}
