//! Shared fixtures for the benchmarks.

use std::path::PathBuf;

use cavsim_core::estimation::FollowerModel;
use cavsim_core::{load_scenario, ControlGains, DynamicsLimits, EstimatorParams, LegId, Scenario, VehicleState};

/// Loads one of the checked-in scenarios by file name.
pub fn scenario(name: &str) -> Scenario {
    let path: PathBuf = [env!("CARGO_MANIFEST_DIR"), "..", "..", "scenarios", name]
        .iter()
        .collect();
    load_scenario(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

/// Estimator settings over a 5 s horizon at the given prediction step.
pub fn params(prediction_step: f64) -> EstimatorParams {
    EstimatorParams::new(prediction_step, 5.0, 0.73, 4.0, 15.0)
}

pub fn follower_model() -> FollowerModel {
    FollowerModel {
        gains: ControlGains::default(),
        target_length: 4.5,
        time_gap: 1.5,
        limits: DynamicsLimits::default(),
    }
}

/// Leader and follower states 20 m apart.
pub fn pair() -> (VehicleState, VehicleState) {
    (
        VehicleState::new(900.0, 10.0, 4.5, LegId(0)),
        VehicleState::new(880.0, 12.0, 4.5, LegId(0)),
    )
}

/// Prediction steps swept by the engine benchmark.
pub const STEPS: [f64; 4] = [0.01, 0.1, 0.5, 1.0];
