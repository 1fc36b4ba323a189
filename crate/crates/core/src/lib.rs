//! Deterministic longitudinal simulator for connected automated vehicles
//! coordinating at unsignalized intersections.
//!
//! Vehicles from every approach leg are projected onto a single virtual lane,
//! sequenced first-come-first-served, and driven by a consensus-based
//! feedforward/feedback controller. Each vehicle broadcasts a short-horizon
//! prediction of its own motion so that followers keep cooperating while the
//! V2X channel delays or drops beacons.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod control;
pub mod dynamics;
pub mod engine;
pub mod error;
pub mod estimation;
pub mod network;
pub mod output;
pub mod scenario;
pub mod types;

pub use config::{load_scenario, Scenario, ScenarioConfig};
pub use control::{consensus_accel, ControlGains, GainTable, TargetView};
pub use dynamics::{step_vehicle, DynamicsLimits};
pub use engine::{run, sweep_prediction_step, Engine, RunResult, Summary, SweepRow};
pub use error::{Error, Result};
pub use estimation::{EstimatorParams, EstimatorState, Role, TargetMotion};
pub use network::{Channel, ChannelModel, InFlightQueue, Transmission};
pub use types::{Beacon, LegId, SimTime, TrajectoryEstimate, VehicleId, VehicleState};
