//! Shared domain types.
//!
//! Positions are meters along the virtual lane, speeds m/s, accelerations m/s²
//! and times seconds since the start of the run.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Offsets closer than this (in prediction steps) to a whole step are treated
/// as landing exactly on a horizon sample.
const SAMPLE_SNAP: f64 = 1e-9;

/// Simulated time in seconds.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SimTime(f64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0.0);

    pub fn from_secs(secs: f64) -> Self {
        debug_assert!(secs >= 0.0, "negative simulation time {secs}");
        SimTime(secs)
    }

    pub fn secs(self) -> f64 {
        self.0
    }

    /// Seconds elapsed since `earlier` (negative if `earlier` is later).
    pub fn since(self, earlier: SimTime) -> f64 {
        self.0 - earlier.0
    }

    pub fn offset(self, secs: f64) -> SimTime {
        SimTime(self.0 + secs)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.3}s", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VehicleId(pub u32);

impl fmt::Display for VehicleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Intersection approach a vehicle physically occupies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LegId(pub u32);

impl fmt::Display for LegId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Ground-truth longitudinal state of one vehicle on the virtual lane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub position: f64,
    pub speed: f64,
    pub accel: f64,
    pub length: f64,
    pub leg: LegId,
}

impl VehicleState {
    pub fn new(position: f64, speed: f64, length: f64, leg: LegId) -> Self {
        Self {
            position,
            speed,
            accel: 0.0,
            length,
            leg,
        }
    }

    /// Position of the rear bumper.
    pub fn rear(&self) -> f64 {
        self.position - self.length
    }
}

/// Predicted future speeds and positions of one vehicle.
///
/// Sample `k` (1-based) is the prediction for `anchor_time + k * step`. The
/// state the prediction started from is kept as the origin sample (`k = 0`).
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryEstimate {
    anchor_time: SimTime,
    step: f64,
    origin_speed: f64,
    origin_position: f64,
    speeds: Vec<f64>,
    positions: Vec<f64>,
}

impl TrajectoryEstimate {
    pub fn new(
        anchor_time: SimTime,
        step: f64,
        origin: (f64, f64),
        speeds: Vec<f64>,
        positions: Vec<f64>,
    ) -> Result<Self> {
        if !(step > 0.0) {
            return Err(Error::config("estimate.step", "must be > 0"));
        }
        if speeds.is_empty() || speeds.len() != positions.len() {
            return Err(Error::config(
                "estimate",
                format!(
                    "speeds ({}) and positions ({}) must have the same non-zero length",
                    speeds.len(),
                    positions.len()
                ),
            ));
        }
        let (origin_speed, origin_position) = origin;
        Ok(Self {
            anchor_time,
            step,
            origin_speed,
            origin_position,
            speeds,
            positions,
        })
    }

    pub fn anchor_time(&self) -> SimTime {
        self.anchor_time
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    /// Horizon length N.
    pub fn len(&self) -> usize {
        self.speeds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.speeds.is_empty()
    }

    pub fn speeds(&self) -> &[f64] {
        &self.speeds
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    /// `(speed, position)` at the anchor.
    pub fn origin(&self) -> (f64, f64) {
        (self.origin_speed, self.origin_position)
    }

    /// Time of the last horizon sample.
    pub fn horizon_end(&self) -> SimTime {
        self.anchor_time.offset(self.len() as f64 * self.step)
    }

    /// `(speed, position)` of sample `k`, where `k = 0` is the origin.
    pub fn sample(&self, k: usize) -> Option<(f64, f64)> {
        match k {
            0 => Some(self.origin()),
            k if k <= self.len() => Some((self.speeds[k - 1], self.positions[k - 1])),
            _ => None,
        }
    }

    /// Final horizon sample.
    pub fn last(&self) -> (f64, f64) {
        let n = self.len();
        (self.speeds[n - 1], self.positions[n - 1])
    }

    /// Reads the horizon at `query`, interpolating linearly between samples.
    pub fn lerp(&self, query: SimTime) -> Result<(f64, f64)> {
        lerp_trajectory(self, query)
    }
}

/// Reads `est` at `query_time`.
///
/// Valid for `anchor < query <= anchor + N * step`; exact sample times return
/// the stored sample bit-for-bit.
pub fn lerp_trajectory(est: &TrajectoryEstimate, query_time: SimTime) -> Result<(f64, f64)> {
    let elapsed = query_time.since(est.anchor_time);
    let mut offset = elapsed / est.step;
    let nearest = offset.round();
    if (offset - nearest).abs() < SAMPLE_SNAP {
        offset = nearest;
    }
    if !(offset > 0.0) {
        return Err(Error::BeforeAnchor {
            query: query_time.secs(),
            anchor: est.anchor_time.secs(),
        });
    }
    if offset > est.len() as f64 {
        return Err(Error::HorizonExhausted {
            query: query_time.secs(),
            end: est.horizon_end().secs(),
        });
    }
    let k = offset.ceil() as usize;
    let frac = offset - (k - 1) as f64;
    let (v_hi, r_hi) = est.sample(k).expect("k within horizon");
    if frac == 1.0 {
        return Ok((v_hi, r_hi));
    }
    let (v_lo, r_lo) = est.sample(k - 1).expect("k - 1 within horizon");
    Ok((v_lo + (v_hi - v_lo) * frac, r_lo + (r_hi - r_lo) * frac))
}

/// Timestamped broadcast: the sender's state and its own trajectory estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct Beacon {
    pub sender: VehicleId,
    pub send_time: SimTime,
    pub state: VehicleState,
    pub estimate: Arc<TrajectoryEstimate>,
}

impl Beacon {
    /// Fails unless the estimate is anchored at `send_time`.
    pub fn new(
        sender: VehicleId,
        send_time: SimTime,
        state: VehicleState,
        estimate: Arc<TrajectoryEstimate>,
    ) -> Result<Self> {
        if estimate.anchor_time() != send_time {
            return Err(Error::config(
                "beacon.estimate.anchor_time",
                format!(
                    "estimate anchored at {} but beacon sent at {}",
                    estimate.anchor_time(),
                    send_time
                ),
            ));
        }
        Ok(Self {
            sender,
            send_time,
            state,
            estimate,
        })
    }
}
