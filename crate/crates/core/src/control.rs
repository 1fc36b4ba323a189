//! Consensus-based feedforward/feedback longitudinal controller.
//!
//! The ego vehicle `i` drives its position towards `r_j - (l_j + v_i * t_gap)`
//! and its speed towards `v_j`, where `(r_j, v_j)` is whatever view of the
//! target the caller has: a delayed beacon, a compensated beacon, or a point
//! read off the target's predicted trajectory.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::types::VehicleState;

/// Gains of one ego/target association.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlGains {
    /// Consensus position gain, 1/s².
    pub k: f64,
    /// Weight of the speed-difference term, seconds.
    pub gamma: f64,
    /// Adjacency: 1 when the ego listens to the target, 0 otherwise.
    #[serde(default = "one")]
    pub alpha: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for ControlGains {
    fn default() -> Self {
        Self {
            k: 0.5,
            gamma: 0.8,
            alpha: 1.0,
        }
    }
}

impl ControlGains {
    pub fn new(k: f64, gamma: f64) -> Self {
        Self { k, gamma, alpha: 1.0 }
    }

    pub fn validate(&self, path: &str) -> Result<()> {
        if !(self.k > 0.0 && self.k.is_finite()) {
            return Err(Error::config(format!("{path}.k"), "must be finite and > 0"));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::config(format!("{path}.gamma"), "must be finite and >= 0"));
        }
        if self.alpha != 0.0 && self.alpha != 1.0 {
            return Err(Error::config(format!("{path}.alpha"), "must be 0 or 1"));
        }
        Ok(())
    }
}

/// The ego's view of its target vehicle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetView {
    pub position: f64,
    pub speed: f64,
    pub length: f64,
    /// Desired time gap, seconds.
    pub time_gap: f64,
}

/// Unsaturated acceleration command for `ego` following `target`.
pub fn consensus_accel(ego: &VehicleState, target: &TargetView, gains: &ControlGains) -> Result<f64> {
    for (v, what) in [
        (ego.position, "ego position"),
        (ego.speed, "ego speed"),
        (target.position, "target position"),
        (target.speed, "target speed"),
        (target.length, "target length"),
        (target.time_gap, "time gap"),
    ] {
        ensure_finite(v, what)?;
    }
    let spacing = ego.position - target.position + target.length + ego.speed * target.time_gap;
    let speed_diff = ego.speed - target.speed;
    ensure_finite(
        -gains.alpha * gains.k * (spacing + gains.gamma * speed_diff),
        "consensus command",
    )
}

/// Gain schedule indexed by initial ego speed, initial target speed and
/// initial headway `r_j(0) - r_i(0)`.
///
/// Each edge list holds the lower bounds of half-open buckets; the last
/// bucket is unbounded above. Inputs below the first edge clamp into the
/// first bucket.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainTable {
    pub ego_speed_edges: Vec<f64>,
    pub target_speed_edges: Vec<f64>,
    pub headway_edges: Vec<f64>,
    pub entries: Vec<GainEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainEntry {
    pub ego: usize,
    pub target: usize,
    pub headway: usize,
    pub k: f64,
    pub gamma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainLookup {
    pub gains: ControlGains,
    /// Some input fell outside the configured range and was clamped.
    pub clamped: bool,
}

impl GainTable {
    /// One bucket covering every input.
    pub fn single(gains: ControlGains) -> Self {
        Self {
            ego_speed_edges: vec![0.0],
            target_speed_edges: vec![0.0],
            headway_edges: vec![f64::MIN],
            entries: vec![GainEntry {
                ego: 0,
                target: 0,
                headway: 0,
                k: gains.k,
                gamma: gains.gamma,
            }],
        }
    }

    /// Checks edge ordering and that every bucket triple has exactly one entry.
    pub fn validate(&self, path: &str) -> Result<()> {
        for (name, edges) in [
            ("ego_speed_edges", &self.ego_speed_edges),
            ("target_speed_edges", &self.target_speed_edges),
            ("headway_edges", &self.headway_edges),
        ] {
            if edges.is_empty() {
                return Err(Error::config(format!("{path}.{name}"), "needs at least one edge"));
            }
            if edges.iter().any(|e| !e.is_finite()) || edges.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::config(
                    format!("{path}.{name}"),
                    "edges must be finite and strictly increasing",
                ));
            }
        }
        let dims = [
            self.ego_speed_edges.len(),
            self.target_speed_edges.len(),
            self.headway_edges.len(),
        ];
        let mut seen = vec![false; dims.iter().product()];
        for (i, e) in self.entries.iter().enumerate() {
            let entry_path = format!("{path}.entries[{i}]");
            if e.ego >= dims[0] || e.target >= dims[1] || e.headway >= dims[2] {
                return Err(Error::config(entry_path, "bucket index out of range"));
            }
            ControlGains::new(e.k, e.gamma).validate(&entry_path)?;
            let slot = (e.ego * dims[1] + e.target) * dims[2] + e.headway;
            if std::mem::replace(&mut seen[slot], true) {
                return Err(Error::config(entry_path, "duplicate bucket triple"));
            }
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            let headway = missing % dims[2];
            let target = (missing / dims[2]) % dims[1];
            let ego = missing / (dims[1] * dims[2]);
            return Err(Error::config(
                format!("{path}.entries"),
                format!("no gains for bucket (ego={ego}, target={target}, headway={headway})"),
            ));
        }
        Ok(())
    }

    /// Gains of the bucket containing the inputs. Out-of-range inputs clamp
    /// to the nearest bucket and log a warning.
    pub fn lookup(&self, ego_speed0: f64, target_speed0: f64, headway0: f64) -> GainLookup {
        let (ego, c0) = bucket(&self.ego_speed_edges, ego_speed0);
        let (target, c1) = bucket(&self.target_speed_edges, target_speed0);
        let (headway, c2) = bucket(&self.headway_edges, headway0);
        let clamped = c0 || c1 || c2;
        if clamped {
            warn!("gain lookup clamped: v_i0={ego_speed0:.3} v_j0={target_speed0:.3} headway0={headway0:.3}");
        }
        let entry = self
            .entries
            .iter()
            .find(|e| e.ego == ego && e.target == target && e.headway == headway)
            .expect("gain table validated as total");
        GainLookup {
            gains: ControlGains::new(entry.k, entry.gamma),
            clamped,
        }
    }
}

/// Returns `(bucket index, clamped)` for half-open lower-bound edges.
fn bucket(edges: &[f64], x: f64) -> (usize, bool) {
    if !(x >= edges[0]) {
        return (0, true);
    }
    (edges.partition_point(|&e| e <= x) - 1, false)
}

/// Free-function form of [`GainTable::lookup`].
pub fn lookup_gains(table: &GainTable, ego_speed0: f64, target_speed0: f64, headway0: f64) -> GainLookup {
    table.lookup(ego_speed0, target_speed0, headway0)
}
