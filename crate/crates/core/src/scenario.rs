//! Intersection geometry, virtual-lane projection, first-come-first-served
//! sequencing and spawning.
//!
//! Every intersection has its own virtual lane. A vehicle `d` meters before
//! the crossing point sits at `s = crossing_virtual_m - d` regardless of the
//! leg it approaches on, so the vehicles of all legs form one longitudinal
//! chain ordered by their control-zone entry times.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{LegId, SimTime, VehicleId, VehicleState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LegSpec {
    pub id: LegId,
    /// Distance from the spawn point to the crossing point, m.
    #[serde(default = "default_approach")]
    pub approach_length_m: f64,
}

fn default_approach() -> f64 {
    150.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntersectionSpec {
    #[serde(default = "default_legs")]
    pub legs: Vec<LegSpec>,
    /// Virtual coordinate of the crossing point, m.
    #[serde(default = "default_crossing")]
    pub crossing_virtual_m: f64,
    /// Distance before the crossing point at which vehicles join the chain, m.
    #[serde(default = "default_radius")]
    pub control_zone_radius_m: f64,
    /// Length of the conflict zone centered on the crossing point, m.
    #[serde(default = "default_conflict")]
    pub conflict_zone_m: f64,
    /// Distance driven past the crossing point before a vehicle leaves the
    /// intersection, m.
    #[serde(default = "default_exit")]
    pub exit_length_m: f64,
}

fn default_legs() -> Vec<LegSpec> {
    (0..3)
        .map(|i| LegSpec {
            id: LegId(i),
            approach_length_m: default_approach(),
        })
        .collect()
}

fn default_crossing() -> f64 {
    1000.0
}

fn default_radius() -> f64 {
    150.0
}

fn default_conflict() -> f64 {
    12.0
}

fn default_exit() -> f64 {
    50.0
}

impl Default for IntersectionSpec {
    fn default() -> Self {
        Self {
            legs: default_legs(),
            crossing_virtual_m: default_crossing(),
            control_zone_radius_m: default_radius(),
            conflict_zone_m: default_conflict(),
            exit_length_m: default_exit(),
        }
    }
}

impl IntersectionSpec {
    pub fn validate(&self, path: &str) -> Result<()> {
        if self.legs.is_empty() {
            return Err(Error::config(format!("{path}.legs"), "at least one leg is required"));
        }
        let r = self.control_zone_radius_m;
        if !(r > 0.0 && r.is_finite()) {
            return Err(Error::config(
                format!("{path}.control_zone_radius_m"),
                "must be finite and > 0",
            ));
        }
        if !(self.conflict_zone_m > 0.0 && self.conflict_zone_m.is_finite()) {
            return Err(Error::config(
                format!("{path}.conflict_zone_m"),
                "must be finite and > 0",
            ));
        }
        if !(self.exit_length_m >= 0.0 && self.exit_length_m.is_finite()) {
            return Err(Error::config(
                format!("{path}.exit_length_m"),
                "must be finite and >= 0",
            ));
        }
        if !self.crossing_virtual_m.is_finite() {
            return Err(Error::config(format!("{path}.crossing_virtual_m"), "must be finite"));
        }
        for (i, leg) in self.legs.iter().enumerate() {
            if self.legs[..i].iter().any(|l| l.id == leg.id) {
                return Err(Error::config(
                    format!("{path}.legs[{i}].id"),
                    format!("duplicate leg {}", leg.id),
                ));
            }
            if !(leg.approach_length_m >= r) || !leg.approach_length_m.is_finite() {
                return Err(Error::config(
                    format!("{path}.legs[{i}].approach_length_m"),
                    format!("must be finite and >= control_zone_radius_m ({r})"),
                ));
            }
        }
        Ok(())
    }

    pub fn leg(&self, id: LegId) -> Option<&LegSpec> {
        self.legs.iter().find(|l| l.id == id)
    }

    /// Distance still to go before the crossing point.
    pub fn distance_to_cross(&self, virtual_pos: f64) -> f64 {
        self.crossing_virtual_m - virtual_pos
    }

    pub fn in_control_zone(&self, virtual_pos: f64) -> bool {
        self.distance_to_cross(virtual_pos) <= self.control_zone_radius_m
    }
}

/// Virtual-lane coordinate of a vehicle `distance_to_cross` meters before
/// the crossing point.
pub fn project_to_virtual_lane(distance_to_cross: f64, spec: &IntersectionSpec) -> f64 {
    spec.crossing_virtual_m - distance_to_cross
}

/// Crossing order: control-zone entry time, ties broken by id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CrossingSequence {
    entries: Vec<(VehicleId, SimTime)>,
}

impl CrossingSequence {
    pub fn from_entries(entries: impl IntoIterator<Item = (VehicleId, SimTime)>) -> Self {
        let mut entries: Vec<_> = entries.into_iter().collect();
        entries.sort_by(|a, b| a.1.secs().total_cmp(&b.1.secs()).then(a.0.cmp(&b.0)));
        Self { entries }
    }

    pub fn entries(&self) -> &[(VehicleId, SimTime)] {
        &self.entries
    }

    pub fn order(&self) -> impl Iterator<Item = VehicleId> + '_ {
        self.entries.iter().map(|e| e.0)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Chain associations in crossing order: each vehicle with its immediate
/// predecessor, the first one with none.
pub fn assign_targets(sequence: &CrossingSequence) -> Vec<(VehicleId, Option<VehicleId>)> {
    let mut prev = None;
    sequence
        .order()
        .map(|id| {
            let pair = (id, prev);
            prev = Some(id);
            pair
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    /// Follower's front bumper is past the rear bumper of the vehicle ahead on its leg.
    RearEnd {
        follower: VehicleId,
        leader: VehicleId,
        gap_m: f64,
    },
    /// Vehicles from two legs inside the conflict zone at once.
    ConflictZone { a: VehicleId, b: VehicleId },
}

impl Violation {
    /// Identifies the incident independently of its magnitude.
    pub fn key(&self) -> (u8, VehicleId, VehicleId) {
        match *self {
            Violation::RearEnd { follower, leader, .. } => (0, follower, leader),
            Violation::ConflictZone { a, b } => (1, a, b),
        }
    }
}

/// Rear-end and conflict-zone checks over vehicles of one intersection.
pub fn safety_check(vehicles: &[(VehicleId, VehicleState)], spec: &IntersectionSpec) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut by_leg: BTreeMap<LegId, Vec<(VehicleId, VehicleState)>> = BTreeMap::new();
    for &(id, st) in vehicles {
        by_leg.entry(st.leg).or_default().push((id, st));
    }
    for lane in by_leg.values_mut() {
        lane.sort_by(|a, b| b.1.position.total_cmp(&a.1.position).then(a.0.cmp(&b.0)));
        for pair in lane.windows(2) {
            let (leader, ahead) = pair[0];
            let (follower, behind) = pair[1];
            let gap_m = ahead.rear() - behind.position;
            if gap_m < 0.0 {
                out.push(Violation::RearEnd {
                    follower,
                    leader,
                    gap_m,
                });
            }
        }
    }
    let half = spec.conflict_zone_m / 2.0;
    let (lo, hi) = (spec.crossing_virtual_m - half, spec.crossing_virtual_m + half);
    let inside: Vec<_> = vehicles
        .iter()
        .filter(|(_, st)| st.position >= lo && st.rear() <= hi)
        .collect();
    for (i, (a, sa)) in inside.iter().enumerate() {
        for (b, sb) in &inside[i + 1..] {
            if sa.leg != sb.leg {
                let (a, b) = if a < b { (*a, *b) } else { (*b, *a) };
                out.push(Violation::ConflictZone { a, b });
            }
        }
    }
    out
}

/// Next leg of a multi-intersection route.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RouteLeg {
    pub intersection: usize,
    pub leg: LegId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpawnEvent {
    pub time_s: f64,
    #[serde(default)]
    pub intersection: usize,
    pub leg: LegId,
    pub speed_mps: f64,
    #[serde(default = "default_length")]
    pub length_m: f64,
    /// Distance before the crossing point; defaults to the leg's approach length.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distance_m: Option<f64>,
    /// Legs driven after leaving this intersection.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub route: Vec<RouteLeg>,
}

fn default_length() -> f64 {
    4.5
}

/// Seeded random arrivals at one intersection: a Poisson stream whose
/// vehicles pick a leg uniformly, spaced by at least `min_headway_s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomSpawn {
    #[serde(default)]
    pub intersection: usize,
    /// Legs to draw from; all legs of the intersection when empty.
    #[serde(default)]
    pub legs: Vec<LegId>,
    /// Mean arrivals per second.
    pub rate_per_s: f64,
    pub count: usize,
    #[serde(default = "default_headway")]
    pub min_headway_s: f64,
    /// Inclusive initial speed range, m/s.
    pub speed_mps: [f64; 2],
    #[serde(default = "default_length")]
    pub length_m: f64,
    #[serde(default)]
    pub start_s: f64,
}

fn default_headway() -> f64 {
    2.0
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpawnPlan {
    #[serde(default)]
    pub events: Vec<SpawnEvent>,
    #[serde(default)]
    pub random: Vec<RandomSpawn>,
}

impl SpawnPlan {
    /// Explicit events plus the random streams drawn from `seed`, sorted by time.
    pub fn materialize(&self, seed: u64, intersections: &[IntersectionSpec]) -> Vec<SpawnEvent> {
        let mut out = self.events.clone();
        for (idx, spec) in self.random.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(u64::MAX - idx as u64);
            let legs: Vec<LegId> = if spec.legs.is_empty() {
                intersections
                    .get(spec.intersection)
                    .map(|i| i.legs.iter().map(|l| l.id).collect())
                    .unwrap_or_default()
            } else {
                spec.legs.clone()
            };
            if legs.is_empty() {
                continue;
            }
            let gaps = Exp::new(spec.rate_per_s).expect("validated rate");
            let mut t = spec.start_s;
            for i in 0..spec.count {
                if i > 0 {
                    t += gaps.sample(&mut rng).max(spec.min_headway_s);
                }
                let leg = legs[rng.random_range(0..legs.len())];
                let [lo, hi] = spec.speed_mps;
                let speed = if hi > lo { rng.random_range(lo..=hi) } else { lo };
                out.push(SpawnEvent {
                    time_s: t,
                    intersection: spec.intersection,
                    leg,
                    speed_mps: speed,
                    length_m: spec.length_m,
                    distance_m: None,
                    route: Vec::new(),
                });
            }
        }
        out.sort_by(|a, b| a.time_s.total_cmp(&b.time_s));
        out
    }

    pub fn validate(&self, intersections: &[IntersectionSpec], speed_max: f64) -> Result<()> {
        let leg_of = |path: &str, ix: usize, leg: LegId| -> Result<&LegSpec> {
            let spec = intersections
                .get(ix)
                .ok_or_else(|| Error::config(format!("{path}.intersection"), format!("no intersection {ix}")))?;
            spec.leg(leg)
                .ok_or_else(|| Error::config(format!("{path}.leg"), format!("intersection {ix} has no leg {leg}")))
        };
        for (i, ev) in self.events.iter().enumerate() {
            let path = format!("spawns.events[{i}]");
            let leg = leg_of(&path, ev.intersection, ev.leg)?;
            if !(ev.time_s >= 0.0 && ev.time_s.is_finite()) {
                return Err(Error::config(format!("{path}.time_s"), "must be finite and >= 0"));
            }
            check_speed(&format!("{path}.speed_mps"), ev.speed_mps, speed_max)?;
            check_length(&format!("{path}.length_m"), ev.length_m)?;
            if let Some(d) = ev.distance_m {
                if !(d > 0.0 && d <= leg.approach_length_m) {
                    return Err(Error::config(
                        format!("{path}.distance_m"),
                        format!("must lie in (0, {}]", leg.approach_length_m),
                    ));
                }
            }
            for (j, hop) in ev.route.iter().enumerate() {
                leg_of(&format!("{path}.route[{j}]"), hop.intersection, hop.leg)?;
            }
        }
        for (i, r) in self.random.iter().enumerate() {
            let path = format!("spawns.random[{i}]");
            if intersections.get(r.intersection).is_none() {
                return Err(Error::config(
                    format!("{path}.intersection"),
                    format!("no intersection {}", r.intersection),
                ));
            }
            for leg in &r.legs {
                leg_of(&path, r.intersection, *leg)?;
            }
            if !(r.rate_per_s > 0.0 && r.rate_per_s.is_finite()) {
                return Err(Error::config(format!("{path}.rate_per_s"), "must be finite and > 0"));
            }
            if !(r.min_headway_s >= 0.0 && r.min_headway_s.is_finite()) {
                return Err(Error::config(
                    format!("{path}.min_headway_s"),
                    "must be finite and >= 0",
                ));
            }
            if !(r.start_s >= 0.0 && r.start_s.is_finite()) {
                return Err(Error::config(format!("{path}.start_s"), "must be finite and >= 0"));
            }
            let [lo, hi] = r.speed_mps;
            check_speed(&format!("{path}.speed_mps[0]"), lo, speed_max)?;
            check_speed(&format!("{path}.speed_mps[1]"), hi, speed_max)?;
            if lo > hi {
                return Err(Error::config(
                    format!("{path}.speed_mps"),
                    "lower bound exceeds upper bound",
                ));
            }
            check_length(&format!("{path}.length_m"), r.length_m)?;
        }
        Ok(())
    }
}

fn check_speed(path: &str, v: f64, speed_max: f64) -> Result<()> {
    if !(0.0..=speed_max).contains(&v) {
        return Err(Error::config(path, format!("must lie in [0, {speed_max}]")));
    }
    Ok(())
}

fn check_length(path: &str, l: f64) -> Result<()> {
    if !(l > 0.0 && l.is_finite()) {
        return Err(Error::config(path, "must be finite and > 0"));
    }
    Ok(())
}
