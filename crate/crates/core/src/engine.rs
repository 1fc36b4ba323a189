//! Fixed-step closed-loop simulation.
//!
//! Each step runs, in order: the plant update with the commands computed in
//! the previous step, spawning, zone entry/exit bookkeeping, FCFS sequencing
//! and association, estimation with beacon exchange, control, and metrics.
//!
//! Estimation walks the chains front to back. Before a vehicle refreshes its
//! prediction it collects every beacon due by now, so with a delay-free
//! channel a follower consumes its target's same-step prediction.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::Arc;
use std::time::{Duration, Instant};

use log::{debug, info};
use serde::Serialize;

use crate::config::Scenario;
use crate::control::{consensus_accel, ControlGains, TargetView};
use crate::dynamics::step_vehicle;
use crate::error::{Error, Result};
use crate::estimation::{idm_free_accel, EstimatorState, FollowerModel, Role, TargetMotion};
use crate::network::{Channel, DropCause, InFlightQueue, Transmission};
use crate::scenario::{assign_targets, safety_check, CrossingSequence, RouteLeg, SpawnEvent, Violation};
use crate::types::{Beacon, LegId, SimTime, TrajectoryEstimate, VehicleId, VehicleState};

/// Speed below which a vehicle inside the control zone counts as stopped, m/s.
pub const FULL_STOP_SPEED: f64 = 0.5;

/// Slack when comparing spawn times against the step clock, seconds.
const SPAWN_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Approach,
    Zone,
    Exited,
}

#[derive(Debug, Clone)]
struct Vehicle {
    state: VehicleState,
    intersection: usize,
    route: VecDeque<RouteLeg>,
    phase: Phase,
    entry_time: Option<SimTime>,
    /// Command applied at the next plant update.
    cmd: f64,
    est: EstimatorState,
    /// Chain predecessor, if any.
    target: Option<VehicleId>,
    gains: ControlGains,
    /// Following the target (a beacon from it has been received).
    admitted: bool,
    view: Option<TargetMotion>,
    stopped: bool,
}

#[derive(Debug, Clone)]
struct Pending {
    event: SpawnEvent,
    deferred: bool,
}

/// Transmission and bookkeeping counters.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Counters {
    pub beacons_sent: u64,
    pub beacons_delivered: u64,
    pub beacons_dropped_nlos: u64,
    pub beacons_dropped_random: u64,
    pub beacons_stale: u64,
    pub gain_lookup_clamps: u64,
    pub cold_start_steps: u64,
    pub vehicles_spawned: u64,
    pub vehicles_completed: u64,
    pub spawns_deferred: u64,
}

/// One row of `trajectory.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRow {
    pub time: f64,
    pub vehicle: VehicleId,
    pub leg: LegId,
    pub position: f64,
    pub speed: f64,
    /// Saturated command applied over the next step.
    pub accel: f64,
    pub est_target_pos: Option<f64>,
    pub pos_est_err: Option<f64>,
    pub link_up: bool,
}

/// One row of `metrics.csv`: a follower's view of its target.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub time: f64,
    pub vehicle: VehicleId,
    pub target: VehicleId,
    pub est_target_pos: f64,
    pub true_target_pos: f64,
    pub pos_err: f64,
    pub speed_err: f64,
    pub link_up: bool,
    pub horizon_exhausted: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ViolationRecord {
    pub time_s: f64,
    pub intersection: usize,
    #[serde(flatten)]
    pub violation: Violation,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VehicleSummary {
    pub vehicle_id: VehicleId,
    pub samples: u64,
    pub max_abs_pos_err_m: f64,
    pub rms_pos_err_m: f64,
    pub max_abs_speed_err_mps: f64,
    pub min_speed_mps: f64,
    pub full_stops: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub max_abs_pos_err_m: f64,
    pub rms_pos_err_m: f64,
    pub max_abs_speed_err_mps: f64,
    pub violation_count: u64,
    pub rear_end_count: u64,
    pub conflict_zone_count: u64,
    pub full_stop_count: u64,
    pub horizon_exhausted_count: u64,
    pub mean_step_wallclock_ms: f64,
    pub steps: u64,
    pub sim_step_s: f64,
    pub prediction_step_s: f64,
    pub horizon_len: usize,
    pub seed: u64,
    #[serde(flatten)]
    pub counters: Counters,
    pub violations: Vec<ViolationRecord>,
    pub vehicles: Vec<VehicleSummary>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub summary: Summary,
    pub trajectory: Vec<TrajectoryRow>,
    pub metrics: Vec<MetricRow>,
}

/// One line of `sweep.csv`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub prediction_step_s: f64,
    pub max_abs_pos_err_m: f64,
    pub rms_pos_err_m: f64,
    pub mean_step_wallclock_ms: f64,
}

impl SweepRow {
    pub fn from_summary(summary: &Summary) -> Self {
        Self {
            prediction_step_s: summary.prediction_step_s,
            max_abs_pos_err_m: summary.max_abs_pos_err_m,
            rms_pos_err_m: summary.rms_pos_err_m,
            mean_step_wallclock_ms: summary.mean_step_wallclock_ms,
        }
    }
}

#[derive(Debug, Clone, Default)]
struct ErrorStats {
    samples: u64,
    sum_sq: f64,
    max_abs: f64,
    max_abs_speed: f64,
}

impl ErrorStats {
    fn add(&mut self, pos_err: f64, speed_err: f64) {
        self.samples += 1;
        self.sum_sq += pos_err * pos_err;
        self.max_abs = self.max_abs.max(pos_err.abs());
        self.max_abs_speed = self.max_abs_speed.max(speed_err.abs());
    }

    fn rms(&self) -> f64 {
        if self.samples == 0 {
            0.0
        } else {
            (self.sum_sq / self.samples as f64).sqrt()
        }
    }
}

#[derive(Debug, Clone)]
struct VehicleStats {
    errors: ErrorStats,
    min_speed: f64,
    full_stops: u64,
}

impl Default for VehicleStats {
    fn default() -> Self {
        Self {
            errors: ErrorStats::default(),
            min_speed: f64::INFINITY,
            full_stops: 0,
        }
    }
}

/// Step-by-step simulator.
pub struct Engine {
    sc: Scenario,
    step: u64,
    vehicles: BTreeMap<VehicleId, Vehicle>,
    pending: Vec<Pending>,
    next_id: u32,
    channel: Channel,
    queue: InFlightQueue,
    mail: BTreeMap<VehicleId, Vec<Arc<Beacon>>>,
    active_violations: BTreeSet<(usize, (u8, VehicleId, VehicleId))>,
    violations: Vec<ViolationRecord>,
    errors: ErrorStats,
    per_vehicle: BTreeMap<VehicleId, VehicleStats>,
    horizon_exhausted: u64,
    full_stops: u64,
    counters: Counters,
    wall: Duration,
    trajectory: Vec<TrajectoryRow>,
    metrics: Vec<MetricRow>,
}

impl Engine {
    pub fn new(scenario: Scenario) -> Result<Self> {
        let channel = Channel::new(scenario.channel.clone())?;
        let pending = scenario
            .spawns
            .iter()
            .cloned()
            .map(|event| Pending { event, deferred: false })
            .collect();
        Ok(Self {
            sc: scenario,
            step: 0,
            vehicles: BTreeMap::new(),
            pending,
            next_id: 0,
            channel,
            queue: InFlightQueue::default(),
            mail: BTreeMap::new(),
            active_violations: BTreeSet::new(),
            violations: Vec::new(),
            errors: ErrorStats::default(),
            per_vehicle: BTreeMap::new(),
            horizon_exhausted: 0,
            full_stops: 0,
            counters: Counters::default(),
            wall: Duration::ZERO,
            trajectory: Vec::new(),
            metrics: Vec::new(),
        })
    }

    pub fn scenario(&self) -> &Scenario {
        &self.sc
    }

    /// Steps completed so far.
    pub fn steps_done(&self) -> u64 {
        self.step
    }

    pub fn is_finished(&self) -> bool {
        self.step >= self.sc.engine.n_steps
    }

    /// Time of step `s`.
    pub fn time_of(&self, s: u64) -> SimTime {
        SimTime::from_secs(s as f64 * self.sc.engine.sim_step)
    }

    /// Time of the most recently completed step.
    pub fn now(&self) -> Option<SimTime> {
        self.step.checked_sub(1).map(|s| self.time_of(s))
    }

    pub fn vehicle_ids(&self) -> Vec<VehicleId> {
        self.vehicles.keys().copied().collect()
    }

    pub fn state(&self, id: VehicleId) -> Option<VehicleState> {
        self.vehicles.get(&id).map(|v| v.state)
    }

    /// Chain predecessor of `id`.
    pub fn target_of(&self, id: VehicleId) -> Option<VehicleId> {
        self.vehicles.get(&id).and_then(|v| v.target)
    }

    pub fn own_estimate(&self, id: VehicleId) -> Option<Arc<TrajectoryEstimate>> {
        self.vehicles.get(&id).and_then(|v| v.est.own_estimate().cloned())
    }

    /// Target motion `id` used for its latest command, if it is following.
    pub fn target_motion(&self, id: VehicleId) -> Option<TargetMotion> {
        self.vehicles.get(&id).and_then(|v| v.view)
    }

    /// Prediction carried by the latest beacon `id` holds from its target.
    pub fn last_target_estimate(&self, id: VehicleId) -> Option<Arc<TrajectoryEstimate>> {
        let v = self.vehicles.get(&id)?;
        v.est.last_estimate(v.target?).cloned()
    }

    /// Command `id` applies at the next plant update.
    pub fn command(&self, id: VehicleId) -> Option<f64> {
        self.vehicles.get(&id).map(|v| v.cmd)
    }

    pub fn counters(&self) -> &Counters {
        &self.counters
    }

    /// Runs one step. Returns `false` once the configured duration is covered.
    pub fn step(&mut self) -> Result<bool> {
        if self.is_finished() {
            return Ok(false);
        }
        let s = self.step;
        let now = self.time_of(s);
        let started = Instant::now();
        if s > 0 {
            self.advance_plant(s)?;
        }
        self.spawn_due(now);
        self.update_phases(now);
        self.sequence();
        self.exchange_and_estimate(s, now)?;
        self.control(s, now)?;
        self.wall += started.elapsed();
        self.record(s, now);
        self.step += 1;
        Ok(true)
    }

    fn advance_plant(&mut self, s: u64) -> Result<()> {
        let dt = self.sc.engine.sim_step;
        let limits = self.sc.limits;
        for (&id, v) in &mut self.vehicles {
            v.state = step_vehicle(&v.state, v.cmd, dt, &limits).map_err(abort(s, id))?;
        }
        Ok(())
    }

    fn is_clear(&self, intersection: usize, leg: LegId, position: f64, length: f64, except: Option<VehicleId>) -> bool {
        let gap = self.sc.engine.spawn_gap;
        self.vehicles.iter().all(|(id, v)| {
            Some(*id) == except
                || v.intersection != intersection
                || v.state.leg != leg
                || v.state.rear() >= position + gap
                || v.state.position <= position - length - gap
        })
    }

    fn spawn_due(&mut self, now: SimTime) {
        let mut i = 0;
        while i < self.pending.len() {
            if self.pending[i].event.time_s > now.secs() + SPAWN_SLACK {
                break;
            }
            let ev = &self.pending[i].event;
            let spec = &self.sc.intersections[ev.intersection];
            let leg = spec.leg(ev.leg).expect("validated leg");
            let d = ev.distance_m.unwrap_or(leg.approach_length_m);
            let position = spec.crossing_virtual_m - d;
            if !self.is_clear(ev.intersection, ev.leg, position, ev.length_m, None) {
                if !self.pending[i].deferred {
                    self.pending[i].deferred = true;
                    self.counters.spawns_deferred += 1;
                }
                i += 1;
                continue;
            }
            let ev = self.pending.remove(i).event;
            let id = VehicleId(self.next_id);
            self.next_id += 1;
            let in_zone = spec.in_control_zone(position);
            debug!("t={now} spawn vehicle {id} on leg {} at s={position:.2}", ev.leg);
            self.vehicles.insert(
                id,
                Vehicle {
                    state: VehicleState::new(position, ev.speed_mps, ev.length_m, ev.leg),
                    intersection: ev.intersection,
                    route: ev.route.iter().copied().collect(),
                    phase: if in_zone { Phase::Zone } else { Phase::Approach },
                    entry_time: in_zone.then_some(now),
                    cmd: 0.0,
                    est: EstimatorState::default(),
                    target: None,
                    gains: self.sc.config.control.gains,
                    admitted: false,
                    view: None,
                    stopped: false,
                },
            );
            self.per_vehicle.entry(id).or_default();
            self.counters.vehicles_spawned += 1;
        }
    }

    fn update_phases(&mut self, now: SimTime) {
        let mut leaving = Vec::new();
        for (&id, v) in &mut self.vehicles {
            let spec = &self.sc.intersections[v.intersection];
            let pos = v.state.position;
            match v.phase {
                Phase::Approach if spec.in_control_zone(pos) => {
                    v.phase = Phase::Zone;
                    v.entry_time = Some(now);
                }
                Phase::Zone if pos > spec.crossing_virtual_m + v.state.length => {
                    debug!("t={now} vehicle {id} clears intersection {}", v.intersection);
                    v.phase = Phase::Exited;
                    v.entry_time = None;
                    v.target = None;
                    v.admitted = false;
                }
                Phase::Exited if pos > spec.crossing_virtual_m + spec.exit_length_m => leaving.push(id),
                _ => {}
            }
        }
        for id in leaving {
            let v = &self.vehicles[&id];
            match v.route.front().copied() {
                None => self.remove_vehicle(id),
                Some(hop) => {
                    let spec = &self.sc.intersections[hop.intersection];
                    let d = spec.leg(hop.leg).expect("validated leg").approach_length_m;
                    let position = spec.crossing_virtual_m - d;
                    if self.is_clear(hop.intersection, hop.leg, position, v.state.length, Some(id)) {
                        self.transfer(id, hop, position, now);
                    }
                }
            }
        }
    }

    /// Drops every beacon to or from `id`. Its channel links survive so a
    /// transferred vehicle keeps consuming fresh randomness.
    fn forget_everywhere(&mut self, id: VehicleId) {
        for v in self.vehicles.values_mut() {
            v.est.forget(id);
        }
        self.queue.retire(id);
        self.mail.remove(&id);
    }

    fn remove_vehicle(&mut self, id: VehicleId) {
        self.vehicles.remove(&id);
        self.forget_everywhere(id);
        self.channel.retire(id);
        self.counters.vehicles_completed += 1;
    }

    fn transfer(&mut self, id: VehicleId, hop: RouteLeg, position: f64, now: SimTime) {
        self.forget_everywhere(id);
        let spec = &self.sc.intersections[hop.intersection];
        let in_zone = spec.in_control_zone(position);
        let v = self.vehicles.get_mut(&id).expect("vehicle exists");
        v.route.pop_front();
        v.intersection = hop.intersection;
        v.state.position = position;
        v.state.leg = hop.leg;
        v.phase = if in_zone { Phase::Zone } else { Phase::Approach };
        v.entry_time = in_zone.then_some(now);
        v.est = EstimatorState::default();
        v.target = None;
        v.admitted = false;
    }

    /// Crossing order of the vehicles inside each intersection's control zone.
    fn chains(&self) -> Vec<CrossingSequence> {
        let mut per: Vec<Vec<(VehicleId, SimTime)>> = vec![Vec::new(); self.sc.intersections.len()];
        for (&id, v) in &self.vehicles {
            if let (Phase::Zone, Some(t)) = (v.phase, v.entry_time) {
                per[v.intersection].push((id, t));
            }
        }
        per.into_iter().map(CrossingSequence::from_entries).collect()
    }

    fn sequence(&mut self) {
        for seq in self.chains() {
            for (id, target) in assign_targets(&seq) {
                if self.vehicles[&id].target == target {
                    continue;
                }
                let ego = self.vehicles[&id].state;
                let mut gains = self.sc.config.control.gains;
                if let Some(t) = target {
                    let tgt = self.vehicles[&t].state;
                    let lookup = self.sc.gains.lookup(ego.speed, tgt.speed, tgt.position - ego.position);
                    if lookup.clamped {
                        self.counters.gain_lookup_clamps += 1;
                    }
                    gains.k = lookup.gains.k;
                    gains.gamma = lookup.gains.gamma;
                    debug!("vehicle {id} associates with {t}");
                }
                let v = self.vehicles.get_mut(&id).expect("vehicle exists");
                v.target = target;
                v.gains = gains;
            }
        }
    }

    /// Vehicles outside any chain first, then every chain front to back.
    fn update_order(&self) -> Vec<VehicleId> {
        let mut order: Vec<VehicleId> = self
            .vehicles
            .iter()
            .filter(|(_, v)| v.phase != Phase::Zone)
            .map(|(id, _)| *id)
            .collect();
        for chain in self.chains() {
            order.extend(chain.order());
        }
        order
    }

    fn role_of(&self, id: VehicleId) -> Role {
        let v = &self.vehicles[&id];
        match v.target {
            Some(target) if v.phase == Phase::Zone => Role::Follower {
                target,
                model: FollowerModel {
                    gains: v.gains,
                    target_length: self.vehicles[&target].state.length,
                    time_gap: self.sc.time_gap,
                    limits: self.sc.limits,
                },
            },
            _ => Role::Leader,
        }
    }

    fn pump(&mut self, now: SimTime) {
        for d in self.queue.deliver_due(now) {
            if self.vehicles.contains_key(&d.receiver) {
                self.counters.beacons_delivered += 1;
                self.mail.entry(d.receiver).or_default().push(d.beacon);
            }
        }
    }

    fn open_mail(&mut self, id: VehicleId) {
        if let Some(beacons) = self.mail.remove(&id) {
            let v = self.vehicles.get_mut(&id).expect("vehicle exists");
            for b in beacons {
                if !v.est.accept(b) {
                    self.counters.beacons_stale += 1;
                }
            }
        }
    }

    fn exchange_and_estimate(&mut self, s: u64, now: SimTime) -> Result<()> {
        for v in self.vehicles.values_mut() {
            v.est.begin_step();
        }
        let boundary = s.is_multiple_of(self.sc.engine.refresh_every);
        let receivers = self.vehicle_ids();
        let params = self.sc.estimator;
        for id in self.update_order() {
            self.pump(now);
            self.open_mail(id);
            let role = self.role_of(id);
            let v = self.vehicles.get_mut(&id).expect("vehicle exists");
            let role_now = v.est.admitted_role(&role);
            v.admitted = matches!(role_now, Role::Follower { .. });
            if role != role_now {
                self.counters.cold_start_steps += 1;
            }
            if !boundary && v.est.own_estimate().is_some() {
                continue;
            }
            let est = v
                .est
                .refresh(id, &role_now, &v.state, now, &params)
                .map_err(abort(s, id))?;
            let beacon = Arc::new(Beacon::new(id, now, v.state, est)?);
            for &r in &receivers {
                if r == id {
                    continue;
                }
                self.counters.beacons_sent += 1;
                match self.channel.transmit(&beacon, r, now) {
                    Transmission::Delivered(at) => self.queue.push(at, r, Arc::clone(&beacon)),
                    Transmission::Dropped(DropCause::Nlos) => self.counters.beacons_dropped_nlos += 1,
                    Transmission::Dropped(DropCause::Random) => self.counters.beacons_dropped_random += 1,
                }
            }
        }
        self.pump(now);
        for id in receivers {
            self.open_mail(id);
        }
        Ok(())
    }

    /// Nearest vehicle ahead on the same leg of the same intersection.
    fn same_leg_ahead(&self, id: VehicleId) -> Option<VehicleState> {
        let me = &self.vehicles[&id];
        self.vehicles
            .iter()
            .filter(|(other, v)| {
                **other != id
                    && v.intersection == me.intersection
                    && v.state.leg == me.state.leg
                    && v.state.position > me.state.position
            })
            .map(|(_, v)| v.state)
            .min_by(|a, b| a.position.total_cmp(&b.position))
    }

    fn control(&mut self, s: u64, now: SimTime) -> Result<()> {
        let params = self.sc.estimator;
        let t_gap = self.sc.time_gap;
        let ids = self.vehicle_ids();
        for id in ids {
            let v = &self.vehicles[&id];
            let (cmd, view) = match (v.admitted, v.target) {
                (true, Some(target)) => {
                    let m = v.est.target_motion(target, now).map_err(abort(s, id))?;
                    let view = TargetView {
                        position: m.position,
                        speed: m.speed,
                        length: self.vehicles[&target].state.length,
                        time_gap: t_gap,
                    };
                    (
                        consensus_accel(&v.state, &view, &v.gains).map_err(abort(s, id))?,
                        Some(m),
                    )
                }
                _ => {
                    let mut cmd = idm_free_accel(&params, v.state.speed);
                    if let Some(ahead) = self.same_leg_ahead(id) {
                        let view = TargetView {
                            position: ahead.position,
                            speed: ahead.speed,
                            length: ahead.length,
                            time_gap: t_gap,
                        };
                        let guard =
                            consensus_accel(&v.state, &view, &self.sc.config.control.gains).map_err(abort(s, id))?;
                        cmd = cmd.min(guard);
                    }
                    (cmd, None)
                }
            };
            let v = self.vehicles.get_mut(&id).expect("vehicle exists");
            v.cmd = cmd;
            v.view = view;
        }
        Ok(())
    }

    fn record(&mut self, s: u64, now: SimTime) {
        let t = now.secs();
        let keep_row = s.is_multiple_of(self.sc.engine.record_every);
        let limits = self.sc.limits;
        let truth: BTreeMap<VehicleId, VehicleState> = self.vehicles.iter().map(|(id, v)| (*id, v.state)).collect();
        for (&id, v) in &mut self.vehicles {
            let stats = self.per_vehicle.entry(id).or_default();
            let mut est_target_pos = None;
            let mut pos_est_err = None;
            let mut link_up = false;
            if let (Some(m), Some(target)) = (v.view, v.target) {
                let truth = truth[&target];
                let pos_err = m.position - truth.position;
                let speed_err = m.speed - truth.speed;
                self.errors.add(pos_err, speed_err);
                stats.errors.add(pos_err, speed_err);
                if m.horizon_exhausted {
                    self.horizon_exhausted += 1;
                }
                est_target_pos = Some(m.position);
                pos_est_err = Some(pos_err);
                link_up = m.link_up;
                if keep_row {
                    self.metrics.push(MetricRow {
                        time: t,
                        vehicle: id,
                        target,
                        est_target_pos: m.position,
                        true_target_pos: truth.position,
                        pos_err,
                        speed_err,
                        link_up: m.link_up,
                        horizon_exhausted: m.horizon_exhausted,
                    });
                }
            }
            if v.phase == Phase::Zone {
                stats.min_speed = stats.min_speed.min(v.state.speed);
                let stopped = v.state.speed < FULL_STOP_SPEED;
                if stopped && !v.stopped {
                    stats.full_stops += 1;
                    self.full_stops += 1;
                    info!("t={now} vehicle {id} stopped inside the control zone");
                }
                v.stopped = stopped;
            } else {
                v.stopped = false;
            }
            if keep_row {
                self.trajectory.push(TrajectoryRow {
                    time: t,
                    vehicle: id,
                    leg: v.state.leg,
                    position: v.state.position,
                    speed: v.state.speed,
                    accel: limits.saturate(v.cmd),
                    est_target_pos,
                    pos_est_err,
                    link_up,
                });
            }
        }
        self.check_safety(now);
    }

    fn check_safety(&mut self, now: SimTime) {
        let mut active = BTreeSet::new();
        for (ix, spec) in self.sc.intersections.iter().enumerate() {
            let here: Vec<(VehicleId, VehicleState)> = self
                .vehicles
                .iter()
                .filter(|(_, v)| v.intersection == ix)
                .map(|(id, v)| (*id, v.state))
                .collect();
            for violation in safety_check(&here, spec) {
                let key = (ix, violation.key());
                if !self.active_violations.contains(&key) {
                    log::warn!("t={now} safety violation at intersection {ix}: {violation:?}");
                    self.violations.push(ViolationRecord {
                        time_s: now.secs(),
                        intersection: ix,
                        violation,
                    });
                }
                active.insert(key);
            }
        }
        self.active_violations = active;
    }

    /// Runs the remaining steps.
    pub fn run_to_end(&mut self) -> Result<()> {
        while self.step()? {}
        Ok(())
    }

    pub fn finish(self) -> RunResult {
        let rear_end = self
            .violations
            .iter()
            .filter(|v| matches!(v.violation, Violation::RearEnd { .. }))
            .count() as u64;
        let total = self.violations.len() as u64;
        let vehicles = self
            .per_vehicle
            .iter()
            .map(|(&id, st)| VehicleSummary {
                vehicle_id: id,
                samples: st.errors.samples,
                max_abs_pos_err_m: st.errors.max_abs,
                rms_pos_err_m: st.errors.rms(),
                max_abs_speed_err_mps: st.errors.max_abs_speed,
                min_speed_mps: if st.min_speed.is_finite() { st.min_speed } else { 0.0 },
                full_stops: st.full_stops,
            })
            .collect();
        let mean_ms = if self.step == 0 {
            0.0
        } else {
            self.wall.as_secs_f64() * 1e3 / self.step as f64
        };
        let summary = Summary {
            max_abs_pos_err_m: self.errors.max_abs,
            rms_pos_err_m: self.errors.rms(),
            max_abs_speed_err_mps: self.errors.max_abs_speed,
            violation_count: total,
            rear_end_count: rear_end,
            conflict_zone_count: total - rear_end,
            full_stop_count: self.full_stops,
            horizon_exhausted_count: self.horizon_exhausted,
            mean_step_wallclock_ms: mean_ms,
            steps: self.step,
            sim_step_s: self.sc.engine.sim_step,
            prediction_step_s: self.sc.estimator.prediction_step,
            horizon_len: self.sc.estimator.horizon_len,
            seed: self.sc.engine.seed,
            counters: self.counters,
            violations: self.violations,
            vehicles,
        };
        RunResult {
            summary,
            trajectory: self.trajectory,
            metrics: self.metrics,
        }
    }
}

fn abort(step: u64, vehicle: VehicleId) -> impl FnOnce(Error) -> Error {
    move |e| match e {
        Error::NumericFault(_) => Error::Aborted {
            step,
            vehicle,
            source: Box::new(e),
        },
        other => other,
    }
}

/// Runs `scenario` from start to end.
pub fn run(scenario: &Scenario) -> Result<RunResult> {
    let mut engine = Engine::new(scenario.clone())?;
    engine.run_to_end()?;
    Ok(engine.finish())
}

/// One run per prediction step, same seed and scenario otherwise, in the
/// order given.
pub fn sweep_prediction_step(scenario: &Scenario, steps: &[f64]) -> Result<Vec<RunResult>> {
    if steps.is_empty() {
        return Err(Error::config("steps", "at least one prediction step is required"));
    }
    steps
        .iter()
        .map(|&dt| {
            let sc = scenario.with_prediction_step(dt)?;
            info!("sweep: prediction step {dt} s");
            run(&sc)
        })
        .collect()
}
