//! Consensus-based motion estimation.
//!
//! Every vehicle predicts its own speed and position over a short horizon and
//! broadcasts the prediction with its state. A chain leader extrapolates its
//! free-road speed law towards the preset target speed; a follower rolls the
//! consensus controller forward against its target's received prediction,
//! shifted for the age of that prediction. When no fresh information arrives
//! a follower keeps its previous prediction, and whoever follows it reads
//! the last prediction it received instead of live beacons.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::control::{consensus_accel, ControlGains, TargetView};
use crate::dynamics::{step_vehicle, DynamicsLimits};
use crate::error::{ensure_finite, Error, Result};
use crate::types::{Beacon, SimTime, TrajectoryEstimate, VehicleId, VehicleState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorParams {
    /// Prediction time step, seconds.
    pub prediction_step: f64,
    /// Number of horizon samples.
    pub horizon_len: usize,
    /// Maximum speed-change rate of a free-driving leader, m/s².
    pub a_max: f64,
    /// Free-acceleration exponent.
    pub sigma: f64,
    /// Preset speed a free-driving leader converges to, m/s.
    pub v_target: f64,
    /// Solve the follower recursion with the ego speed on both sides.
    pub implicit_solve: bool,
}

impl EstimatorParams {
    /// Sizes the horizon to cover `horizon_secs` at `prediction_step`.
    pub fn new(prediction_step: f64, horizon_secs: f64, a_max: f64, sigma: f64, v_target: f64) -> Self {
        let horizon_len = ((horizon_secs / prediction_step).round() as usize).max(1);
        Self {
            prediction_step,
            horizon_len,
            a_max,
            sigma,
            v_target,
            implicit_solve: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let checks = [
            ("estimator.prediction_step_s", self.prediction_step),
            ("estimator.a_max", self.a_max),
            ("estimator.sigma", self.sigma),
            ("estimator.v_target", self.v_target),
        ];
        for (path, v) in checks {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(path, "must be finite and > 0"));
            }
        }
        if self.horizon_len == 0 {
            return Err(Error::config(
                "estimator.horizon_s",
                "horizon must hold at least one step",
            ));
        }
        Ok(())
    }
}

impl Default for EstimatorParams {
    fn default() -> Self {
        Self::new(0.01, 5.0, 0.73, 4.0, 15.0)
    }
}

/// Free-road acceleration of the leader law, `a_max * (1 - (v / v_target)^sigma)`.
pub fn idm_free_accel(params: &EstimatorParams, speed: f64) -> f64 {
    params.a_max * (1.0 - (speed / params.v_target).powf(params.sigma))
}

/// Predicted speeds of a vehicle with no target, starting from `v_now`.
pub fn predict_leader_speed(params: &EstimatorParams, v_now: f64) -> Vec<f64> {
    let dt = params.prediction_step;
    let mut v = v_now;
    (0..params.horizon_len)
        .map(|_| {
            v = (v + idm_free_accel(params, v) * dt).max(0.0);
            v
        })
        .collect()
}

/// Cumulative positions for `speeds`, each step advancing with the speed
/// held at the start of that step (`v_now` for the first one).
pub fn integrate_position(r_now: f64, v_now: f64, speeds: &[f64], step: f64) -> Vec<f64> {
    let mut r = r_now;
    let mut v_prev = v_now;
    speeds
        .iter()
        .map(|&v| {
            r += v_prev * step;
            v_prev = v;
            r
        })
        .collect()
}

/// Target motion at the start of prediction step `k`, advanced by `tau`.
///
/// `k` counts from 1; the base sample is `k - 1` of `target_est` (the origin
/// for `k = 1`). Below one prediction step of delay the base speed is held;
/// otherwise it is extrapolated with the per-step speed change at that index.
/// The position advances from the base position at the adjusted speed.
pub fn compensate_delay(target_est: &TrajectoryEstimate, k: usize, tau: f64) -> Result<(f64, f64)> {
    if k == 0 || k > target_est.len() {
        return Err(Error::HorizonExhausted {
            query: target_est.anchor_time().secs() + k as f64 * target_est.step(),
            end: target_est.horizon_end().secs(),
        });
    }
    let tau = ensure_finite(tau, "beacon age")?.max(0.0);
    let dt = target_est.step();
    let (v_base, r_base) = target_est.sample(k - 1).expect("k - 1 within horizon");
    let v_adj = if tau < dt {
        v_base
    } else {
        let (v_next, _) = target_est.sample(k).expect("k within horizon");
        (v_base + tau / dt * (v_next - v_base)).max(0.0)
    };
    Ok((v_adj, r_base + v_adj * tau))
}

/// What a follower knows about its target besides the target's motion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FollowerModel {
    pub gains: ControlGains,
    pub target_length: f64,
    pub time_gap: f64,
    pub limits: DynamicsLimits,
}

/// One step of the follower recursion.
///
/// The explicit form evaluates the consensus law on the ego and target
/// states at the start of the step and pushes the command through the plant
/// update, so a follower's prediction reproduces the closed loop exactly when
/// the prediction step equals the simulation step. With `implicit_solve` the
/// ego position is advanced first and the ego speed appears on both sides of
/// the update, which is solved in closed form.
pub fn predict_follower_speed(
    prev_v: f64,
    prev_r: f64,
    target_v_adj: f64,
    target_r_adj: f64,
    model: &FollowerModel,
    params: &EstimatorParams,
) -> Result<f64> {
    let dt = params.prediction_step;
    let ego = VehicleState {
        position: prev_r,
        speed: prev_v,
        accel: 0.0,
        length: 1.0,
        leg: Default::default(),
    };
    let view = TargetView {
        position: target_r_adj,
        speed: target_v_adj,
        length: model.target_length,
        time_gap: model.time_gap,
    };
    let accel = if params.implicit_solve {
        let g = &model.gains;
        let r_next = prev_r + prev_v * dt;
        let c = g.alpha * g.k * dt;
        let v_new = (prev_v - c * (r_next - target_r_adj + model.target_length - g.gamma * target_v_adj))
            / (1.0 + c * (model.time_gap + g.gamma));
        ensure_finite((v_new - prev_v) / dt, "implicit follower update")?
    } else {
        consensus_accel(&ego, &view, &model.gains)?
    };
    Ok(step_vehicle(&ego, accel, dt, &model.limits)?.speed)
}

/// Prediction for a vehicle with no target.
pub fn leader_estimate(truth: &VehicleState, now: SimTime, params: &EstimatorParams) -> Result<TrajectoryEstimate> {
    let speeds = predict_leader_speed(params, truth.speed);
    let positions = integrate_position(truth.position, truth.speed, &speeds, params.prediction_step);
    TrajectoryEstimate::new(
        now,
        params.prediction_step,
        (truth.speed, truth.position),
        speeds,
        positions,
    )
}

/// Prediction for a follower whose target's latest prediction is `target_est`,
/// received `tau` seconds after it was produced.
pub fn follower_estimate(
    truth: &VehicleState,
    now: SimTime,
    target_est: &TrajectoryEstimate,
    tau: f64,
    model: &FollowerModel,
    params: &EstimatorParams,
) -> Result<TrajectoryEstimate> {
    let dt = params.prediction_step;
    let target_len = target_est.len();
    let mut speeds = Vec::with_capacity(params.horizon_len);
    let (mut v, mut r) = (truth.speed, truth.position);
    for k in 1..=params.horizon_len {
        let (target_v, mut target_r) = compensate_delay(target_est, k.min(target_len), tau)?;
        if k > target_len {
            target_r += target_v * (k - target_len) as f64 * dt;
        }
        let v_next = predict_follower_speed(v, r, target_v, target_r, model, params)?;
        r += v * dt;
        v = v_next;
        speeds.push(v);
    }
    let positions = integrate_position(truth.position, truth.speed, &speeds, dt);
    TrajectoryEstimate::new(now, dt, (truth.speed, truth.position), speeds, positions)
}

/// Keeps the speed samples of `prev` that are still in the future, holding
/// the final one to refill the horizon, and re-integrates positions from the
/// vehicle's current ground truth.
pub fn hold_estimate(prev: &TrajectoryEstimate, truth: &VehicleState, now: SimTime) -> Result<TrajectoryEstimate> {
    let dt = prev.step();
    let n = prev.len();
    let (v_last, _) = prev.last();
    let speeds: Vec<f64> = (1..=n)
        .map(|k| match prev.lerp(now.offset(k as f64 * dt)) {
            Ok((v, _)) => v,
            Err(_) => v_last,
        })
        .collect();
    let positions = integrate_position(truth.position, truth.speed, &speeds, dt);
    TrajectoryEstimate::new(now, dt, (truth.speed, truth.position), speeds, positions)
}

/// Which law a vehicle's own prediction follows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Role {
    Leader,
    Follower { target: VehicleId, model: FollowerModel },
}

impl Role {
    pub fn target(&self) -> Option<VehicleId> {
        match self {
            Role::Leader => None,
            Role::Follower { target, .. } => Some(*target),
        }
    }
}

/// Target motion handed to the controller.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetMotion {
    pub speed: f64,
    pub position: f64,
    /// A fresh beacon from the target arrived this step.
    pub link_up: bool,
    /// The held prediction ran out and the final sample is being extrapolated.
    pub horizon_exhausted: bool,
    /// Age of the information the view is built from, seconds.
    pub beacon_age: f64,
}

/// Per-vehicle estimator memory.
#[derive(Debug, Clone, Default)]
pub struct EstimatorState {
    own: Option<Arc<TrajectoryEstimate>>,
    /// Target whose prediction produced `own` (`None` under the leader law).
    own_basis: Option<VehicleId>,
    inbox: BTreeMap<VehicleId, Arc<Beacon>>,
    arrived_step: BTreeSet<VehicleId>,
    arrived_since_refresh: BTreeSet<VehicleId>,
}

impl EstimatorState {
    /// Forgets which beacons counted as arrivals during the previous step.
    pub fn begin_step(&mut self) {
        self.arrived_step.clear();
    }

    /// Stores `beacon` unless an equally fresh or fresher one from the same
    /// sender is already held. Returns whether it was kept.
    pub fn accept(&mut self, beacon: Arc<Beacon>) -> bool {
        let sender = beacon.sender;
        if let Some(held) = self.inbox.get(&sender) {
            if held.send_time >= beacon.send_time {
                return false;
            }
        }
        self.inbox.insert(sender, beacon);
        self.arrived_step.insert(sender);
        self.arrived_since_refresh.insert(sender);
        true
    }

    pub fn forget(&mut self, sender: VehicleId) {
        self.inbox.remove(&sender);
        self.arrived_step.remove(&sender);
        self.arrived_since_refresh.remove(&sender);
    }

    pub fn has_heard(&self, sender: VehicleId) -> bool {
        self.inbox.contains_key(&sender)
    }

    pub fn last_beacon(&self, sender: VehicleId) -> Option<&Arc<Beacon>> {
        self.inbox.get(&sender)
    }

    /// Latest prediction received from `sender`.
    pub fn last_estimate(&self, sender: VehicleId) -> Option<&Arc<TrajectoryEstimate>> {
        self.inbox.get(&sender).map(|b| &b.estimate)
    }

    pub fn link_up(&self, sender: VehicleId) -> bool {
        self.arrived_step.contains(&sender)
    }

    pub fn own_estimate(&self) -> Option<&Arc<TrajectoryEstimate>> {
        self.own.as_ref()
    }

    /// Downgrades a follower that has never heard from its target to the
    /// leader law.
    pub fn admitted_role(&self, role: &Role) -> Role {
        match role {
            Role::Follower { target, .. } if !self.has_heard(*target) => Role::Leader,
            other => *other,
        }
    }

    /// Recomputes this vehicle's own prediction.
    ///
    /// A follower recomputes when its target's beacon arrived since the last
    /// refresh (or it just switched targets); otherwise it keeps its previous
    /// speed samples re-anchored at `now`.
    pub fn refresh(
        &mut self,
        me: VehicleId,
        role: &Role,
        truth: &VehicleState,
        now: SimTime,
        params: &EstimatorParams,
    ) -> Result<Arc<TrajectoryEstimate>> {
        let est = match role {
            Role::Leader => {
                self.own_basis = None;
                leader_estimate(truth, now, params)?
            }
            Role::Follower { target, model } => {
                let fresh = self.arrived_since_refresh.contains(target) || self.own_basis != Some(*target);
                match (self.inbox.get(target), &self.own) {
                    (Some(beacon), _) if fresh => {
                        let tau = now.since(beacon.send_time);
                        self.own_basis = Some(*target);
                        follower_estimate(truth, now, &beacon.estimate, tau, model, params)?
                    }
                    (_, Some(prev)) => hold_estimate(prev, truth, now)?,
                    (None, None) => return Err(Error::ColdStart(me)),
                    (Some(_), None) => unreachable!("fresh is true whenever own is absent"),
                }
            }
        };
        self.arrived_since_refresh.clear();
        let est = Arc::new(est);
        self.own = Some(Arc::clone(&est));
        Ok(est)
    }

    /// Target motion the controller should use at `now`.
    ///
    /// A beacon that arrived this step is used directly, advanced for its
    /// age. Otherwise the target's last received prediction is read at
    /// `now`; past its horizon the final speed is held and the position
    /// extrapolated.
    pub fn target_motion(&self, target: VehicleId, now: SimTime) -> Result<TargetMotion> {
        let beacon = self.inbox.get(&target).ok_or(Error::ColdStart(target))?;
        let age = now.since(beacon.send_time);
        let est = &beacon.estimate;
        if self.link_up(target) {
            let (speed, position) = compensate_delay(est, 1, age)?;
            return Ok(TargetMotion {
                speed,
                position,
                link_up: true,
                horizon_exhausted: false,
                beacon_age: age,
            });
        }
        let (speed, position, horizon_exhausted) = match est.lerp(now) {
            Ok((v, r)) => (v, r, false),
            Err(Error::HorizonExhausted { .. }) => {
                let (v, r) = est.last();
                (v, r + v * now.since(est.horizon_end()), true)
            }
            Err(Error::BeforeAnchor { .. }) => {
                let (v, r) = est.origin();
                (v, r, false)
            }
            Err(e) => return Err(e),
        };
        Ok(TargetMotion {
            speed,
            position,
            link_up: false,
            horizon_exhausted,
            beacon_age: age,
        })
    }
}

/// Free-function form of [`EstimatorState::target_motion`].
pub fn target_motion_for_control(state: &EstimatorState, target: VehicleId, now: SimTime) -> Result<TargetMotion> {
    state.target_motion(target, now)
}

/// Transport used while the fleet updates its predictions.
pub trait BeaconExchange {
    /// Beacons that have reached `receiver` by now.
    fn collect(&mut self, receiver: VehicleId) -> Vec<Arc<Beacon>>;
    /// Hands a freshly produced beacon to the channel.
    fn publish(&mut self, beacon: Arc<Beacon>);
}

/// Refreshes every vehicle's prediction in chain order and broadcasts it.
///
/// `order` must list each target before its followers so that a follower can
/// consume a same-step prediction when the channel delivers it immediately.
pub fn update_estimates<X: BeaconExchange + ?Sized>(
    order: &[(VehicleId, Role)],
    states: &mut BTreeMap<VehicleId, EstimatorState>,
    truth: &BTreeMap<VehicleId, VehicleState>,
    now: SimTime,
    params: &EstimatorParams,
    exchange: &mut X,
) -> Result<BTreeMap<VehicleId, Arc<TrajectoryEstimate>>> {
    let mut out = BTreeMap::new();
    for (id, role) in order {
        let state = states.entry(*id).or_default();
        for beacon in exchange.collect(*id) {
            state.accept(beacon);
        }
        let own_truth = truth
            .get(id)
            .ok_or_else(|| Error::config("update_estimates.truth", format!("no state for vehicle {id}")))?;
        let est = state.refresh(*id, role, own_truth, now, params)?;
        exchange.publish(Arc::new(Beacon::new(*id, now, *own_truth, Arc::clone(&est))?));
        out.insert(*id, est);
    }
    Ok(out)
}
