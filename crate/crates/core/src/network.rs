//! V2X channel emulation.
//!
//! Each directed (sender, receiver) link draws from its own ChaCha stream, so
//! the outcome of a transmission depends only on the seed, the link and how
//! many beacons that link has carried, never on the order in which links
//! are served within a step.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Beacon, SimTime, VehicleId};

/// Deliveries this close past `now` still count as due, absorbing rounding
/// in `send_time + delay`.
const DUE_SLACK: f64 = 1e-9;

/// Two-state burst-loss model layered over the Bernoulli loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GilbertElliott {
    /// Per-transmission probability of entering the bad state.
    pub p_good_to_bad: f64,
    /// Per-transmission probability of leaving it.
    pub p_bad_to_good: f64,
    /// Loss probability while in the bad state.
    #[serde(default = "one")]
    pub loss_bad: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelModel {
    /// Seconds.
    pub delay_mean: f64,
    /// Seconds.
    pub delay_std: f64,
    pub loss_prob: f64,
    /// Half-open `[start, end)` intervals of total loss, seconds.
    pub nlos_windows: Vec<(f64, f64)>,
    pub seed: u64,
    pub burst: Option<GilbertElliott>,
}

impl ChannelModel {
    /// Lossless, delay-free channel.
    pub fn perfect(seed: u64) -> Self {
        Self {
            delay_mean: 0.0,
            delay_std: 0.0,
            loss_prob: 0.0,
            nlos_windows: Vec::new(),
            seed,
            burst: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delay_mean >= 0.0 && self.delay_mean.is_finite()) {
            return Err(Error::config("channel.delay_mean_s", "must be finite and >= 0"));
        }
        if !(self.delay_std >= 0.0 && self.delay_std.is_finite()) {
            return Err(Error::config("channel.delay_std_s", "must be finite and >= 0"));
        }
        if !(0.0..=1.0).contains(&self.loss_prob) {
            return Err(Error::config("channel.loss_prob", "must lie in [0, 1]"));
        }
        let mut windows = self.nlos_windows.clone();
        for (i, &(start, end)) in windows.iter().enumerate() {
            if !(start >= 0.0 && start < end) || start.is_nan() || end.is_nan() {
                return Err(Error::config(
                    format!("channel.nlos_windows[{i}]"),
                    format!("need 0 <= start < end, got [{start}, {end})"),
                ));
            }
        }
        windows.sort_by(|a, b| a.0.total_cmp(&b.0));
        for w in windows.windows(2) {
            if w[1].0 < w[0].1 {
                return Err(Error::config(
                    "channel.nlos_windows",
                    format!("[{}, {}) overlaps [{}, {})", w[0].0, w[0].1, w[1].0, w[1].1),
                ));
            }
        }
        if let Some(ge) = &self.burst {
            for (name, p) in [
                ("p_good_to_bad", ge.p_good_to_bad),
                ("p_bad_to_good", ge.p_bad_to_good),
                ("loss_bad", ge.loss_bad),
            ] {
                if !(0.0..=1.0).contains(&p) {
                    return Err(Error::config(format!("channel.burst.{name}"), "must lie in [0, 1]"));
                }
            }
        }
        Ok(())
    }

    pub fn in_nlos(&self, t: SimTime) -> bool {
        let t = t.secs();
        self.nlos_windows.iter().any(|&(start, end)| start <= t && t < end)
    }
}

/// Why a transmission did not arrive.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropCause {
    Nlos,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Transmission {
    Delivered(SimTime),
    Dropped(DropCause),
}

#[derive(Debug, Clone)]
struct Link {
    rng: ChaCha8Rng,
    bad: bool,
}

/// Channel state: the model plus one random stream per directed link.
#[derive(Debug, Clone)]
pub struct Channel {
    model: ChannelModel,
    delay: Normal<f64>,
    links: BTreeMap<(VehicleId, VehicleId), Link>,
}

impl Channel {
    pub fn new(model: ChannelModel) -> Result<Self> {
        model.validate()?;
        let delay = Normal::new(model.delay_mean, model.delay_std)
            .map_err(|e| Error::config("channel.delay_std_s", e.to_string()))?;
        Ok(Self {
            model,
            delay,
            links: BTreeMap::new(),
        })
    }

    pub fn model(&self) -> &ChannelModel {
        &self.model
    }

    fn link(&mut self, sender: VehicleId, receiver: VehicleId) -> &mut Link {
        let seed = self.model.seed;
        self.links.entry((sender, receiver)).or_insert_with(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(((sender.0 as u64) << 32) | receiver.0 as u64);
            Link { rng, bad: false }
        })
    }

    /// Sends `beacon` from its sender to `receiver` at `now`.
    ///
    /// NLOS windows are checked first and consume no randomness. Otherwise
    /// the link makes one loss draw and one delay draw; negative delays
    /// clamp to zero.
    pub fn transmit(&mut self, beacon: &Beacon, receiver: VehicleId, now: SimTime) -> Transmission {
        debug_assert_eq!(beacon.send_time, now);
        if self.model.in_nlos(now) {
            return Transmission::Dropped(DropCause::Nlos);
        }
        let loss_prob = self.model.loss_prob;
        let burst = self.model.burst;
        let delay = self.delay;
        let link = self.link(beacon.sender, receiver);
        let p_loss = match burst {
            Some(ge) => {
                let flip: f64 = link.rng.random();
                let p_flip = if link.bad { ge.p_bad_to_good } else { ge.p_good_to_bad };
                if flip < p_flip {
                    link.bad = !link.bad;
                }
                if link.bad {
                    ge.loss_bad
                } else {
                    loss_prob
                }
            }
            None => loss_prob,
        };
        let u: f64 = link.rng.random();
        let tau = delay.sample(&mut link.rng).max(0.0);
        if u < p_loss {
            Transmission::Dropped(DropCause::Random)
        } else {
            Transmission::Delivered(now.offset(tau))
        }
    }

    /// Forgets the per-link state of a departed vehicle.
    pub fn retire(&mut self, vehicle: VehicleId) {
        self.links.retain(|&(s, r), _| s != vehicle && r != vehicle);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Key {
    delivery: f64,
    sender: VehicleId,
    send_time: f64,
    receiver: VehicleId,
}

impl Eq for Key {}

impl Ord for Key {
    fn cmp(&self, other: &Self) -> Ordering {
        self.delivery
            .total_cmp(&other.delivery)
            .then(self.sender.cmp(&other.sender))
            .then(self.send_time.total_cmp(&other.send_time))
            .then(self.receiver.cmp(&other.receiver))
    }
}

impl PartialOrd for Key {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// A beacon that reached its receiver.
#[derive(Debug, Clone, PartialEq)]
pub struct Delivery {
    pub receiver: VehicleId,
    pub delivery_time: SimTime,
    pub beacon: Arc<Beacon>,
}

/// Beacons in flight, ordered by delivery time, then sender, then send time.
#[derive(Debug, Clone, Default)]
pub struct InFlightQueue {
    entries: BTreeMap<Key, Arc<Beacon>>,
}

impl InFlightQueue {
    pub fn push(&mut self, delivery_time: SimTime, receiver: VehicleId, beacon: Arc<Beacon>) {
        let key = Key {
            delivery: delivery_time.secs(),
            sender: beacon.sender,
            send_time: beacon.send_time.secs(),
            receiver,
        };
        self.entries.insert(key, beacon);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Removes and returns everything due by `now`, earliest first.
    pub fn deliver_due(&mut self, now: SimTime) -> Vec<Delivery> {
        let limit = now.secs() + DUE_SLACK;
        let mut out = Vec::new();
        while let Some(entry) = self.entries.first_entry() {
            if entry.key().delivery > limit {
                break;
            }
            let (key, beacon) = entry.remove_entry();
            out.push(Delivery {
                receiver: key.receiver,
                delivery_time: SimTime::from_secs(key.delivery),
                beacon,
            });
        }
        out
    }

    /// Drops everything addressed to or sent by `vehicle`.
    pub fn retire(&mut self, vehicle: VehicleId) {
        self.entries.retain(|k, _| k.receiver != vehicle && k.sender != vehicle);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{LegId, TrajectoryEstimate, VehicleState};

    fn beacon(sender: u32, t: f64) -> Arc<Beacon> {
        let now = SimTime::from_secs(t);
        let est = Arc::new(TrajectoryEstimate::new(now, 0.1, (10.0, 0.0), vec![10.0], vec![1.0]).unwrap());
        Arc::new(Beacon::new(VehicleId(sender), now, VehicleState::new(0.0, 10.0, 5.0, LegId(0)), est).unwrap())
    }

    fn model(mean: f64, std: f64, loss: f64) -> ChannelModel {
        ChannelModel {
            delay_mean: mean,
            delay_std: std,
            loss_prob: loss,
            nlos_windows: vec![],
            seed: 7,
            burst: None,
        }
    }

    #[test]
    fn nlos_window_drops() {
        let mut m = model(0.04, 0.0259, 0.0);
        m.nlos_windows = vec![(4.0, 6.0)];
        let mut ch = Channel::new(m).unwrap();
        let b = beacon(1, 5.0);
        assert_eq!(
            ch.transmit(&b, VehicleId(2), b.send_time),
            Transmission::Dropped(DropCause::Nlos)
        );
        let b = beacon(1, 6.0);
        assert!(matches!(
            ch.transmit(&b, VehicleId(2), b.send_time),
            Transmission::Delivered(_)
        ));
    }

    #[test]
    fn fixed_delay_passes_through() {
        let mut ch = Channel::new(model(0.04, 0.0, 0.0)).unwrap();
        let b = beacon(1, 2.0);
        assert_eq!(
            ch.transmit(&b, VehicleId(2), b.send_time),
            Transmission::Delivered(SimTime::from_secs(2.04))
        );
    }

    #[test]
    fn negative_delay_clamps_to_send_time() {
        // a mean far below zero makes every draw negative
        let mut ch = Channel::new(model(0.0, 0.0, 0.0)).unwrap();
        ch.delay = Normal::new(-1.0, 0.001).unwrap();
        let b = beacon(1, 3.0);
        assert_eq!(
            ch.transmit(&b, VehicleId(2), b.send_time),
            Transmission::Delivered(b.send_time)
        );
    }

    #[test]
    fn links_are_independent_of_service_order() {
        let run = |order: &[(u32, u32)]| {
            let mut ch = Channel::new(model(0.04, 0.0259, 0.3)).unwrap();
            let mut out = BTreeMap::new();
            for t in 0..50 {
                for &(s, r) in order {
                    let b = beacon(s, t as f64 * 0.1);
                    out.entry((s, r))
                        .or_insert_with(Vec::new)
                        .push(ch.transmit(&b, VehicleId(r), b.send_time));
                }
            }
            out
        };
        assert_eq!(run(&[(1, 2), (2, 1), (3, 1)]), run(&[(3, 1), (2, 1), (1, 2)]));
    }

    #[test]
    fn rejects_bad_models() {
        assert!(model(-0.1, 0.0, 0.0).validate().is_err());
        assert!(model(0.0, -1.0, 0.0).validate().is_err());
        assert!(model(0.0, 0.0, 1.5).validate().is_err());
        let mut m = model(0.0, 0.0, 0.0);
        m.nlos_windows = vec![(4.0, 6.0), (5.0, 7.0)];
        assert!(m.validate().is_err());
        m.nlos_windows = vec![(6.0, 8.0), (4.0, 6.0)];
        assert!(m.validate().is_ok());
        m.nlos_windows = vec![(5.0, 5.0)];
        assert!(m.validate().is_err());
    }

    #[test]
    fn queue_orders_by_delivery_time() {
        let mut q = InFlightQueue::default();
        q.push(SimTime::from_secs(5.03), VehicleId(9), beacon(1, 5.0));
        q.push(SimTime::from_secs(5.01), VehicleId(9), beacon(2, 5.0));
        q.push(SimTime::from_secs(5.2), VehicleId(9), beacon(3, 5.0));
        let due = q.deliver_due(SimTime::from_secs(5.05));
        let senders: Vec<u32> = due.iter().map(|d| d.beacon.sender.0).collect();
        assert_eq!(senders, vec![2, 1]);
        assert_eq!(q.len(), 1);
        assert!(InFlightQueue::default().deliver_due(SimTime::from_secs(1.0)).is_empty());
    }

    #[test]
    fn burst_model_drops_in_bad_state() {
        let mut m = model(0.0, 0.0, 0.0);
        m.burst = Some(GilbertElliott {
            p_good_to_bad: 1.0,
            p_bad_to_good: 0.0,
            loss_bad: 1.0,
        });
        let mut ch = Channel::new(m).unwrap();
        for t in 0..10 {
            let b = beacon(1, t as f64);
            assert_eq!(
                ch.transmit(&b, VehicleId(2), b.send_time),
                Transmission::Dropped(DropCause::Random)
            );
        }
    }
}
