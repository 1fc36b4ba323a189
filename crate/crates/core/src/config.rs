//! Scenario files.
//!
//! A scenario is one JSON document with the sections `engine`, `channel`,
//! `estimator`, `control`, `dynamics`, `intersections` and `spawns`. Every
//! section and field has a default, units are carried in the field names,
//! and unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::control::{ControlGains, GainTable};
use crate::dynamics::DynamicsLimits;
use crate::error::{Error, Result};
use crate::estimation::EstimatorParams;
use crate::network::{ChannelModel, GilbertElliott};
use crate::scenario::{IntersectionSpec, SpawnEvent, SpawnPlan};

/// Relative tolerance when checking that one step divides the other.
const DIVISIBILITY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EngineSection {
    pub sim_step_s: f64,
    pub duration_s: f64,
    pub seed: u64,
    /// Write a trajectory row every this many steps.
    pub record_every: u64,
    /// Free space a spawn point needs before a vehicle is placed there, m.
    pub spawn_gap_m: f64,
}

impl Default for EngineSection {
    fn default() -> Self {
        Self {
            sim_step_s: 0.01,
            duration_s: 30.0,
            seed: 1,
            record_every: 1,
            spawn_gap_m: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelSection {
    pub delay_mean_s: f64,
    pub delay_std_s: f64,
    pub loss_prob: f64,
    pub nlos_windows: Vec<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub burst: Option<GilbertElliott>,
}

impl Default for ChannelSection {
    fn default() -> Self {
        Self {
            delay_mean_s: 0.040,
            delay_std_s: 0.0259,
            loss_prob: 0.1,
            nlos_windows: Vec::new(),
            burst: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimatorSection {
    pub prediction_step_s: f64,
    pub horizon_s: f64,
    pub a_max: f64,
    pub sigma: f64,
    pub v_target: f64,
    pub implicit_solve: bool,
}

impl Default for EstimatorSection {
    fn default() -> Self {
        Self {
            prediction_step_s: 0.01,
            horizon_s: 5.0,
            a_max: 0.73,
            sigma: 4.0,
            v_target: 15.0,
            implicit_solve: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControlSection {
    /// Gains used when no table is given.
    pub gains: ControlGains,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gain_table: Option<GainTable>,
    pub time_gap_s: f64,
}

impl Default for ControlSection {
    fn default() -> Self {
        Self {
            gains: ControlGains::default(),
            gain_table: None,
            time_gap_s: 1.5,
        }
    }
}

/// File form of a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub engine: EngineSection,
    pub channel: ChannelSection,
    pub estimator: EstimatorSection,
    pub control: ControlSection,
    pub dynamics: DynamicsLimits,
    pub intersections: Vec<IntersectionSpec>,
    pub spawns: SpawnPlan,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            engine: EngineSection::default(),
            channel: ChannelSection::default(),
            estimator: EstimatorSection::default(),
            control: ControlSection::default(),
            dynamics: DynamicsLimits::default(),
            intersections: vec![IntersectionSpec::default()],
            spawns: SpawnPlan::default(),
        }
    }
}

/// Timing of the simulation loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EngineConfig {
    pub sim_step: f64,
    pub duration: f64,
    pub seed: u64,
    pub record_every: u64,
    pub spawn_gap: f64,
    pub n_steps: u64,
    /// Simulation steps per estimator refresh.
    pub refresh_every: u64,
}

/// A validated scenario with every derived quantity resolved.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub engine: EngineConfig,
    pub channel: ChannelModel,
    pub estimator: EstimatorParams,
    pub gains: GainTable,
    pub time_gap: f64,
    pub limits: DynamicsLimits,
    pub intersections: Vec<IntersectionSpec>,
    pub spawns: Vec<SpawnEvent>,
}

impl ScenarioConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::config(json_error_path(&e), e.to_string()))
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Validates the file form and resolves derived quantities.
    pub fn resolve(self) -> Result<Scenario> {
        let e = &self.engine;
        if !(e.sim_step_s > 0.0 && e.sim_step_s.is_finite()) {
            return Err(Error::config("engine.sim_step_s", "must be finite and > 0"));
        }
        if !(e.duration_s >= 0.0 && e.duration_s.is_finite()) {
            return Err(Error::config("engine.duration_s", "must be finite and >= 0"));
        }
        if e.record_every == 0 {
            return Err(Error::config("engine.record_every", "must be >= 1"));
        }
        if !(e.spawn_gap_m >= 0.0 && e.spawn_gap_m.is_finite()) {
            return Err(Error::config("engine.spawn_gap_m", "must be finite and >= 0"));
        }

        let est = &self.estimator;
        if !(est.horizon_s > 0.0 && est.horizon_s.is_finite()) {
            return Err(Error::config("estimator.horizon_s", "must be finite and > 0"));
        }
        let mut estimator =
            EstimatorParams::new(est.prediction_step_s, est.horizon_s, est.a_max, est.sigma, est.v_target);
        estimator.implicit_solve = est.implicit_solve;
        estimator.validate()?;
        let refresh_every = refresh_ratio(e.sim_step_s, est.prediction_step_s)?;

        let channel = ChannelModel {
            delay_mean: self.channel.delay_mean_s,
            delay_std: self.channel.delay_std_s,
            loss_prob: self.channel.loss_prob,
            nlos_windows: self.channel.nlos_windows.iter().map(|w| (w[0], w[1])).collect(),
            seed: e.seed,
            burst: self.channel.burst,
        };
        channel.validate()?;

        self.dynamics.validate()?;
        self.control.gains.validate("control.gains")?;
        let t_gap = self.control.time_gap_s;
        if !(t_gap > 0.0 && t_gap.is_finite()) {
            return Err(Error::config("control.time_gap_s", "must be finite and > 0"));
        }
        let gains = match &self.control.gain_table {
            Some(table) => {
                table.validate("control.gain_table")?;
                table.clone()
            }
            None => GainTable::single(self.control.gains),
        };

        if self.intersections.is_empty() {
            return Err(Error::config("intersections", "at least one intersection is required"));
        }
        for (i, ix) in self.intersections.iter().enumerate() {
            ix.validate(&format!("intersections[{i}]"))?;
        }
        self.spawns.validate(&self.intersections, self.dynamics.speed_max)?;
        let spawns = self.spawns.materialize(e.seed, &self.intersections);

        let engine = EngineConfig {
            sim_step: e.sim_step_s,
            duration: e.duration_s,
            seed: e.seed,
            record_every: e.record_every,
            spawn_gap: e.spawn_gap_m,
            n_steps: (e.duration_s / e.sim_step_s).round() as u64,
            refresh_every,
        };
        Ok(Scenario {
            engine,
            channel,
            estimator,
            gains,
            time_gap: t_gap,
            limits: self.dynamics,
            intersections: self.intersections.clone(),
            spawns,
            config: self,
        })
    }
}

/// Simulation steps per estimator refresh; fails unless one step is a
/// whole multiple of the other.
pub fn refresh_ratio(sim_step: f64, prediction_step: f64) -> Result<u64> {
    let (big, small) = if prediction_step >= sim_step {
        (prediction_step, sim_step)
    } else {
        (sim_step, prediction_step)
    };
    let r = big / small;
    if (r - r.round()).abs() >= DIVISIBILITY_TOL * r {
        return Err(Error::config(
            "estimator.prediction_step_s",
            format!("{prediction_step} s and engine.sim_step_s {sim_step} s must be whole multiples of one another"),
        ));
    }
    Ok(if prediction_step >= sim_step {
        r.round() as u64
    } else {
        1
    })
}

/// Best-effort location of a JSON error: the offending key when serde names one.
fn json_error_path(e: &serde_json::Error) -> String {
    let msg = e.to_string();
    let key = msg
        .strip_prefix("unknown field `")
        .and_then(|rest| rest.split('`').next());
    match key {
        Some(key) => format!("{key} (line {}, column {})", e.line(), e.column()),
        None => format!("line {}, column {}", e.line(), e.column()),
    }
}

impl Scenario {
    pub fn from_json_str(text: &str) -> Result<Self> {
        ScenarioConfig::from_json_str(text)?.resolve()
    }

    /// Same scenario under a different seed.
    pub fn with_seed(&self, seed: u64) -> Result<Self> {
        let mut cfg = self.config.clone();
        cfg.engine.seed = seed;
        cfg.resolve()
    }

    /// Same scenario with a different prediction step; the horizon keeps its duration.
    pub fn with_prediction_step(&self, prediction_step: f64) -> Result<Self> {
        let mut cfg = self.config.clone();
        cfg.estimator.prediction_step_s = prediction_step;
        cfg.resolve()
    }
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    Scenario::from_json_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_takes_defaults() {
        let s = Scenario::from_json_str("{}").unwrap();
        assert_eq!(s.channel.delay_mean, 0.040);
        assert_eq!(s.channel.delay_std, 0.0259);
        assert_eq!(s.estimator.a_max, 0.73);
        assert_eq!(s.estimator.sigma, 4.0);
        assert_eq!(s.estimator.horizon_len, 500);
        assert_eq!(s.engine.n_steps, 3000);
        assert_eq!(s.engine.refresh_every, 1);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = ScenarioConfig::from_json_str(r#"{"chanel": {}}"#).unwrap_err();
        assert!(err.to_string().contains("chanel"), "{err}");
        let err = ScenarioConfig::from_json_str(r#"{"channel": {"loss": 0.1}}"#).unwrap_err();
        assert!(err.to_string().contains("loss"), "{err}");
    }

    #[test]
    fn step_divisibility() {
        assert!(refresh_ratio(0.02, 0.03).is_err());
        assert_eq!(refresh_ratio(0.01, 0.1).unwrap(), 10);
        assert_eq!(refresh_ratio(0.01, 1.0).unwrap(), 100);
        assert_eq!(refresh_ratio(0.01, 0.5).unwrap(), 50);
        assert_eq!(refresh_ratio(0.1, 0.1).unwrap(), 1);
        assert_eq!(refresh_ratio(0.1, 0.01).unwrap(), 1);
        let doc = r#"{"engine": {"sim_step_s": 0.02}, "estimator": {"prediction_step_s": 0.03}}"#;
        assert!(matches!(Scenario::from_json_str(doc), Err(Error::Config { .. })));
    }

    #[test]
    fn overlapping_windows_rejected() {
        let doc = r#"{"channel": {"nlos_windows": [[4, 6], [5, 8]]}}"#;
        assert!(Scenario::from_json_str(doc).is_err());
        let doc = r#"{"channel": {"nlos_windows": [[4, 6], [6, 8]]}}"#;
        assert!(Scenario::from_json_str(doc).is_ok());
    }

    #[test]
    fn normalized_echo_round_trips() {
        let cfg = ScenarioConfig::from_json_str("{}").unwrap();
        let again = ScenarioConfig::from_json_str(&cfg.to_json_pretty()).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn overrides() {
        let s = Scenario::from_json_str("{}").unwrap();
        let s2 = s.with_seed(99).unwrap();
        assert_eq!(s2.engine.seed, 99);
        assert_eq!(s2.channel.seed, 99);
        let s3 = s.with_prediction_step(0.5).unwrap();
        assert_eq!(s3.estimator.horizon_len, 10);
        assert_eq!(s3.engine.refresh_every, 50);
    }

    #[test]
    fn missing_file_is_io() {
        assert!(matches!(load_scenario("/nonexistent/cfg.json"), Err(Error::Io { .. })));
    }
}
