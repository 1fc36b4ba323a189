//! High-level longitudinal plant: a saturated double integrator.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::types::VehicleState;

/// Actuator and speed saturation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DynamicsLimits {
    /// m/s²
    pub accel_max: f64,
    /// Braking magnitude, m/s².
    pub decel_max: f64,
    /// m/s
    pub speed_max: f64,
}

impl Default for DynamicsLimits {
    fn default() -> Self {
        Self {
            accel_max: 3.0,
            decel_max: 5.0,
            speed_max: 20.0,
        }
    }
}

impl DynamicsLimits {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("dynamics.accel_max", self.accel_max),
            ("dynamics.decel_max", self.decel_max),
            ("dynamics.speed_max", self.speed_max),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(name, "must be finite and > 0"));
            }
        }
        Ok(())
    }

    pub fn saturate(&self, accel_cmd: f64) -> f64 {
        accel_cmd.clamp(-self.decel_max, self.accel_max)
    }
}

/// Advances `state` by `dt` under `accel_cmd`.
///
/// Forward Euler: position moves with the speed held at the start of the
/// step, then the speed is updated with the saturated command.
pub fn step_vehicle(state: &VehicleState, accel_cmd: f64, dt: f64, limits: &DynamicsLimits) -> Result<VehicleState> {
    debug_assert!(dt > 0.0);
    let accel_cmd = ensure_finite(accel_cmd, "acceleration command")?;
    let accel = limits.saturate(accel_cmd);
    let position = state.position + state.speed * dt;
    let speed = (state.speed + accel * dt).clamp(0.0, limits.speed_max);
    Ok(VehicleState {
        position,
        speed,
        accel,
        ..*state
    })
}
