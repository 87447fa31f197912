//! Longitudinal point-mass dynamics.
//!
//! Every vehicle is a saturated double integrator `ṗ = v, v̇ = u` with
//! `u ∈ [u_min, u_max]` and `v ∈ [0, v_max]`. Time stepping is semi-implicit
//! Euler: the velocity is advanced and clamped first, then the position is
//! advanced with the realized velocity.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Standard gravity used to convert `g`-denominated actuation limits.
pub const GRAVITY: f64 = 9.81;

/// Default simulation time step (s).
pub const DEFAULT_DT: f64 = 0.05;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("non-finite {what}: {value}")]
    NonFinite { what: &'static str, value: f64 },
    #[error("time step must be positive and finite, got {0}")]
    BadTimeStep(f64),
    #[error("invalid actuation limits: {0}")]
    BadLimits(String),
    #[error("invalid platoon parameters: {0}")]
    BadParams(String),
}

pub(crate) fn finite(what: &'static str, value: f64) -> Result<f64, DynamicsError> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(DynamicsError::NonFinite { what, value })
    }
}

/// Actuation and velocity envelope shared by every vehicle of a platoon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActuationLimits {
    /// Maximum braking (m/s², strictly negative).
    pub u_min: f64,
    /// Maximum acceleration (m/s², strictly positive).
    pub u_max: f64,
    /// Maximum velocity (m/s, strictly positive).
    pub v_max: f64,
}

impl ActuationLimits {
    pub fn new(u_min: f64, u_max: f64, v_max: f64) -> Result<Self, DynamicsError> {
        let limits = Self { u_min, u_max, v_max };
        limits.validate()?;
        Ok(limits)
    }

    /// Full-scale highway vehicle: `u_min = -0.8 g`, `u_max = 0.5 g`, `v_max = 100 km/h`.
    pub fn highway() -> Self {
        Self {
            u_min: -0.8 * GRAVITY,
            u_max: 0.5 * GRAVITY,
            v_max: 100.0 / 3.6,
        }
    }

    /// Scaled robot platform: `±1 m/s²`, `v_max = 1.4 m/s`.
    pub fn scaled_robot() -> Self {
        Self {
            u_min: -1.0,
            u_max: 1.0,
            v_max: 1.4,
        }
    }

    pub fn validate(&self) -> Result<(), DynamicsError> {
        finite("u_min", self.u_min)?;
        finite("u_max", self.u_max)?;
        finite("v_max", self.v_max)?;
        if !(self.u_min < 0.0 && self.u_max > 0.0) {
            return Err(DynamicsError::BadLimits(format!(
                "need u_min < 0 < u_max, got u_min={} u_max={}",
                self.u_min, self.u_max
            )));
        }
        if self.v_max <= 0.0 {
            return Err(DynamicsError::BadLimits(format!(
                "need v_max > 0, got {}",
                self.v_max
            )));
        }
        Ok(())
    }

    /// Maximum braking magnitude `-u_min`.
    #[inline]
    pub fn brake(&self) -> f64 {
        -self.u_min
    }
}

/// Absolute longitudinal state of one vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VehicleState {
    pub p: f64,
    pub v: f64,
}

impl VehicleState {
    pub fn new(p: f64, v: f64) -> Self {
        Self { p, v }
    }
}

/// Relative state between a vehicle and its predecessor.
///
/// `p_tilde = p_ego - p_pred + d`, `v_tilde = v_ego - v_pred`. The gap
/// `p_pred - p_ego` equals `d - p_tilde`, so a collision is `p_tilde > d`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RelativeState {
    pub p_tilde: f64,
    pub v_tilde: f64,
}

impl RelativeState {
    /// Bumper-free gap `p_pred - p_ego` implied by this relative state.
    pub fn gap(&self, d: f64) -> f64 {
        d - self.p_tilde
    }

    pub fn is_collision(&self, d: f64) -> bool {
        self.p_tilde > d
    }
}

/// Desired spacing, cruise speed and size of the platoon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlatoonParams {
    /// Desired inter-vehicle distance (m).
    pub d: f64,
    /// Desired platoon velocity (m/s).
    pub v_des: f64,
    /// Number of vehicles, leader included.
    pub n: usize,
}

impl PlatoonParams {
    pub fn new(d: f64, v_des: f64, n: usize, limits: &ActuationLimits) -> Result<Self, DynamicsError> {
        let params = Self { d, v_des, n };
        params.validate(limits)?;
        Ok(params)
    }

    pub fn validate(&self, limits: &ActuationLimits) -> Result<(), DynamicsError> {
        finite("d", self.d)?;
        finite("v_des", self.v_des)?;
        if self.d <= 0.0 {
            return Err(DynamicsError::BadParams(format!("need d > 0, got {}", self.d)));
        }
        if !(self.v_des > 0.0 && self.v_des < limits.v_max) {
            return Err(DynamicsError::BadParams(format!(
                "need 0 < v_des < v_max = {}, got {}",
                limits.v_max, self.v_des
            )));
        }
        if self.n < 2 {
            return Err(DynamicsError::BadParams(format!(
                "a platoon needs at least 2 vehicles, got {}",
                self.n
            )));
        }
        Ok(())
    }
}

/// Clamp an acceleration command to the actuator envelope.
#[inline]
pub fn saturate(u: f64, limits: &ActuationLimits) -> f64 {
    u.clamp(limits.u_min, limits.u_max)
}

/// Advance one vehicle by `dt` under acceleration `u`.
pub fn step(
    state: VehicleState,
    u: f64,
    dt: f64,
    limits: &ActuationLimits,
) -> Result<VehicleState, DynamicsError> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(DynamicsError::BadTimeStep(dt));
    }
    finite("position", state.p)?;
    finite("velocity", state.v)?;
    finite("acceleration", u)?;
    let v = (state.v + u * dt).clamp(0.0, limits.v_max);
    let p = state.p + v * dt;
    Ok(VehicleState { p, v })
}

/// Relative state of `ego` with respect to its predecessor `pred`.
#[inline]
pub fn relative_state(pred: &VehicleState, ego: &VehicleState, d: f64) -> RelativeState {
    RelativeState {
        p_tilde: ego.p - pred.p + d,
        v_tilde: ego.v - pred.v,
    }
}
