//! Per-vehicle longitudinal control.
//!
//! A follower applies `u = sat(u_lin + σ u_ff)`, where `u_lin` is the ACC
//! spacing law and `u_ff` is a feed-forward term built from the acceleration
//! its predecessor advertises. The safety filter bounds `u_ff` so that a
//! forged advertisement can never push the follower past the braking
//! saturation line, and removes it entirely once the state is above that line.

use serde::{Deserialize, Serialize};

use crate::dynamics::{
    finite, relative_state, saturate, ActuationLimits, DynamicsError, PlatoonParams, RelativeState,
    VehicleState,
};
use crate::gain_tuning::ControllerGains;

/// Which branch of the safety filter produced `u_ff`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FilterBranch {
    /// State is above the braking line; feed-forward removed.
    EmergencyCutoff,
    /// Feed-forward capped at `u_ff_max`.
    Clipped,
    /// Feed-forward applied unchanged.
    PassThrough,
    /// Inbound link is untrusted or absent.
    SwitchedOff,
}

impl FilterBranch {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::EmergencyCutoff => "emergency_cutoff",
            Self::Clipped => "clipped",
            Self::PassThrough => "pass_through",
            Self::SwitchedOff => "switched_off",
        }
    }
}

impl std::fmt::Display for FilterBranch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Everything the controller computed in one step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlCommand {
    pub u_lin: f64,
    /// Policy output before the safety filter (0 when no frame arrived).
    pub u_ff_raw: f64,
    /// Filtered feed-forward, before σ gating.
    pub u_ff: f64,
    pub sigma: bool,
    /// `saturate(u_lin + σ u_ff)`.
    pub u_total: f64,
    pub filter_branch: FilterBranch,
}

/// `-k p̃ - k h (v - v_des) - c ṽ`, unsaturated.
#[inline]
pub fn acc_law(rel: RelativeState, v: f64, gains: &ControllerGains, params: &PlatoonParams) -> f64 {
    -gains.k * rel.p_tilde - gains.k * gains.h * (v - params.v_des) - gains.c * rel.v_tilde
}

/// ACC spacing law evaluated on absolute states.
pub fn acc_control(
    ego: &VehicleState,
    pred: &VehicleState,
    gains: &ControllerGains,
    params: &PlatoonParams,
) -> f64 {
    acc_law(relative_state(pred, ego, params.d), ego.v, gains, params)
}

/// A feed-forward policy `π` mapping the received acceleration to `u_ff`.
pub trait FeedforwardPolicy {
    fn feedforward(&self, u_received: f64, v_ego: f64, gains: &ControllerGains, params: &PlatoonParams) -> f64;
}

/// `π(u) = u`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Identity;

impl FeedforwardPolicy for Identity {
    fn feedforward(&self, u: f64, _: f64, _: &ControllerGains, _: &PlatoonParams) -> f64 {
        u
    }
}

/// `π(u) = u + k h (v - v_des)`: also cancels the absolute damping term,
/// giving perfect relative tracking.
#[derive(Debug, Clone, Copy, Default)]
pub struct DampingCompensation;

impl FeedforwardPolicy for DampingCompensation {
    fn feedforward(&self, u: f64, v_ego: f64, gains: &ControllerGains, params: &PlatoonParams) -> f64 {
        u + gains.k * gains.h * (v_ego - params.v_des)
    }
}

/// Configuration-level choice of shipped policies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedforwardKind {
    #[default]
    Identity,
    DampingCompensation,
}

impl FeedforwardPolicy for FeedforwardKind {
    fn feedforward(&self, u: f64, v_ego: f64, gains: &ControllerGains, params: &PlatoonParams) -> f64 {
        match self {
            Self::Identity => Identity.feedforward(u, v_ego, gains, params),
            Self::DampingCompensation => DampingCompensation.feedforward(u, v_ego, gains, params),
        }
    }
}

/// Largest feed-forward the filter admits: `k (α d + h (v - v_des))`.
#[inline]
pub fn u_ff_max(v: f64, gains: &ControllerGains, params: &PlatoonParams) -> f64 {
    gains.k * (gains.alpha * params.d + gains.h * (v - params.v_des))
}

/// Three-branch feed-forward filter, branches tested in order.
pub fn safety_filter(
    u_ff_raw: f64,
    rel: RelativeState,
    v: f64,
    gains: &ControllerGains,
    params: &PlatoonParams,
) -> (f64, FilterBranch) {
    if rel.p_tilde >= params.d - gains.c_over_k() * rel.v_tilde {
        return (0.0, FilterBranch::EmergencyCutoff);
    }
    let cap = u_ff_max(v, gains, params);
    if u_ff_raw >= cap {
        (cap, FilterBranch::Clipped)
    } else {
        (u_ff_raw, FilterBranch::PassThrough)
    }
}

/// Full follower step working from a measured relative state.
///
/// `received_u` is `None` when no frame arrived (denial of service), which
/// acts like `σ = 0`.
#[allow(clippy::too_many_arguments)]
pub fn cacc_control_rel(
    rel: RelativeState,
    v: f64,
    received_u: Option<f64>,
    sigma: bool,
    gains: &ControllerGains,
    params: &PlatoonParams,
    limits: &ActuationLimits,
    policy: &dyn FeedforwardPolicy,
) -> Result<ControlCommand, DynamicsError> {
    finite("p_tilde", rel.p_tilde)?;
    finite("v_tilde", rel.v_tilde)?;
    finite("velocity", v)?;
    let u_lin = finite("u_lin", acc_law(rel, v, gains, params))?;
    let (u_ff_raw, u_ff, branch, sigma) = match received_u {
        Some(u) => {
            finite("received acceleration", u)?;
            let raw = finite("feed-forward", policy.feedforward(u, v, gains, params))?;
            let (u_ff, branch) = safety_filter(raw, rel, v, gains, params);
            if sigma {
                (raw, u_ff, branch, true)
            } else {
                (raw, u_ff, FilterBranch::SwitchedOff, false)
            }
        }
        None => (0.0, 0.0, FilterBranch::SwitchedOff, false),
    };
    let applied = if sigma { u_ff } else { 0.0 };
    Ok(ControlCommand {
        u_lin,
        u_ff_raw,
        u_ff,
        sigma,
        u_total: saturate(u_lin + applied, limits),
        filter_branch: branch,
    })
}

/// Full follower step on absolute states.
#[allow(clippy::too_many_arguments)]
pub fn cacc_control(
    ego: &VehicleState,
    pred: &VehicleState,
    received_u: Option<f64>,
    sigma: bool,
    gains: &ControllerGains,
    params: &PlatoonParams,
    limits: &ActuationLimits,
    policy: &dyn FeedforwardPolicy,
) -> Result<ControlCommand, DynamicsError> {
    let rel = relative_state(pred, ego, params.d);
    cacc_control_rel(rel, ego.v, received_u, sigma, gains, params, limits, policy)
}

/// Leader velocity tracking `u_0 = sat(-k h (v_0 - v_ref))`.
pub fn leader_control(v: f64, v_ref: f64, gains: &ControllerGains, limits: &ActuationLimits) -> f64 {
    saturate(-gains.k * gains.h * (v - v_ref), limits)
}
