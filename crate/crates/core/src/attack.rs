//! V2V frames and the attacker's channel model.
//!
//! Only outbound data of a compromised vehicle is corrupted; physical states
//! and onboard sensing are never touched. Each attacked link owns its own
//! filter memory and random stream so channels stay independent.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coordinator::{DeltaVec, VehicleId};
use crate::dynamics::ActuationLimits;

/// Payload a vehicle broadcasts every step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CommFrame {
    pub sender_id: VehicleId,
    /// Advertised acceleration.
    pub u: f64,
    /// Advertised velocity.
    pub v: f64,
    /// Advertised map position.
    pub p: f64,
    pub delta: DeltaVec,
}

/// What the attacker does to a link while active.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum AttackKind {
    None,
    /// Adds `bias` to the true acceleration, clamped to the limits.
    Additive { bias: f64 },
    ReplaceConstant { c: f64 },
    /// `a sin(phi + 2π f t)`.
    ReplaceSinusoid { a: f64, phi: f64, f: f64 },
    /// Uniform noise on `[u_min, u_max]` through a first-order filter.
    ReplaceFilteredNoise { tau: f64, seed: u64 },
    /// Frame never arrives.
    DenialOfService,
    /// `u_max` and `u_min` alternating every `period` seconds, starting with `u_max`.
    AlternatingExtremes { period: f64 },
    /// Broadcast topology row replaced.
    FalseTopology { delta: DeltaVec },
}

fn default_to() -> f64 {
    f64::INFINITY
}

/// An attack and its activity window `[active_from, active_to)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSpec {
    pub kind: AttackKind,
    #[serde(default)]
    pub active_from: f64,
    #[serde(default = "default_to")]
    pub active_to: f64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AttackError {
    #[error("invalid activity window [{from}, {to})")]
    BadWindow { from: f64, to: f64 },
    #[error("invalid attack parameter: {0}")]
    BadParam(String),
}

impl AttackSpec {
    pub fn always(kind: AttackKind) -> Self {
        Self {
            kind,
            active_from: 0.0,
            active_to: f64::INFINITY,
        }
    }

    pub fn window(kind: AttackKind, active_from: f64, active_to: f64) -> Self {
        Self {
            kind,
            active_from,
            active_to,
        }
    }

    pub fn is_active(&self, t: f64) -> bool {
        t >= self.active_from && t < self.active_to
    }

    pub fn validate(&self, limits: &ActuationLimits) -> Result<(), AttackError> {
        if !(self.active_from.is_finite() && self.active_from >= 0.0 && self.active_from < self.active_to)
            || self.active_to.is_nan()
        {
            return Err(AttackError::BadWindow {
                from: self.active_from,
                to: self.active_to,
            });
        }
        let bad = |m: String| Err(AttackError::BadParam(m));
        match self.kind {
            AttackKind::Additive { bias } if !bias.is_finite() => bad(format!("bias {bias}")),
            AttackKind::ReplaceConstant { c } if !(limits.u_min..=limits.u_max).contains(&c) => {
                bad(format!("constant {c} outside [{}, {}]", limits.u_min, limits.u_max))
            }
            AttackKind::ReplaceSinusoid { a, phi, f } => {
                let cap = limits.u_max.min(limits.brake());
                if !(a.is_finite() && phi.is_finite() && f.is_finite()) || a.abs() > cap || f < 0.0 {
                    bad(format!("sinusoid a={a} phi={phi} f={f} (|a| must be <= {cap})"))
                } else {
                    Ok(())
                }
            }
            AttackKind::ReplaceFilteredNoise { tau, .. } if !(tau.is_finite() && tau > 0.0) => {
                bad(format!("filter time constant {tau}"))
            }
            AttackKind::AlternatingExtremes { period } if !(period.is_finite() && period > 0.0) => {
                bad(format!("period {period}"))
            }
            _ => Ok(()),
        }
    }
}

/// Per-link attacker memory.
#[derive(Debug, Clone)]
pub struct ChannelState {
    pub filter_state: f64,
    rng: ChaCha8Rng,
}

impl ChannelState {
    pub fn new(seed: u64) -> Self {
        Self {
            filter_state: 0.0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Fresh state for `spec`, seeded from the spec's own noise seed when it has one.
    pub fn for_spec(spec: &AttackSpec) -> Self {
        match spec.kind {
            AttackKind::ReplaceFilteredNoise { seed, .. } => Self::new(seed),
            _ => Self::new(0),
        }
    }
}

/// Pass `frame` through the attacked channel at time `t`.
///
/// Returns `None` when the frame is dropped.
pub fn apply_attack(
    frame: CommFrame,
    t: f64,
    dt: f64,
    spec: &AttackSpec,
    state: &mut ChannelState,
    limits: &ActuationLimits,
) -> Option<CommFrame> {
    if !spec.is_active(t) {
        return Some(frame);
    }
    let clamp = |u: f64| u.clamp(limits.u_min, limits.u_max);
    let mut out = frame;
    match spec.kind {
        AttackKind::None => {}
        AttackKind::Additive { bias } => out.u = clamp(frame.u + bias),
        AttackKind::ReplaceConstant { c } => out.u = clamp(c),
        AttackKind::ReplaceSinusoid { a, phi, f } => out.u = clamp(a * (phi + f * TAU * t).sin()),
        AttackKind::ReplaceFilteredNoise { tau, .. } => {
            let e = state.rng.random_range(limits.u_min..=limits.u_max);
            state.filter_state += (dt / tau) * (e - state.filter_state);
            out.u = clamp(state.filter_state);
        }
        AttackKind::DenialOfService => return None,
        AttackKind::AlternatingExtremes { period } => {
            let phase = ((t - spec.active_from) / period).floor() as i64;
            out.u = if phase % 2 == 0 { limits.u_max } else { limits.u_min };
        }
        AttackKind::FalseTopology { delta } => out.delta = delta,
    }
    Some(out)
}

/// Attack families sampled by campaigns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RandomAttack {
    Constant,
    Sinusoid,
    FilteredNoise,
}

impl RandomAttack {
    pub const ALL: [RandomAttack; 3] = [Self::Constant, Self::Sinusoid, Self::FilteredNoise];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Constant => "constant",
            Self::Sinusoid => "sinusoid",
            Self::FilteredNoise => "filtered_noise",
        }
    }

    fn tag(self) -> u64 {
        match self {
            Self::Constant => 1,
            Self::Sinusoid => 2,
            Self::FilteredNoise => 3,
        }
    }
}

impl std::str::FromStr for RandomAttack {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown attack kind {s:?} (expected constant, sinusoid or filtered_noise)"))
    }
}

/// Sampling ranges for the parameters the attack model leaves open.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomRanges {
    pub f_lo: f64,
    pub f_hi: f64,
    pub tau_lo: f64,
    pub tau_hi: f64,
}

impl Default for RandomRanges {
    fn default() -> Self {
        Self {
            f_lo: 0.05,
            f_hi: 2.0,
            tau_lo: 0.1,
            tau_hi: 2.0,
        }
    }
}

/// Draw attack parameters of the given family.
pub fn randomize_attack_params<R: Rng + ?Sized>(
    family: RandomAttack,
    limits: &ActuationLimits,
    ranges: &RandomRanges,
    rng: &mut R,
) -> AttackKind {
    match family {
        RandomAttack::Constant => AttackKind::ReplaceConstant {
            c: rng.random_range(limits.u_min..=limits.u_max),
        },
        RandomAttack::Sinusoid => AttackKind::ReplaceSinusoid {
            a: rng.random_range(0.0..=limits.u_max.min(limits.brake())),
            phi: rng.random_range(0.0..TAU),
            f: rng.random_range(ranges.f_lo..=ranges.f_hi),
        },
        RandomAttack::FilteredNoise => AttackKind::ReplaceFilteredNoise {
            tau: rng.random_range(ranges.tau_lo..=ranges.tau_hi),
            seed: rng.next_u64(),
        },
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mix a master seed with a path of indices into an independent stream seed.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix64(master), |acc, &x| splitmix64(acc ^ splitmix64(x)))
}

/// Seed of the stream that parametrizes `vehicle`'s attack in run `run`.
pub fn attack_stream_seed(master: u64, family: RandomAttack, run: u64, vehicle: u32) -> u64 {
    derive_seed(master, &[family.tag(), run, u64::from(vehicle)])
}
