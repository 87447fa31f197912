//! Scenario files.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attack::{AttackKind, AttackSpec};
use crate::controllers::FeedforwardKind;
use crate::detector::DetectorConfig;
use crate::dynamics::{ActuationLimits, PlatoonParams, DEFAULT_DT};
use crate::gain_tuning::{gains_for_headway, tune_gains, ControllerGains, HeadwaySearch};
use crate::rearrange::RearrangeConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("cannot parse scenario: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError::Invalid(msg.into()))
}

/// How the controller gains are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum GainsConfig {
    /// Smallest admissible headway on a grid of the given resolution.
    Auto {
        #[serde(default = "default_resolution")]
        resolution: f64,
    },
    /// Gains computed from a fixed headway.
    Headway { h: f64 },
    Explicit { k: f64, h: f64, c: f64 },
}

fn default_resolution() -> f64 {
    HeadwaySearch::DEFAULT_RESOLUTION
}

impl Default for GainsConfig {
    fn default() -> Self {
        GainsConfig::Auto {
            resolution: HeadwaySearch::DEFAULT_RESOLUTION,
        }
    }
}

/// Leader velocity reference `v_des + A sin(2π t / T)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sinusoid {
    pub amplitude: f64,
    pub period: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LeaderProfile {
    /// Oscillation around `v_des`; absent means a constant reference.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sinusoid: Option<Sinusoid>,
    /// Time at which the leader starts braking at `u_min` to a standstill.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub emergency_brake_at: Option<f64>,
}

impl LeaderProfile {
    pub fn v_ref(&self, t: f64, v_des: f64) -> f64 {
        match self.sinusoid {
            Some(s) => v_des + s.amplitude * (std::f64::consts::TAU * t / s.period).sin(),
            None => v_des,
        }
    }

    pub fn braking(&self, t: f64) -> bool {
        self.emergency_brake_at.is_some_and(|tb| t >= tb)
    }
}

/// Attack on the outbound link of `sender`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkAttack {
    pub sender: u32,
    pub kind: AttackKind,
    #[serde(default)]
    pub active_from: f64,
    #[serde(default = "infinity")]
    pub active_to: f64,
    /// Offset added to the advertised velocity while active. Only honored
    /// when `attack_velocity_channel` is enabled.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub velocity_bias: f64,
}

fn infinity() -> f64 {
    f64::INFINITY
}

fn is_zero(x: &f64) -> bool {
    *x == 0.0
}

impl LinkAttack {
    pub fn new(sender: u32, spec: AttackSpec) -> Self {
        Self {
            sender,
            kind: spec.kind,
            active_from: spec.active_from,
            active_to: spec.active_to,
            velocity_bias: 0.0,
        }
    }

    pub fn spec(&self) -> AttackSpec {
        AttackSpec::window(self.kind, self.active_from, self.active_to)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorSection {
    #[serde(default)]
    pub enabled: bool,
    #[serde(default = "default_gain")]
    pub gain: f64,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default = "default_persistence")]
    pub persistence: f64,
}

fn default_gain() -> f64 {
    DetectorConfig::default().gain
}
fn default_threshold() -> f64 {
    DetectorConfig::default().threshold
}
fn default_persistence() -> f64 {
    DetectorConfig::default().persistence
}

impl Default for DetectorSection {
    fn default() -> Self {
        let d = DetectorConfig::default();
        Self {
            enabled: false,
            gain: d.gain,
            threshold: d.threshold,
            persistence: d.persistence,
        }
    }
}

impl DetectorSection {
    pub fn config(&self) -> DetectorConfig {
        DetectorConfig {
            gain: self.gain,
            threshold: self.threshold,
            persistence: self.persistence,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoordinatorSection {
    #[serde(default)]
    pub enabled: bool,
    /// Prefer optima that keep the current leader.
    #[serde(default = "yes")]
    pub keep_leader: bool,
    #[serde(default)]
    pub rearrange: RearrangeConfig,
}

fn yes() -> bool {
    true
}

impl Default for CoordinatorSection {
    fn default() -> Self {
        Self {
            enabled: false,
            keep_leader: true,
            rearrange: RearrangeConfig::default(),
        }
    }
}

/// Window over which gap statistics are collected (s).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsSection {
    #[serde(default)]
    pub window_start: f64,
    #[serde(default = "infinity")]
    pub window_end: f64,
}

impl Default for MetricsSection {
    fn default() -> Self {
        Self {
            window_start: 0.0,
            window_end: f64::INFINITY,
        }
    }
}

/// A complete simulation scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    pub duration: f64,
    /// Feed-forward authority fraction.
    #[serde(default = "one")]
    pub alpha: f64,
    /// Use the communicated acceleration at all (false gives plain ACC).
    #[serde(default = "yes")]
    pub cacc: bool,
    #[serde(default)]
    pub feedforward: FeedforwardKind,
    /// Standard deviation of Gaussian noise on the measured relative velocity.
    #[serde(default)]
    pub sensor_noise_sd: f64,
    /// Allow attacks to alter the advertised velocity.
    #[serde(default)]
    pub attack_velocity_channel: bool,
    pub platoon: PlatoonParams,
    pub limits: ActuationLimits,
    #[serde(default)]
    pub gains: GainsConfig,
    #[serde(default)]
    pub leader: LeaderProfile,
    #[serde(default)]
    pub attacks: Vec<LinkAttack>,
    #[serde(default)]
    pub detector: DetectorSection,
    #[serde(default)]
    pub coordinator: CoordinatorSection,
    #[serde(default)]
    pub metrics: MetricsSection,
}

fn default_dt() -> f64 {
    DEFAULT_DT
}

fn one() -> f64 {
    1.0
}

impl ScenarioConfig {
    /// A constant-speed scenario with default options.
    pub fn new(platoon: PlatoonParams, limits: ActuationLimits, duration: f64) -> Self {
        Self {
            seed: 0,
            dt: DEFAULT_DT,
            duration,
            alpha: 1.0,
            cacc: true,
            feedforward: FeedforwardKind::Identity,
            sensor_noise_sd: 0.0,
            attack_velocity_channel: false,
            platoon,
            limits,
            gains: GainsConfig::default(),
            leader: LeaderProfile::default(),
            attacks: Vec::new(),
            detector: DetectorSection::default(),
            coordinator: CoordinatorSection::default(),
            metrics: MetricsSection::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return invalid(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return invalid(format!("duration must be positive, got {}", self.duration));
        }
        self.limits.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.platoon
            .validate(&self.limits)
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if !(0.0..=1.0).contains(&self.alpha) {
            return invalid(format!("alpha must lie in [0, 1], got {}", self.alpha));
        }
        if !(self.sensor_noise_sd >= 0.0 && self.sensor_noise_sd.is_finite()) {
            return invalid(format!("sensor_noise_sd must be non-negative, got {}", self.sensor_noise_sd));
        }
        if let Some(s) = self.leader.sinusoid {
            if !(s.amplitude >= 0.0 && s.amplitude.is_finite() && s.period > 0.0 && s.period.is_finite()) {
                return invalid("leader sinusoid needs amplitude >= 0 and period > 0");
            }
        }
        if let Some(tb) = self.leader.emergency_brake_at {
            if !(tb >= 0.0 && tb.is_finite()) {
                return invalid(format!("emergency_brake_at must be non-negative, got {tb}"));
            }
        }
        for a in &self.attacks {
            if a.sender == 0 || a.sender as usize > self.platoon.n {
                return invalid(format!("attack sender {} is not a vehicle (1..={})", a.sender, self.platoon.n));
            }
            a.spec()
                .validate(&self.limits)
                .map_err(|e| ConfigError::Invalid(format!("attack on vehicle {}: {e}", a.sender)))?;
            if a.velocity_bias != 0.0 && !self.attack_velocity_channel {
                return invalid("velocity_bias requires attack_velocity_channel = true");
            }
            if !a.velocity_bias.is_finite() {
                return invalid("velocity_bias must be finite");
            }
        }
        if self.detector.enabled {
            self.detector
                .config()
                .validate()
                .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        let r = &self.coordinator.rearrange;
        if !(r.lane_change_duration > 0.0 && r.horizon > 0.0 && r.slow_factor > 0.0 && r.fast_factor > 0.0) {
            return invalid("rearrange durations and speed factors must be positive");
        }
        if self.coordinator.enabled && !self.detector.enabled {
            return invalid("the coordinator reacts to detector alarms; enable the detector too");
        }
        self.gains()?;
        Ok(())
    }

    /// Gains selected by the `gains` section, with `alpha` applied.
    pub fn gains(&self) -> Result<ControllerGains, ConfigError> {
        let p = &self.platoon;
        let mut g = match self.gains {
            GainsConfig::Auto { resolution } => {
                tune_gains(p.d, p.v_des, &self.limits, &HeadwaySearch::with_resolution(resolution))
            }
            GainsConfig::Headway { h } => gains_for_headway(p.d, h, p.v_des, &self.limits),
            GainsConfig::Explicit { k, h, c } => Ok(ControllerGains { k, h, c, alpha: 1.0 }),
        }
        .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        g.alpha = self.alpha;
        g.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(g)
    }
}
