//! Residual-based detection of forged acceleration data.
//!
//! A constant-gain Kalman filter predicts the relative velocity from the
//! ego command and the acceleration the predecessor advertises, then blends
//! in the measurement:
//!
//! ```text
//! v⁻     = v̂ + dt (u_ego - u_pred)
//! v̂'     = (1 - K) v⁻ + K ṽ_meas
//! r      = |v̂' - ṽ_meas|
//! ```
//!
//! Truthful data keeps `r` at zero; a forged `u_pred` makes the prediction
//! drift. The link is distrusted (σ = 0) once `r > r̄` has held for the
//! configured persistence time, and stays distrusted until [`Detector::reset`].

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DetectorError {
    #[error("invalid detector configuration: {0}")]
    BadConfig(String),
    #[error("non-finite detector input {what}: {value}")]
    NonFinite { what: &'static str, value: f64 },
    #[error("time step must be positive and finite, got {0}")]
    BadTimeStep(f64),
}

/// Tuning of the detector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorConfig {
    /// Kalman gain `K` in `(0, 1)`.
    pub gain: f64,
    /// Residual threshold `r̄` (m/s).
    pub threshold: f64,
    /// Required duration of consecutive exceedance (s).
    pub persistence: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            gain: 0.05,
            threshold: 0.75,
            persistence: 0.5,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<(), DetectorError> {
        if !(self.gain > 0.0 && self.gain < 1.0) {
            return Err(DetectorError::BadConfig(format!("gain must lie in (0, 1), got {}", self.gain)));
        }
        if !(self.threshold > 0.0 && self.threshold.is_finite()) {
            return Err(DetectorError::BadConfig(format!(
                "threshold must be positive, got {}",
                self.threshold
            )));
        }
        if !(self.persistence >= 0.0 && self.persistence.is_finite()) {
            return Err(DetectorError::BadConfig(format!(
                "persistence must be non-negative, got {}",
                self.persistence
            )));
        }
        Ok(())
    }

    /// Steady-state residual under a constant forged offset `delta`.
    pub fn steady_residual(&self, delta: f64, dt: f64) -> f64 {
        delta.abs() * dt * (1.0 - self.gain) / self.gain
    }

    /// Smallest constant offset whose steady-state residual exceeds the threshold.
    pub fn detectable_offset(&self, dt: f64) -> f64 {
        self.threshold * self.gain / (dt * (1.0 - self.gain))
    }
}

/// Residual after `m` steps of a constant offset `delta`, starting from a
/// consistent estimate.
pub fn residual_closed_form(delta: f64, dt: f64, gain: f64, m: u32) -> f64 {
    let q = 1.0 - gain;
    delta.abs() * dt * q * (1.0 - q.powi(m as i32)) / gain
}

// Absorbs the rounding of repeated `clock += dt` against the persistence time.
const CLOCK_TOL: f64 = 1e-9;

/// Detector instance owned by one follower.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detector {
    pub config: DetectorConfig,
    pub v_hat: f64,
    pub exceed_clock: f64,
    pub sigma: bool,
    pub latched: bool,
    pub last_residual: f64,
}

impl Detector {
    /// New detector initialized on the first measured relative velocity.
    pub fn new(config: DetectorConfig, v_tilde_measured: f64) -> Result<Self, DetectorError> {
        config.validate()?;
        let v_hat = check("v_tilde", v_tilde_measured)?;
        Ok(Self {
            config,
            v_hat,
            exceed_clock: 0.0,
            sigma: true,
            latched: false,
            last_residual: 0.0,
        })
    }

    /// One filter update; returns the residual.
    pub fn step(&mut self, u_ego: f64, u_pred: f64, v_tilde_measured: f64, dt: f64) -> Result<f64, DetectorError> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(DetectorError::BadTimeStep(dt));
        }
        check("u_ego", u_ego)?;
        check("u_pred", u_pred)?;
        check("v_tilde", v_tilde_measured)?;
        let k = self.config.gain;
        let prior = self.v_hat + dt * (u_ego - u_pred);
        self.v_hat = (1.0 - k) * prior + k * v_tilde_measured;
        let r = (self.v_hat - v_tilde_measured).abs();
        if r > self.config.threshold {
            self.exceed_clock += dt;
        } else {
            self.exceed_clock = 0.0;
        }
        if !self.latched && self.exceed_clock > 0.0 && self.exceed_clock + CLOCK_TOL >= self.config.persistence {
            self.latched = true;
            self.sigma = false;
        }
        self.last_residual = r;
        Ok(r)
    }

    /// Re-trust the link and re-anchor the estimate on the current measurement.
    pub fn reset(&mut self, v_tilde_measured: f64) {
        self.v_hat = v_tilde_measured;
        self.exceed_clock = 0.0;
        self.sigma = true;
        self.latched = false;
        self.last_residual = 0.0;
    }

    /// Whether the inbound link is currently trusted.
    pub fn is_trusted(&self) -> bool {
        self.sigma
    }
}

fn check(what: &'static str, value: f64) -> Result<f64, DetectorError> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(DetectorError::NonFinite { what, value })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const DT: f64 = 0.05;

    #[test]
    fn truthful_inputs_give_zero_residual() {
        let mut det = Detector::new(DetectorConfig::default(), 0.3).unwrap();
        let (mut vt, u_pred) = (0.3, -0.4);
        for k in 0..1000 {
            let u_ego = 0.5 * ((k as f64) * 0.1).sin();
            vt += DT * (u_ego - u_pred);
            let r = det.step(u_ego, u_pred, vt, DT).unwrap();
            assert!(r < 1e-12, "step {k}: r={r}");
        }
        assert!(det.sigma);
    }

    #[test]
    fn closed_form_matches_iteration() {
        for &(delta, k) in &[(1.0, 0.05), (-3.0, 0.2), (0.4, 0.5)] {
            let cfg = DetectorConfig {
                gain: k,
                threshold: 1e9,
                persistence: 0.5,
            };
            let mut det = Detector::new(cfg, 0.0).unwrap();
            for m in 1..=400u32 {
                // true u_pred = 0, advertised u_pred = delta, no relative motion
                let r = det.step(0.0, delta, 0.0, DT).unwrap();
                let expect = residual_closed_form(delta, DT, k, m);
                assert!((r - expect).abs() <= 1e-12 * expect.max(1e-300), "m={m} r={r} expect={expect}");
            }
            let inf = cfg.steady_residual(delta, DT);
            assert!((det.last_residual - inf).abs() < 1e-6 * inf);
        }
    }

    #[test]
    fn persistence_latches_and_reset_clears() {
        let cfg = DetectorConfig::default();
        let mut det = Detector::new(cfg, 0.0).unwrap();
        let mut first_exceed = None;
        let mut alarm = None;
        for m in 1..=400u32 {
            let r = det.step(0.0, 1.0, 0.0, DT).unwrap();
            if r > cfg.threshold && first_exceed.is_none() {
                first_exceed = Some(m);
            }
            if !det.sigma && alarm.is_none() {
                alarm = Some(m);
            }
        }
        let (fe, al) = (first_exceed.unwrap(), alarm.unwrap());
        // ten steps of 0.05 s make up the 0.5 s persistence
        assert_eq!(al - fe + 1, 10);
        assert!(det.latched);
        det.reset(0.0);
        assert!(det.sigma && !det.latched && det.exceed_clock == 0.0);
        assert_eq!(det.step(0.0, 0.0, 0.0, DT).unwrap(), 0.0);
        // a fresh attack after reset re-alarms with the same latency
        let mut again = None;
        for m in 1..=400u32 {
            det.step(0.0, 1.0, 0.0, DT).unwrap();
            if !det.sigma {
                again = Some(m);
                break;
            }
        }
        assert_eq!(again, Some(al));
    }

    #[test]
    fn latch_survives_residual_drop() {
        let mut det = Detector::new(DetectorConfig::default(), 0.0).unwrap();
        for _ in 0..200 {
            det.step(0.0, 2.0, 0.0, DT).unwrap();
        }
        assert!(!det.sigma);
        for _ in 0..500 {
            det.step(0.0, 0.0, 0.0, DT).unwrap();
        }
        assert!(!det.sigma);
    }

    #[test]
    fn zero_persistence_alarms_on_first_exceedance() {
        let cfg = DetectorConfig {
            persistence: 0.0,
            ..DetectorConfig::default()
        };
        let mut det = Detector::new(cfg, 0.0).unwrap();
        loop {
            let r = det.step(0.0, 1.0, 0.0, DT).unwrap();
            if r > cfg.threshold {
                assert!(!det.sigma);
                break;
            }
            assert!(det.sigma);
        }
    }

    #[test]
    fn detectability_threshold() {
        let cfg = DetectorConfig::default();
        let thr = cfg.detectable_offset(DT);
        assert!((cfg.steady_residual(thr, DT) - cfg.threshold).abs() < 1e-12);
        assert!(cfg.steady_residual(1.1 * thr, DT) > cfg.threshold);
        assert!(cfg.steady_residual(0.9 * thr, DT) < cfg.threshold);
        // unit offset at the simulation step is detectable with the default tuning
        assert!(thr < 1.0);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(Detector::new(DetectorConfig { gain: 1.0, ..Default::default() }, 0.0).is_err());
        assert!(Detector::new(DetectorConfig { threshold: 0.0, ..Default::default() }, 0.0).is_err());
        let mut det = Detector::new(DetectorConfig::default(), 0.0).unwrap();
        assert!(det.step(f64::NAN, 0.0, 0.0, DT).is_err());
        assert!(det.step(0.0, 0.0, 0.0, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn smaller_gain_gives_larger_residual(k1 in 0.01f64..0.98, frac in 0.05f64..0.95, delta in 0.01f64..10.0) {
            let k2 = k1 + frac * (0.99 - k1);
            let a = DetectorConfig { gain: k1, ..Default::default() }.steady_residual(delta, DT);
            let b = DetectorConfig { gain: k2, ..Default::default() }.steady_residual(delta, DT);
            prop_assert!(a > b);
        }
    }
}
