//! Per-run metrics.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::coordinator::VehicleId;

/// Running mean / standard deviation / extrema.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GapStats {
    pub count: usize,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct Accumulator {
    count: usize,
    mean: f64,
    m2: f64,
    min: f64,
    max: f64,
}

impl Accumulator {
    pub(crate) fn push(&mut self, x: f64) {
        if self.count == 0 {
            self.min = x;
            self.max = x;
        } else {
            self.min = self.min.min(x);
            self.max = self.max.max(x);
        }
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub(crate) fn finish(&self) -> Option<GapStats> {
        (self.count > 0).then(|| GapStats {
            count: self.count,
            mean: self.mean,
            std: (self.m2 / self.count as f64).max(0.0).sqrt(),
            min: self.min,
            max: self.max,
        })
    }
}

/// First time two vehicles sharing a lane crossed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Collision {
    pub time: f64,
    pub ahead: VehicleId,
    pub behind: VehicleId,
}

/// Detector alarm raised by `receiver` on the link from `sender`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Alarm {
    pub time: f64,
    pub receiver: VehicleId,
    pub sender: VehicleId,
    /// Whether the sender's acceleration was being forged at that time.
    pub genuine: bool,
}

/// Summary of one simulation run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunMetrics {
    /// Simulated time at the end of the run (s).
    pub end_time: f64,
    pub steps: usize,
    /// Smallest gap to the vehicle directly ahead in the same lane, per vehicle.
    /// Vehicles that were never behind anyone are absent.
    pub min_gap: BTreeMap<VehicleId, f64>,
    pub collision: Option<Collision>,
    /// Gap to the assigned predecessor inside the metrics window.
    pub gap_stats: BTreeMap<VehicleId, GapStats>,
    /// Smallest gap before the emergency brake (or over the whole run without one).
    pub min_gap_attack_phase: f64,
    /// Smallest gap from the emergency brake on; infinite without one.
    pub min_gap_brake_phase: f64,
    pub alarms: Vec<Alarm>,
    /// Time from the start of each forged link to its first genuine alarm.
    pub detection_latency: BTreeMap<VehicleId, Option<f64>>,
    pub false_alarms: usize,
    pub reconfiguration_started: Option<f64>,
    pub reconfiguration_completed: Option<f64>,
    /// Largest residual observed after a reconfiguration completed.
    pub max_residual_after_reconfiguration: Option<f64>,
    pub final_order: Vec<VehicleId>,
}

impl RunMetrics {
    pub fn collided(&self) -> bool {
        self.collision.is_some()
    }

    /// Smallest same-lane gap over all vehicles.
    pub fn overall_min_gap(&self) -> f64 {
        self.min_gap.values().copied().fold(f64::INFINITY, f64::min)
    }
}
