//! Offline detector runs over a recorded trace.
//!
//! The accelerations a vehicle actually realized are recovered from its
//! velocity samples, exactly as the simulator advertises them. Overlays then
//! forge what a chosen sender would have broadcast.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attack::derive_seed;
use crate::coordinator::VehicleId;
use crate::detector::{Detector, DetectorConfig, DetectorError};

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed trace: {0}")]
    Csv(#[from] csv::Error),
    #[error("malformed trace, line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error(transparent)]
    Detector(#[from] DetectorError),
}

/// The columns replay needs from a trace row.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
pub struct RecordedRow {
    pub t: f64,
    pub vehicle_id: u32,
    pub v: f64,
    pub v_tilde: Option<f64>,
    pub vtf: Option<u32>,
}

pub fn read_trace<R: Read>(input: R) -> Result<Vec<RecordedRow>, ReplayError> {
    let mut rdr = csv::Reader::from_reader(input);
    let mut rows = Vec::new();
    for rec in rdr.deserialize() {
        let row: RecordedRow = rec?;
        if !row.t.is_finite() || !row.v.is_finite() {
            return Err(ReplayError::Malformed {
                line: rows.len() + 2,
                reason: "non-finite time or velocity".into(),
            });
        }
        rows.push(row);
    }
    Ok(rows)
}

pub fn read_trace_file(path: &Path) -> Result<Vec<RecordedRow>, ReplayError> {
    let file = std::fs::File::open(path).map_err(|source| ReplayError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_trace(file)
}

/// Forgery applied to one sender's advertised acceleration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum OverlayKind {
    /// Replace with `a sin(phi + 2π f t)`.
    Sinusoid { a: f64, f: f64, #[serde(default)] phi: f64 },
    /// Add zero-mean Gaussian noise.
    Gaussian { sd: f64, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Overlay {
    pub sender: u32,
    pub kind: OverlayKind,
    #[serde(default)]
    pub active_from: f64,
    #[serde(default = "infinity")]
    pub active_to: f64,
}

fn infinity() -> f64 {
    f64::INFINITY
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResidualSample {
    pub t: f64,
    pub receiver: VehicleId,
    pub sender: VehicleId,
    pub r: f64,
    pub sigma: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReplayAlarm {
    pub t: f64,
    pub receiver: VehicleId,
    pub sender: VehicleId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayResult {
    pub series: Vec<ResidualSample>,
    pub alarms: Vec<ReplayAlarm>,
}

impl ReplayResult {
    pub fn max_residual(&self) -> f64 {
        self.series.iter().map(|s| s.r).fold(0.0, f64::max)
    }
}

/// Run a detector on every follower of the recorded trace.
pub fn replay_detector(
    rows: &[RecordedRow],
    config: DetectorConfig,
    overlays: &[Overlay],
) -> Result<ReplayResult, ReplayError> {
    config.validate()?;
    // time grid and per-vehicle samples
    let mut by_vehicle: BTreeMap<u32, Vec<RecordedRow>> = BTreeMap::new();
    for r in rows {
        by_vehicle.entry(r.vehicle_id).or_default().push(*r);
    }
    let Some(steps) = by_vehicle.values().map(Vec::len).next() else {
        return Ok(ReplayResult {
            series: Vec::new(),
            alarms: Vec::new(),
        });
    };
    if by_vehicle.values().any(|s| s.len() != steps) {
        return Err(ReplayError::Malformed {
            line: 0,
            reason: "vehicles have different numbers of samples".into(),
        });
    }
    for s in by_vehicle.values() {
        if s.windows(2).any(|w| w[1].t <= w[0].t) {
            return Err(ReplayError::Malformed {
                line: 0,
                reason: format!("time not increasing for vehicle {}", s[0].vehicle_id),
            });
        }
    }
    let times: Vec<f64> = by_vehicle.values().next().expect("non-empty").iter().map(|r| r.t).collect();
    let realized = |id: u32, k: usize| -> Option<f64> {
        let s = by_vehicle.get(&id)?;
        (k >= 1).then(|| (s[k].v - s[k - 1].v) / (times[k] - times[k - 1]))
    };
    let mut noise: Vec<Option<(ChaCha8Rng, Normal<f64>)>> = overlays
        .iter()
        .map(|o| match o.kind {
            OverlayKind::Gaussian { sd, seed } => Some((
                ChaCha8Rng::seed_from_u64(derive_seed(seed, &[u64::from(o.sender)])),
                Normal::new(0.0, sd).map_err(|e| ReplayError::Malformed {
                    line: 0,
                    reason: format!("bad overlay: {e}"),
                }),
            )),
            OverlayKind::Sinusoid { .. } => None,
        })
        .map(|x| match x {
            Some((rng, Ok(n))) => Ok(Some((rng, n))),
            Some((_, Err(e))) => Err(e),
            None => Ok(None),
        })
        .collect::<Result<_, _>>()?;

    let mut dets: BTreeMap<u32, (Option<u32>, Detector)> = BTreeMap::new();
    let mut series = Vec::new();
    let mut alarms = Vec::new();
    for k in 0..steps {
        let t = times[k];
        // forged acceleration per sender at this step, drawn once per step
        let mut advertised: BTreeMap<u32, f64> = BTreeMap::new();
        for &id in by_vehicle.keys() {
            if let Some(u) = realized(id, k) {
                advertised.insert(id, u);
            }
        }
        for (o, n) in overlays.iter().zip(noise.iter_mut()) {
            if !(t >= o.active_from && t < o.active_to) {
                continue;
            }
            let Some(u) = advertised.get_mut(&o.sender) else { continue };
            match o.kind {
                OverlayKind::Sinusoid { a, f, phi } => *u = a * (phi + std::f64::consts::TAU * f * t).sin(),
                OverlayKind::Gaussian { .. } => {
                    let (rng, dist) = n.as_mut().expect("gaussian overlay has a stream");
                    *u += dist.sample(rng);
                }
            }
        }
        for (&id, samples) in &by_vehicle {
            let row = samples[k];
            let Some(sender) = row.vtf else {
                dets.remove(&id);
                continue;
            };
            let vt = match row.v_tilde {
                Some(x) => x,
                None => {
                    let pred = by_vehicle.get(&sender).ok_or_else(|| ReplayError::Malformed {
                        line: 0,
                        reason: format!("vehicle {id} follows unknown vehicle {sender}"),
                    })?;
                    row.v - pred[k].v
                }
            };
            // a new predecessor starts a fresh detector
            let fresh = !matches!(dets.get(&id), Some((Some(s), _)) if *s == sender);
            if fresh || k == 0 {
                dets.insert(id, (Some(sender), Detector::new(config, vt)?));
                continue;
            }
            let (Some(u_ego), Some(&u_pred)) = (realized(id, k), advertised.get(&sender)) else {
                continue;
            };
            let det = &mut dets.get_mut(&id).expect("present").1;
            let was = det.sigma;
            let r = det.step(u_ego, u_pred, vt, times[k] - times[k - 1])?;
            series.push(ResidualSample {
                t,
                receiver: VehicleId(id),
                sender: VehicleId(sender),
                r,
                sigma: det.sigma,
            });
            if was && !det.sigma {
                alarms.push(ReplayAlarm {
                    t,
                    receiver: VehicleId(id),
                    sender: VehicleId(sender),
                });
            }
        }
    }
    Ok(ReplayResult { series, alarms })
}

pub fn write_residuals<W: std::io::Write>(out: W, res: &ReplayResult) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "receiver", "sender", "r", "sigma"])?;
    for s in &res.series {
        w.write_record([
            s.t.to_string(),
            s.receiver.to_string(),
            s.sender.to_string(),
            s.r.to_string(),
            u8::from(s.sigma).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
