//! The synchronous simulation loop.
//!
//! Each step: frames are broadcast through the (possibly attacked) channels,
//! followers sense their predecessor, detectors update, the coordinator
//! reacts to new alarms, the lane supervisor runs while a reconfiguration is
//! in progress, controllers compute commands and the dynamics advance.
//! Frames always advertise the acceleration a vehicle actually realized in
//! the previous step, so velocity clamping never looks like an attack.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use super::config::{ConfigError, ScenarioConfig};
use super::metrics::{Accumulator, Alarm, Collision, RunMetrics};
use crate::attack::{apply_attack, derive_seed, AttackKind, AttackSpec, ChannelState, CommFrame};
use crate::controllers::{cacc_control_rel, leader_control, FilterBranch};
use crate::coordinator::{isolate_compromised_with, majority_repair, ForbiddenLinks, TopologyError, TopologyMatrix, VehicleId};
use crate::detector::{Detector, DetectorError};
use crate::dynamics::{relative_state, step, DynamicsError, RelativeState, VehicleState};
use crate::gain_tuning::ControllerGains;
use crate::rearrange::{Lane, RearrangeError, Rearranger, SpeedLevel};

const NOISE_STREAM: u64 = 0x006e_6f69_7365;
const CHANNEL_STREAM: u64 = 0x6368_616e;
/// Extra simulated time after every vehicle has stopped.
const STOP_TAIL: f64 = 2.0;
/// Speed below which a vehicle counts as stopped (m/s).
const STANDSTILL: f64 = 1e-3;
/// Upper bound on the braking phase.
const BRAKE_CAP: f64 = 300.0;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("step {step}: {source}")]
    Dynamics { step: usize, source: DynamicsError },
    #[error("step {step}: {source}")]
    Detector { step: usize, source: DetectorError },
    #[error("step {step}: {source}")]
    Topology { step: usize, source: TopologyError },
    #[error("step {step}: {source}")]
    Rearrange { step: usize, source: RearrangeError },
    #[error("step {step}: coordinator copies disagree on the new topology")]
    Disagreement { step: usize },
}

/// One vehicle at one time step.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub t: f64,
    pub vehicle_id: VehicleId,
    pub p: f64,
    pub v: f64,
    pub u_lin: f64,
    pub u_ff_raw: Option<f64>,
    pub u_ff: f64,
    pub u_total: f64,
    pub filter_branch: Option<FilterBranch>,
    pub gap: Option<f64>,
    pub p_tilde: Option<f64>,
    pub v_tilde: Option<f64>,
    pub sigma: bool,
    pub r: f64,
    pub lane: Lane,
    pub v_level: SpeedLevel,
    pub vtf: Option<VehicleId>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub trace: Vec<TraceRow>,
    pub metrics: RunMetrics,
}

/// Run a scenario and keep the full trace.
pub fn run_scenario(config: &ScenarioConfig) -> Result<RunOutput, SimError> {
    Simulation::new(config)?.run(true)
}

/// Run a scenario keeping only the metrics.
pub fn run_metrics(config: &ScenarioConfig) -> Result<RunMetrics, SimError> {
    Ok(Simulation::new(config)?.run(false)?.metrics)
}

struct Link {
    spec: AttackSpec,
    state: ChannelState,
    velocity_bias: f64,
}

impl Link {
    fn forges_u(&self, t: f64) -> bool {
        self.spec.is_active(t) && !matches!(self.spec.kind, AttackKind::None | AttackKind::FalseTopology { .. })
    }
}

struct Reconfiguration {
    supervisor: Rearranger,
    target: TopologyMatrix,
}

struct Simulation<'a> {
    cfg: &'a ScenarioConfig,
    gains: ControllerGains,
    ids: Vec<VehicleId>,
    states: Vec<VehicleState>,
    prev_u: Vec<f64>,
    topology: TopologyMatrix,
    links: Vec<Vec<Link>>,
    detectors: Vec<Option<Detector>>,
    forbidden: ForbiddenLinks,
    reconfig: Option<Reconfiguration>,
    noise: Option<(ChaCha8Rng, Normal<f64>)>,
}

fn idx(id: VehicleId) -> usize {
    id.0 as usize - 1
}

impl<'a> Simulation<'a> {
    fn new(cfg: &'a ScenarioConfig) -> Result<Self, SimError> {
        cfg.validate()?;
        let gains = cfg.gains()?;
        let n = cfg.platoon.n;
        let ids: Vec<VehicleId> = (1..=n as u32).map(VehicleId).collect();
        let states: Vec<VehicleState> = (0..n)
            .map(|i| VehicleState::new(-(i as f64) * cfg.platoon.d, cfg.platoon.v_des))
            .collect();
        let mut links: Vec<Vec<Link>> = (0..n).map(|_| Vec::new()).collect();
        for (j, a) in cfg.attacks.iter().enumerate() {
            let spec = a.spec();
            let state = match spec.kind {
                AttackKind::ReplaceFilteredNoise { .. } => ChannelState::for_spec(&spec),
                _ => ChannelState::new(derive_seed(cfg.seed, &[CHANNEL_STREAM, u64::from(a.sender), j as u64])),
            };
            links[a.sender as usize - 1].push(Link {
                spec,
                state,
                velocity_bias: a.velocity_bias,
            });
        }
        let noise = (cfg.sensor_noise_sd > 0.0).then(|| {
            (
                ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[NOISE_STREAM])),
                Normal::new(0.0, cfg.sensor_noise_sd).expect("validated sd"),
            )
        });
        let mut sim = Self {
            cfg,
            gains,
            topology: TopologyMatrix::from_order(&ids),
            ids,
            prev_u: vec![0.0; n],
            states,
            links,
            detectors: vec![None; n],
            forbidden: ForbiddenLinks::new(),
            reconfig: None,
            noise,
        };
        sim.rebuild_detectors().map_err(|source| SimError::Detector { step: 0, source })?;
        Ok(sim)
    }

    fn pred_of(&self, i: usize) -> Option<usize> {
        self.topology.pred_of(self.ids[i]).map(idx)
    }

    fn leader(&self) -> usize {
        self.topology.leader().map(idx).expect("active topology is valid")
    }

    /// Fresh detectors on every follower, anchored on the current relative velocity.
    fn rebuild_detectors(&mut self) -> Result<(), DetectorError> {
        for i in 0..self.ids.len() {
            self.detectors[i] = match (self.cfg.detector.enabled, self.pred_of(i)) {
                (true, Some(j)) => {
                    let vt = self.states[i].v - self.states[j].v;
                    Some(Detector::new(self.cfg.detector.config(), vt)?)
                }
                _ => None,
            };
        }
        Ok(())
    }

    fn state_map(&self) -> BTreeMap<VehicleId, VehicleState> {
        self.ids.iter().zip(&self.states).map(|(&id, &s)| (id, s)).collect()
    }

    fn lanes_of(&self, i: usize) -> Vec<Lane> {
        match &self.reconfig {
            Some(r) => r.supervisor.occupied_lanes(self.ids[i]),
            None => vec![Lane::Slow],
        }
    }

    /// Isolate the sender of a distrusted link, running one coordinator copy per vehicle.
    fn coordinate(&mut self, receiver: usize, frames: &[Option<CommFrame>], k: usize) -> Result<(), SimError> {
        let Some(sender) = self.pred_of(receiver) else {
            return Ok(());
        };
        let topo_err = |source| SimError::Topology { step: k, source };
        let mut copies = Vec::with_capacity(self.ids.len());
        for me in 0..self.ids.len() {
            let mut claimed = TopologyMatrix::new();
            for (j, &id) in self.ids.iter().enumerate() {
                let own = self.topology.row(id).expect("known vehicle");
                let mut row = if j == me { own } else { frames[j].map_or(own, |f| f.delta) };
                if j == receiver {
                    row.pred = None;
                }
                claimed.set_row(id, row);
            }
            let repaired = majority_repair(&claimed).unwrap_or(claimed);
            let mut forbidden = self.forbidden.clone();
            let result = isolate_compromised_with(
                &repaired,
                self.ids[sender],
                &mut forbidden,
                self.cfg.coordinator.keep_leader,
            )
            .map_err(topo_err)?;
            copies.push((result.to_listing(), result, forbidden));
        }
        if copies.windows(2).any(|w| w[0].0 != w[1].0) {
            return Err(SimError::Disagreement { step: k });
        }
        let (_, target, forbidden) = copies.swap_remove(0);
        self.forbidden = forbidden;
        let supervisor = Rearranger::new(self.cfg.coordinator.rearrange, &target)
            .map_err(|source| SimError::Rearrange { step: k, source })?;
        self.reconfig = Some(Reconfiguration { supervisor, target });
        Ok(())
    }

    fn run(mut self, record: bool) -> Result<RunOutput, SimError> {
        let cfg = self.cfg;
        let (dt, n, d) = (cfg.dt, self.ids.len(), cfg.platoon.d);
        let limits = cfg.limits;
        let params = cfg.platoon;
        let brake_at = cfg.leader.emergency_brake_at;
        let duration_steps = (cfg.duration / dt).round() as usize;
        let cap_steps = duration_steps.max(brake_at.map_or(0, |tb| ((tb + BRAKE_CAP) / dt).round() as usize));

        let mut trace = Vec::new();
        let mut min_gap: BTreeMap<VehicleId, f64> = BTreeMap::new();
        let mut collision = None;
        let mut windows: Vec<Accumulator> = vec![Accumulator::default(); n];
        let (mut gap_attack, mut gap_brake) = (f64::INFINITY, f64::INFINITY);
        let mut alarms: Vec<Alarm> = Vec::new();
        let mut reconf_started = None;
        let mut reconf_completed = None;
        let mut post_residual: Option<f64> = None;
        let mut stopped_since: Option<usize> = None;

        let mut k = 0usize;
        loop {
            let t = k as f64 * dt;
            let braking = cfg.leader.braking(t);

            // Frames through the channels.
            let mut frames: Vec<Option<CommFrame>> = Vec::with_capacity(n);
            for i in 0..n {
                let s = self.states[i];
                let mut frame = Some(CommFrame {
                    sender_id: self.ids[i],
                    u: self.prev_u[i],
                    v: s.v,
                    p: s.p,
                    delta: self.topology.row(self.ids[i]).expect("known vehicle"),
                });
                for link in &mut self.links[i] {
                    frame = frame.and_then(|f| apply_attack(f, t, dt, &link.spec, &mut link.state, &limits));
                    if let Some(f) = frame.as_mut() {
                        if cfg.attack_velocity_channel && link.spec.is_active(t) {
                            f.v += link.velocity_bias;
                        }
                    }
                }
                frames.push(frame);
            }

            // Sensing: lidar gap is exact, relative velocity uses the advertised velocity.
            let mut v_meas: Vec<Option<f64>> = vec![None; n];
            for (i, slot) in v_meas.iter_mut().enumerate() {
                let Some(j) = self.pred_of(i) else { continue };
                let v_pred = frames[j].map_or(self.states[j].v, |f| f.v);
                let noise = self.noise.as_mut().map_or(0.0, |(rng, dist)| dist.sample(rng));
                *slot = Some(self.states[i].v - v_pred + noise);
            }

            // Detectors, paused while the platoon reorganizes.
            let mut residual = vec![0.0; n];
            let mut new_alarm: Option<usize> = None;
            if self.reconfig.is_none() {
                for i in 0..n {
                    let (Some(j), Some(vt)) = (self.pred_of(i), v_meas[i]) else { continue };
                    let prev_u_i = self.prev_u[i];
                    let Some(det) = self.detectors[i].as_mut() else { continue };
                    let was_trusted = det.sigma;
                    match frames[j] {
                        Some(f) => {
                            residual[i] = det
                                .step(prev_u_i, f.u, vt, dt)
                                .map_err(|source| SimError::Detector { step: k, source })?;
                        }
                        None => det.v_hat = vt,
                    }
                    if was_trusted && !det.sigma {
                        alarms.push(Alarm {
                            time: t,
                            receiver: self.ids[i],
                            sender: self.ids[j],
                            genuine: self.links[j].iter().any(|l| l.forges_u(t)),
                        });
                        new_alarm.get_or_insert(i);
                    }
                }
            }
            if reconf_completed.is_some() {
                let m = residual.iter().copied().fold(0.0, f64::max);
                post_residual = Some(post_residual.map_or(m, |p: f64| p.max(m)));
            }

            // Coordinator round.
            if let (true, Some(i)) = (cfg.coordinator.enabled, new_alarm) {
                self.coordinate(i, &frames, k)?;
                reconf_started.get_or_insert(t);
            }

            // Commands.
            let mut commands: Vec<TraceRow> = Vec::with_capacity(n);
            if let Some(rc) = self.reconfig.as_mut() {
                let map: BTreeMap<VehicleId, VehicleState> =
                    self.ids.iter().zip(&self.states).map(|(&id, &s)| (id, s)).collect();
                let decisions = rc
                    .supervisor
                    .step(&map, dt, &self.gains, &params, &limits)
                    .map_err(|source| SimError::Rearrange { step: k, source })?;
                let head = rc.target.leader();
                for dec in decisions {
                    let i = idx(dec.id);
                    let u = if braking && Some(dec.id) == head { limits.u_min } else { dec.u };
                    commands.push(self.row(t, i, u, u, None, 0.0, None, false, residual[i], v_meas[i]));
                    let row = commands.last_mut().expect("just pushed");
                    row.lane = dec.lane;
                    row.v_level = dec.output.v_level;
                    row.vtf = dec.output.vtf;
                }
            } else {
                let lead = self.leader();
                for i in 0..n {
                    let Some(j) = self.pred_of(i) else {
                        let (u_lin, u) = if braking {
                            (limits.u_min, limits.u_min)
                        } else {
                            let v_ref = cfg.leader.v_ref(t, params.v_des);
                            let raw = -self.gains.k * self.gains.h * (self.states[i].v - v_ref);
                            (raw, leader_control(self.states[i].v, v_ref, &self.gains, &limits))
                        };
                        debug_assert_eq!(i, lead);
                        commands.push(self.row(t, i, u_lin, u, None, 0.0, None, false, 0.0, None));
                        continue;
                    };
                    let vt = v_meas[i].expect("follower sensed");
                    let rel = RelativeState {
                        p_tilde: relative_state(&self.states[j], &self.states[i], d).p_tilde,
                        v_tilde: vt,
                    };
                    let sigma = self.detectors[i].as_ref().is_none_or(|det| det.sigma);
                    let received = if cfg.cacc { frames[j].map(|f| f.u) } else { None };
                    let cmd = cacc_control_rel(
                        rel,
                        self.states[i].v,
                        received,
                        sigma,
                        &self.gains,
                        &params,
                        &limits,
                        &cfg.feedforward,
                    )
                    .map_err(|source| SimError::Dynamics { step: k, source })?;
                    let raw = received.map(|_| cmd.u_ff_raw);
                    commands.push(self.row(
                        t,
                        i,
                        cmd.u_lin,
                        cmd.u_total,
                        raw,
                        cmd.u_ff,
                        Some(cmd.filter_branch),
                        cmd.sigma,
                        residual[i],
                        Some(vt),
                    ));
                }
            }

            // Gap statistics against the assigned predecessor.
            if self.reconfig.is_none() && t >= cfg.metrics.window_start && t < cfg.metrics.window_end {
                for (i, w) in windows.iter_mut().enumerate() {
                    if let Some(j) = self.pred_of(i) {
                        w.push(self.states[j].p - self.states[i].p);
                    }
                }
            }

            // Dynamics.
            let before = self.states.clone();
            for cmd in &commands {
                let i = idx(cmd.vehicle_id);
                let next = step(before[i], cmd.u_total, dt, &limits).map_err(|source| SimError::Dynamics { step: k, source })?;
                self.prev_u[i] = (next.v - before[i].v) / dt;
                self.states[i] = next;
            }

            // Same-lane gaps, ordering taken before the step.
            for lane in [Lane::Slow, Lane::Fast] {
                let mut occ: Vec<usize> = (0..n).filter(|&i| self.lanes_of(i).contains(&lane)).collect();
                occ.sort_by(|&a, &b| before[b].p.total_cmp(&before[a].p).then(a.cmp(&b)));
                for w in occ.windows(2) {
                    let gap = self.states[w[0]].p - self.states[w[1]].p;
                    let e = min_gap.entry(self.ids[w[1]]).or_insert(f64::INFINITY);
                    *e = e.min(gap);
                    if braking {
                        gap_brake = gap_brake.min(gap);
                    } else {
                        gap_attack = gap_attack.min(gap);
                    }
                    if gap < 0.0 && collision.is_none() {
                        collision = Some(Collision {
                            time: t + dt,
                            ahead: self.ids[w[0]],
                            behind: self.ids[w[1]],
                        });
                    }
                }
            }

            if record {
                trace.extend(commands);
            }

            // Reconfiguration finished?
            let mut done_reconf = false;
            if let Some(rc) = &self.reconfig {
                done_reconf = rc.supervisor.at_cpp(&self.state_map());
            }
            if done_reconf {
                let rc = self.reconfig.take().expect("present");
                self.topology = rc.target;
                self.rebuild_detectors()
                    .map_err(|source| SimError::Detector { step: k, source })?;
                reconf_completed = Some(t + dt);
            }

            k += 1;
            if braking && self.states.iter().all(|s| s.v < STANDSTILL) {
                stopped_since.get_or_insert(k);
            } else {
                stopped_since = None;
            }
            let finished = k >= duration_steps
                && match brake_at {
                    None => true,
                    Some(_) => stopped_since.is_some_and(|s0| (k - s0) as f64 * dt >= STOP_TAIL - 1e-9),
                };
            if finished || k >= cap_steps {
                break;
            }
        }

        let mut detection_latency = BTreeMap::new();
        for (j, links) in self.links.iter().enumerate() {
            let start = links
                .iter()
                .filter(|l| !matches!(l.spec.kind, AttackKind::None | AttackKind::FalseTopology { .. }))
                .map(|l| l.spec.active_from)
                .fold(f64::INFINITY, f64::min);
            if start.is_finite() {
                let first = alarms.iter().find(|a| a.sender == self.ids[j] && a.genuine).map(|a| a.time - start);
                detection_latency.insert(self.ids[j], first);
            }
        }
        let false_alarms = alarms.iter().filter(|a| !a.genuine).count();
        let final_order = self.topology.order().expect("valid topology");
        let metrics = RunMetrics {
            end_time: k as f64 * dt,
            steps: k,
            min_gap,
            collision,
            gap_stats: windows
                .iter()
                .enumerate()
                .filter_map(|(i, w)| w.finish().map(|s| (self.ids[i], s)))
                .collect(),
            min_gap_attack_phase: gap_attack,
            min_gap_brake_phase: gap_brake,
            alarms,
            detection_latency,
            false_alarms,
            reconfiguration_started: reconf_started,
            reconfiguration_completed: reconf_completed,
            max_residual_after_reconfiguration: post_residual,
            final_order,
        };
        Ok(RunOutput { trace, metrics })
    }

    #[allow(clippy::too_many_arguments)]
    fn row(
        &self,
        t: f64,
        i: usize,
        u_lin: f64,
        u_total: f64,
        u_ff_raw: Option<f64>,
        u_ff: f64,
        filter_branch: Option<FilterBranch>,
        sigma: bool,
        r: f64,
        v_tilde: Option<f64>,
    ) -> TraceRow {
        let s = self.states[i];
        let pred = self.pred_of(i);
        let p_tilde = pred.map(|j| relative_state(&self.states[j], &s, self.cfg.platoon.d).p_tilde);
        TraceRow {
            t,
            vehicle_id: self.ids[i],
            p: s.p,
            v: s.v,
            u_lin,
            u_ff_raw,
            u_ff,
            u_total,
            filter_branch,
            gap: pred.map(|j| self.states[j].p - s.p),
            p_tilde,
            v_tilde,
            sigma,
            r,
            lane: Lane::Slow,
            v_level: SpeedLevel::Default,
            vtf: pred.map(|j| self.ids[j]),
        }
    }
}
