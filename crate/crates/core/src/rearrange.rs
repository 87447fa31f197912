//! Two-lane supervisor that physically realizes a new platoon order.
//!
//! Every vehicle decides on its own which lane to be in, which speed level to
//! track and which vehicle to follow, from local observations: its assigned
//! predecessor (AP) in the target topology, the observed predecessor (OP,
//! the closest vehicle ahead in either lane), lanes and merge indicators.
//! A vehicle has reached its correct platooning position (CPP) when it is in
//! the slow lane and OP = AP.
//!
//! Lane changes are discrete: a change takes a fixed time during which the
//! vehicle occupies both lanes and already reports its target lane.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controllers::{acc_control, leader_control};
use crate::coordinator::{TopologyMatrix, VehicleId};
use crate::dynamics::{saturate, step, ActuationLimits, DynamicsError, PlatoonParams, VehicleState};
use crate::gain_tuning::ControllerGains;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
pub enum Lane {
    #[default]
    Slow,
    Fast,
}

impl Lane {
    pub fn as_str(self) -> &'static str {
        match self {
            Lane::Slow => "SL",
            Lane::Fast => "FL",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LaneCmd {
    Stay,
    ToFast,
    ToSlow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SpeedLevel {
    Slow,
    Default,
    Fast,
}

impl SpeedLevel {
    pub fn as_str(self) -> &'static str {
        match self {
            SpeedLevel::Slow => "slow",
            SpeedLevel::Default => "default",
            SpeedLevel::Fast => "fast",
        }
    }
}

/// Local observations of one vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SupervisorInput {
    /// Assigned predecessor; `None` for the designated leader.
    pub ap: Option<VehicleId>,
    /// Closest vehicle ahead in either lane.
    pub op: Option<VehicleId>,
    pub lane: Lane,
    /// Lane the AP reports, if there is an AP.
    pub ap_lane: Option<Lane>,
    /// AP signals a merge into the slow lane.
    pub ap_msl: bool,
    /// A slow-lane vehicle ahead is assigned behind the ego vehicle.
    pub overtake_pending: bool,
    /// Closest vehicle ahead occupying the fast lane.
    pub nearest_fast_ahead: Option<VehicleId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SupervisorOutput {
    pub lane_cmd: LaneCmd,
    pub v_level: SpeedLevel,
    /// Vehicle to follow; `None` means track the speed level.
    pub vtf: Option<VehicleId>,
}

impl SupervisorInput {
    pub fn at_cpp(&self) -> bool {
        self.lane == Lane::Slow && self.ap == self.op
    }
}

/// Speed level selection.
pub fn velocity_manager(inp: &SupervisorInput) -> SpeedLevel {
    match inp.lane {
        Lane::Slow if inp.ap == inp.op => SpeedLevel::Default,
        Lane::Slow => SpeedLevel::Slow,
        Lane::Fast if inp.ap_lane == Some(Lane::Slow) => SpeedLevel::Default,
        Lane::Fast => SpeedLevel::Fast,
    }
}

/// Vehicle-to-follow selection.
pub fn vtf_manager(inp: &SupervisorInput) -> Option<VehicleId> {
    if inp.ap == inp.op {
        inp.ap
    } else if inp.lane == Lane::Slow {
        None
    } else {
        inp.nearest_fast_ahead
    }
}

/// Lane selection. `gap_ok` reports whether the slow lane has room to merge.
pub fn lane_manager(inp: &SupervisorInput, gap_ok: bool) -> LaneCmd {
    let leader = inp.ap.is_none();
    match inp.lane {
        Lane::Slow => {
            if !leader && inp.ap == inp.op && inp.ap_lane == Some(Lane::Slow) {
                LaneCmd::Stay
            } else if inp.overtake_pending {
                LaneCmd::ToFast
            } else {
                LaneCmd::Stay
            }
        }
        Lane::Fast => {
            if !leader && inp.ap_lane == Some(Lane::Fast) && !inp.ap_msl {
                LaneCmd::Stay
            } else if !inp.overtake_pending && gap_ok {
                LaneCmd::ToSlow
            } else {
                LaneCmd::Stay
            }
        }
    }
}

/// All three decisions at once.
pub fn supervise(inp: &SupervisorInput, gap_ok: bool) -> SupervisorOutput {
    SupervisorOutput {
        lane_cmd: lane_manager(inp, gap_ok),
        v_level: velocity_manager(inp),
        vtf: vtf_manager(inp),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RearrangeConfig {
    /// Duration of one lane change (s).
    pub lane_change_duration: f64,
    /// Minimum gap behind a slow-lane merge; `None` uses `0.95 d`, so a
    /// follower already settled at the platoon spacing leaves enough room.
    pub safe_gap: Option<f64>,
    pub slow_factor: f64,
    pub fast_factor: f64,
    /// Give up after this long (s).
    pub horizon: f64,
}

impl Default for RearrangeConfig {
    fn default() -> Self {
        Self {
            lane_change_duration: 1.5,
            safe_gap: None,
            slow_factor: 0.8,
            fast_factor: 1.2,
            horizon: 300.0,
        }
    }
}

const DEFAULT_SAFE_GAP_FRACTION: f64 = 0.95;

impl RearrangeConfig {
    pub fn speed(&self, level: SpeedLevel, params: &PlatoonParams, limits: &ActuationLimits) -> f64 {
        match level {
            SpeedLevel::Slow => self.slow_factor * params.v_des,
            SpeedLevel::Default => params.v_des,
            SpeedLevel::Fast => (self.fast_factor * params.v_des).min(limits.v_max),
        }
    }

    fn safe_gap(&self, params: &PlatoonParams) -> f64 {
        self.safe_gap.unwrap_or(DEFAULT_SAFE_GAP_FRACTION * params.d)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RearrangeError {
    #[error("target topology is not a valid platoon")]
    InvalidTarget,
    #[error("vehicle set of the target topology does not match the simulated vehicles")]
    VehicleMismatch,
    #[error("reconfiguration did not reach the target within {horizon} s; not in position: {pending:?}")]
    Timeout { horizon: f64, pending: Vec<VehicleId> },
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct LaneState {
    lane: Lane,
    /// Target lane and remaining time of a change in progress.
    change: Option<(Lane, f64)>,
}

impl LaneState {
    fn reported(&self) -> Lane {
        self.change.map_or(self.lane, |(to, _)| to)
    }

    fn occupies(&self, lane: Lane) -> bool {
        self.lane == lane || self.change.is_some_and(|(to, _)| to == lane)
    }
}

/// What one vehicle decided and applied in one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleDecision {
    pub id: VehicleId,
    pub input: SupervisorInput,
    pub output: SupervisorOutput,
    /// Whether a slow-lane merge would have been safe this step.
    pub gap_ok: bool,
    /// Lane the vehicle reports after applying the command.
    pub lane: Lane,
    /// Saturated acceleration command.
    pub u: f64,
}

/// Supervisor state for every vehicle of a platoon undergoing reconfiguration.
#[derive(Debug, Clone)]
pub struct Rearranger {
    config: RearrangeConfig,
    rank: BTreeMap<VehicleId, usize>,
    ap: BTreeMap<VehicleId, Option<VehicleId>>,
    lanes: BTreeMap<VehicleId, LaneState>,
    lane_changes: usize,
}

impl Rearranger {
    pub fn new(config: RearrangeConfig, target: &TopologyMatrix) -> Result<Self, RearrangeError> {
        let order = target.order().ok_or(RearrangeError::InvalidTarget)?;
        let rank = order.iter().enumerate().map(|(i, &id)| (id, i)).collect();
        let ap = order.iter().map(|&id| (id, target.pred_of(id))).collect();
        let lanes = order
            .iter()
            .map(|&id| (id, LaneState { lane: Lane::Slow, change: None }))
            .collect();
        Ok(Self {
            config,
            rank,
            ap,
            lanes,
            lane_changes: 0,
        })
    }

    pub fn config(&self) -> &RearrangeConfig {
        &self.config
    }

    /// Number of lane changes started so far.
    pub fn lane_changes(&self) -> usize {
        self.lane_changes
    }

    /// Lane a vehicle currently reports.
    pub fn reported_lane(&self, id: VehicleId) -> Option<Lane> {
        self.lanes.get(&id).map(LaneState::reported)
    }

    /// Lanes a vehicle physically occupies.
    pub fn occupied_lanes(&self, id: VehicleId) -> Vec<Lane> {
        self.lanes
            .get(&id)
            .map(|s| [Lane::Slow, Lane::Fast].into_iter().filter(|&l| s.occupies(l)).collect())
            .unwrap_or_default()
    }

    fn check_vehicles(&self, states: &BTreeMap<VehicleId, VehicleState>) -> Result<(), RearrangeError> {
        if states.len() != self.rank.len() || !states.keys().all(|id| self.rank.contains_key(id)) {
            return Err(RearrangeError::VehicleMismatch);
        }
        Ok(())
    }

    fn nearest_ahead(
        &self,
        id: VehicleId,
        states: &BTreeMap<VehicleId, VehicleState>,
        filter: impl Fn(VehicleId) -> bool,
    ) -> Option<VehicleId> {
        let p = states[&id].p;
        states
            .iter()
            .filter(|&(&j, s)| j != id && s.p > p && filter(j))
            .min_by(|a, b| a.1.p.total_cmp(&b.1.p).then(a.0.cmp(b.0)))
            .map(|(&j, _)| j)
    }

    /// Observations of `id` given everyone's current state.
    pub fn observe(&self, id: VehicleId, states: &BTreeMap<VehicleId, VehicleState>) -> SupervisorInput {
        let me = self.lanes[&id];
        let ap = self.ap[&id];
        let ap_state = ap.map(|a| self.lanes[&a]);
        let p = states[&id].p;
        let my_rank = self.rank[&id];
        let overtake_pending = states.iter().any(|(&j, s)| {
            j != id && s.p > p && self.lanes[&j].occupies(Lane::Slow) && self.rank[&j] > my_rank
        });
        SupervisorInput {
            ap,
            op: self.nearest_ahead(id, states, |_| true),
            lane: me.reported(),
            ap_lane: ap_state.map(|s| s.reported()),
            ap_msl: ap_state.is_some_and(|s| s.change.is_some_and(|(to, _)| to == Lane::Slow)),
            overtake_pending,
            nearest_fast_ahead: self.nearest_ahead(id, states, |j| self.lanes[&j].occupies(Lane::Fast)),
        }
    }

    /// Room to merge into the slow lane: nobody occupying it within the safe
    /// gap behind, nobody level with or overlapping ahead.
    pub fn slow_lane_gap_ok(&self, id: VehicleId, states: &BTreeMap<VehicleId, VehicleState>, params: &PlatoonParams) -> bool {
        let p = states[&id].p;
        let safe = self.config.safe_gap(params);
        states.iter().all(|(&j, s)| {
            if j == id || !self.lanes[&j].occupies(Lane::Slow) {
                return true;
            }
            if s.p <= p {
                p - s.p >= safe
            } else {
                s.p - p > 0.0
            }
        })
    }

    /// Every vehicle in the slow lane behind its assigned predecessor, no change in progress.
    pub fn at_cpp(&self, states: &BTreeMap<VehicleId, VehicleState>) -> bool {
        self.pending(states).is_empty()
    }

    /// Vehicles not yet at their correct position.
    pub fn pending(&self, states: &BTreeMap<VehicleId, VehicleState>) -> Vec<VehicleId> {
        self.rank
            .keys()
            .copied()
            .filter(|&id| self.lanes[&id].change.is_some() || !self.observe(id, states).at_cpp())
            .collect()
    }

    /// Decide and compute commands for every vehicle, then advance lane changes by `dt`.
    ///
    /// The caller integrates the dynamics with the returned commands.
    pub fn step(
        &mut self,
        states: &BTreeMap<VehicleId, VehicleState>,
        dt: f64,
        gains: &ControllerGains,
        params: &PlatoonParams,
        limits: &ActuationLimits,
    ) -> Result<Vec<VehicleDecision>, RearrangeError> {
        self.check_vehicles(states)?;
        let ids: Vec<VehicleId> = self.rank.keys().copied().collect();
        let mut plans = Vec::with_capacity(ids.len());
        for &id in &ids {
            let input = self.observe(id, states);
            let gap_ok = self.slow_lane_gap_ok(id, states, params);
            let output = supervise(&input, gap_ok);
            plans.push((id, input, gap_ok, output));
        }
        // Lane commands take effect together so decisions above saw one snapshot.
        for &(id, _, _, output) in &plans {
            let st = self.lanes.get_mut(&id).expect("known vehicle");
            if st.change.is_some() {
                continue;
            }
            let target = match (output.lane_cmd, st.lane) {
                (LaneCmd::ToFast, Lane::Slow) => Lane::Fast,
                (LaneCmd::ToSlow, Lane::Fast) => Lane::Slow,
                _ => continue,
            };
            st.change = Some((target, self.config.lane_change_duration));
            self.lane_changes += 1;
        }
        let mut out = Vec::with_capacity(plans.len());
        for (id, input, gap_ok, output) in plans {
            let ego = states[&id];
            let main = match output.vtf {
                Some(t) => acc_control(&ego, &states[&t], gains, params),
                None => leader_control(ego.v, self.config.speed(output.v_level, params, limits), gains, limits),
            };
            let lanes = self.lanes[&id];
            let guard = self
                .nearest_ahead(id, states, |j| {
                    let other = self.lanes[&j];
                    [Lane::Slow, Lane::Fast].into_iter().any(|l| lanes.occupies(l) && other.occupies(l))
                })
                .map(|j| acc_control(&ego, &states[&j], gains, params));
            let u = saturate(guard.map_or(main, |g| main.min(g)), limits);
            out.push(VehicleDecision {
                id,
                input,
                output,
                gap_ok,
                lane: lanes.reported(),
                u,
            });
        }
        for st in self.lanes.values_mut() {
            if let Some((to, left)) = st.change {
                let left = left - dt;
                if left <= 1e-9 {
                    st.lane = to;
                    st.change = None;
                } else {
                    st.change = Some((to, left));
                }
            }
        }
        Ok(out)
    }

    /// Smallest gap between consecutive occupants of either lane, with
    /// occupants ordered by `before` positions and measured on `after`.
    pub fn min_lane_gap(
        &self,
        before: &BTreeMap<VehicleId, VehicleState>,
        after: &BTreeMap<VehicleId, VehicleState>,
    ) -> f64 {
        let mut min_gap = f64::INFINITY;
        for lane in [Lane::Slow, Lane::Fast] {
            let mut occ: Vec<VehicleId> = self
                .lanes
                .iter()
                .filter(|(_, s)| s.occupies(lane))
                .map(|(&id, _)| id)
                .collect();
            occ.sort_by(|a, b| before[b].p.total_cmp(&before[a].p).then(a.cmp(b)));
            for w in occ.windows(2) {
                min_gap = min_gap.min(after[&w[0]].p - after[&w[1]].p);
            }
        }
        min_gap
    }
}

/// Result of a standalone reconfiguration run.
#[derive(Debug, Clone)]
pub struct ReconfigOutcome {
    /// Per-step decisions of every vehicle.
    pub steps: Vec<Vec<VehicleDecision>>,
    pub duration: f64,
    pub lane_changes: usize,
    /// Smallest same-lane gap seen (infinite if lanes never held two vehicles).
    pub min_lane_gap: f64,
    pub final_states: BTreeMap<VehicleId, VehicleState>,
}

impl ReconfigOutcome {
    pub fn collided(&self) -> bool {
        self.min_lane_gap < 0.0
    }
}

/// Drive the vehicles from `initial` (all in the slow lane) until every one
/// is at its correct position in `target`.
pub fn execute_reconfiguration(
    initial: &BTreeMap<VehicleId, VehicleState>,
    target: &TopologyMatrix,
    gains: &ControllerGains,
    params: &PlatoonParams,
    limits: &ActuationLimits,
    config: &RearrangeConfig,
    dt: f64,
) -> Result<ReconfigOutcome, RearrangeError> {
    let mut sup = Rearranger::new(*config, target)?;
    sup.check_vehicles(initial)?;
    let mut states = initial.clone();
    let mut steps = Vec::new();
    let mut min_gap = f64::INFINITY;
    let max_steps = (config.horizon / dt).ceil() as usize;
    let mut k = 0usize;
    while !sup.at_cpp(&states) {
        if k >= max_steps {
            return Err(RearrangeError::Timeout {
                horizon: config.horizon,
                pending: sup.pending(&states),
            });
        }
        let decisions = sup.step(&states, dt, gains, params, limits)?;
        let mut next = states.clone();
        for d in &decisions {
            next.insert(d.id, step(states[&d.id], d.u, dt, limits)?);
        }
        min_gap = min_gap.min(sup.min_lane_gap(&states, &next));
        states = next;
        steps.push(decisions);
        k += 1;
    }
    Ok(ReconfigOutcome {
        duration: k as f64 * dt,
        lane_changes: sup.lane_changes(),
        steps,
        min_lane_gap: min_gap,
        final_states: states,
    })
}
