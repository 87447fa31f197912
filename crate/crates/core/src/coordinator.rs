//! Platoon topology bookkeeping and repair.
//!
//! Each vehicle broadcasts a row `δ_i = [pred, succ]` (0 meaning "none"); the
//! stack of rows is the topology matrix `D`. A matrix is a valid platoon when
//! it has one leader, one tail, is a single connected chain and every
//! predecessor/successor claim is reciprocated. When these conditions break,
//! every vehicle independently searches the chain orderings for the ones
//! that agree with the old matrix in the most entries, and a deterministic
//! tie-break makes all copies land on the same answer.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Non-zero vehicle identifier. `0` is reserved for "no vehicle".
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VehicleId(pub u32);

impl fmt::Display for VehicleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

fn encode(id: Option<VehicleId>) -> u32 {
    id.map_or(0, |v| v.0)
}

fn decode(raw: u32) -> Option<VehicleId> {
    (raw != 0).then_some(VehicleId(raw))
}

/// One broadcast row: who precedes and who follows the owner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DeltaVec {
    pub pred: Option<VehicleId>,
    pub succ: Option<VehicleId>,
}

impl DeltaVec {
    pub fn new(pred: u32, succ: u32) -> Self {
        Self {
            pred: decode(pred),
            succ: decode(succ),
        }
    }

    pub fn raw(&self) -> [u32; 2] {
        [encode(self.pred), encode(self.succ)]
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TopologyError {
    #[error("vehicle {owner} references unknown vehicle {referenced}")]
    UnknownId { owner: VehicleId, referenced: VehicleId },
    #[error("vehicle {0} references itself")]
    SelfReference(VehicleId),
    #[error("vehicle {0} lists the same vehicle as predecessor and successor")]
    SamePredSucc(VehicleId),
    #[error("vehicle id 0 is reserved")]
    ZeroId,
    #[error("duplicate vehicle {0}")]
    DuplicateId(VehicleId),
    #[error("vehicle {0} is not part of the topology")]
    NotPresent(VehicleId),
    #[error("topology is empty")]
    Empty,
    #[error("no admissible ordering satisfies the forbidden-link constraints")]
    Infeasible,
    #[error("more than one vehicle contradicts the majority: {0:?}")]
    AmbiguousBroadcast(Vec<VehicleId>),
    #[error("vehicle {0} still has a follower after isolation")]
    NotIsolated(VehicleId),
    #[error("malformed topology listing at line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

/// The broadcast topology `D`, keyed by row owner.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TopologyMatrix {
    rows: BTreeMap<VehicleId, DeltaVec>,
}

/// A single violated platooning condition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ConditionViolation {
    LeaderCount(usize),
    TailCount(usize),
    Disconnected,
    Inconsistent { from: VehicleId, to: VehicleId },
}

impl fmt::Display for ConditionViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::LeaderCount(n) => write!(f, "{n} vehicles without predecessor (need 1)"),
            Self::TailCount(n) => write!(f, "{n} vehicles without successor (need 1)"),
            Self::Disconnected => write!(f, "rows do not form one connected chain"),
            Self::Inconsistent { from, to } => {
                write!(f, "link {from}->{to} is not reciprocated")
            }
        }
    }
}

/// Result of checking the platooning conditions.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ConditionReport {
    pub violations: Vec<ConditionViolation>,
}

impl ConditionReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl TopologyMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    /// Build the chain `order[0] <- order[1] <- ...`.
    pub fn from_order(order: &[VehicleId]) -> Self {
        let mut rows = BTreeMap::new();
        for (i, &id) in order.iter().enumerate() {
            let pred = i.checked_sub(1).map(|j| order[j]);
            let succ = order.get(i + 1).copied();
            rows.insert(id, DeltaVec { pred, succ });
        }
        Self { rows }
    }

    /// Build from raw `(id, pred, succ)` triples; `0` encodes "none".
    pub fn from_raw(rows: &[(u32, u32, u32)]) -> Result<Self, TopologyError> {
        let mut out = Self::new();
        for &(id, pred, succ) in rows {
            if id == 0 {
                return Err(TopologyError::ZeroId);
            }
            let id = VehicleId(id);
            if out.rows.insert(id, DeltaVec::new(pred, succ)).is_some() {
                return Err(TopologyError::DuplicateId(id));
            }
        }
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = VehicleId> + '_ {
        self.rows.keys().copied()
    }

    pub fn rows(&self) -> impl Iterator<Item = (VehicleId, DeltaVec)> + '_ {
        self.rows.iter().map(|(&k, &v)| (k, v))
    }

    pub fn row(&self, id: VehicleId) -> Option<DeltaVec> {
        self.rows.get(&id).copied()
    }

    pub fn contains(&self, id: VehicleId) -> bool {
        self.rows.contains_key(&id)
    }

    pub fn set_row(&mut self, id: VehicleId, row: DeltaVec) {
        self.rows.insert(id, row);
    }

    pub fn remove_row(&mut self, id: VehicleId) -> Option<DeltaVec> {
        self.rows.remove(&id)
    }

    /// Drop `id`'s row and clear every reference to it, as its former
    /// neighbours do when it leaves.
    pub fn remove_vehicle(&mut self, id: VehicleId) -> Option<DeltaVec> {
        let row = self.rows.remove(&id)?;
        for r in self.rows.values_mut() {
            if r.pred == Some(id) {
                r.pred = None;
            }
            if r.succ == Some(id) {
                r.succ = None;
            }
        }
        Some(row)
    }

    /// Predecessor the matrix assigns to `id`.
    pub fn pred_of(&self, id: VehicleId) -> Option<VehicleId> {
        self.rows.get(&id).and_then(|r| r.pred)
    }

    /// Reject self references and references to absent vehicles.
    pub fn check_well_formed(&self) -> Result<(), TopologyError> {
        for (&id, row) in &self.rows {
            for other in [row.pred, row.succ].into_iter().flatten() {
                if other == id {
                    return Err(TopologyError::SelfReference(id));
                }
                if !self.rows.contains_key(&other) {
                    return Err(TopologyError::UnknownId {
                        owner: id,
                        referenced: other,
                    });
                }
            }
            if row.pred.is_some() && row.pred == row.succ {
                return Err(TopologyError::SamePredSucc(id));
            }
        }
        Ok(())
    }

    /// List every violated platooning condition.
    pub fn check_conditions(&self) -> Result<ConditionReport, TopologyError> {
        self.check_well_formed()?;
        let mut violations = Vec::new();
        if self.rows.is_empty() {
            violations.push(ConditionViolation::LeaderCount(0));
            violations.push(ConditionViolation::TailCount(0));
            return Ok(ConditionReport { violations });
        }
        let leaders: Vec<_> = self
            .rows
            .iter()
            .filter(|(_, r)| r.pred.is_none())
            .map(|(&id, _)| id)
            .collect();
        let tails = self.rows.values().filter(|r| r.succ.is_none()).count();
        if leaders.len() != 1 {
            violations.push(ConditionViolation::LeaderCount(leaders.len()));
        }
        if tails != 1 {
            violations.push(ConditionViolation::TailCount(tails));
        }
        for (&id, row) in &self.rows {
            if let Some(s) = row.succ {
                if self.rows[&s].pred != Some(id) {
                    violations.push(ConditionViolation::Inconsistent { from: id, to: s });
                }
            }
            if let Some(p) = row.pred {
                if self.rows[&p].succ != Some(id) {
                    violations.push(ConditionViolation::Inconsistent { from: p, to: id });
                }
            }
        }
        violations.dedup();
        // Undirected reachability over the claimed links.
        let start = *self.rows.keys().next().expect("non-empty");
        let mut seen = BTreeSet::from([start]);
        let mut stack = vec![start];
        while let Some(id) = stack.pop() {
            let row = self.rows[&id];
            let mut neighbours: Vec<VehicleId> = [row.pred, row.succ].into_iter().flatten().collect();
            neighbours.extend(
                self.rows
                    .iter()
                    .filter(|(_, r)| r.pred == Some(id) || r.succ == Some(id))
                    .map(|(&k, _)| k),
            );
            for n in neighbours {
                if seen.insert(n) {
                    stack.push(n);
                }
            }
        }
        if seen.len() != self.rows.len() {
            violations.push(ConditionViolation::Disconnected);
        }
        Ok(ConditionReport { violations })
    }

    pub fn is_valid(&self) -> bool {
        self.check_conditions().map(|r| r.is_valid()).unwrap_or(false)
    }

    /// Chain order from leader to tail, if the matrix is a valid platoon.
    pub fn order(&self) -> Option<Vec<VehicleId>> {
        if !self.is_valid() {
            return None;
        }
        let mut cur = self.rows.iter().find(|(_, r)| r.pred.is_none()).map(|(&id, _)| id);
        let mut out = Vec::with_capacity(self.rows.len());
        while let Some(id) = cur {
            out.push(id);
            cur = self.rows[&id].succ;
        }
        Some(out)
    }

    /// Leader of a valid platoon.
    pub fn leader(&self) -> Option<VehicleId> {
        self.order().and_then(|o| o.first().copied())
    }

    /// Plain-text listing, one `id pred succ` line per vehicle.
    pub fn to_listing(&self) -> String {
        let mut s = String::new();
        for (id, row) in &self.rows {
            let [p, q] = row.raw();
            s.push_str(&format!("{id} {p} {q}\n"));
        }
        s
    }
}

impl FromStr for TopologyMatrix {
    type Err = TopologyError;

    /// Parse `id pred succ` lines (whitespace or comma separated; `#` starts a comment).
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut triples = Vec::new();
        for (n, raw) in s.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line
                .split(|c: char| c == ',' || c.is_whitespace())
                .filter(|f| !f.is_empty())
                .collect();
            if fields.len() != 3 {
                return Err(TopologyError::Parse {
                    line: n + 1,
                    reason: format!("expected 3 fields, found {}", fields.len()),
                });
            }
            let mut vals = [0u32; 3];
            for (slot, f) in vals.iter_mut().zip(&fields) {
                *slot = f.parse().map_err(|e| TopologyError::Parse {
                    line: n + 1,
                    reason: format!("{f:?}: {e}"),
                })?;
            }
            triples.push((vals[0], vals[1], vals[2]));
        }
        Self::from_raw(&triples)
    }
}

impl fmt::Display for TopologyMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_listing())
    }
}

/// Ordered `(predecessor, follower)` pairs that may not be re-created.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ForbiddenLinks(pub BTreeSet<(VehicleId, VehicleId)>);

impl ForbiddenLinks {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, from: VehicleId, to: VehicleId) {
        self.0.insert((from, to));
    }

    pub fn contains(&self, from: VehicleId, to: VehicleId) -> bool {
        self.0.contains(&(from, to))
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Number of entries on which two rows agree.
fn agreement(old: DeltaVec, pred: Option<VehicleId>, succ: Option<VehicleId>) -> u32 {
    u32::from(old.pred == pred) + u32::from(old.succ == succ)
}

/// Score of a candidate ordering against the old matrix: the count of
/// `(pred, succ)` entries left unchanged.
pub fn ordering_score(old: &TopologyMatrix, order: &[VehicleId]) -> u32 {
    order
        .iter()
        .enumerate()
        .map(|(i, &id)| {
            let pred = i.checked_sub(1).map(|j| order[j]);
            let succ = order.get(i + 1).copied();
            old.row(id).map_or(0, |row| agreement(row, pred, succ))
        })
        .sum()
}

struct Search<'a> {
    old: &'a TopologyMatrix,
    forbidden: &'a ForbiddenLinks,
    ids: Vec<VehicleId>,
    used: Vec<bool>,
    order: Vec<VehicleId>,
    best: Option<u32>,
    optima: Vec<Vec<VehicleId>>,
}

impl Search<'_> {
    /// Depth-first over orderings in lexicographic id order. `partial` is the
    /// settled score of every placed vehicle except the last one, whose
    /// successor entry is still open.
    fn descend(&mut self, partial: u32) {
        let n = self.ids.len();
        if self.order.len() == n {
            let last = *self.order.last().expect("non-empty");
            let prev = self.order.len().checked_sub(2).map(|j| self.order[j]);
            let score = partial + self.old.row(last).map_or(0, |r| agreement(r, prev, None));
            match self.best {
                Some(b) if score < b => {}
                Some(b) if score == b => self.optima.push(self.order.clone()),
                _ => {
                    self.best = Some(score);
                    self.optima.clear();
                    self.optima.push(self.order.clone());
                }
            }
            return;
        }
        for idx in 0..n {
            if self.used[idx] {
                continue;
            }
            let id = self.ids[idx];
            let settled = match self.order.last() {
                Some(&prev) => {
                    if self.forbidden.contains(prev, id) {
                        continue;
                    }
                    let before = self.order.len().checked_sub(2).map(|j| self.order[j]);
                    partial + self.old.row(prev).map_or(0, |r| agreement(r, before, Some(id)))
                }
                None => partial,
            };
            self.used[idx] = true;
            self.order.push(id);
            self.descend(settled);
            self.order.pop();
            self.used[idx] = false;
        }
    }
}

/// Every chain ordering of the vehicles in `old` that avoids `forbidden`
/// and maximizes the number of unchanged `(pred, succ)` entries.
///
/// Results are listed in lexicographic order of the leader-to-tail id sequence.
pub fn solve_topology(
    old: &TopologyMatrix,
    forbidden: &ForbiddenLinks,
) -> Result<Vec<TopologyMatrix>, TopologyError> {
    if old.is_empty() {
        return Err(TopologyError::Empty);
    }
    old.check_well_formed()?;
    Ok(solve_orders(old, forbidden)?
        .iter()
        .map(|o| TopologyMatrix::from_order(o))
        .collect())
}

/// Like [`solve_topology`] but returns the raw orderings.
pub fn solve_orders(
    old: &TopologyMatrix,
    forbidden: &ForbiddenLinks,
) -> Result<Vec<Vec<VehicleId>>, TopologyError> {
    let ids: Vec<VehicleId> = old.ids().collect();
    let n = ids.len();
    let mut search = Search {
        old,
        forbidden,
        ids,
        used: vec![false; n],
        order: Vec::with_capacity(n),
        best: None,
        optima: Vec::new(),
    };
    search.descend(0);
    if search.optima.is_empty() {
        return Err(TopologyError::Infeasible);
    }
    Ok(search.optima)
}

/// Deterministic choice among optima: keep `leader` in front when possible,
/// then take the lexicographically smallest leader-to-tail order.
pub fn tie_break(optima: &[TopologyMatrix], leader: Option<VehicleId>) -> Option<TopologyMatrix> {
    let keyed: Vec<(Vec<VehicleId>, &TopologyMatrix)> = optima
        .iter()
        .filter_map(|m| m.order().map(|o| (o, m)))
        .collect();
    let keeps_leader: Vec<_> = keyed
        .iter()
        .filter(|(o, _)| leader.is_some() && o.first().copied() == leader)
        .collect();
    let pool: Vec<_> = if keeps_leader.is_empty() {
        keyed.iter().collect()
    } else {
        keeps_leader
    };
    pool.into_iter().min_by(|a, b| a.0.cmp(&b.0)).map(|(_, m)| (*m).clone())
}

/// Leader of a matrix whose chain was just severed: the predecessor-less
/// vehicle that nobody else claims as successor, if unique.
fn standing_leader(d: &TopologyMatrix) -> Option<VehicleId> {
    let claimed: BTreeSet<VehicleId> = d.rows().filter_map(|(_, r)| r.succ).collect();
    let mut heads = d
        .rows()
        .filter(|(id, r)| r.pred.is_none() && r.succ.is_some() && !claimed.contains(id))
        .map(|(id, _)| id);
    let first = heads.next();
    match heads.next() {
        None => first,
        Some(_) => None,
    }
}

/// Move a vehicle whose outbound link was severed to where it has no follower.
///
/// `d` is the matrix after the follower dropped its predecessor entry; the
/// compromised vehicle still claims that follower as its successor. The
/// severed link is added to `forbidden`.
pub fn isolate_compromised(
    d: &TopologyMatrix,
    compromised: VehicleId,
    forbidden: &mut ForbiddenLinks,
) -> Result<TopologyMatrix, TopologyError> {
    isolate_compromised_with(d, compromised, forbidden, true)
}

/// [`isolate_compromised`] with the leader preference of the tie-break made optional.
pub fn isolate_compromised_with(
    d: &TopologyMatrix,
    compromised: VehicleId,
    forbidden: &mut ForbiddenLinks,
    keep_leader: bool,
) -> Result<TopologyMatrix, TopologyError> {
    let row = d.row(compromised).ok_or(TopologyError::NotPresent(compromised))?;
    if let Some(follower) = row.succ {
        forbidden.insert(compromised, follower);
    }
    let optima = solve_topology(d, forbidden)?;
    let hint = if keep_leader { standing_leader(d) } else { None };
    let chosen = tie_break(&optima, hint).ok_or(TopologyError::Infeasible)?;
    if chosen.row(compromised).is_some_and(|r| r.succ.is_some()) {
        return Err(TopologyError::NotIsolated(compromised));
    }
    Ok(chosen)
}

/// Replace the row of a vehicle singled out by [`detect_false_broadcast`]
/// with the links its neighbours assert. Other inputs are returned unchanged.
pub fn majority_repair(claimed: &TopologyMatrix) -> Result<TopologyMatrix, TopologyError> {
    let BroadcastVerdict::Suspect(liar) = detect_false_broadcast(claimed)? else {
        return Ok(claimed.clone());
    };
    let pred = claimed.rows().find(|&(j, r)| j != liar && r.succ == Some(liar)).map(|(j, _)| j);
    let succ = claimed.rows().find(|&(j, r)| j != liar && r.pred == Some(liar)).map(|(j, _)| j);
    let mut repaired = claimed.clone();
    repaired.set_row(liar, DeltaVec { pred, succ });
    Ok(repaired)
}

/// Add a vehicle broadcasting `[0, 0]` and re-solve.
pub fn handle_merge(
    d: &TopologyMatrix,
    new_id: VehicleId,
    forbidden: &ForbiddenLinks,
) -> Result<TopologyMatrix, TopologyError> {
    if new_id.0 == 0 {
        return Err(TopologyError::ZeroId);
    }
    if d.contains(new_id) {
        return Err(TopologyError::DuplicateId(new_id));
    }
    let leader = d.leader();
    let mut next = d.clone();
    next.set_row(new_id, DeltaVec::default());
    let optima = solve_topology(&next, forbidden)?;
    tie_break(&optima, leader).ok_or(TopologyError::Infeasible)
}

/// Remove a departing vehicle's row and re-solve.
pub fn handle_split(
    d: &TopologyMatrix,
    leaving: VehicleId,
    forbidden: &ForbiddenLinks,
) -> Result<TopologyMatrix, TopologyError> {
    if !d.contains(leaving) {
        return Err(TopologyError::NotPresent(leaving));
    }
    let leader = d.leader().filter(|&l| l != leaving);
    let mut next = d.clone();
    next.remove_vehicle(leaving);
    if next.is_empty() {
        return Ok(next);
    }
    let optima = solve_topology(&next, forbidden)?;
    tie_break(&optima, leader).ok_or(TopologyError::Infeasible)
}

/// Outcome of cross-checking broadcast rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BroadcastVerdict {
    /// All rows are mutually consistent.
    Consistent,
    /// One vehicle's row is contradicted by at least two others.
    Suspect(VehicleId),
    /// Rows disagree but no single vehicle can be singled out; this includes
    /// a vehicle pretending its inbound link was severed.
    NotIdentifiable,
}

/// Vehicles whose own rows contradict `id`'s row.
fn contradictors(d: &TopologyMatrix, id: VehicleId) -> BTreeSet<VehicleId> {
    let row = d.row(id).expect("present");
    let mut out = BTreeSet::new();
    if let Some(p) = row.pred {
        if d.row(p).is_some_and(|r| r.succ != Some(id)) {
            out.insert(p);
        }
        out.extend(d.rows().filter(|&(j, r)| j != p && j != id && r.succ == Some(id)).map(|(j, _)| j));
    }
    // A missing predecessor is indistinguishable from a severed link.
    if let Some(s) = row.succ {
        if d.row(s).is_some_and(|r| r.pred != Some(id)) {
            out.insert(s);
        }
        out.extend(d.rows().filter(|&(j, r)| j != s && j != id && r.pred == Some(id)).map(|(j, _)| j));
    } else {
        out.extend(d.rows().filter(|&(j, r)| j != id && r.pred == Some(id)).map(|(j, _)| j));
    }
    out
}

/// Identify a single vehicle broadcasting a false row by majority.
///
/// `claimed` holds each vehicle's row as it broadcast it. Needs more than
/// three vehicles; smaller platoons are never identifiable.
pub fn detect_false_broadcast(claimed: &TopologyMatrix) -> Result<BroadcastVerdict, TopologyError> {
    claimed.check_well_formed()?;
    let report = claimed.check_conditions()?;
    if report.is_valid() {
        return Ok(BroadcastVerdict::Consistent);
    }
    if claimed.len() <= 3 {
        return Ok(BroadcastVerdict::NotIdentifiable);
    }
    let suspects: Vec<VehicleId> = claimed
        .ids()
        .filter(|&id| contradictors(claimed, id).len() >= 2)
        .collect();
    match suspects.as_slice() {
        [] => Ok(BroadcastVerdict::NotIdentifiable),
        [one] => Ok(BroadcastVerdict::Suspect(*one)),
        _ => Err(TopologyError::AmbiguousBroadcast(suspects)),
    }
}
