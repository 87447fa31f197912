//! Attack-resilient longitudinal platooning.
//!
//! The crate bundles the control stack of a predecessor-follower platoon
//! together with a deterministic simulator to exercise it:
//!
//! - [`dynamics`]: saturated double-integrator vehicles and relative states.
//! - [`gain_tuning`]: ACC gains with collision and string-stability guarantees.
//! - [`controllers`]: the ACC law, feed-forward policies and the safety filter.
//! - [`attack`]: V2V frames and the ways an attacker can corrupt them.
//! - [`detector`]: constant-gain Kalman residual detector producing the trust flag.
//! - [`coordinator`]: topology bookkeeping and minimal-change reorganization.
//! - [`rearrange`]: two-lane supervisor that physically executes a new topology.
//! - [`harness`]: scenario files, the simulation loop, metrics and campaigns.

pub mod attack;
pub mod controllers;
pub mod coordinator;
pub mod detector;
pub mod dynamics;
pub mod gain_tuning;
pub mod harness;
pub mod rearrange;

pub use attack::{AttackKind, AttackSpec, CommFrame};
pub use controllers::{ControlCommand, FeedforwardKind, FilterBranch};
pub use coordinator::{DeltaVec, TopologyMatrix, VehicleId};
pub use detector::{Detector, DetectorConfig};
pub use dynamics::{ActuationLimits, PlatoonParams, RelativeState, VehicleState};
pub use gain_tuning::ControllerGains;
