//! Simulator for an EV fast-charging service area with on-site PV generation
//! and a stationary storage system.
//!
//! The control strategy runs in two steps every sampling period:
//!
//! 1. **Setpoint allocation** ([`allocator`]): each plugged vehicle gets a
//!    desired charging rate from its remaining energy, clamped to its plug
//!    limits, and the station budget is split by a priority-weighted least
//!    squares projection (waterfilling) that penalises long waiting times.
//! 2. **Dispatch** ([`controller`]): a one-step quadratic program decides the
//!    storage and grid power (and, in standalone mode, the actual per-vehicle
//!    charging powers as semi-continuous variables) subject to the storage
//!    state-of-charge balance and power limits.
//!
//! [`sim`] closes the loop over a scenario (arrivals, departures, PV
//! disturbance, battery integration) and [`scenario`]/[`output`] handle config
//! files, CSV traces and the CLI surface.
//!
//! With the default `parallel` feature, scenario batches and large on/off
//! enumerations run on rayon; disable default features for a fully sequential
//! build.

pub mod allocator;
pub mod controller;
pub mod domain;
pub mod output;
pub mod qp;
pub mod scenario;
pub mod sim;

pub use controller::{control_step, specialize, ControlFlags, ControlMode, ControllerState};
pub use domain::{
    ChargingSession, ControlDecision, ControllerWeights, PvProfile, StationConfig, StorageConfig,
    StorageState,
};
pub use scenario::{load_scenario, save_scenario, ScenarioConfig};
pub use sim::{run, run_batch, FleetEvent, RunLog, Scenario, StepLog};
