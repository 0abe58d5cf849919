//! One control iteration: setpoint allocation followed by a one-step
//! quadratic dispatch of storage and grid power.
//!
//! The dispatch minimizes
//!
//! ```text
//!   alpha*(y' - y_ref)^2 + beta*(P - Pref)'A(P - Pref)
//!     + gamma*Pg^2 + delta*(Pg - Pg_prev)^2
//! ```
//!
//! subject to the storage balance `y' = y - (1+eps)*T*Ps + T*Ppv`, the
//! state-of-charge and power limits, and the area power balance
//! `Pg + Ps = sum(P)`. Grid-connected operation fixes `P = Pref` (the beta
//! term is inert); standalone operation pins `Pg = 0` and decides each
//! session power as a semi-continuous variable, zero or at least its minimum
//! charging level.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::allocator::{build_references, PriorityWeights, SetpointVector};
use crate::domain::{
    ChargingSession, ControlDecision, ControllerWeights, StationConfig, StorageConfig,
    StorageState,
};
use crate::qp::{
    solve_qp_with_start, solve_semicontinuous, QpError, QpProblem, SemiContinuousSpec, Tolerances,
};

#[derive(Debug, Error)]
pub enum ControlError {
    #[error("dispatch problem infeasible: {0}")]
    Infeasible(String),
    #[error(transparent)]
    Qp(#[from] QpError),
}

/// Which power source backs the charging area.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControlMode {
    /// Vehicles charge at their references; storage and grid share the load.
    #[serde(alias = "grid-connected", alias = "grid_connected")]
    Grid,
    /// No grid exchange; storage (fed by PV) powers everything.
    Standalone,
}

/// State threaded between control iterations.
#[derive(Debug, Clone, Copy, Default)]
pub struct ControllerState {
    /// Grid power of the previous step (kW), zero at scenario start.
    pub p_g_prev_kw: f64,
}

/// Model switches; defaults follow the literal one-factor loss model with a
/// symmetric storage power limit and semi-continuous charging variables.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlFlags {
    /// Apply `(1+eps)` on discharge but `1/(1+eps)` on charge instead of the
    /// single-factor balance.
    pub physical_losses: bool,
    /// Also limit charging power to the storage's rating (the literal
    /// constraint is one-sided).
    pub symmetric_storage_limit: bool,
    /// Treat per-session minimum charging power as a hard lower bound instead
    /// of a semi-continuous off-option.
    pub hard_lower_bound: bool,
}

impl Default for ControlFlags {
    fn default() -> Self {
        Self {
            physical_losses: false,
            symmetric_storage_limit: true,
            hard_lower_bound: false,
        }
    }
}

/// Setpoints plus the dispatch decision for one instant.
#[derive(Debug, Clone)]
pub struct ControlOutcome {
    /// Clamped desired rates before the budget split (kW, per session).
    pub p_ref_raw_kw: Vec<f64>,
    /// Priority weights used at this instant.
    pub weights: PriorityWeights,
    /// Allocated references (kW, per session).
    pub p_ref_kw: Vec<f64>,
    pub decision: ControlDecision,
}

/// Mode-specific weight specialization: grid-connected drops the setpoint
/// tracking term (references are delivered verbatim), standalone zeroes the
/// grid terms (grid power is pinned to zero, making them inert anyway).
pub fn specialize(mode: ControlMode, weights: &ControllerWeights) -> ControllerWeights {
    let mut w = *weights;
    match mode {
        ControlMode::Grid => w.beta = 0.0,
        ControlMode::Standalone => {
            w.gamma = 0.0;
            w.delta = 0.0;
        }
    }
    w
}

/// Predicted storage state of charge after one step at storage power `p_s`.
///
/// The literal balance applies the single `(1+eps)` factor for either sign of
/// `p_s`; with `physical_losses` charging is divided by `(1+eps)` instead.
pub fn predict_soc(
    storage: &StorageConfig,
    y_kwh: f64,
    p_s_kw: f64,
    pv_kw: f64,
    step_h: f64,
    flags: &ControlFlags,
) -> f64 {
    let eps = storage.loss_fraction;
    if flags.physical_losses && p_s_kw < 0.0 {
        y_kwh - step_h * p_s_kw / (1.0 + eps) + step_h * pv_kw
    } else {
        y_kwh - (1.0 + eps) * step_h * p_s_kw + step_h * pv_kw
    }
}

/// Feasible storage power interval for one step (discharge positive),
/// combining the state-of-charge limits with the power rating.
fn storage_power_bounds(
    storage: &StorageConfig,
    y_kwh: f64,
    pv_kw: f64,
    step_h: f64,
    flags: &ControlFlags,
    charge_factor: f64,
) -> (f64, f64) {
    let eps = storage.loss_fraction;
    let inflow = y_kwh + step_h * pv_kw;
    // Discharging drains (1+eps)*T*p; the SoC must stay in [0, capacity].
    let hi_soc = inflow / ((1.0 + eps) * step_h);
    let lo_soc = (inflow - storage.capacity_kwh) / (charge_factor * step_h);
    let hi = hi_soc.min(storage.p_max_kw / (1.0 + eps));
    let lo = if flags.symmetric_storage_limit {
        lo_soc.max(-storage.p_max_kw / (1.0 + eps))
    } else {
        lo_soc
    };
    (lo, hi)
}

/// One control iteration. Runs the allocator, then solves the mode-specific
/// dispatch problem. `t_s` is the scenario clock used for priority weights.
#[allow(clippy::too_many_arguments)]
pub fn control_step(
    sessions: &[ChargingSession],
    station: &StationConfig,
    storage: &StorageConfig,
    storage_state: &StorageState,
    pv_now_kw: f64,
    weights: &ControllerWeights,
    mode: ControlMode,
    state: &ControllerState,
    t_s: f64,
    flags: &ControlFlags,
) -> Result<ControlOutcome, ControlError> {
    debug_assert!(pv_now_kw >= 0.0);
    let (raw, prio, setpoints) = build_references(sessions, t_s, weights, station.p_cs_max_kw);
    let eff = specialize(mode, weights);
    let decision = match mode {
        ControlMode::Grid => dispatch_grid(storage, storage_state, pv_now_kw, &eff, state, &setpoints, flags)?,
        ControlMode::Standalone => dispatch_standalone(
            sessions,
            storage,
            storage_state,
            pv_now_kw,
            &eff,
            &prio,
            &setpoints,
            flags,
        )?,
    };
    debug_assert!(decision.balance_residual_kw().abs() <= 1e-9);
    Ok(ControlOutcome {
        p_ref_raw_kw: raw,
        weights: prio,
        p_ref_kw: setpoints.p_bar_kw.clone(),
        decision,
    })
}

/// Grid-connected dispatch: references are served verbatim; storage and grid
/// split the load trading SoC tracking against grid power and ramp costs.
///
/// The balance `p_g = load - p_s` is substituted into the objective, leaving
/// a scalar QP over the storage power whose zero start is always feasible.
fn dispatch_grid(
    storage: &StorageConfig,
    storage_state: &StorageState,
    pv_kw: f64,
    w: &ControllerWeights,
    state: &ControllerState,
    setpoints: &SetpointVector,
    flags: &ControlFlags,
) -> Result<ControlDecision, ControlError> {
    let load = setpoints.total_kw();
    let discharge = solve_grid_branch(storage, storage_state, pv_kw, w, state, load, flags, false)?;
    let best = if flags.physical_losses {
        // The charge branch uses a different loss factor; solve both and keep
        // the cheaper one (ties go to the discharge branch).
        let charge = solve_grid_branch(storage, storage_state, pv_kw, w, state, load, flags, true)?;
        match (discharge, charge) {
            (Some(d), Some(c)) => {
                if c.1 < d.1 - 1e-12 {
                    Some(c)
                } else {
                    Some(d)
                }
            }
            (d, c) => d.or(c),
        }
    } else {
        discharge
    };
    let (p_s_kw, _obj) = best.ok_or_else(|| {
        ControlError::Infeasible(
            "grid-connected dispatch has no feasible storage power".to_string(),
        )
    })?;
    let p_g_kw = load - p_s_kw;
    let y_next = predict_soc(storage, storage_state.y_kwh, p_s_kw, pv_kw, w.step_hours(), flags);
    Ok(ControlDecision {
        p_kw: setpoints.p_bar_kw.clone(),
        p_s_kw,
        p_g_kw,
        y_next_kwh: y_next,
    })
}

/// Solves one sign branch of the grid-connected problem over the storage
/// power. Returns `None` when the branch is infeasible.
#[allow(clippy::too_many_arguments)]
fn solve_grid_branch(
    storage: &StorageConfig,
    storage_state: &StorageState,
    pv_kw: f64,
    w: &ControllerWeights,
    state: &ControllerState,
    load_kw: f64,
    flags: &ControlFlags,
    charge_branch: bool,
) -> Result<Option<(f64, f64)>, ControlError> {
    let t = w.step_hours();
    let eps = storage.loss_fraction;
    let factor = if charge_branch && flags.physical_losses {
        1.0 / (1.0 + eps)
    } else {
        1.0 + eps
    };
    let (mut lo, mut hi) =
        storage_power_bounds(storage, storage_state.y_kwh, pv_kw, t, flags, factor);
    if flags.physical_losses {
        if charge_branch {
            hi = hi.min(0.0);
        } else {
            lo = lo.max(0.0);
        }
    }
    if lo > hi {
        return Ok(None);
    }

    // Scalar variable p_s with p_g = load - p_s substituted:
    //   alpha*(k0 - factor*t*p_s)^2 + gamma*(load - p_s)^2
    //     + delta*(load - p_s - p_g_prev)^2
    let k0 = storage_state.y_kwh + t * pv_kw - storage.soc_ref_kwh;
    let ft = factor * t;
    let q = DMatrix::from_row_slice(1, 1, &[2.0 * (w.alpha * ft * ft + w.gamma + w.delta)]);
    let c = DVector::from_row_slice(&[
        -2.0 * (w.alpha * k0 * ft + w.gamma * load_kw + w.delta * (load_kw - state.p_g_prev_kw)),
    ]);
    let mut p = QpProblem::new(q, c);
    p.set_bounds(0, lo, hi);

    let start = DVector::from_row_slice(&[0.0f64.clamp(lo, hi)]);
    let sol = solve_qp_with_start(&p, &start, &Tolerances::default())?;
    if !sol.is_optimal() {
        return Ok(None);
    }
    // Report the objective of the full expression (constant terms included)
    // so the two branches compare on equal footing.
    let ps = sol.x[0];
    let obj = w.alpha * (k0 - ft * ps).powi(2)
        + w.gamma * (load_kw - ps).powi(2)
        + w.delta * (load_kw - ps - state.p_g_prev_kw).powi(2);
    Ok(Some((ps, obj)))
}

/// Standalone dispatch: grid power is pinned to zero and each session power
/// is semi-continuous (off, or between its minimum level and its reference).
/// If no on/off pattern is feasible the step falls back to all sessions off
/// with the storage passively absorbing the PV inflow.
#[allow(clippy::too_many_arguments)]
fn dispatch_standalone(
    sessions: &[ChargingSession],
    storage: &StorageConfig,
    storage_state: &StorageState,
    pv_kw: f64,
    w: &ControllerWeights,
    prio: &PriorityWeights,
    setpoints: &SetpointVector,
    flags: &ControlFlags,
) -> Result<ControlDecision, ControlError> {
    let n = sessions.len();
    let t = w.step_hours();
    let eps = storage.loss_fraction;
    let factor = 1.0 + eps;
    let (lo, hi) = storage_power_bounds(storage, storage_state.y_kwh, pv_kw, t, flags, factor);

    let all_off = |storage_state: &StorageState| ControlDecision {
        p_kw: vec![0.0; n],
        p_s_kw: 0.0,
        p_g_kw: 0.0,
        y_next_kwh: predict_soc(storage, storage_state.y_kwh, 0.0, pv_kw, t, flags),
    };
    if lo > hi {
        return Ok(all_off(storage_state));
    }

    // Variables [p_1..p_n] with p_s = sum(p) substituted: the SoC tracking
    // term couples every pair, giving a diagonal-plus-rank-one cost.
    let ft = factor * t;
    let k0 = storage_state.y_kwh + t * pv_kw - storage.soc_ref_kwh;
    let mut q = DMatrix::from_element(n, n, 2.0 * w.alpha * ft * ft);
    let mut c = DVector::zeros(n);
    for m in 0..n {
        q[(m, m)] += 2.0 * w.beta * prio.w[m];
        c[m] = -2.0 * w.beta * prio.w[m] * setpoints.p_bar_kw[m] - 2.0 * w.alpha * k0 * ft;
    }

    let mut p = QpProblem::new(q, c);
    let ones = DVector::from_element(n, 1.0);
    p.add_ineq(ones.clone(), hi);
    p.add_ineq(-ones, -lo);

    let mut spec = SemiContinuousSpec::new(n);
    for (m, s) in sessions.iter().enumerate() {
        let p_bar = setpoints.p_bar_kw[m];
        if p_bar < s.p_min_kw {
            // Reference below the minimum level: the session cannot be served
            // this step under either reading of the lower limit.
            p.set_bounds(m, 0.0, 0.0);
        } else if flags.hard_lower_bound {
            p.set_bounds(m, s.p_min_kw, p_bar);
        } else {
            p.set_bounds(m, 0.0, p_bar);
            spec.set(m, s.p_min_kw, p_bar);
        }
    }

    let sol = solve_semicontinuous(&p, &spec, &Tolerances::default())?;
    if !sol.is_optimal() {
        return Ok(all_off(storage_state));
    }

    // Snap delivered powers onto their exact intervals and rebuild the
    // balance exactly; the adjustments are within solver tolerance.
    let mut p_kw = vec![0.0; n];
    for (m, s) in sessions.iter().enumerate() {
        let v = sol.x[m];
        p_kw[m] = if v == 0.0 {
            0.0
        } else {
            v.clamp(s.p_min_kw.min(setpoints.p_bar_kw[m]), setpoints.p_bar_kw[m])
        };
    }
    let p_s_kw: f64 = p_kw.iter().sum();
    let y_next = predict_soc(storage, storage_state.y_kwh, p_s_kw, pv_kw, t, flags);
    Ok(ControlDecision {
        p_kw,
        p_s_kw,
        p_g_kw: 0.0,
        y_next_kwh: y_next,
    })
}
