//! Charging-setpoint definition: desired rates, limit clamping and the
//! priority-weighted least-squares split of the station budget.
//!
//! The allocation problem `min 0.5 (P - Pref)' A (P - Pref)` subject to
//! `sum(P) <= budget` and `0 <= P <= Pref` has a waterfilling structure:
//! every session inside its bounds is reduced by `lambda / w_m`, so heavier
//! weights (longer waits) see smaller reductions. The exact solution clamps
//! negative components and redistributes until the multiplier is consistent.

use crate::domain::{ChargingSession, ControllerWeights};

/// Budget slack allowed on allocations, kept tiny so the station limit is a
/// hard guarantee.
pub const BUDGET_TOL_KW: f64 = 1e-9;

/// Diagonal priority weights, one per session.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorityWeights {
    pub w: Vec<f64>,
}

/// Per-session reference charging powers after the budget split.
#[derive(Debug, Clone, PartialEq)]
pub struct SetpointVector {
    pub p_bar_kw: Vec<f64>,
}

impl SetpointVector {
    pub fn total_kw(&self) -> f64 {
        self.p_bar_kw.iter().sum()
    }
}

/// Desired charging rate: remaining energy spread over one sampling period.
pub fn desired_rate(session: &ChargingSession, step_h: f64) -> f64 {
    debug_assert!(step_h > 0.0);
    session.remaining_kwh() / step_h
}

/// Clamps a desired rate into the session's allowed charging band.
pub fn clamp_rate(rate_kw: f64, session: &ChargingSession) -> f64 {
    if rate_kw < session.p_min_kw {
        session.p_min_kw
    } else if rate_kw > session.p_max_kw {
        session.p_max_kw
    } else {
        rate_kw
    }
}

/// Priority weights `w_m = (k_m + 1)^e` where `k_m` is the elapsed waiting
/// time in sampling periods. The `+1` floor keeps the weight matrix positive
/// definite at the arrival instant while preserving the arrival ordering;
/// with `e = 0` every weight is exactly one.
pub fn priority_weights(
    sessions: &[ChargingSession],
    t_s: f64,
    exponent: f64,
    sampling_s: f64,
) -> PriorityWeights {
    let w = sessions
        .iter()
        .map(|s| {
            debug_assert!(t_s >= s.t_arr_s - 1e-9, "session {} not yet arrived", s.id);
            let periods = (t_s - s.t_arr_s).max(0.0) / sampling_s;
            (periods + 1.0).powf(exponent)
        })
        .collect();
    PriorityWeights { w }
}

/// Waterfilling projection of the clamped rates onto the station budget.
///
/// Inputs must already be clamped (`p_raw_kw[m] <= p_max`) and weights
/// strictly positive. When the budget is slack the input is returned
/// unchanged. Otherwise components are reduced by `lambda / w_m`, clamping
/// at zero and recomputing `lambda` over the remaining free set until
/// consistent; the result satisfies the KKT conditions of the weighted
/// least-squares problem exactly.
pub fn allocate_setpoints(
    p_raw_kw: &[f64],
    weights: &PriorityWeights,
    p_cs_max_kw: f64,
) -> SetpointVector {
    assert_eq!(p_raw_kw.len(), weights.w.len());
    let n = p_raw_kw.len();
    if n == 0 {
        return SetpointVector {
            p_bar_kw: Vec::new(),
        };
    }
    debug_assert!(weights.w.iter().all(|&w| w > 0.0));

    let total: f64 = p_raw_kw.iter().sum();
    if total <= p_cs_max_kw {
        return SetpointVector {
            p_bar_kw: p_raw_kw.to_vec(),
        };
    }
    if p_cs_max_kw <= 0.0 {
        return SetpointVector {
            p_bar_kw: vec![0.0; n],
        };
    }

    let mut free = vec![true; n];
    loop {
        let deficit: f64 = (0..n)
            .filter(|&m| free[m])
            .map(|m| p_raw_kw[m])
            .sum::<f64>()
            - p_cs_max_kw;
        if deficit <= 0.0 {
            // Clamping freed more than the overshoot; remaining sessions keep
            // their full reference.
            let p = (0..n)
                .map(|m| if free[m] { p_raw_kw[m] } else { 0.0 })
                .collect();
            return SetpointVector { p_bar_kw: p };
        }
        let inv_weight_sum: f64 = (0..n)
            .filter(|&m| free[m])
            .map(|m| 1.0 / weights.w[m])
            .sum();
        let lambda = deficit / inv_weight_sum;

        let mut clamped_any = false;
        for m in 0..n {
            if free[m] && p_raw_kw[m] - lambda / weights.w[m] < 0.0 {
                free[m] = false;
                clamped_any = true;
            }
        }
        if !clamped_any {
            let p = (0..n)
                .map(|m| {
                    if free[m] {
                        p_raw_kw[m] - lambda / weights.w[m]
                    } else {
                        0.0
                    }
                })
                .collect();
            return SetpointVector { p_bar_kw: p };
        }
    }
}

/// Full setpoint pipeline for one instant: desired rates, clamping, priority
/// weighting and the budget split. Sessions must already exclude full
/// batteries so the lower clamp never force-charges a finished vehicle.
///
/// Returns the clamped raw references alongside the weights and allocation.
pub fn build_references(
    sessions: &[ChargingSession],
    t_s: f64,
    weights: &ControllerWeights,
    p_cs_max_kw: f64,
) -> (Vec<f64>, PriorityWeights, SetpointVector) {
    let step_h = weights.step_hours();
    let raw: Vec<f64> = sessions
        .iter()
        .map(|s| clamp_rate(desired_rate(s, step_h), s))
        .collect();
    let prio = priority_weights(sessions, t_s, weights.e, weights.sampling_s);
    let allocated = allocate_setpoints(&raw, &prio, p_cs_max_kw);
    (raw, prio, allocated)
}
