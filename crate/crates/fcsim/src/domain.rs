//! Core data model shared by all modules.
//!
//! Units are kW for power, kWh for energy and seconds for scenario time.
//! Durations are converted to hours at module boundaries so that the
//! state-of-charge balance `y' = y - (1+eps)*T*Ps + T*Ppv` is dimensionally
//! consistent (a 60 s sampling period enters the dynamics as 1/60 h).

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SECONDS_PER_HOUR: f64 = 3600.0;

/// Remaining-energy slack under which a battery counts as full (kWh).
pub const FULL_BATTERY_TOL_KWH: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum DomainError {
    #[error("time {t_s} s outside PV profile span [{start_s}, {end_s}] s")]
    PvOutOfRange { t_s: f64, start_s: f64, end_s: f64 },
    #[error("PV profile has no samples")]
    PvEmpty,
}

/// One plugged (or queued) vehicle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChargingSession {
    /// Opaque identifier, unique within a scenario.
    pub id: String,
    /// Arrival time on the scenario clock (s).
    pub t_arr_s: f64,
    /// Current battery state of charge (kWh).
    pub x_kwh: f64,
    /// Battery capacity (kWh).
    pub x_max_kwh: f64,
    /// Minimum allowed charging power while charging (kW).
    pub p_min_kw: f64,
    /// Maximum allowed charging power, the plug's nominal level (kW).
    pub p_max_kw: f64,
}

impl ChargingSession {
    pub fn remaining_kwh(&self) -> f64 {
        (self.x_max_kwh - self.x_kwh).max(0.0)
    }

    pub fn is_full(&self) -> bool {
        self.x_max_kwh - self.x_kwh <= FULL_BATTERY_TOL_KWH
    }

    /// Collects every violated invariant (empty when valid).
    pub fn validation_issues(&self) -> Vec<String> {
        let mut issues = Vec::new();
        if !(self.x_kwh >= 0.0 && self.x_kwh <= self.x_max_kwh) {
            issues.push(format!(
                "session {}: state of charge {} kWh outside [0, {}]",
                self.id, self.x_kwh, self.x_max_kwh
            ));
        }
        if !(self.p_min_kw > 0.0 && self.p_min_kw <= self.p_max_kw) {
            issues.push(format!(
                "session {}: power limits must satisfy 0 < p_min <= p_max, got [{}, {}]",
                self.id, self.p_min_kw, self.p_max_kw
            ));
        }
        issues
    }
}

/// Station-level parameters: aggregate budget and plug levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StationConfig {
    /// Maximum power the station can deliver to vehicles in aggregate (kW).
    pub p_cs_max_kw: f64,
    /// Nominal power level of each plug (kW).
    pub plugs_kw: Vec<f64>,
}

impl StationConfig {
    pub fn n_plugs(&self) -> usize {
        self.plugs_kw.len()
    }

    pub fn validation_issues(&self) -> Vec<String> {
        let mut issues = Vec::new();
        if self.p_cs_max_kw <= 0.0 {
            issues.push(format!(
                "station: deliverable power must be positive, got {}",
                self.p_cs_max_kw
            ));
        }
        for (i, p) in self.plugs_kw.iter().enumerate() {
            if *p <= 0.0 {
                issues.push(format!("station: plug {i} level must be positive, got {p}"));
            }
        }
        if self.plugs_kw.is_empty() {
            issues.push("station: at least one plug is required".to_string());
        }
        issues
    }
}

/// Storage system parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StorageConfig {
    /// Usable capacity (kWh).
    pub capacity_kwh: f64,
    /// Maximum deliverable power (kW), applied to the loss-scaled output.
    pub p_max_kw: f64,
    /// Loss fraction; discharging `p` drains `(1 + loss_fraction) * p`.
    pub loss_fraction: f64,
    /// Reference state of charge the dispatcher tracks (kWh).
    pub soc_ref_kwh: f64,
}

impl StorageConfig {
    pub fn validation_issues(&self) -> Vec<String> {
        let mut issues = Vec::new();
        if !(self.soc_ref_kwh > 0.0 && self.soc_ref_kwh <= self.capacity_kwh) {
            issues.push(format!(
                "storage: reference SoC must lie in (0, capacity], got {} of {}",
                self.soc_ref_kwh, self.capacity_kwh
            ));
        }
        if self.loss_fraction < 0.0 {
            issues.push(format!(
                "storage: loss fraction must be non-negative, got {}",
                self.loss_fraction
            ));
        }
        if self.p_max_kw <= 0.0 {
            issues.push(format!(
                "storage: power limit must be positive, got {}",
                self.p_max_kw
            ));
        }
        issues
    }
}

/// Mutable storage state, owned by the simulation loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StorageState {
    /// Current state of charge (kWh).
    pub y_kwh: f64,
}

/// One raw PV sample; the series is step-held between samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PvSample {
    pub t_s: f64,
    pub raw_kw: f64,
}

/// Time-indexed PV output, treated as a measurable disturbance.
#[derive(Debug, Clone, PartialEq)]
pub struct PvProfile {
    /// Samples sorted by time.
    pub samples: Vec<PvSample>,
    /// Conversion loss fraction applied to the raw series.
    pub loss_fraction: f64,
    /// Nameplate power (kW); effective output never exceeds it.
    pub nominal_kw: f64,
}

impl PvProfile {
    /// Effective PV power at `t_s`: raw sample (step-hold) scaled by
    /// `1 - loss_fraction`. Errors when `t_s` falls outside the sampled span.
    pub fn effective_at(&self, t_s: f64) -> Result<f64, DomainError> {
        let first = self.samples.first().ok_or(DomainError::PvEmpty)?;
        let last = self.samples.last().expect("non-empty");
        if t_s < first.t_s || t_s > last.t_s {
            return Err(DomainError::PvOutOfRange {
                t_s,
                start_s: first.t_s,
                end_s: last.t_s,
            });
        }
        // Last sample with t <= t_s; samples are sorted.
        let idx = match self
            .samples
            .binary_search_by(|s| s.t_s.partial_cmp(&t_s).expect("finite times"))
        {
            Ok(i) => i,
            Err(i) => i - 1,
        };
        Ok((self.samples[idx].raw_kw * (1.0 - self.loss_fraction)).max(0.0))
    }

    pub fn validation_issues(&self) -> Vec<String> {
        let mut issues = Vec::new();
        if self.samples.is_empty() {
            issues.push("pv: profile has no samples".to_string());
        }
        if !(0.0..1.0).contains(&self.loss_fraction) {
            issues.push(format!(
                "pv: loss fraction must lie in [0, 1), got {}",
                self.loss_fraction
            ));
        }
        if self.nominal_kw <= 0.0 {
            issues.push(format!(
                "pv: nominal power must be positive, got {}",
                self.nominal_kw
            ));
        }
        for pair in self.samples.windows(2) {
            if pair[1].t_s <= pair[0].t_s {
                issues.push(format!(
                    "pv: sample times must be strictly increasing ({} then {})",
                    pair[0].t_s, pair[1].t_s
                ));
                break;
            }
        }
        for s in &self.samples {
            let effective = s.raw_kw * (1.0 - self.loss_fraction);
            if s.raw_kw < 0.0 || effective > self.nominal_kw + 1e-9 {
                issues.push(format!(
                    "pv: sample at {} s gives effective {} kW outside [0, {}]",
                    s.t_s, effective, self.nominal_kw
                ));
            }
        }
        issues
    }
}

/// Objective weights and the sampling period of the dispatch problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerWeights {
    /// Storage state-of-charge tracking weight.
    pub alpha: f64,
    /// Charging-setpoint tracking weight.
    pub beta: f64,
    /// Grid power magnitude weight.
    pub gamma: f64,
    /// Grid power ramp weight.
    pub delta: f64,
    /// Priority exponent for elapsed waiting time.
    pub e: f64,
    /// Sampling period (s).
    pub sampling_s: f64,
}

impl ControllerWeights {
    /// Sampling period in hours, the unit the dynamics are integrated in.
    pub fn step_hours(&self) -> f64 {
        self.sampling_s / SECONDS_PER_HOUR
    }

    pub fn validation_issues(&self) -> Vec<String> {
        let mut issues = Vec::new();
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("delta", self.delta),
            ("e", self.e),
        ] {
            if v < 0.0 {
                issues.push(format!("weights: {name} must be non-negative, got {v}"));
            }
        }
        if self.sampling_s <= 0.0 {
            issues.push(format!(
                "weights: sampling period must be positive, got {}",
                self.sampling_s
            ));
        }
        issues
    }
}

/// Per-step dispatch output.
///
/// `p_kw` is parallel to the session slice the step was computed for.
/// `p_g_kw + p_s_kw` equals the total charging power, and in standalone mode
/// `p_g_kw` is identically zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlDecision {
    /// Charging power delivered to each session (kW).
    pub p_kw: Vec<f64>,
    /// Storage power, positive when delivering (kW).
    pub p_s_kw: f64,
    /// Grid import power (kW).
    pub p_g_kw: f64,
    /// Predicted storage state of charge after this step (kWh).
    pub y_next_kwh: f64,
}

impl ControlDecision {
    pub fn total_charging_kw(&self) -> f64 {
        self.p_kw.iter().sum()
    }

    /// Signed power-balance residual `p_g + p_s - sum(p)`.
    pub fn balance_residual_kw(&self) -> f64 {
        self.p_g_kw + self.p_s_kw - self.total_charging_kw()
    }
}
