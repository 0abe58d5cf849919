//! Deterministic closed-loop simulation: fleet arrivals and departures,
//! storage and EV battery integration, PV disturbance and one controller
//! invocation per sampling period.
//!
//! A run is strictly sequential (state-carrying); distinct runs share nothing
//! and execute in parallel through [`run_batch`].

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::controller::{
    control_step, predict_soc, ControlError, ControlFlags, ControlMode, ControllerState,
};
use crate::domain::{
    ChargingSession, ControllerWeights, DomainError, PvProfile, StationConfig, StorageConfig,
    StorageState,
};

/// Slack allowed on simulated storage bounds before the run is declared
/// internally inconsistent.
const SOC_BOUND_TOL_KWH: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    Scenario(String),
    #[error(transparent)]
    Pv(#[from] DomainError),
    #[error(transparent)]
    Control(#[from] ControlError),
}

/// One vehicle in the scenario script.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FleetEvent {
    /// Session identifier; generated from the fleet position when omitted.
    #[serde(default)]
    pub id: Option<String>,
    /// Arrival time (s).
    pub t_arr_s: f64,
    /// Required plug level (kW); must match a station plug exactly.
    pub plug_kw: f64,
    /// Initial battery state of charge (kWh).
    pub x0_kwh: f64,
    /// Battery capacity (kWh).
    pub capacity_kwh: f64,
    /// Minimum charging power while charging (kW).
    pub p_min_kw: f64,
    /// Scheduled unplug time for vehicles that leave before full charge (s).
    #[serde(default)]
    pub t_depart_s: Option<f64>,
}

/// Fully materialized, runnable scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub station: StationConfig,
    pub storage: StorageConfig,
    /// Initial storage state of charge (kWh).
    pub y0_kwh: f64,
    pub pv: PvProfile,
    pub fleet: Vec<FleetEvent>,
    pub weights: ControllerWeights,
    pub mode: ControlMode,
    pub flags: ControlFlags,
    /// Simulated window (s); must be a whole number of sampling periods.
    pub horizon_s: f64,
}

impl Scenario {
    pub fn steps(&self) -> usize {
        (self.horizon_s / self.weights.sampling_s).round() as usize
    }

    /// Shallow validation of cross-field consistency; full config validation
    /// happens at load time.
    pub fn validation_issues(&self) -> Vec<String> {
        let mut issues = Vec::new();
        issues.extend(self.station.validation_issues());
        issues.extend(self.storage.validation_issues());
        issues.extend(self.weights.validation_issues());
        issues.extend(self.pv.validation_issues());
        if !(self.y0_kwh >= 0.0 && self.y0_kwh <= self.storage.capacity_kwh) {
            issues.push(format!(
                "initial storage SoC {} kWh outside [0, {}]",
                self.y0_kwh, self.storage.capacity_kwh
            ));
        }
        let steps = self.horizon_s / self.weights.sampling_s;
        if self.horizon_s <= 0.0 || (steps - steps.round()).abs() > 1e-9 {
            issues.push(format!(
                "horizon {} s is not a positive whole number of {} s periods",
                self.horizon_s, self.weights.sampling_s
            ));
        }
        let mut ids = std::collections::BTreeSet::new();
        for (i, ev) in self.fleet.iter().enumerate() {
            let id = ev.id.clone().unwrap_or_else(|| format!("ev{}", i + 1));
            if !ids.insert(id.clone()) {
                issues.push(format!("duplicate session id {id}"));
            }
            if !self.station.plugs_kw.iter().any(|p| *p == ev.plug_kw) {
                issues.push(format!(
                    "session {id}: no station plug delivers {} kW",
                    ev.plug_kw
                ));
            }
            if !(ev.x0_kwh >= 0.0 && ev.x0_kwh < ev.capacity_kwh) {
                issues.push(format!(
                    "session {id}: initial SoC {} kWh outside [0, {})",
                    ev.x0_kwh, ev.capacity_kwh
                ));
            }
            if !(ev.p_min_kw > 0.0 && ev.p_min_kw <= ev.plug_kw) {
                issues.push(format!(
                    "session {id}: p_min {} kW outside (0, {}]",
                    ev.p_min_kw, ev.plug_kw
                ));
            }
            if ev.t_arr_s < 0.0 {
                issues.push(format!("session {id}: arrival {} s negative", ev.t_arr_s));
            }
            if let Some(td) = ev.t_depart_s {
                if td <= ev.t_arr_s {
                    issues.push(format!(
                        "session {id}: departure {td} s not after arrival {} s",
                        ev.t_arr_s
                    ));
                }
            }
        }
        // The PV profile must cover every sampling instant.
        if let (Some(first), Some(last)) = (self.pv.samples.first(), self.pv.samples.last()) {
            if first.t_s > 0.0 || last.t_s < self.horizon_s {
                issues.push(format!(
                    "pv profile spans [{}, {}] s but the run needs [0, {}] s",
                    first.t_s, last.t_s, self.horizon_s
                ));
            }
        }
        issues
    }
}

/// Per-session slice of a step row.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionLog {
    pub id: String,
    /// Clamped desired rate before the budget split (kW).
    pub p_ref_raw_kw: f64,
    /// Allocated reference (kW).
    pub p_ref_kw: f64,
    /// Delivered charging power (kW).
    pub p_kw: f64,
    /// Battery state of charge at the start of the step (kWh).
    pub x_kwh: f64,
}

/// One sampling instant: pre-decision state plus the decision applied over
/// the following period.
#[derive(Debug, Clone, PartialEq)]
pub struct StepLog {
    pub t_s: f64,
    pub y_kwh: f64,
    pub p_pv_kw: f64,
    pub p_s_kw: f64,
    pub p_g_kw: f64,
    /// Total delivered charging power (kW).
    pub p_total_kw: f64,
    /// Total allocated reference (kW).
    pub p_ref_total_kw: f64,
    pub sessions: Vec<SessionLog>,
}

/// Arrival/completion bookkeeping for the whole run.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionSummary {
    pub id: String,
    pub t_arr_s: f64,
    /// Step time at which the session left with a full battery.
    pub t_complete_s: Option<f64>,
    /// Step time at which the session unplugged early, if scheduled.
    pub t_depart_s: Option<f64>,
    pub energy_kwh: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub steps: Vec<StepLog>,
    pub sessions: Vec<SessionSummary>,
}

struct ActiveSession {
    event_idx: usize,
    session: ChargingSession,
    plug_idx: usize,
}

/// Runs one scenario to completion. The output is a pure function of the
/// scenario: repeated runs are bit-identical.
pub fn run(scenario: &Scenario) -> Result<RunLog, SimError> {
    let issues = scenario.validation_issues();
    if !issues.is_empty() {
        return Err(SimError::Scenario(issues.join("; ")));
    }

    let n_events = scenario.fleet.len();
    let ids: Vec<String> = scenario
        .fleet
        .iter()
        .enumerate()
        .map(|(i, ev)| ev.id.clone().unwrap_or_else(|| format!("ev{}", i + 1)))
        .collect();

    let mut summaries: Vec<SessionSummary> = scenario
        .fleet
        .iter()
        .enumerate()
        .map(|(i, ev)| SessionSummary {
            id: ids[i].clone(),
            t_arr_s: ev.t_arr_s,
            t_complete_s: None,
            t_depart_s: None,
            energy_kwh: 0.0,
        })
        .collect();

    let mut admitted = vec![false; n_events];
    let mut active: Vec<ActiveSession> = Vec::new();
    let mut plug_busy = vec![false; scenario.station.n_plugs()];
    let mut storage_state = StorageState {
        y_kwh: scenario.y0_kwh,
    };
    let mut ctrl_state = ControllerState::default();
    let mut steps = Vec::with_capacity(scenario.steps() + 1);

    // Admission order: by arrival time, then fleet position.
    let mut arrival_order: Vec<usize> = (0..n_events).collect();
    arrival_order.sort_by(|&a, &b| {
        scenario.fleet[a]
            .t_arr_s
            .partial_cmp(&scenario.fleet[b].t_arr_s)
            .expect("finite arrival times")
            .then(a.cmp(&b))
    });

    let t_step = scenario.weights.sampling_s;
    for k in 0..=scenario.steps() {
        let t_s = k as f64 * t_step;

        // Scheduled departures and completed batteries leave first, freeing
        // plugs for this instant's arrivals.
        active.retain(|a| {
            let ev = &scenario.fleet[a.event_idx];
            if ev.t_depart_s.is_some_and(|td| t_s >= td) {
                summaries[a.event_idx].t_depart_s = Some(t_s);
                plug_busy[a.plug_idx] = false;
                return false;
            }
            if a.session.is_full() {
                summaries[a.event_idx].t_complete_s = Some(t_s);
                plug_busy[a.plug_idx] = false;
                return false;
            }
            true
        });

        // FIFO per plug level: earliest arrival takes the lowest free plug of
        // its level; later vehicles queue until one frees up.
        for &ei in &arrival_order {
            let ev = &scenario.fleet[ei];
            if admitted[ei] || ev.t_arr_s > t_s {
                continue;
            }
            if ev.t_depart_s.is_some_and(|td| t_s >= td) {
                continue; // would unplug before ever charging
            }
            let plug = (0..plug_busy.len())
                .find(|&p| !plug_busy[p] && scenario.station.plugs_kw[p] == ev.plug_kw);
            if let Some(plug_idx) = plug {
                plug_busy[plug_idx] = true;
                admitted[ei] = true;
                active.push(ActiveSession {
                    event_idx: ei,
                    session: ChargingSession {
                        id: ids[ei].clone(),
                        t_arr_s: ev.t_arr_s,
                        x_kwh: ev.x0_kwh,
                        x_max_kwh: ev.capacity_kwh,
                        p_min_kw: ev.p_min_kw,
                        p_max_kw: ev.plug_kw,
                    },
                    plug_idx,
                });
            }
        }

        let pv_kw = scenario.pv.effective_at(t_s)?;
        let sessions: Vec<ChargingSession> = active.iter().map(|a| a.session.clone()).collect();
        let outcome = control_step(
            &sessions,
            &scenario.station,
            &scenario.storage,
            &storage_state,
            pv_kw,
            &scenario.weights,
            scenario.mode,
            &ctrl_state,
            t_s,
            &scenario.flags,
        )?;

        steps.push(StepLog {
            t_s,
            y_kwh: storage_state.y_kwh,
            p_pv_kw: pv_kw,
            p_s_kw: outcome.decision.p_s_kw,
            p_g_kw: outcome.decision.p_g_kw,
            p_total_kw: outcome.decision.total_charging_kw(),
            p_ref_total_kw: outcome.p_ref_kw.iter().sum(),
            sessions: active
                .iter()
                .enumerate()
                .map(|(m, a)| SessionLog {
                    id: a.session.id.clone(),
                    p_ref_raw_kw: outcome.p_ref_raw_kw[m],
                    p_ref_kw: outcome.p_ref_kw[m],
                    p_kw: outcome.decision.p_kw[m],
                    x_kwh: a.session.x_kwh,
                })
                .collect(),
        });

        // Integrate dynamics: delivered powers track the decision exactly.
        let step_h = scenario.weights.step_hours();
        for (m, a) in active.iter_mut().enumerate() {
            let delta = step_h * outcome.decision.p_kw[m];
            let applied = delta.min(a.session.remaining_kwh());
            summaries[a.event_idx].energy_kwh += applied;
            a.session.x_kwh = (a.session.x_kwh + delta).min(a.session.x_max_kwh);
        }
        let expected = predict_soc(
            &scenario.storage,
            storage_state.y_kwh,
            outcome.decision.p_s_kw,
            pv_kw,
            step_h,
            &scenario.flags,
        );
        assert_eq!(
            outcome.decision.y_next_kwh, expected,
            "controller and plant disagree on the storage balance"
        );
        assert!(
            outcome.decision.y_next_kwh >= -SOC_BOUND_TOL_KWH
                && outcome.decision.y_next_kwh <= scenario.storage.capacity_kwh + SOC_BOUND_TOL_KWH,
            "storage bound violated at t = {t_s} s: y' = {} kWh",
            outcome.decision.y_next_kwh
        );
        storage_state.y_kwh = outcome.decision.y_next_kwh;
        ctrl_state.p_g_prev_kw = outcome.decision.p_g_kw;
    }

    Ok(RunLog {
        steps,
        sessions: summaries,
    })
}

/// Runs independent scenarios, in parallel when the `parallel` feature is on.
pub fn run_batch(scenarios: &[Scenario]) -> Vec<Result<RunLog, SimError>> {
    #[cfg(feature = "parallel")]
    {
        scenarios.par_iter().map(run).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        scenarios.iter().map(run).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::PvSample;

    fn flat_pv(kw: f64, horizon_s: f64) -> PvProfile {
        PvProfile {
            samples: vec![
                PvSample { t_s: 0.0, raw_kw: kw },
                PvSample {
                    t_s: horizon_s,
                    raw_kw: kw,
                },
            ],
            loss_fraction: 0.0,
            nominal_kw: 120.0,
        }
    }

    fn base_scenario() -> Scenario {
        Scenario {
            station: StationConfig {
                p_cs_max_kw: 120.0,
                plugs_kw: vec![50.0, 50.0, 43.0, 22.0],
            },
            storage: StorageConfig {
                capacity_kwh: 300.0,
                p_max_kw: 150.0,
                loss_fraction: 0.1,
                soc_ref_kwh: 150.0,
            },
            y0_kwh: 150.0,
            pv: flat_pv(0.0, 7200.0),
            fleet: vec![],
            weights: ControllerWeights {
                alpha: 10.0,
                beta: 5e6,
                gamma: 3e7,
                delta: 10.0,
                e: 3.0,
                sampling_s: 60.0,
            },
            mode: ControlMode::Standalone,
            flags: ControlFlags::default(),
            horizon_s: 7200.0,
        }
    }

    fn ev(id: &str, t_arr_s: f64, plug_kw: f64, cap: f64) -> FleetEvent {
        FleetEvent {
            id: Some(id.into()),
            t_arr_s,
            plug_kw,
            x0_kwh: 0.0,
            capacity_kwh: cap,
            p_min_kw: 5.0,
            t_depart_s: None,
        }
    }

    #[test]
    fn empty_world_is_all_zero() {
        let sc = base_scenario();
        let log = run(&sc).unwrap();
        assert_eq!(log.steps.len(), 121);
        for row in &log.steps {
            assert_eq!(row.p_total_kw, 0.0);
            assert_eq!(row.p_s_kw, 0.0);
            assert_eq!(row.y_kwh, 150.0);
        }
    }

    #[test]
    fn row_count_is_horizon_over_period_plus_one() {
        let mut sc = base_scenario();
        sc.horizon_s = 600.0;
        sc.pv = flat_pv(0.0, 600.0);
        let log = run(&sc).unwrap();
        assert_eq!(log.steps.len(), 11);
    }

    #[test]
    fn battery_integration_direct_substitution() {
        // One EV at 50 kW for one minute: x grows by 50/60 kWh.
        let mut sc = base_scenario();
        sc.fleet = vec![ev("a", 0.0, 50.0, 100.0)];
        sc.fleet[0].x0_kwh = 10.0;
        let log = run(&sc).unwrap();
        let p0 = log.steps[0].sessions[0].p_kw;
        let x1 = log.steps[1].sessions[0].x_kwh;
        assert!((x1 - (10.0 + p0 / 60.0)).abs() < 1e-12);
    }

    #[test]
    fn storage_balance_bookkeeping_is_exact() {
        let mut sc = base_scenario();
        sc.fleet = vec![ev("a", 0.0, 50.0, 30.0), ev("b", 300.0, 43.0, 30.0)];
        sc.pv = flat_pv(30.0, 7200.0);
        let log = run(&sc).unwrap();
        let t = sc.weights.step_hours();
        for pair in log.steps.windows(2) {
            let expected = pair[0].y_kwh - (1.0 + 0.1) * t * pair[0].p_s_kw + t * pair[0].p_pv_kw;
            assert_eq!(pair[1].y_kwh, expected);
        }
    }

    #[test]
    fn sessions_complete_and_leave() {
        let mut sc = base_scenario();
        sc.fleet = vec![ev("a", 0.0, 50.0, 10.0)];
        sc.pv = flat_pv(40.0, 7200.0);
        let log = run(&sc).unwrap();
        let done = log.sessions[0].t_complete_s.expect("completes within run");
        assert!(done < 7200.0);
        // x never decreases and the session disappears after completion.
        let mut last_x = 0.0;
        for row in &log.steps {
            if let Some(s) = row.sessions.first() {
                assert!(s.x_kwh >= last_x - 1e-12);
                last_x = s.x_kwh;
                assert!(row.t_s < done);
            }
        }
        assert!(log.sessions[0].energy_kwh <= 10.0 + 1e-9);
    }

    #[test]
    fn scheduled_departure_releases_plug() {
        let mut sc = base_scenario();
        let mut first = ev("a", 0.0, 50.0, 200.0);
        first.t_depart_s = Some(1800.0);
        // Second EV wants the same 50 kW plug class; both fit (two plugs), so
        // use a third to force queueing on one plug level.
        let second = ev("b", 0.0, 50.0, 200.0);
        let third = ev("c", 60.0, 50.0, 200.0);
        sc.fleet = vec![first, second, third];
        sc.pv = flat_pv(60.0, 7200.0);
        let log = run(&sc).unwrap();
        assert_eq!(log.sessions[0].t_depart_s, Some(1800.0));
        // The queued EV is admitted once the departing one unplugs.
        let c_first_seen = log
            .steps
            .iter()
            .find(|row| row.sessions.iter().any(|s| s.id == "c"))
            .map(|row| row.t_s)
            .expect("c eventually admitted");
        assert_eq!(c_first_seen, 1800.0);
    }

    #[test]
    fn fifo_among_same_plug_level() {
        let mut sc = base_scenario();
        sc.station.plugs_kw = vec![50.0];
        sc.fleet = vec![ev("late", 120.0, 50.0, 5.0), ev("early", 60.0, 50.0, 5.0)];
        sc.pv = flat_pv(60.0, 7200.0);
        let log = run(&sc).unwrap();
        let first_served = log
            .steps
            .iter()
            .find_map(|row| row.sessions.first().map(|s| s.id.clone()))
            .unwrap();
        assert_eq!(first_served, "early");
    }

    #[test]
    fn standalone_never_imports() {
        let mut sc = base_scenario();
        sc.fleet = vec![ev("a", 0.0, 50.0, 30.0), ev("b", 0.0, 22.0, 20.0)];
        sc.pv = flat_pv(20.0, 7200.0);
        let log = run(&sc).unwrap();
        for row in &log.steps {
            assert_eq!(row.p_g_kw, 0.0);
        }
    }

    #[test]
    fn delivered_never_exceeds_reference() {
        let mut sc = base_scenario();
        sc.fleet = vec![
            ev("a", 0.0, 50.0, 30.0),
            ev("b", 0.0, 50.0, 30.0),
            ev("c", 0.0, 43.0, 30.0),
            ev("d", 0.0, 22.0, 20.0),
        ];
        sc.pv = flat_pv(40.0, 7200.0);
        let log = run(&sc).unwrap();
        for row in &log.steps {
            for s in &row.sessions {
                assert!(s.p_kw <= s.p_ref_kw + 1e-9);
                assert!(s.p_ref_kw <= s.p_ref_raw_kw + 1e-9);
            }
        }
    }

    #[test]
    fn repeated_runs_identical() {
        let mut sc = base_scenario();
        sc.fleet = vec![ev("a", 0.0, 50.0, 30.0), ev("b", 600.0, 43.0, 25.0)];
        sc.pv = flat_pv(35.0, 7200.0);
        let a = run(&sc).unwrap();
        let b = run(&sc).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn batch_matches_individual_runs() {
        let mut sc1 = base_scenario();
        sc1.fleet = vec![ev("a", 0.0, 50.0, 20.0)];
        sc1.pv = flat_pv(25.0, 7200.0);
        let mut sc2 = sc1.clone();
        sc2.weights.e = 0.0;
        let batch = run_batch(&[sc1.clone(), sc2.clone()]);
        assert_eq!(batch[0].as_ref().unwrap(), &run(&sc1).unwrap());
        assert_eq!(batch[1].as_ref().unwrap(), &run(&sc2).unwrap());
    }

    #[test]
    fn invalid_scenario_rejected_before_stepping() {
        let mut sc = base_scenario();
        sc.fleet = vec![ev("a", 0.0, 37.0, 20.0)]; // no 37 kW plug
        assert!(matches!(run(&sc), Err(SimError::Scenario(_))));
    }
}
