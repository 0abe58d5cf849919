//! Scenario files: a strict TOML schema, full-pass validation and the
//! mapping onto a runnable [`Scenario`].
//!
//! The schema is documented in the repository README. Unknown keys are
//! rejected and semantic validation reports every problem found, not just
//! the first.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::{ControlFlags, ControlMode};
use crate::domain::{ControllerWeights, PvProfile, PvSample, StationConfig, StorageConfig};
use crate::sim::{FleetEvent, Scenario};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid scenario:\n  - {}", .0.join("\n  - "))]
    Invalid(Vec<String>),
}

/// Storage block: static parameters plus the initial state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StorageSection {
    pub capacity_kwh: f64,
    pub p_max_kw: f64,
    pub loss_fraction: f64,
    pub soc_ref_kwh: f64,
    pub soc0_kwh: f64,
}

/// Synthetic bell-shaped PV generator. The raw output is
/// `peak_kw * exp(-((t - peak_time)/sigma)^2)` plus optional seeded noise,
/// sampled every period; it stands in for measured data when no trace file
/// is available and is not calibrated to any particular site.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticPv {
    pub peak_kw: f64,
    pub peak_time_min: f64,
    pub sigma_min: f64,
    /// Uniform noise amplitude (kW); zero keeps the profile deterministic
    /// regardless of seed.
    #[serde(default)]
    pub noise_kw: f64,
    #[serde(default)]
    pub seed: u64,
}

/// PV block: conversion losses plus exactly one source (a two-column CSV
/// trace or the synthetic generator).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PvSection {
    pub nominal_kw: f64,
    pub loss_fraction: f64,
    /// Path to a `t_s,raw_kw` CSV, relative to the scenario file.
    #[serde(default)]
    pub csv: Option<String>,
    #[serde(default)]
    pub synthetic: Option<SyntheticPv>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub mode: ControlMode,
    pub horizon_min: f64,
}

/// Complete scenario description as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub station: StationConfig,
    pub storage: StorageSection,
    pub pv: PvSection,
    pub weights: ControllerWeights,
    pub run: RunSection,
    #[serde(default)]
    pub flags: ControlFlags,
    #[serde(default)]
    pub fleet: Vec<FleetEvent>,
}

impl ScenarioConfig {
    pub fn horizon_s(&self) -> f64 {
        self.run.horizon_min * 60.0
    }

    /// Collects every semantic problem in the config (the runnable scenario
    /// re-checks cross-field consistency after materialization).
    pub fn validation_issues(&self) -> Vec<String> {
        let mut issues = Vec::new();
        issues.extend(self.station.validation_issues());
        issues.extend(self.weights.validation_issues());
        let st = &self.storage;
        issues.extend(
            StorageConfig {
                capacity_kwh: st.capacity_kwh,
                p_max_kw: st.p_max_kw,
                loss_fraction: st.loss_fraction,
                soc_ref_kwh: st.soc_ref_kwh,
            }
            .validation_issues(),
        );
        if !(st.soc0_kwh >= 0.0 && st.soc0_kwh <= st.capacity_kwh) {
            issues.push(format!(
                "storage: initial SoC {} kWh outside [0, {}]",
                st.soc0_kwh, st.capacity_kwh
            ));
        }
        match (&self.pv.csv, &self.pv.synthetic) {
            (Some(_), Some(_)) => {
                issues.push("pv: specify either csv or synthetic, not both".to_string())
            }
            (None, None) => issues.push("pv: specify a csv trace or synthetic source".to_string()),
            _ => {}
        }
        if let Some(s) = &self.pv.synthetic {
            if s.peak_kw < 0.0 || s.peak_kw > self.pv.nominal_kw {
                issues.push(format!(
                    "pv: synthetic peak {} kW outside [0, nominal {}]",
                    s.peak_kw, self.pv.nominal_kw
                ));
            }
            if s.sigma_min <= 0.0 {
                issues.push(format!("pv: synthetic sigma {} min not positive", s.sigma_min));
            }
            if s.noise_kw < 0.0 {
                issues.push(format!("pv: noise amplitude {} kW negative", s.noise_kw));
            }
        }
        if self.run.horizon_min <= 0.0 {
            issues.push(format!(
                "run: horizon {} min not positive",
                self.run.horizon_min
            ));
        }
        issues
    }

    /// Materializes the runnable scenario; `base_dir` anchors relative PV
    /// trace paths.
    pub fn build(&self, base_dir: &Path) -> Result<Scenario, ConfigError> {
        let issues = self.validation_issues();
        if !issues.is_empty() {
            return Err(ConfigError::Invalid(issues));
        }
        let pv = self.materialize_pv(base_dir)?;
        let scenario = Scenario {
            station: self.station.clone(),
            storage: StorageConfig {
                capacity_kwh: self.storage.capacity_kwh,
                p_max_kw: self.storage.p_max_kw,
                loss_fraction: self.storage.loss_fraction,
                soc_ref_kwh: self.storage.soc_ref_kwh,
            },
            y0_kwh: self.storage.soc0_kwh,
            pv,
            fleet: self.fleet.clone(),
            weights: self.weights,
            mode: self.run.mode,
            flags: self.flags,
            horizon_s: self.horizon_s(),
        };
        let issues = scenario.validation_issues();
        if !issues.is_empty() {
            return Err(ConfigError::Invalid(issues));
        }
        Ok(scenario)
    }

    fn materialize_pv(&self, base_dir: &Path) -> Result<PvProfile, ConfigError> {
        let samples = if let Some(rel) = &self.pv.csv {
            read_pv_csv(&base_dir.join(rel))?
        } else {
            let synth = self.pv.synthetic.as_ref().expect("validated");
            synthesize_pv(synth, self.pv.nominal_kw, self.weights.sampling_s, self.horizon_s())
        };
        Ok(PvProfile {
            samples,
            loss_fraction: self.pv.loss_fraction,
            nominal_kw: self.pv.nominal_kw,
        })
    }
}

/// Reads a `t_s,raw_kw` CSV; a non-numeric first row is treated as a header.
fn read_pv_csv(path: &Path) -> Result<Vec<PvSample>, ConfigError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
    let mut samples = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        if record.len() != 2 {
            return Err(ConfigError::Parse {
                path: path.to_path_buf(),
                message: format!("row {} has {} fields, expected 2", i + 1, record.len()),
            });
        }
        let parsed = record[0]
            .parse::<f64>()
            .and_then(|t| record[1].parse::<f64>().map(|p| (t, p)));
        match parsed {
            Ok((t_s, raw_kw)) => samples.push(PvSample { t_s, raw_kw }),
            Err(e) => {
                if i == 0 {
                    continue; // header row
                }
                return Err(ConfigError::Parse {
                    path: path.to_path_buf(),
                    message: format!("row {}: {}", i + 1, e),
                });
            }
        }
    }
    Ok(samples)
}

/// Samples the synthetic bell at every period over `[0, horizon]`.
fn synthesize_pv(synth: &SyntheticPv, nominal_kw: f64, sampling_s: f64, horizon_s: f64) -> Vec<PvSample> {
    let steps = (horizon_s / sampling_s).round() as usize;
    let mut rng = SplitMix64::new(synth.seed);
    (0..=steps)
        .map(|k| {
            let t_s = k as f64 * sampling_s;
            let z = (t_s / 60.0 - synth.peak_time_min) / synth.sigma_min;
            let mut raw = synth.peak_kw * (-z * z).exp();
            if synth.noise_kw > 0.0 {
                raw += synth.noise_kw * (2.0 * rng.next_f64() - 1.0);
            }
            PvSample {
                t_s,
                raw_kw: raw.clamp(0.0, nominal_kw),
            }
        })
        .collect()
}

/// Small deterministic generator for optional PV noise; keeps runs
/// reproducible for a given seed without pulling in an RNG dependency.
struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9e3779b97f4a7c15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        z ^ (z >> 31)
    }

    fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }
}

/// Loads and strictly parses a scenario file; semantic validation runs too so
/// the caller gets every problem in one pass.
pub fn load_scenario(path: &Path) -> Result<ScenarioConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let config: ScenarioConfig = toml::from_str(&text).map_err(|e| ConfigError::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let issues = config.validation_issues();
    if !issues.is_empty() {
        return Err(ConfigError::Invalid(issues));
    }
    Ok(config)
}

/// Serializes a config back to TOML; loading the result yields a
/// field-identical config.
pub fn save_scenario(config: &ScenarioConfig, path: &Path) -> Result<(), ConfigError> {
    let text = toml::to_string_pretty(config).map_err(|e| ConfigError::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    std::fs::write(path, text).map_err(|e| ConfigError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Parameter targeted by a sweep or a single-value override.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    Alpha,
    Beta,
    Gamma,
    Delta,
    Exponent,
}

impl SweepParam {
    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "alpha" => Some(Self::Alpha),
            "beta" => Some(Self::Beta),
            "gamma" => Some(Self::Gamma),
            "delta" => Some(Self::Delta),
            "e" => Some(Self::Exponent),
            _ => None,
        }
    }

    pub fn apply(&self, config: &mut ScenarioConfig, value: f64) {
        match self {
            Self::Alpha => config.weights.alpha = value,
            Self::Beta => config.weights.beta = value,
            Self::Gamma => config.weights.gamma = value,
            Self::Delta => config.weights.delta = value,
            Self::Exponent => config.weights.e = value,
        }
    }
}

/// Command-line overrides; they win over file values so sweeps need no file
/// duplication.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub mode: Option<ControlMode>,
    pub delta: Option<f64>,
    pub e: Option<f64>,
    pub seed: Option<u64>,
}

impl Overrides {
    pub fn apply(&self, config: &mut ScenarioConfig) {
        if let Some(mode) = self.mode {
            config.run.mode = mode;
        }
        if let Some(delta) = self.delta {
            config.weights.delta = delta;
        }
        if let Some(e) = self.e {
            config.weights.e = e;
        }
        if let Some(seed) = self.seed {
            if let Some(synth) = config.pv.synthetic.as_mut() {
                synth.seed = seed;
            }
        }
    }
}
