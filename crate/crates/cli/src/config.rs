//! Study configuration files.
//!
//! A study file is TOML with three sections:
//!
//! ```toml
//! [scenario]
//! kind = "multiplicative-covariates"   # or "no-prognostic", "stratum-baselines"
//! base_median = 16.0                   # months; first two kinds
//! hr_x1 = 0.5                          # covariate HRs; multiplicative kind only
//! hr_x2_level1 = 0.75
//! hr_x2_level2 = 1.25
//! hr_x3 = 0.75
//! # stratum_medians = [16.0, ...]      # 12 months; stratum-baselines only
//!
//! [design]
//! true_hr = [0.5, 0.55, 0.6]
//! events = [66, 88, 120]               # or "auto" for Schoenfeld's count
//! accrual_months = 14.0
//! allocation = [1, 1, 1, 1, 1, 1, 7, 7, 7, 7, 7, 7]
//! randomization_prob = 0.5
//! alpha = 0.025
//! power = 0.8
//! event_fraction = 0.7
//!
//! [run]
//! replicates = 10000
//! seed = 20210
//! tie_method = "efron"                 # or "breslow"
//! se_scale = "log"                     # or "hr"
//! workers = 8
//! ```
//!
//! Everything in `[design]` except `true_hr` and `events`, and everything in
//! `[run]` except `seed`, has a default. Unknown keys are rejected.

use serde::{Deserialize, Serialize};
use stratsurv_core::design::{sample_size, schoenfeld_events, DesignInputs, DEFAULT_EVENT_FRACTION};
use stratsurv_core::simharness::SimConfig;
use stratsurv_core::trial_model::{ScenarioSpec, TrialDesign, NUM_STRATA};
use stratsurv_core::{SeScale, TieMethod};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfigFile {
    pub scenario: ScenarioBlock,
    pub design: DesignBlock,
    pub run: RunBlock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioBlock {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_median: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hr_x1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hr_x2_level1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hr_x2_level2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hr_x3: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stratum_medians: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EventsSpec {
    List(Vec<usize>),
    Keyword(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignBlock {
    pub true_hr: Vec<f64>,
    pub events: EventsSpec,
    #[serde(default = "default_accrual")]
    pub accrual_months: f64,
    #[serde(default = "default_allocation")]
    pub allocation: Vec<f64>,
    #[serde(default = "default_half")]
    pub randomization_prob: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_power")]
    pub power: f64,
    #[serde(default = "default_event_fraction")]
    pub event_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunBlock {
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    pub seed: u64,
    #[serde(default)]
    pub tie_method: TieMethod,
    #[serde(default)]
    pub se_scale: SeScale,
    #[serde(default)]
    pub workers: usize,
}

fn default_accrual() -> f64 {
    14.0
}
fn default_allocation() -> Vec<f64> {
    vec![1.0; NUM_STRATA]
}
fn default_half() -> f64 {
    0.5
}
fn default_alpha() -> f64 {
    0.025
}
fn default_power() -> f64 {
    0.8
}
fn default_event_fraction() -> f64 {
    DEFAULT_EVENT_FRACTION
}
fn default_replicates() -> usize {
    10_000
}

/// One simulation row: the core configuration plus its labels.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyRow {
    pub scenario_label: String,
    pub allocation_label: String,
    pub config: SimConfig,
}

impl StudyConfigFile {
    pub fn parse(source: &str) -> Result<Self, CliError> {
        toml::from_str(source).map_err(|e| CliError::Validation(format!("config: {e}")))
    }

    /// Parses and validates, attaching a line number to field errors.
    pub fn parse_and_validate(source: &str) -> Result<(Self, Vec<StudyRow>), CliError> {
        let cfg = Self::parse(source)?;
        match cfg.rows() {
            Ok(rows) => Ok((cfg, rows)),
            Err(FieldError { section, key, message }) => {
                let at = locate(source, section, key).map(|l| format!("line {l}: ")).unwrap_or_default();
                Err(CliError::Validation(format!("config: {at}{section}.{key}: {message}")))
            }
        }
    }

    /// Expands an already-parsed file into simulation rows.
    pub fn study_rows(&self) -> Result<Vec<StudyRow>, CliError> {
        self.rows().map_err(|FieldError { section, key, message }| {
            CliError::Validation(format!("config: {section}.{key}: {message}"))
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    fn scenario_spec(&self) -> Result<ScenarioSpec, FieldError> {
        let s = &self.scenario;
        let need = |key: &'static str, v: Option<f64>| {
            let v = v.ok_or_else(|| FieldError::new("scenario", key, format!("required for kind \"{}\"", s.kind)))?;
            if v.is_finite() && v > 0.0 {
                Ok(v)
            } else {
                Err(FieldError::new("scenario", key, format!("must be finite and > 0, got {v}")))
            }
        };
        let forbid = |key: &'static str, present: bool| {
            if present {
                Err(FieldError::new("scenario", key, format!("not used by kind \"{}\"", s.kind)))
            } else {
                Ok(())
            }
        };
        let covariate_hrs = [
            ("hr_x1", s.hr_x1),
            ("hr_x2_level1", s.hr_x2_level1),
            ("hr_x2_level2", s.hr_x2_level2),
            ("hr_x3", s.hr_x3),
        ];
        match s.kind.as_str() {
            "no-prognostic" => {
                for (k, v) in covariate_hrs {
                    forbid(k, v.is_some())?;
                }
                forbid("stratum_medians", s.stratum_medians.is_some())?;
                Ok(ScenarioSpec::NoPrognostic {
                    base_median: need("base_median", s.base_median)?,
                })
            }
            "multiplicative-covariates" => {
                forbid("stratum_medians", s.stratum_medians.is_some())?;
                Ok(ScenarioSpec::MultiplicativeCovariates {
                    base_median: need("base_median", s.base_median)?,
                    hr_x1: need("hr_x1", s.hr_x1)?,
                    hr_x2_level1: need("hr_x2_level1", s.hr_x2_level1)?,
                    hr_x2_level2: need("hr_x2_level2", s.hr_x2_level2)?,
                    hr_x3: need("hr_x3", s.hr_x3)?,
                })
            }
            "stratum-baselines" => {
                forbid("base_median", s.base_median.is_some())?;
                for (k, v) in covariate_hrs {
                    forbid(k, v.is_some())?;
                }
                let medians = s
                    .stratum_medians
                    .as_ref()
                    .ok_or_else(|| FieldError::new("scenario", "stratum_medians", "required".into()))?;
                let medians: [f64; NUM_STRATA] = medians.as_slice().try_into().map_err(|_| {
                    FieldError::new("scenario", "stratum_medians", format!("needs {NUM_STRATA} values, got {}", medians.len()))
                })?;
                if let Some(m) = medians.iter().find(|m| !(m.is_finite() && **m > 0.0)) {
                    return Err(FieldError::new("scenario", "stratum_medians", format!("must all be > 0, got {m}")));
                }
                Ok(ScenarioSpec::StratumBaselines { stratum_medians: medians })
            }
            other => Err(FieldError::new(
                "scenario",
                "kind",
                format!("unknown kind \"{other}\" (expected no-prognostic, multiplicative-covariates or stratum-baselines)"),
            )),
        }
    }

    fn rows(&self) -> Result<Vec<StudyRow>, FieldError> {
        let scenario = self.scenario_spec()?;
        let d = &self.design;
        let field = |key: &'static str, message: String| FieldError::new("design", key, message);

        if d.true_hr.is_empty() {
            return Err(field("true_hr", "at least one hazard ratio is required".into()));
        }
        let allocation: [f64; NUM_STRATA] = d
            .allocation
            .as_slice()
            .try_into()
            .map_err(|_| field("allocation", format!("needs {NUM_STRATA} weights, got {}", d.allocation.len())))?;
        stratsurv_core::trial_model::normalize_weights(&allocation).map_err(|e| field("allocation", e.to_string()))?;
        if !(d.event_fraction > 0.0 && d.event_fraction <= 1.0) {
            return Err(field("event_fraction", format!("must be in (0, 1], got {}", d.event_fraction)));
        }
        for (key, p) in [("alpha", d.alpha), ("power", d.power), ("randomization_prob", d.randomization_prob)] {
            if !(p > 0.0 && p < 1.0) {
                return Err(field(key, format!("must be in (0, 1), got {p}")));
            }
        }
        if !(d.accrual_months.is_finite() && d.accrual_months >= 0.0) {
            return Err(field("accrual_months", format!("must be finite and >= 0, got {}", d.accrual_months)));
        }
        if self.run.replicates == 0 {
            return Err(FieldError::new("run", "replicates", "must be >= 1".into()));
        }

        let events: Vec<usize> = match &d.events {
            EventsSpec::List(list) => {
                if list.len() != d.true_hr.len() {
                    return Err(field(
                        "events",
                        format!("has {} entries but true_hr has {}", list.len(), d.true_hr.len()),
                    ));
                }
                list.clone()
            }
            EventsSpec::Keyword(k) if k == "auto" => d
                .true_hr
                .iter()
                .map(|&hr| {
                    let inputs = DesignInputs {
                        hr,
                        alpha_one_sided: d.alpha,
                        power: d.power,
                        allocation: d.randomization_prob,
                        event_fraction: d.event_fraction,
                    };
                    schoenfeld_events(&inputs).map_err(|e| field("true_hr", e.to_string()))
                })
                .collect::<Result<_, _>>()?,
            EventsSpec::Keyword(k) => return Err(field("events", format!("expected a list or \"auto\", got \"{k}\""))),
        };

        let allocation_label = d.allocation.iter().map(|w| format!("{w}")).collect::<Vec<_>>().join(":");
        d.true_hr
            .iter()
            .zip(events)
            .map(|(&true_hr, target_events)| {
                if !(true_hr > 0.0 && true_hr <= 1.0) {
                    return Err(field("true_hr", format!("each value must be in (0, 1], got {true_hr}")));
                }
                if target_events == 0 {
                    return Err(field("events", "each value must be positive".into()));
                }
                let design = TrialDesign {
                    true_hr,
                    target_events,
                    sample_size: sample_size(target_events, d.event_fraction).map_err(|e| field("events", e.to_string()))?,
                    accrual_months: d.accrual_months,
                    allocation_weights: allocation,
                    randomization_prob: d.randomization_prob,
                    alpha_one_sided: d.alpha,
                    nominal_power: d.power,
                };
                design.validate().map_err(|e| field("true_hr", e.to_string()))?;
                let mut config = SimConfig::new(scenario.clone(), design, self.run.replicates, self.run.seed);
                config.tie_method = self.run.tie_method;
                config.se_scale = self.run.se_scale;
                Ok(StudyRow {
                    scenario_label: self.scenario.kind.clone(),
                    allocation_label: allocation_label.clone(),
                    config,
                })
            })
            .collect()
    }
}

#[derive(Debug)]
struct FieldError {
    section: &'static str,
    key: &'static str,
    message: String,
}

impl FieldError {
    fn new(section: &'static str, key: &'static str, message: String) -> Self {
        FieldError { section, key, message }
    }
}

/// 1-based line of `key = ...` inside `[section]`, if present.
fn locate(source: &str, section: &str, key: &str) -> Option<usize> {
    let header = format!("[{section}]");
    let mut in_section = false;
    for (i, line) in source.lines().enumerate() {
        let line = line.trim();
        if line.starts_with('[') {
            in_section = line == header;
            continue;
        }
        if in_section {
            if let Some((k, _)) = line.split_once('=') {
                if k.trim() == key {
                    return Some(i + 1);
                }
            }
        }
    }
    None
}
