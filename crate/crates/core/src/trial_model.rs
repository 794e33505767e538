//! Strata, data-generating scenarios and trial designs.
//!
//! Three binary/ternary stratification factors (X1 with 2 levels, X2 with 3,
//! X3 with 2) define 12 strata. A stratum's position in every 12-vector used
//! by this crate (allocation weights, per-stratum medians) is
//! `x1 * 6 + x2 * 2 + x3`.
//!
//! Scenarios are configured with medians (months) and covariate hazard
//! ratios; hazard rates are always derived from them.

use serde::{Deserialize, Serialize};

use crate::design;
use crate::error::{Error, Result};

pub const NUM_STRATA: usize = 12;

/// One combination of the three stratification factor levels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StratumProfile {
    x1: u8,
    x2: u8,
    x3: u8,
}

impl StratumProfile {
    pub fn new(x1: u8, x2: u8, x3: u8) -> Result<Self> {
        if x1 > 1 || x2 > 2 || x3 > 1 {
            return Err(Error::param(format!(
                "stratum levels out of range: x1={x1} (0..=1), x2={x2} (0..=2), x3={x3} (0..=1)"
            )));
        }
        Ok(Self { x1, x2, x3 })
    }

    pub fn from_index(index: usize) -> Result<Self> {
        if index >= NUM_STRATA {
            return Err(Error::param(format!("stratum index {index} not in 0..{NUM_STRATA}")));
        }
        Ok(Self {
            x1: (index / 6) as u8,
            x2: ((index % 6) / 2) as u8,
            x3: (index % 2) as u8,
        })
    }

    pub fn index(self) -> usize {
        self.x1 as usize * 6 + self.x2 as usize * 2 + self.x3 as usize
    }

    pub fn x1(self) -> u8 {
        self.x1
    }

    pub fn x2(self) -> u8 {
        self.x2
    }

    pub fn x3(self) -> u8 {
        self.x3
    }

    /// Indicator coding `(x1, x2==1, x2==2, x3)` used as Cox covariates.
    pub fn indicators(self) -> [f64; 4] {
        [
            self.x1 as f64,
            (self.x2 == 1) as u8 as f64,
            (self.x2 == 2) as u8 as f64,
            self.x3 as f64,
        ]
    }

    /// All 12 profiles in index order.
    pub fn all() -> impl Iterator<Item = StratumProfile> {
        (0..NUM_STRATA).map(|i| StratumProfile::from_index(i).expect("index in range"))
    }
}

/// Hazard rate (per month) of the exponential distribution with the given median.
pub fn median_to_rate(median: f64) -> Result<f64> {
    if !median.is_finite() || median <= 0.0 {
        return Err(Error::param(format!("median must be finite and > 0, got {median}")));
    }
    Ok(std::f64::consts::LN_2 / median)
}

/// Control-arm data-generating mechanism.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ScenarioSpec {
    /// Every stratum shares one baseline hazard.
    NoPrognostic { base_median: f64 },
    /// Baseline hazard scaled multiplicatively by each factor's hazard ratio.
    MultiplicativeCovariates {
        base_median: f64,
        hr_x1: f64,
        hr_x2_level1: f64,
        hr_x2_level2: f64,
        hr_x3: f64,
    },
    /// A free median per stratum, in stratum-index order.
    StratumBaselines { stratum_medians: [f64; NUM_STRATA] },
}

impl ScenarioSpec {
    /// No prognostic effect, control median 16 months.
    pub fn scenario1() -> Self {
        ScenarioSpec::NoPrognostic { base_median: 16.0 }
    }

    /// Multiplicative covariate effects on a 16-month baseline median.
    pub fn scenario2() -> Self {
        ScenarioSpec::MultiplicativeCovariates {
            base_median: 16.0,
            hr_x1: 0.5,
            hr_x2_level1: 0.75,
            hr_x2_level2: 1.25,
            hr_x3: 0.75,
        }
    }

    /// Median 16 months when x1 = 0 and 50 months when x1 = 1.
    pub fn scenario3() -> Self {
        let mut stratum_medians = [16.0; NUM_STRATA];
        stratum_medians[6..].fill(50.0);
        ScenarioSpec::StratumBaselines { stratum_medians }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            ScenarioSpec::NoPrognostic { .. } => "no-prognostic",
            ScenarioSpec::MultiplicativeCovariates { .. } => "multiplicative-covariates",
            ScenarioSpec::StratumBaselines { .. } => "stratum-baselines",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::param(format!("{name} must be finite and > 0, got {v}")))
            }
        };
        match *self {
            ScenarioSpec::NoPrognostic { base_median } => positive("base_median", base_median),
            ScenarioSpec::MultiplicativeCovariates {
                base_median,
                hr_x1,
                hr_x2_level1,
                hr_x2_level2,
                hr_x3,
            } => {
                positive("base_median", base_median)?;
                positive("hr_x1", hr_x1)?;
                positive("hr_x2_level1", hr_x2_level1)?;
                positive("hr_x2_level2", hr_x2_level2)?;
                positive("hr_x3", hr_x3)
            }
            ScenarioSpec::StratumBaselines { ref stratum_medians } => stratum_medians
                .iter()
                .enumerate()
                .try_for_each(|(i, &m)| positive(&format!("stratum_medians[{i}]"), m)),
        }
    }

    /// Control-arm hazard rate (per month) in `stratum`.
    pub fn control_rate(&self, stratum: StratumProfile) -> Result<f64> {
        match *self {
            ScenarioSpec::NoPrognostic { base_median } => median_to_rate(base_median),
            ScenarioSpec::MultiplicativeCovariates {
                base_median,
                hr_x1,
                hr_x2_level1,
                hr_x2_level2,
                hr_x3,
            } => {
                let mut rate = median_to_rate(base_median)?;
                if stratum.x1 == 1 {
                    rate *= hr_x1;
                }
                match stratum.x2 {
                    1 => rate *= hr_x2_level1,
                    2 => rate *= hr_x2_level2,
                    _ => {}
                }
                if stratum.x3 == 1 {
                    rate *= hr_x3;
                }
                Ok(rate)
            }
            ScenarioSpec::StratumBaselines { ref stratum_medians } => {
                median_to_rate(stratum_medians[stratum.index()])
            }
        }
    }

    /// Control-arm rates for all 12 strata, in index order.
    pub fn control_rates(&self) -> Result<[f64; NUM_STRATA]> {
        self.validate()?;
        let mut rates = [0.0; NUM_STRATA];
        for s in StratumProfile::all() {
            rates[s.index()] = self.control_rate(s)?;
        }
        Ok(rates)
    }
}

/// Named strata-size patterns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AllocationPattern {
    /// 1:1:...:1
    Balanced,
    /// 1:1:1:1:1:1:7:7:7:7:7:7 (more subjects where x1 = 1)
    FavorX1High,
    /// 7:7:7:7:7:7:1:1:1:1:1:1 (more subjects where x1 = 0)
    FavorX1Low,
}

impl AllocationPattern {
    pub fn weights(self) -> [f64; NUM_STRATA] {
        let mut w = [1.0; NUM_STRATA];
        match self {
            AllocationPattern::Balanced => {}
            AllocationPattern::FavorX1High => w[6..].fill(7.0),
            AllocationPattern::FavorX1Low => w[..6].fill(7.0),
        }
        w
    }
}

/// Validates a strata weight vector and returns it normalized to sum 1.
pub fn normalize_weights(weights: &[f64; NUM_STRATA]) -> Result<[f64; NUM_STRATA]> {
    if let Some((i, w)) = weights.iter().enumerate().find(|(_, w)| !w.is_finite() || **w < 0.0) {
        return Err(Error::param(format!("allocation weight {i} must be finite and >= 0, got {w}")));
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::param("allocation weights must not all be zero"));
    }
    Ok(weights.map(|w| w / total))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialDesign {
    pub true_hr: f64,
    pub target_events: usize,
    pub sample_size: usize,
    pub accrual_months: f64,
    pub allocation_weights: [f64; NUM_STRATA],
    pub randomization_prob: f64,
    pub alpha_one_sided: f64,
    pub nominal_power: f64,
}

impl TrialDesign {
    /// Design with the default 14-month accrual, balanced strata, 1:1
    /// randomization, and `N = ceil(D / 0.70)`.
    pub fn new(true_hr: f64, target_events: usize) -> Result<Self> {
        let design = TrialDesign {
            true_hr,
            target_events,
            sample_size: design::sample_size(target_events, design::DEFAULT_EVENT_FRACTION)?,
            accrual_months: 14.0,
            allocation_weights: AllocationPattern::Balanced.weights(),
            randomization_prob: 0.5,
            alpha_one_sided: 0.025,
            nominal_power: 0.80,
        };
        design.validate()?;
        Ok(design)
    }

    pub fn with_allocation(mut self, weights: [f64; NUM_STRATA]) -> Self {
        self.allocation_weights = weights;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.true_hr > 0.0 && self.true_hr <= 1.0) {
            return Err(Error::param(format!("true_hr must be in (0, 1], got {}", self.true_hr)));
        }
        if self.target_events == 0 {
            return Err(Error::param("target_events must be positive"));
        }
        if self.sample_size < self.target_events {
            return Err(Error::param(format!(
                "sample_size ({}) must be >= target_events ({})",
                self.sample_size, self.target_events
            )));
        }
        if !(self.accrual_months.is_finite() && self.accrual_months >= 0.0) {
            return Err(Error::param(format!(
                "accrual_months must be finite and >= 0, got {}",
                self.accrual_months
            )));
        }
        normalize_weights(&self.allocation_weights)?;
        for (name, p) in [
            ("randomization_prob", self.randomization_prob),
            ("alpha_one_sided", self.alpha_one_sided),
            ("nominal_power", self.nominal_power),
        ] {
            if !(p > 0.0 && p < 1.0) {
                return Err(Error::param(format!("{name} must be in (0, 1), got {p}")));
            }
        }
        Ok(())
    }
}
