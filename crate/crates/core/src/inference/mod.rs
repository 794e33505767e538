//! Analysis methods: pooled and stratified log-rank tests, and Cox
//! proportional-hazards regression fitted by Newton iteration on the
//! (optionally stratified) partial likelihood.
//!
//! Treatment benefit is the alternative throughout: a negative log-rank
//! z (fewer treatment events than expected) or a negative treatment
//! coefficient.

mod cox;
mod logrank;

use serde::{Deserialize, Serialize};

pub use cox::{cox_fit, CoxEvaluation, CoxFit, CoxObservation, CoxProblem, NewtonOptions};
pub use logrank::{logrank, LogRankResult};

use crate::stats::normal_quantile;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum TieMethod {
    #[default]
    Efron,
    Breslow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    LogRank,
    StratifiedLogRank,
    /// Treatment only, one baseline hazard.
    CoxUnstratified,
    /// Treatment plus x1, x2 (two indicators) and x3 as covariates.
    CoxMultivariate,
    /// Treatment only, a separate baseline hazard per stratum.
    CoxStratified,
}

impl Method {
    pub fn is_cox(self) -> bool {
        matches!(self, Method::CoxUnstratified | Method::CoxMultivariate | Method::CoxStratified)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalysisSpec {
    pub method: Method,
    pub tie_method: TieMethod,
    pub alpha_one_sided: f64,
}

impl AnalysisSpec {
    pub fn new(method: Method) -> Self {
        AnalysisSpec {
            method,
            tie_method: TieMethod::Efron,
            alpha_one_sided: 0.025,
        }
    }

    pub fn with_ties(mut self, tie_method: TieMethod) -> Self {
        self.tie_method = tie_method;
        self
    }
}

/// One-sided Wald test in the benefit direction.
///
/// Returns `None` for a fit that did not converge.
pub fn wald_reject(fit: &CoxFit, alpha_one_sided: f64) -> Option<bool> {
    fit.converged.then(|| wald_reject_z(fit.wald_z, alpha_one_sided))
}

/// `z < Φ⁻¹(α)`.
pub fn wald_reject_z(z: f64, alpha_one_sided: f64) -> bool {
    z < normal_quantile(alpha_one_sided)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wald_decisions() {
        assert!(wald_reject_z(-2.5, 0.025));
        assert!(!wald_reject_z(-1.0, 0.025));
        assert!(!wald_reject_z(2.5, 0.025));
        assert!(wald_reject_z(-1.96, 0.025));
        assert!(!wald_reject_z(-1.959, 0.025));
    }
}
