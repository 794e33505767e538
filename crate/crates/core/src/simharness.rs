//! Monte Carlo study runner.
//!
//! A replicate simulates one trial and analyses it five ways (pooled and
//! stratified log-rank, plus unstratified, multivariate and stratified Cox).
//! Replicates run in parallel on independent random streams and are reduced
//! in replicate-index order, so results never depend on the worker count.
//!
//! Metrics per Cox method: mean bias and mean squared error of the HR
//! estimate on the HR scale, and the mean model-based standard error
//! (log-HR scale by default). Power is the fraction of all replicates that
//! reject; degenerate tests and non-converged fits count as non-rejections.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::{generate_trial, RngStream, SurvivalRecord};
use crate::error::{Error, Result};
use crate::inference::{cox_fit, logrank, wald_reject_z, AnalysisSpec, Method, TieMethod};
use crate::trial_model::{ScenarioSpec, TrialDesign};

/// Largest tolerated fraction of replicates excluded from a method's estimates.
pub const MAX_EXCLUDED_FRACTION: f64 = 0.001;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CoxMethod {
    Unstratified,
    Multivariate,
    Stratified,
}

impl CoxMethod {
    pub const ALL: [CoxMethod; 3] = [CoxMethod::Unstratified, CoxMethod::Multivariate, CoxMethod::Stratified];

    pub fn method(self) -> Method {
        match self {
            CoxMethod::Unstratified => Method::CoxUnstratified,
            CoxMethod::Multivariate => Method::CoxMultivariate,
            CoxMethod::Stratified => Method::CoxStratified,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TestKind {
    LogRank,
    StratifiedLogRank,
    WaldMultivariate,
    WaldStratified,
    WaldUnstratified,
}

impl TestKind {
    pub const ALL: [TestKind; 5] = [
        TestKind::LogRank,
        TestKind::StratifiedLogRank,
        TestKind::WaldMultivariate,
        TestKind::WaldStratified,
        TestKind::WaldUnstratified,
    ];
}

/// Scale on which the average standard error is reported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SeScale {
    /// Model-based SE of the log hazard ratio.
    #[default]
    Log,
    /// Delta-method SE of the hazard ratio, `HR·se(log HR)`.
    Hr,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub scenario: ScenarioSpec,
    pub design: TrialDesign,
    pub replicates: usize,
    pub master_seed: u64,
    pub tie_method: TieMethod,
    pub se_scale: SeScale,
}

impl SimConfig {
    pub fn new(scenario: ScenarioSpec, design: TrialDesign, replicates: usize, master_seed: u64) -> Self {
        SimConfig {
            scenario,
            design,
            replicates,
            master_seed,
            tie_method: TieMethod::Efron,
            se_scale: SeScale::Log,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::param("replicates must be >= 1"));
        }
        self.scenario.validate()?;
        self.design.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoxEstimate {
    pub hr_estimate: f64,
    pub log_hr_se: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TestOutcome {
    Reject,
    Retain,
    /// Zero-variance test, unfittable model or non-converged fit.
    Indeterminate,
}

impl TestOutcome {
    fn from_z(z: f64, alpha: f64) -> Self {
        if wald_reject_z(z, alpha) {
            TestOutcome::Reject
        } else {
            TestOutcome::Retain
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateResult {
    pub index: u64,
    /// `None` when the model could not be fitted at all.
    pub cox: [Option<CoxEstimate>; 3],
    pub tests: [TestOutcome; 5],
}

impl ReplicateResult {
    pub fn estimate(&self, method: CoxMethod) -> Option<&CoxEstimate> {
        self.cox[method as usize].as_ref()
    }

    pub fn outcome(&self, test: TestKind) -> TestOutcome {
        self.tests[test as usize]
    }
}

/// Runs all five analyses on one dataset.
pub fn analyse(records: &[SurvivalRecord], tie_method: TieMethod, alpha: f64, index: u64) -> ReplicateResult {
    let lr = |stratified| match logrank(records, stratified) {
        Ok(r) => TestOutcome::from_z(r.z, alpha),
        Err(_) => TestOutcome::Indeterminate,
    };
    let fits = CoxMethod::ALL.map(|m| {
        cox_fit(records, &AnalysisSpec::new(m.method()).with_ties(tie_method))
            .ok()
            .map(|fit| (fit.converged, fit))
    });
    let wald = |m: CoxMethod| match &fits[m as usize] {
        Some((true, fit)) => TestOutcome::from_z(fit.wald_z, alpha),
        _ => TestOutcome::Indeterminate,
    };
    ReplicateResult {
        index,
        tests: [
            lr(false),
            lr(true),
            wald(CoxMethod::Multivariate),
            wald(CoxMethod::Stratified),
            wald(CoxMethod::Unstratified),
        ],
        cox: fits.map(|f| {
            f.map(|(converged, fit)| CoxEstimate {
                hr_estimate: fit.hazard_ratio(),
                log_hr_se: fit.treatment_se,
                converged,
            })
        }),
    }
}

/// Simulates and analyses replicate `index` on stream `(master_seed, index)`.
pub fn run_replicate(config: &SimConfig, index: u64) -> Result<ReplicateResult> {
    let mut rng = RngStream::new(config.master_seed, index);
    let dataset = generate_trial(&config.design, &config.scenario, &mut rng)?;
    Ok(analyse(&dataset.records(), config.tie_method, config.design.alpha_one_sided, index))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodMetrics {
    /// Mean of `HR_hat - true_hr`.
    pub avg_bias: Option<f64>,
    pub avg_se: Option<f64>,
    /// Mean of `(HR_hat - true_hr)^2`.
    pub mse: Option<f64>,
    pub replicates_used: usize,
    pub replicates_excluded: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateMetrics {
    pub true_hr: f64,
    pub target_events: usize,
    pub sample_size: usize,
    pub replicates: usize,
    pub cox: [MethodMetrics; 3],
    /// Rejection fraction in [0, 1], indexed by [`TestKind`].
    pub power: [f64; 5],
    pub diagnostics: Vec<String>,
}

impl AggregateMetrics {
    pub fn method(&self, m: CoxMethod) -> &MethodMetrics {
        &self.cox[m as usize]
    }

    pub fn power_of(&self, t: TestKind) -> f64 {
        self.power[t as usize]
    }
}

/// Reduces replicate results in the order given.
pub fn aggregate(results: &[ReplicateResult], true_hr: f64, se_scale: SeScale) -> AggregateMetrics {
    let mut diagnostics = Vec::new();
    let cox = CoxMethod::ALL.map(|m| {
        let (mut n, mut bias, mut sq, mut se) = (0usize, 0.0, 0.0, 0.0);
        for r in results {
            if let Some(e) = r.estimate(m).filter(|e| e.converged) {
                let err = e.hr_estimate - true_hr;
                n += 1;
                bias += err;
                sq += err * err;
                se += match se_scale {
                    SeScale::Log => e.log_hr_se,
                    SeScale::Hr => e.hr_estimate * e.log_hr_se,
                };
            }
        }
        let excluded = results.len() - n;
        if n == 0 {
            diagnostics.push(format!("{m:?} Cox: no usable replicates"));
        } else if excluded as f64 > MAX_EXCLUDED_FRACTION * results.len() as f64 {
            diagnostics.push(format!(
                "{m:?} Cox: {excluded} of {} replicates excluded (limit {:.1}%)",
                results.len(),
                100.0 * MAX_EXCLUDED_FRACTION
            ));
        }
        let mean = |s: f64| (n > 0).then(|| s / n as f64);
        MethodMetrics {
            avg_bias: mean(bias),
            avg_se: mean(se),
            mse: mean(sq),
            replicates_used: n,
            replicates_excluded: excluded,
        }
    });
    let power = TestKind::ALL.map(|t| {
        let rejects = results.iter().filter(|r| r.outcome(t) == TestOutcome::Reject).count();
        if results.is_empty() {
            0.0
        } else {
            rejects as f64 / results.len() as f64
        }
    });
    AggregateMetrics {
        true_hr,
        target_events: 0,
        sample_size: 0,
        replicates: results.len(),
        cox,
        power,
        diagnostics,
    }
}

fn thread_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::param(format!("cannot start worker pool: {e}")))
}

/// All replicate results of one configuration, in index order.
pub fn run_replicates(config: &SimConfig, workers: usize) -> Result<Vec<ReplicateResult>> {
    config.validate()?;
    thread_pool(workers)?.install(|| run_replicates_in_pool(config))
}

fn run_replicates_in_pool(config: &SimConfig) -> Result<Vec<ReplicateResult>> {
    (0..config.replicates as u64)
        .into_par_iter()
        .map(|i| run_replicate(config, i))
        .collect()
}

fn finish(config: &SimConfig, results: &[ReplicateResult]) -> AggregateMetrics {
    let mut m = aggregate(results, config.design.true_hr, config.se_scale);
    m.target_events = config.design.target_events;
    m.sample_size = config.design.sample_size;
    m
}

/// Runs one configuration; `workers == 0` lets rayon pick.
pub fn run_config(config: &SimConfig, workers: usize) -> Result<AggregateMetrics> {
    let results = run_replicates(config, workers)?;
    Ok(finish(config, &results))
}

/// One metrics row per configuration, in input order. A failing row does
/// not stop the others.
pub fn run_study(configs: &[SimConfig], workers: usize) -> Result<Vec<Result<AggregateMetrics>>> {
    if configs.is_empty() {
        return Err(Error::param("study has no configurations"));
    }
    let pool = thread_pool(workers)?;
    Ok(configs
        .iter()
        .map(|c| {
            c.validate()?;
            let results = pool.install(|| run_replicates_in_pool(c))?;
            Ok(finish(c, &results))
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rep(hrs: [f64; 3]) -> ReplicateResult {
        ReplicateResult {
            index: 0,
            cox: hrs.map(|h| {
                Some(CoxEstimate {
                    hr_estimate: h,
                    log_hr_se: 0.2,
                    converged: true,
                })
            }),
            tests: [TestOutcome::Reject, TestOutcome::Retain, TestOutcome::Indeterminate, TestOutcome::Reject, TestOutcome::Retain],
        }
    }

    #[test]
    fn exact_estimates_have_zero_bias_and_mse() {
        let m = aggregate(&[rep([0.5; 3]), rep([0.5; 3])], 0.5, SeScale::Log);
        for c in &m.cox {
            assert_eq!(c.avg_bias, Some(0.0));
            assert_eq!(c.mse, Some(0.0));
            assert_eq!(c.avg_se, Some(0.2));
        }
        assert_eq!(m.power, [1.0, 0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn hand_arithmetic() {
        let m = aggregate(&[rep([0.4; 3]), rep([0.6; 3])], 0.5, SeScale::Log);
        let c = m.method(CoxMethod::Unstratified);
        assert!(c.avg_bias.unwrap().abs() < 1e-15);
        assert!((c.mse.unwrap() - 0.01).abs() < 1e-15);
        let hr_scale = aggregate(&[rep([0.4; 3]), rep([0.6; 3])], 0.5, SeScale::Hr);
        assert!((hr_scale.cox[0].avg_se.unwrap() - 0.1).abs() < 1e-15);
    }

    #[test]
    fn non_converged_fits_are_excluded_and_counted() {
        let mut bad = rep([9.0; 3]);
        bad.cox[1] = Some(CoxEstimate {
            hr_estimate: 1e6,
            log_hr_se: f64::NAN,
            converged: false,
        });
        bad.cox[2] = None;
        let m = aggregate(&[rep([0.5; 3]), bad], 0.5, SeScale::Log);
        assert_eq!(m.method(CoxMethod::Multivariate).replicates_excluded, 1);
        assert_eq!(m.method(CoxMethod::Multivariate).mse, Some(0.0));
        assert_eq!(m.method(CoxMethod::Stratified).replicates_used, 1);
        assert_eq!(m.method(CoxMethod::Unstratified).replicates_used, 2);
        assert_eq!(m.diagnostics.len(), 2);
    }

    #[test]
    fn empty_method_reports_absent_metrics() {
        let mut r = rep([0.5; 3]);
        r.cox = [None; 3];
        let m = aggregate(&[r], 0.5, SeScale::Log);
        assert!(m.cox.iter().all(|c| c.avg_bias.is_none() && c.mse.is_none()));
        assert_eq!(m.diagnostics.len(), 3);
    }

    #[test]
    fn empty_study_is_rejected() {
        assert!(run_study(&[], 1).is_err());
    }

    #[test]
    fn replicate_is_deterministic() {
        let cfg = SimConfig::new(ScenarioSpec::scenario2(), TrialDesign::new(0.6, 120).unwrap(), 4, 11);
        assert_eq!(run_replicate(&cfg, 3).unwrap(), run_replicate(&cfg, 3).unwrap());
        let a = run_replicates(&cfg, 1).unwrap();
        let b = run_replicates(&cfg, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a[3], run_replicate(&cfg, 3).unwrap());
    }
}
