use nalgebra::{DMatrix, DVector};

use super::{AnalysisSpec, Method, TieMethod};
use crate::datagen::SurvivalRecord;
use crate::error::{Error, Result};
use crate::trial_model::NUM_STRATA;

/// One row of a Cox model: follow-up time, event flag and covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct CoxObservation {
    pub time: f64,
    pub event: bool,
    pub covariates: Vec<f64>,
}

/// Observations of one stratum, sorted by time, stored column-flat.
#[derive(Debug, Clone)]
struct Block {
    times: Vec<f64>,
    events: Vec<bool>,
    /// Row-major, `times.len() * n_cov`.
    x: Vec<f64>,
}

/// Log partial likelihood with its gradient and observed information
/// (negative Hessian), both row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CoxEvaluation {
    pub log_likelihood: f64,
    pub gradient: Vec<f64>,
    pub information: Vec<f64>,
}

/// A (possibly stratified) partial-likelihood problem ready to evaluate.
#[derive(Debug, Clone)]
pub struct CoxProblem {
    n_cov: usize,
    ties: TieMethod,
    blocks: Vec<Block>,
}

impl CoxProblem {
    /// Builds the problem from one observation list per stratum.
    ///
    /// Observations never at risk at an event time of their stratum are
    /// dropped, as are strata with no events or with no covariate contrast.
    /// The remaining design must identify every coefficient.
    pub fn new(n_cov: usize, ties: TieMethod, strata: Vec<Vec<CoxObservation>>) -> Result<Self> {
        if n_cov == 0 {
            return Err(Error::InvalidModel("at least one covariate is required".into()));
        }
        let mut blocks = Vec::with_capacity(strata.len());
        for mut obs in strata {
            if let Some(bad) = obs.iter().find(|o| o.covariates.len() != n_cov) {
                return Err(Error::param(format!(
                    "observation has {} covariates, expected {n_cov}",
                    bad.covariates.len()
                )));
            }
            if let Some(bad) = obs.iter().find(|o| !o.time.is_finite() || o.covariates.iter().any(|c| !c.is_finite())) {
                return Err(Error::param(format!("non-finite observation at time {}", bad.time)));
            }
            let Some(first_event) = obs.iter().filter(|o| o.event).map(|o| o.time).min_by(f64::total_cmp) else {
                continue;
            };
            obs.retain(|o| o.time >= first_event);
            if obs.windows(2).all(|w| w[0].covariates == w[1].covariates) {
                continue;
            }
            obs.sort_by(|a, b| {
                a.time
                    .total_cmp(&b.time)
                    .then(b.event.cmp(&a.event))
                    .then_with(|| {
                        a.covariates
                            .iter()
                            .zip(&b.covariates)
                            .map(|(x, y)| x.total_cmp(y))
                            .find(|o| o.is_ne())
                            .unwrap_or(std::cmp::Ordering::Equal)
                    })
            });
            blocks.push(Block {
                times: obs.iter().map(|o| o.time).collect(),
                events: obs.iter().map(|o| o.event).collect(),
                x: obs.iter().flat_map(|o| o.covariates.iter().copied()).collect(),
            });
        }
        if blocks.is_empty() {
            return Err(Error::InvalidModel(
                "no stratum has both an event and a covariate contrast".into(),
            ));
        }
        let problem = CoxProblem { n_cov, ties, blocks };

        let info0 = problem.evaluate(&vec![0.0; n_cov]).information;
        if !is_well_conditioned(&info0, n_cov) {
            return Err(Error::InvalidModel(
                "design is rank deficient on the risk sets (a covariate has no contrast)".into(),
            ));
        }
        Ok(problem)
    }

    /// Builds the model for one of the Cox methods from trial records.
    ///
    /// Covariates are treatment first, then (multivariate only) the
    /// indicators x1, x2=1, x2=2, x3. Records with non-positive time never
    /// enter a risk set and are skipped.
    pub fn from_records(records: &[SurvivalRecord], method: Method, ties: TieMethod) -> Result<Self> {
        let (n_cov, n_groups) = match method {
            Method::CoxUnstratified => (1, 1),
            Method::CoxMultivariate => (5, 1),
            Method::CoxStratified => (1, NUM_STRATA),
            other => return Err(Error::param(format!("{other:?} is not a Cox method"))),
        };
        let mut groups = vec![Vec::new(); n_groups];
        for r in records.iter().filter(|r| r.time > 0.0) {
            let mut covariates = Vec::with_capacity(n_cov);
            covariates.push(r.arm.is_treatment() as u8 as f64);
            if method == Method::CoxMultivariate {
                covariates.extend(r.stratum.indicators());
            }
            let g = if method == Method::CoxStratified { r.stratum.index() } else { 0 };
            groups[g].push(CoxObservation {
                time: r.time,
                event: r.event,
                covariates,
            });
        }
        CoxProblem::new(n_cov, ties, groups)
    }

    pub fn n_covariates(&self) -> usize {
        self.n_cov
    }

    pub fn n_strata(&self) -> usize {
        self.blocks.len()
    }

    pub fn log_likelihood(&self, beta: &[f64]) -> f64 {
        self.evaluate(beta).log_likelihood
    }

    /// Log partial likelihood, score and observed information at `beta`.
    pub fn evaluate(&self, beta: &[f64]) -> CoxEvaluation {
        let p = self.n_cov;
        assert_eq!(beta.len(), p, "coefficient vector has wrong length");
        let mut ll = 0.0;
        let mut grad = vec![0.0; p];
        let mut info = vec![0.0; p * p];

        let mut s1 = vec![0.0; p];
        let mut s2 = vec![0.0; p * p];
        let mut d1 = vec![0.0; p];
        let mut d2 = vec![0.0; p * p];
        let mut a1 = vec![0.0; p];

        for block in &self.blocks {
            let n = block.times.len();
            let mut s0 = 0.0;
            s1.fill(0.0);
            s2.fill(0.0);

            // Sweep from the longest time down so each risk set is a running sum.
            let mut end = n;
            while end > 0 {
                let t = block.times[end - 1];
                let mut start = end - 1;
                while start > 0 && block.times[start - 1] == t {
                    start -= 1;
                }

                let mut d0 = 0.0;
                let mut n_events = 0usize;
                d1.fill(0.0);
                d2.fill(0.0);
                for k in start..end {
                    let xk = &block.x[k * p..(k + 1) * p];
                    let eta: f64 = xk.iter().zip(beta).map(|(x, b)| x * b).sum();
                    let w = eta.exp();
                    s0 += w;
                    accumulate(&mut s1, &mut s2, xk, w);
                    if block.events[k] {
                        n_events += 1;
                        ll += eta;
                        for (g, x) in grad.iter_mut().zip(xk) {
                            *g += x;
                        }
                        d0 += w;
                        accumulate(&mut d1, &mut d2, xk, w);
                    }
                }

                for l in 0..n_events {
                    let f = match self.ties {
                        TieMethod::Efron => l as f64 / n_events as f64,
                        TieMethod::Breslow => 0.0,
                    };
                    let a0 = s0 - f * d0;
                    for j in 0..p {
                        a1[j] = s1[j] - f * d1[j];
                    }
                    ll -= a0.ln();
                    for j in 0..p {
                        let mean_j = a1[j] / a0;
                        grad[j] -= mean_j;
                        for m in 0..p {
                            let a2 = s2[j * p + m] - f * d2[j * p + m];
                            info[j * p + m] += a2 / a0 - mean_j * a1[m] / a0;
                        }
                    }
                }
                end = start;
            }
        }
        CoxEvaluation {
            log_likelihood: ll,
            gradient: grad,
            information: info,
        }
    }

    /// Score statistic `U' I⁻¹ U` at `beta`.
    pub fn score_statistic(&self, beta: &[f64]) -> Result<f64> {
        let ev = self.evaluate(beta);
        let info = DMatrix::from_row_slice(self.n_cov, self.n_cov, &ev.information);
        let chol = info
            .cholesky()
            .ok_or_else(|| Error::InvalidModel("information is not positive definite".into()))?;
        let u = DVector::from_column_slice(&ev.gradient);
        Ok(u.dot(&chol.solve(&u)))
    }

    /// Maximizes the partial likelihood by damped Newton iteration from zero.
    pub fn fit(&self, opts: &NewtonOptions) -> CoxFit {
        let p = self.n_cov;
        let mut beta = vec![0.0; p];
        let mut ev = self.evaluate(&beta);
        let mut iterations = 0;
        let mut converged = false;
        let mut diagnostic = None;

        while iterations < opts.max_iterations {
            if max_abs(&ev.gradient) < opts.gradient_tolerance {
                converged = true;
                break;
            }
            let Some(step) = newton_step(&ev, p) else {
                diagnostic = Some("observed information lost positive definiteness".to_string());
                break;
            };
            iterations += 1;

            let mut scale = 1.0;
            let mut halvings = 0;
            let (candidate, cand_ev) = loop {
                let candidate: Vec<f64> = beta.iter().zip(&step).map(|(b, s)| b + scale * s).collect();
                let cand_ev = self.evaluate(&candidate);
                let improved = accepts(&cand_ev, &ev, opts);
                if improved || halvings == opts.max_halvings {
                    break (candidate, cand_ev);
                }
                scale *= 0.5;
                halvings += 1;
            };
            if !accepts(&cand_ev, &ev, opts) {
                // No step improves on the current point: it is the optimum to
                // working precision, or the problem is pathological.
                converged = max_abs(&ev.gradient) < opts.stalled_gradient_tolerance;
                if !converged {
                    diagnostic = Some("step halving failed to increase the likelihood".to_string());
                }
                break;
            }

            let rel_change = (cand_ev.log_likelihood - ev.log_likelihood).abs() / ev.log_likelihood.abs().max(1e-300);
            beta = candidate;
            ev = cand_ev;

            if beta.iter().any(|b| b.abs() > opts.divergence_bound) {
                diagnostic = Some(format!(
                    "monotone likelihood: |coefficient| exceeded {} (separation)",
                    opts.divergence_bound
                ));
                break;
            }
            if max_abs(&ev.gradient) < opts.gradient_tolerance || rel_change < opts.relative_loglik_tolerance {
                converged = true;
                break;
            }
        }
        if !converged && diagnostic.is_none() {
            diagnostic = Some(format!("no convergence after {} iterations", opts.max_iterations));
        }

        let covariance = invert_spd(&ev.information, p);
        if covariance.is_none() && converged {
            converged = false;
            diagnostic = Some("observed information is singular at the optimum".to_string());
        }
        let covariance = covariance.unwrap_or_else(|| vec![vec![f64::NAN; p]; p]);
        let treatment_log_hr = beta[0];
        let treatment_se = covariance[0][0].sqrt();
        CoxFit {
            wald_z: treatment_log_hr / treatment_se,
            treatment_log_hr,
            treatment_se,
            beta,
            covariance,
            log_likelihood: ev.log_likelihood,
            converged,
            iterations,
            final_gradient_norm: max_abs(&ev.gradient),
            diagnostic,
        }
    }
}

/// A candidate is accepted unless its log-likelihood drops by more than
/// summation noise.
fn accepts(candidate: &CoxEvaluation, current: &CoxEvaluation, opts: &NewtonOptions) -> bool {
    let noise = opts.relative_loglik_tolerance * current.log_likelihood.abs().max(1.0);
    candidate.log_likelihood.is_finite() && candidate.log_likelihood >= current.log_likelihood - noise
}

fn accumulate(first: &mut [f64], second: &mut [f64], x: &[f64], w: f64) {
    let p = x.len();
    for j in 0..p {
        let wx = w * x[j];
        first[j] += wx;
        for m in 0..p {
            second[j * p + m] += wx * x[m];
        }
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn newton_step(ev: &CoxEvaluation, p: usize) -> Option<Vec<f64>> {
    let info = DMatrix::from_row_slice(p, p, &ev.information);
    let chol = info.cholesky()?;
    let step = chol.solve(&DVector::from_column_slice(&ev.gradient));
    step.iter().all(|s| s.is_finite()).then(|| step.iter().copied().collect())
}

fn invert_spd(m: &[f64], p: usize) -> Option<Vec<Vec<f64>>> {
    let inv = DMatrix::from_row_slice(p, p, m).cholesky()?.inverse();
    if inv.iter().any(|v| !v.is_finite()) {
        return None;
    }
    Some((0..p).map(|i| (0..p).map(|j| inv[(i, j)]).collect()).collect())
}

fn is_well_conditioned(m: &[f64], p: usize) -> bool {
    let mat = DMatrix::from_row_slice(p, p, m);
    let eig = mat.symmetric_eigenvalues();
    let max = eig.max();
    let min = eig.min();
    max > 0.0 && min > 1e-10 * max
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonOptions {
    pub max_iterations: usize,
    pub max_halvings: usize,
    pub gradient_tolerance: f64,
    pub relative_loglik_tolerance: f64,
    /// Gradient bound accepted when step halving can no longer improve.
    pub stalled_gradient_tolerance: f64,
    /// Any |coefficient| beyond this is treated as divergence.
    pub divergence_bound: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions {
            max_iterations: 50,
            max_halvings: 20,
            gradient_tolerance: 1e-9,
            relative_loglik_tolerance: 1e-12,
            stalled_gradient_tolerance: 1e-6,
            divergence_bound: 15.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoxFit {
    /// Log-hazard-ratio coefficients, treatment first.
    pub beta: Vec<f64>,
    /// Inverse observed information at the final iterate.
    pub covariance: Vec<Vec<f64>>,
    pub treatment_log_hr: f64,
    pub treatment_se: f64,
    pub wald_z: f64,
    pub log_likelihood: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Max-norm of the score at the final iterate.
    pub final_gradient_norm: f64,
    pub diagnostic: Option<String>,
}

impl CoxFit {
    pub fn hazard_ratio(&self) -> f64 {
        self.treatment_log_hr.exp()
    }
}

/// Fits the Cox model selected by `spec.method` to `records`.
pub fn cox_fit(records: &[SurvivalRecord], spec: &AnalysisSpec) -> Result<CoxFit> {
    let problem = CoxProblem::from_records(records, spec.method, spec.tie_method)?;
    Ok(problem.fit(&NewtonOptions::default()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::Arm;
    use crate::trial_model::StratumProfile;

    fn obs(time: f64, event: bool, z: f64) -> CoxObservation {
        CoxObservation {
            time,
            event,
            covariates: vec![z],
        }
    }

    fn three_subjects() -> CoxProblem {
        CoxProblem::new(
            1,
            TieMethod::Efron,
            vec![vec![obs(1.0, true, 1.0), obs(2.0, true, 0.0), obs(3.0, false, 1.0)]],
        )
        .unwrap()
    }

    #[test]
    fn closed_form_three_subject_fit() {
        let fit = three_subjects().fit(&NewtonOptions::default());
        assert!(fit.converged);
        assert!((fit.treatment_log_hr + 0.5 * std::f64::consts::LN_2).abs() < 1e-10);
        // grid search on the same likelihood
        let problem = three_subjects();
        let best = (-4000..=4000)
            .map(|i| i as f64 * 1e-3)
            .max_by(|a, b| problem.log_likelihood(&[*a]).total_cmp(&problem.log_likelihood(&[*b])))
            .unwrap();
        assert!((best - fit.treatment_log_hr).abs() < 1e-3);
    }

    #[test]
    fn no_contrast_is_invalid() {
        let err = CoxProblem::new(
            1,
            TieMethod::Efron,
            vec![vec![obs(1.0, true, 1.0), obs(2.0, true, 1.0), obs(3.0, false, 1.0)]],
        )
        .unwrap_err();
        assert!(matches!(err, Error::InvalidModel(_)));
    }

    #[test]
    fn collinear_covariates_are_invalid() {
        let rows = (0..6)
            .map(|i| CoxObservation {
                time: 1.0 + i as f64,
                event: i % 3 != 2,
                covariates: vec![(i % 2) as f64, 2.0 * (i % 2) as f64],
            })
            .collect();
        assert!(matches!(
            CoxProblem::new(2, TieMethod::Breslow, vec![rows]),
            Err(Error::InvalidModel(_))
        ));
    }

    #[test]
    fn separation_is_flagged_not_fatal() {
        // every treated subject fails before every control subject
        let rows = vec![
            obs(1.0, true, 1.0),
            obs(2.0, true, 1.0),
            obs(3.0, true, 0.0),
            obs(4.0, true, 0.0),
        ];
        let fit = CoxProblem::new(1, TieMethod::Efron, vec![rows]).unwrap().fit(&NewtonOptions::default());
        assert!(!fit.converged);
        assert!(fit.diagnostic.unwrap().contains("monotone"));
    }

    #[test]
    fn ties_differ_between_efron_and_breslow_only_when_tied() {
        let tied = vec![
            obs(1.0, true, 1.0),
            obs(1.0, true, 0.0),
            obs(2.0, true, 1.0),
            obs(3.0, false, 0.0),
            obs(3.5, true, 0.0),
        ];
        let efron = CoxProblem::new(1, TieMethod::Efron, vec![tied.clone()]).unwrap();
        let breslow = CoxProblem::new(1, TieMethod::Breslow, vec![tied]).unwrap();
        let b = [0.3];
        assert!((efron.log_likelihood(&b) - breslow.log_likelihood(&b)).abs() > 1e-3);

        let untied = vec![obs(1.0, true, 1.0), obs(1.5, true, 0.0), obs(2.0, true, 1.0), obs(3.0, false, 0.0)];
        let efron = CoxProblem::new(1, TieMethod::Efron, vec![untied.clone()]).unwrap();
        let breslow = CoxProblem::new(1, TieMethod::Breslow, vec![untied]).unwrap();
        assert_eq!(efron.evaluate(&b), breslow.evaluate(&b));
    }

    #[test]
    fn non_cox_method_is_rejected() {
        let r = SurvivalRecord {
            id: 0,
            stratum: StratumProfile::from_index(0).unwrap(),
            arm: Arm::Control,
            time: 1.0,
            event: true,
        };
        assert!(cox_fit(&[r], &AnalysisSpec::new(Method::LogRank)).is_err());
    }
}
