use proptest::prelude::*;
use stratsurv_core::inference::{cox_fit, logrank, AnalysisSpec, CoxProblem, Method, TieMethod};
use stratsurv_core::{Arm, StratumProfile, SurvivalRecord};

const COX: [Method; 3] = [Method::CoxUnstratified, Method::CoxMultivariate, Method::CoxStratified];

fn record(id: usize, (stratum, treated, time, event): (usize, bool, f64, bool)) -> SurvivalRecord {
    SurvivalRecord {
        id,
        stratum: StratumProfile::from_index(stratum).unwrap(),
        arm: if treated { Arm::Treatment } else { Arm::Control },
        time,
        event,
    }
}

/// Small datasets on a coarse time grid, so ties are common.
fn tied_dataset() -> impl Strategy<Value = Vec<SurvivalRecord>> {
    prop::collection::vec((0usize..4, any::<bool>(), 1u32..8, prop::bool::weighted(0.7)), 6..40)
        .prop_map(|rows| {
            rows.into_iter()
                .enumerate()
                .map(|(i, (s, a, t, e))| record(i, (s * 3, a, t as f64, e)))
                .collect()
        })
}

/// Continuous times drawn without replacement from a fine grid: no ties.
fn untied_dataset() -> impl Strategy<Value = Vec<SurvivalRecord>> {
    (6usize..40)
        .prop_flat_map(|n| {
            (
                Just((1..=1000u32).collect::<Vec<_>>()).prop_shuffle(),
                prop::collection::vec((0usize..12, any::<bool>(), prop::bool::weighted(0.7)), n),
            )
        })
        .prop_map(|(times, rows)| {
            rows.into_iter()
                .zip(times)
                .enumerate()
                .map(|(i, ((s, a, e), t))| record(i, (s, a, t as f64 / 37.0, e)))
                .collect()
        })
}

fn fit_beta(records: &[SurvivalRecord], method: Method, ties: TieMethod) -> Option<(Vec<f64>, bool)> {
    cox_fit(records, &AnalysisSpec::new(method).with_ties(ties))
        .ok()
        .map(|f| (f.beta, f.converged))
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn permutation_changes_nothing(data in tied_dataset(), seed in any::<u64>()) {
        let mut shuffled = data.clone();
        // Deterministic reversal plus rotation stands in for an arbitrary permutation.
        shuffled.reverse();
        let k = (seed as usize) % shuffled.len();
        shuffled.rotate_left(k);

        for stratified in [false, true] {
            let a = logrank(&data, stratified).ok();
            let b = logrank(&shuffled, stratified).ok();
            prop_assert_eq!(a.is_some(), b.is_some());
            if let (Some(a), Some(b)) = (a, b) {
                prop_assert!((a.z - b.z).abs() <= 1e-10);
            }
        }
        for method in COX {
            for ties in [TieMethod::Efron, TieMethod::Breslow] {
                let a = fit_beta(&data, method, ties);
                let b = fit_beta(&shuffled, method, ties);
                prop_assert_eq!(a.is_some(), b.is_some());
                if let (Some((a, ca)), Some((b, cb))) = (a, b) {
                    prop_assert_eq!(ca, cb);
                    if ca {
                        for (x, y) in a.iter().zip(&b) {
                            prop_assert!((x - y).abs() <= 1e-10, "{x} vs {y}");
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn arm_swap_negates(data in tied_dataset()) {
        let swapped: Vec<_> = data.iter().map(|r| SurvivalRecord { arm: r.arm.swapped(), ..*r }).collect();
        for stratified in [false, true] {
            if let (Ok(a), Ok(b)) = (logrank(&data, stratified), logrank(&swapped, stratified)) {
                prop_assert!((a.z + b.z).abs() <= 1e-12 * a.z.abs().max(1.0));
            }
        }
        for method in COX {
            if let (Some((a, true)), Some((b, true))) =
                (fit_beta(&data, method, TieMethod::Efron), fit_beta(&swapped, method, TieMethod::Efron))
            {
                prop_assert!(close(a[0], -b[0], 1e-7), "{} vs {}", a[0], b[0]);
            }
        }
    }

    #[test]
    fn rescaling_time_changes_nothing(data in tied_dataset(), scale in 0.01f64..100.0) {
        let scaled: Vec<_> = data.iter().map(|r| SurvivalRecord { time: r.time * scale, ..*r }).collect();
        for stratified in [false, true] {
            prop_assert_eq!(logrank(&data, stratified).ok(), logrank(&scaled, stratified).ok());
        }
        for method in COX {
            prop_assert_eq!(fit_beta(&data, method, TieMethod::Efron), fit_beta(&scaled, method, TieMethod::Efron));
        }
    }

    #[test]
    fn single_stratum_matches_pooled(data in tied_dataset(), stratum in 0usize..12) {
        let one = StratumProfile::from_index(stratum).unwrap();
        let data: Vec<_> = data.into_iter().map(|r| SurvivalRecord { stratum: one, ..r }).collect();
        prop_assert_eq!(logrank(&data, true).ok(), logrank(&data, false).ok());
        for ties in [TieMethod::Efron, TieMethod::Breslow] {
            let a = cox_fit(&data, &AnalysisSpec::new(Method::CoxStratified).with_ties(ties)).ok();
            let b = cox_fit(&data, &AnalysisSpec::new(Method::CoxUnstratified).with_ties(ties)).ok();
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn efron_equals_breslow_without_ties(data in untied_dataset()) {
        for method in COX {
            let e = cox_fit(&data, &AnalysisSpec::new(method).with_ties(TieMethod::Efron)).ok();
            let b = cox_fit(&data, &AnalysisSpec::new(method).with_ties(TieMethod::Breslow)).ok();
            prop_assert_eq!(e.is_some(), b.is_some());
            if let (Some(e), Some(b)) = (e, b) {
                prop_assert_eq!(e.converged, b.converged);
                for (x, y) in e.beta.iter().zip(&b.beta) {
                    prop_assert!(close(*x, *y, 1e-12), "{x} vs {y}");
                }
            }
        }
    }

    #[test]
    fn logrank_is_the_cox_score_test(data in untied_dataset()) {
        let lr = logrank(&data, false);
        let problem = CoxProblem::from_records(&data, Method::CoxUnstratified, TieMethod::Efron);
        if let (Ok(lr), Ok(problem)) = (lr, problem) {
            let score = problem.score_statistic(&[0.0]).unwrap();
            prop_assert!((lr.z * lr.z - score).abs() <= 1e-8 * score.max(1.0), "{} vs {}", lr.z * lr.z, score);
        }
    }

    #[test]
    fn stratified_logrank_is_the_stratified_score_test(data in untied_dataset()) {
        let lr = logrank(&data, true);
        let problem = CoxProblem::from_records(&data, Method::CoxStratified, TieMethod::Breslow);
        if let (Ok(lr), Ok(problem)) = (lr, problem) {
            let score = problem.score_statistic(&[0.0]).unwrap();
            prop_assert!((lr.z * lr.z - score).abs() <= 1e-8 * score.max(1.0));
        }
    }

    #[test]
    fn fitted_gradient_vanishes(data in tied_dataset()) {
        for method in COX {
            let Ok(problem) = CoxProblem::from_records(&data, method, TieMethod::Efron) else { continue };
            let fit = problem.fit(&Default::default());
            if fit.converged {
                let g = problem.evaluate(&fit.beta).gradient;
                prop_assert!(g.iter().all(|x| x.abs() < 1e-6), "{g:?}");
                prop_assert!(fit.beta.iter().all(|b| b.abs() <= 15.0));
                prop_assert!(fit.treatment_se > 0.0);
            }
        }
    }
}
