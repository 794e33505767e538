use serde::{Deserialize, Serialize};

use crate::datagen::SurvivalRecord;
use crate::error::{Error, Result};
use crate::stats::normal_cdf;
use crate::trial_model::NUM_STRATA;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRankResult {
    /// Observed minus expected events in the treatment arm.
    pub observed_minus_expected: f64,
    pub variance: f64,
    pub z: f64,
    /// `Φ(z)`: small when treatment has fewer events than expected.
    pub p_one_sided: f64,
    /// Strata with at least one event and both arms present.
    pub strata_used: usize,
}

/// Log-rank test of treatment vs control, pooled or stratified.
///
/// Stratified sums accumulate stratum by stratum in index order, and event
/// times ascending within each stratum. Strata without events or without
/// both arms add nothing.
pub fn logrank(records: &[SurvivalRecord], stratified: bool) -> Result<LogRankResult> {
    let n_groups = if stratified { NUM_STRATA } else { 1 };
    let mut groups: Vec<Vec<(f64, bool, bool)>> = vec![Vec::new(); n_groups];
    for r in records {
        if r.time.is_nan() || r.time <= 0.0 {
            continue;
        }
        let g = if stratified { r.stratum.index() } else { 0 };
        groups[g].push((r.time, r.event, r.arm.is_treatment()));
    }

    let mut o_minus_e = 0.0;
    let mut variance = 0.0;
    let mut strata_used = 0;
    for mut group in groups {
        let treated = group.iter().filter(|g| g.2).count();
        let has_event = group.iter().any(|g| g.1);
        if !has_event || treated == 0 || treated == group.len() {
            continue;
        }
        strata_used += 1;
        group.sort_by(|a, b| a.0.total_cmp(&b.0));

        let mut at_risk = group.len();
        let mut at_risk_treated = treated;
        let mut i = 0;
        while i < group.len() {
            let t = group[i].0;
            let (mut d, mut d1, mut leaving, mut leaving_treated) = (0usize, 0usize, 0usize, 0usize);
            while i < group.len() && group[i].0 == t {
                let (_, event, treat) = group[i];
                leaving += 1;
                leaving_treated += treat as usize;
                if event {
                    d += 1;
                    d1 += treat as usize;
                }
                i += 1;
            }
            if d > 0 {
                let (o_e, v) = hypergeometric_terms(d, d1, at_risk, at_risk_treated);
                o_minus_e += o_e;
                variance += v;
            }
            at_risk -= leaving;
            at_risk_treated -= leaving_treated;
        }
    }

    if variance.is_nan() || variance <= 0.0 {
        return Err(Error::DegenerateTest { observed_minus_expected: o_minus_e });
    }
    let z = o_minus_e / variance.sqrt();
    Ok(LogRankResult {
        observed_minus_expected: o_minus_e,
        variance,
        z,
        p_one_sided: normal_cdf(z),
        strata_used,
    })
}

/// Contribution of one event time: `d1 - d·n1/n` and the hypergeometric
/// variance `d·(n1/n)·(1 - n1/n)·(n - d)/(n - 1)` (zero when n = 1).
pub(crate) fn hypergeometric_terms(d: usize, d1: usize, n: usize, n1: usize) -> (f64, f64) {
    let (d, d1, n, n1) = (d as f64, d1 as f64, n as f64, n1 as f64);
    let frac = n1 / n;
    let o_e = d1 - d * frac;
    let v = if n > 1.0 {
        d * frac * (1.0 - frac) * (n - d) / (n - 1.0)
    } else {
        0.0
    };
    (o_e, v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::Arm;
    use crate::trial_model::StratumProfile;

    fn rec(id: usize, stratum: usize, arm: Arm, time: f64, event: bool) -> SurvivalRecord {
        SurvivalRecord {
            id,
            stratum: StratumProfile::from_index(stratum).unwrap(),
            arm,
            time,
            event,
        }
    }

    #[test]
    fn two_subject_example() {
        let data = [rec(0, 0, Arm::Treatment, 1.0, true), rec(1, 0, Arm::Control, 2.0, true)];
        let r = logrank(&data, false).unwrap();
        assert_eq!(r.observed_minus_expected, 0.5);
        assert_eq!(r.variance, 0.25);
        assert_eq!(r.z, 1.0);

        let swapped: Vec<_> = data.iter().map(|r| SurvivalRecord { arm: r.arm.swapped(), ..*r }).collect();
        assert_eq!(logrank(&swapped, false).unwrap().z, -1.0);
    }

    #[test]
    fn single_stratum_stratified_equals_pooled() {
        let data = [
            rec(0, 4, Arm::Treatment, 1.0, true),
            rec(1, 4, Arm::Control, 2.0, true),
            rec(2, 4, Arm::Control, 2.0, false),
            rec(3, 4, Arm::Treatment, 3.5, true),
            rec(4, 4, Arm::Control, 0.7, true),
        ];
        assert_eq!(logrank(&data, true).unwrap(), logrank(&data, false).unwrap());
    }

    #[test]
    fn single_arm_strata_are_degenerate() {
        let data = [
            rec(0, 0, Arm::Treatment, 1.0, true),
            rec(1, 0, Arm::Treatment, 2.0, true),
            rec(2, 1, Arm::Control, 1.5, true),
            rec(3, 1, Arm::Control, 2.5, false),
        ];
        assert!(logrank(&data, false).is_ok());
        assert!(matches!(logrank(&data, true), Err(Error::DegenerateTest { .. })));
    }

    #[test]
    fn hypergeometric_with_ties() {
        // n=4, n1=2, two events of which one treated
        let (oe, v) = hypergeometric_terms(2, 1, 4, 2);
        assert_eq!(oe, 0.0);
        assert!((v - 2.0 * 0.25 * 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(hypergeometric_terms(1, 1, 1, 1), (0.0, 0.0));
    }
}
