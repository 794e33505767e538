//! Simulation of one event-driven trial.
//!
//! Each subject is assigned a stratum (categorical draw on the allocation
//! weights), an arm (independent Bernoulli), a uniform enrollment time over
//! the accrual window and an exponential latent event time. The analysis
//! cutoff is the calendar time of the D-th event; everyone else is
//! administratively censored there.

use rand::distr::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trial_model::{normalize_weights, ScenarioSpec, StratumProfile, TrialDesign, NUM_STRATA};

/// Random stream for one replicate, fully determined by `(seed, replicate_index)`.
///
/// The seed keys a ChaCha generator and the replicate index selects its
/// stream, so replicates are independent of one another and of the order in
/// which they are run.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    replicate_index: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, replicate_index: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(replicate_index);
        RngStream { seed, replicate_index, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn replicate_index(&self) -> u64 {
        self.replicate_index
    }

    /// Uniform on [0, 1).
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    /// Uniform on the open interval (0, 1).
    pub fn uniform_open(&mut self) -> f64 {
        self.rng.sample(Open01)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Arm {
    Control,
    Treatment,
}

impl Arm {
    pub fn is_treatment(self) -> bool {
        self == Arm::Treatment
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn swapped(self) -> Arm {
        match self {
            Arm::Control => Arm::Treatment,
            Arm::Treatment => Arm::Control,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subject {
    pub id: usize,
    pub stratum: StratumProfile,
    pub arm: Arm,
    /// Months since study start.
    pub enroll_time: f64,
    /// Months since enrollment.
    pub latent_event_time: f64,
    /// Months since enrollment; zero for subjects enrolled after the cutoff.
    pub observed_time: f64,
    pub event: bool,
}

impl Subject {
    pub fn calendar_event_time(&self) -> f64 {
        self.enroll_time + self.latent_event_time
    }
}

/// The analysis view of one subject: what an external dataset row carries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurvivalRecord {
    pub id: usize,
    pub stratum: StratumProfile,
    pub arm: Arm,
    pub time: f64,
    pub event: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialDataset {
    pub subjects: Vec<Subject>,
    pub cutoff_calendar_time: f64,
    pub events_observed: usize,
}

impl TrialDataset {
    pub fn records(&self) -> Vec<SurvivalRecord> {
        self.subjects
            .iter()
            .map(|s| SurvivalRecord {
                id: s.id,
                stratum: s.stratum,
                arm: s.arm,
                time: s.observed_time,
                event: s.event,
            })
            .collect()
    }
}

/// Categorical sampler over the 12 strata.
#[derive(Debug, Clone)]
pub struct StratumSampler {
    cumulative: [f64; NUM_STRATA],
    last_positive: usize,
}

impl StratumSampler {
    pub fn new(weights: &[f64; NUM_STRATA]) -> Result<Self> {
        let probs = normalize_weights(weights)?;
        let mut cumulative = [0.0; NUM_STRATA];
        let mut acc = 0.0;
        for (c, p) in cumulative.iter_mut().zip(probs) {
            acc += p;
            *c = acc;
        }
        let last_positive = probs.iter().rposition(|&p| p > 0.0).expect("some weight is positive");
        Ok(StratumSampler { cumulative, last_positive })
    }

    pub fn sample(&self, rng: &mut RngStream) -> StratumProfile {
        let u = rng.uniform();
        let k = self
            .cumulative
            .iter()
            .position(|&c| u < c)
            // rounding can leave the final cumulative sum just under 1
            .unwrap_or(self.last_positive);
        StratumProfile::from_index(k).expect("sampler index in range")
    }
}

/// Draws a stratum with probability proportional to `weights`.
pub fn assign_stratum(weights: &[f64; NUM_STRATA], rng: &mut RngStream) -> Result<StratumProfile> {
    Ok(StratumSampler::new(weights)?.sample(rng))
}

/// Inverse CDF of the exponential distribution: `-ln(u) / rate`.
pub fn exponential_quantile(u: f64, rate: f64) -> f64 {
    -u.ln() / rate
}

pub fn draw_event_time(rate: f64, rng: &mut RngStream) -> Result<f64> {
    if !(rate.is_finite() && rate > 0.0) {
        return Err(Error::param(format!("hazard rate must be finite and > 0, got {rate}")));
    }
    Ok(exponential_quantile(rng.uniform_open(), rate))
}

/// Simulates one complete trial, censored at the calendar time of the
/// `design.target_events`-th event.
pub fn generate_trial(
    design: &TrialDesign,
    scenario: &ScenarioSpec,
    rng: &mut RngStream,
) -> Result<TrialDataset> {
    design.validate()?;
    let control_rates = scenario.control_rates()?;
    let sampler = StratumSampler::new(&design.allocation_weights)?;

    let subjects = (0..design.sample_size)
        .map(|id| {
            let stratum = sampler.sample(rng);
            let arm = if rng.uniform() < design.randomization_prob {
                Arm::Treatment
            } else {
                Arm::Control
            };
            let enroll_time = rng.uniform() * design.accrual_months;
            let mut rate = control_rates[stratum.index()];
            if arm.is_treatment() {
                rate *= design.true_hr;
            }
            let latent_event_time = draw_event_time(rate, rng)?;
            Ok(Subject {
                id,
                stratum,
                arm,
                enroll_time,
                latent_event_time,
                observed_time: latent_event_time,
                event: true,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    apply_cutoff(subjects, design.target_events)
}

/// Censors every subject at the calendar time of the `events`-th event.
///
/// Ties in calendar event time are broken by subject id so that exactly
/// `events` events remain.
pub fn apply_cutoff(mut subjects: Vec<Subject>, events: usize) -> Result<TrialDataset> {
    if events == 0 {
        return Err(Error::param("event target must be positive"));
    }
    if events > subjects.len() {
        return Err(Error::param(format!(
            "event target {events} exceeds number of subjects {}",
            subjects.len()
        )));
    }
    let mut order: Vec<usize> = (0..subjects.len()).collect();
    order.sort_by(|&a, &b| {
        let (sa, sb) = (&subjects[a], &subjects[b]);
        sa.calendar_event_time()
            .total_cmp(&sb.calendar_event_time())
            .then(sa.id.cmp(&sb.id))
    });
    let cutoff = subjects[order[events - 1]].calendar_event_time();

    for (rank, &i) in order.iter().enumerate() {
        let s = &mut subjects[i];
        if rank < events {
            s.event = true;
            s.observed_time = s.latent_event_time;
        } else {
            s.event = false;
            let follow_up = (cutoff - s.enroll_time).max(0.0);
            s.observed_time = follow_up.min(s.latent_event_time.next_down());
        }
    }

    Ok(TrialDataset {
        subjects,
        cutoff_calendar_time: cutoff,
        events_observed: events,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trial_model::AllocationPattern;
    use std::f64::consts::LN_2;

    fn subject(id: usize, enroll: f64, latent: f64) -> Subject {
        Subject {
            id,
            stratum: StratumProfile::from_index(0).unwrap(),
            arm: Arm::Control,
            enroll_time: enroll,
            latent_event_time: latent,
            observed_time: latent,
            event: true,
        }
    }

    fn median(mut xs: Vec<f64>) -> f64 {
        xs.sort_by(f64::total_cmp);
        let n = xs.len();
        if n % 2 == 1 {
            xs[n / 2]
        } else {
            0.5 * (xs[n / 2 - 1] + xs[n / 2])
        }
    }

    #[test]
    fn degenerate_weights_always_pick_that_stratum() {
        let mut w = [0.0; NUM_STRATA];
        w[0] = 1.0;
        let mut rng = RngStream::new(1, 0);
        for _ in 0..1000 {
            assert_eq!(assign_stratum(&w, &mut rng).unwrap().index(), 0);
        }
        let mut w = [0.0; NUM_STRATA];
        w[11] = 2.0;
        for _ in 0..1000 {
            assert_eq!(assign_stratum(&w, &mut rng).unwrap().index(), 11);
        }
    }

    #[test]
    fn invalid_weights_error() {
        let mut rng = RngStream::new(1, 0);
        assert!(assign_stratum(&[0.0; NUM_STRATA], &mut rng).is_err());
        let mut w = [1.0; NUM_STRATA];
        w[2] = -1.0;
        assert!(assign_stratum(&w, &mut rng).is_err());
    }

    #[test]
    fn stratum_frequencies_follow_weights() {
        let n = 200_000;
        for (pattern, probe, p) in [
            (AllocationPattern::Balanced, 3, 1.0 / 12.0),
            (AllocationPattern::FavorX1High, 7, 7.0 / 48.0),
            (AllocationPattern::FavorX1Low, 7, 1.0 / 48.0),
        ] {
            let sampler = StratumSampler::new(&pattern.weights()).unwrap();
            let mut rng = RngStream::new(7, 3);
            let hits = (0..n).filter(|_| sampler.sample(&mut rng).index() == probe).count();
            let freq = hits as f64 / n as f64;
            let se = (p * (1.0 - p) / n as f64).sqrt();
            assert!((freq - p).abs() < 4.0 * se, "{pattern:?}: {freq} vs {p}");
        }
    }

    #[test]
    fn exponential_inverse_cdf_at_half_is_median() {
        let rate = LN_2 / 16.0;
        assert!((exponential_quantile(0.5, rate) - 16.0).abs() < 1e-12);
        let mut rng = RngStream::new(0, 0);
        assert!(draw_event_time(0.0, &mut rng).is_err());
        assert!(draw_event_time(-1.0, &mut rng).is_err());
    }

    #[test]
    fn exponential_sample_medians() {
        let mut rng = RngStream::new(2024, 0);
        let rate = LN_2 / 16.0;
        let draws: Vec<f64> = (0..100_000).map(|_| draw_event_time(rate, &mut rng).unwrap()).collect();
        assert!(draws.iter().all(|&t| t > 0.0));
        assert!((median(draws) - 16.0).abs() < 0.3);
        let draws: Vec<f64> = (0..100_000).map(|_| draw_event_time(rate * 0.5, &mut rng).unwrap()).collect();
        assert!((median(draws) - 32.0).abs() < 0.6);
    }

    #[test]
    fn cutoff_hand_example() {
        // calendar event times 2, 5, 9
        let subjects = vec![subject(0, 1.0, 1.0), subject(1, 2.0, 3.0), subject(2, 4.0, 5.0)];
        let ds = apply_cutoff(subjects, 2).unwrap();
        assert_eq!(ds.cutoff_calendar_time, 5.0);
        assert_eq!(ds.events_observed, 2);
        assert!(ds.subjects[0].event && ds.subjects[1].event);
        assert!(!ds.subjects[2].event);
        assert_eq!(ds.subjects[2].observed_time, 1.0);
    }

    #[test]
    fn cutoff_all_events_and_late_enrollee() {
        let subjects = vec![subject(0, 0.0, 1.0), subject(1, 0.5, 1.0), subject(2, 3.0, 4.0)];
        let ds = apply_cutoff(subjects.clone(), 3).unwrap();
        assert!(ds.subjects.iter().all(|s| s.event && s.observed_time == s.latent_event_time));

        let ds = apply_cutoff(subjects, 2).unwrap();
        assert_eq!(ds.cutoff_calendar_time, 1.5);
        let late = &ds.subjects[2];
        assert!(!late.event);
        assert_eq!(late.observed_time, 0.0);
    }

    #[test]
    fn cutoff_ties_broken_by_id() {
        let subjects = vec![subject(0, 1.0, 2.0), subject(1, 0.0, 3.0), subject(2, 0.0, 1.0)];
        let ds = apply_cutoff(subjects, 2).unwrap();
        assert_eq!(ds.events_observed, 2);
        assert!(ds.subjects[0].event);
        assert!(!ds.subjects[1].event);
        assert!(ds.subjects[1].observed_time < ds.subjects[1].latent_event_time);
    }

    #[test]
    fn cutoff_rejects_too_many_events() {
        let subjects = vec![subject(0, 0.0, 1.0)];
        assert!(apply_cutoff(subjects, 2).is_err());
    }

    #[test]
    fn generated_trial_has_exact_events_and_is_reproducible() {
        let design = TrialDesign::new(0.5, 66).unwrap();
        let sc = ScenarioSpec::scenario1();
        let a = generate_trial(&design, &sc, &mut RngStream::new(99, 5)).unwrap();
        let b = generate_trial(&design, &sc, &mut RngStream::new(99, 5)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.subjects.len(), 95);
        assert_eq!(a.events_observed, 66);
        assert_eq!(a.subjects.iter().filter(|s| s.event).count(), 66);
        for s in &a.subjects {
            assert!(s.enroll_time >= 0.0 && s.enroll_time <= 14.0);
            assert!(s.enroll_time + s.observed_time <= a.cutoff_calendar_time * (1.0 + 1e-12));
            if s.event {
                assert_eq!(s.observed_time, s.latent_event_time);
            } else {
                assert!(s.observed_time < s.latent_event_time);
            }
        }
        let c = generate_trial(&design, &sc, &mut RngStream::new(99, 6)).unwrap();
        assert_ne!(a, c);
    }
}
