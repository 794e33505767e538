//! Required event counts and sample sizes for a two-arm time-to-event trial.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::normal_quantile;

/// Expected fraction of enrolled subjects with an event at analysis.
pub const DEFAULT_EVENT_FRACTION: f64 = 0.70;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DesignInputs {
    pub hr: f64,
    pub alpha_one_sided: f64,
    pub power: f64,
    /// Fraction of subjects randomized to treatment.
    pub allocation: f64,
    pub event_fraction: f64,
}

impl DesignInputs {
    pub fn new(hr: f64) -> Self {
        DesignInputs {
            hr,
            alpha_one_sided: 0.025,
            power: 0.80,
            allocation: 0.5,
            event_fraction: DEFAULT_EVENT_FRACTION,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.hr.is_finite() && self.hr > 0.0) {
            return Err(Error::param(format!("HR must be finite and > 0, got {}", self.hr)));
        }
        if self.hr == 1.0 {
            return Err(Error::param("HR must differ from 1"));
        }
        for (name, p) in [
            ("alpha", self.alpha_one_sided),
            ("power", self.power),
            ("allocation", self.allocation),
        ] {
            if !(p > 0.0 && p < 1.0) {
                return Err(Error::param(format!("{name} must be in (0, 1), got {p}")));
            }
        }
        check_event_fraction(self.event_fraction)
    }
}

fn check_event_fraction(f: f64) -> Result<()> {
    if !(f > 0.0 && f <= 1.0) {
        return Err(Error::param(format!("event fraction must be in (0, 1], got {f}")));
    }
    Ok(())
}

/// Schoenfeld's required number of events, rounded up.
pub fn schoenfeld_events(inputs: &DesignInputs) -> Result<usize> {
    inputs.validate()?;
    let z_sum = normal_quantile(1.0 - inputs.alpha_one_sided) + normal_quantile(inputs.power);
    let log_hr = inputs.hr.ln();
    let d = z_sum * z_sum / (inputs.allocation * (1.0 - inputs.allocation) * log_hr * log_hr);
    Ok(d.ceil() as usize)
}

/// `ceil(events / event_fraction)`.
pub fn sample_size(events: usize, event_fraction: f64) -> Result<usize> {
    if events == 0 {
        return Err(Error::param("event count must be positive"));
    }
    check_event_fraction(event_fraction)?;
    let n = events as f64 / event_fraction;
    // 66 / 0.7 style quotients land a hair above an integer in binary.
    let rounded = n.round();
    if (n - rounded).abs() < 1e-9 * n {
        Ok(rounded as usize)
    } else {
        Ok(n.ceil() as usize)
    }
}
