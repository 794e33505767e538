//! Standard normal helpers.

use statrs::distribution::{ContinuousCDF, Normal};

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal is valid")
}

pub fn normal_cdf(x: f64) -> f64 {
    std_normal().cdf(x)
}

/// Inverse standard normal CDF.
pub fn normal_quantile(p: f64) -> f64 {
    std_normal().inverse_cdf(p)
}
