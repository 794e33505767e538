use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// The test statistic has zero variance. Carries the (meaningless but
    /// still reportable) observed-minus-expected sum.
    #[error("degenerate test: zero variance (O-E = {observed_minus_expected})")]
    DegenerateTest { observed_minus_expected: f64 },

    #[error("invalid model: {0}")]
    InvalidModel(String),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
