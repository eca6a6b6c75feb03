use alloc::string::String;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("input is empty")]
    Empty,

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("non-finite value at index {0}")]
    NonFinite(usize),

    #[error("need at least {needed} samples, got {got}")]
    TooShort { needed: usize, got: usize },

    #[error("{freq_hz} Hz is not below the Nyquist frequency {nyquist_hz} Hz")]
    AboveNyquist { freq_hz: f64, nyquist_hz: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix is not positive definite (jitter ladder exhausted at {max_jitter:e})")]
    NotPositiveDefinite { max_jitter: f64 },

    #[error("row {0} has a nonpositive sum")]
    NonPositiveDegree(usize),

    #[error("ridge search band contains no frequency bins")]
    EmptyBand,

    #[error("magnitude is zero everywhere in the ridge search band")]
    NoRidgeMass,

    #[error("training pool is empty")]
    EmptyPool,

    #[error("reference signal has zero energy")]
    ZeroEnergy,
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
