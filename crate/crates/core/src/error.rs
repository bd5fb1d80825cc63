use thiserror::Error;

/// Errors produced by the simulation, reconstruction and evaluation routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum AeError {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("transmit event has no active element")]
    InvalidEvent,

    #[error("zero-energy matched filter template")]
    ZeroTemplate,

    #[error("axis of length {0} is too short for analytic-signal envelope (need >= 4)")]
    DegenerateAxis(usize),

    #[error("no peak: region contains only zeros")]
    NoPeak,

    #[error("half maximum not crossed on the {0} side of the peak")]
    OneSided(&'static str),

    #[error("noise variance is zero; SNR undefined")]
    UndefinedSnr,

    #[error("region is empty or outside the image")]
    EmptyRegion,

    #[error("reconstruction method does not match transmit events: {0}")]
    MethodMismatch(String),

    #[error("channel file format: {0}")]
    Format(String),
}

impl AeError {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        AeError::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, AeError>;
