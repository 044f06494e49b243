use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

/// Coarse error class, mapped onto process exit codes by the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Malformed or out-of-domain input data.
    Input,
    /// The data are well formed but the requested analysis is undefined.
    Analysis,
    /// Invalid configuration or parameters.
    Config,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("unit identifier is empty")]
    EmptyId,
    #[error("condition must be 0 or 1, got {0}")]
    InvalidCondition(u8),
    #[error("outcome is not finite: {0}")]
    NonFiniteOutcome(f64),
    #[error("segment count must be at least 2, got {0}")]
    InvalidSegments(u32),
    #[error("segment count must be even to pair segments, got {0}")]
    OddSegments(u32),
    #[error("replicate count must be positive")]
    ZeroReplicates,
    #[error("alpha must lie in (0, 1), got {0}")]
    InvalidAlpha(f64),
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("cannot merge accumulators with different configurations")]
    ConfigMismatch,
    #[error("condition {0} has no observations")]
    EmptyCondition(u8),
    #[error("all {replicates} replicates are degenerate")]
    AllReplicatesDegenerate { replicates: usize },
    #[error("{degenerate} of {replicates} replicates are degenerate (limit 1%)")]
    TooManyDegenerate { degenerate: usize, replicates: usize },
    #[error("need at least 2 usable replicates, have {usable} ({degenerate} degenerate)")]
    InsufficientReplicates { usable: usize, degenerate: usize },
    #[error("exposure counts are inconsistent: {0}")]
    InconsistentCounts(String),
    #[error("binomial interval needs at least one trial")]
    NoTrials,
    #[error("{successes} successes exceed {trials} trials")]
    SuccessesExceedTrials { successes: u64, trials: u64 },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("layout cannot be generated: {0}")]
    DegenerateLayout(String),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::EmptyId
            | Error::InvalidCondition(_)
            | Error::NonFiniteOutcome(_)
            | Error::InconsistentCounts(_)
            | Error::NoTrials
            | Error::EmptyDataset
            | Error::SuccessesExceedTrials { .. } => ErrorKind::Input,
            Error::EmptyCondition(_)
            | Error::AllReplicatesDegenerate { .. }
            | Error::TooManyDegenerate { .. }
            | Error::InsufficientReplicates { .. } => ErrorKind::Analysis,
            Error::InvalidSegments(_)
            | Error::OddSegments(_)
            | Error::ZeroReplicates
            | Error::InvalidAlpha(_)
            | Error::InvalidParameter { .. }
            | Error::ConfigMismatch
            | Error::DegenerateLayout(_) => ErrorKind::Config,
        }
    }

    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
