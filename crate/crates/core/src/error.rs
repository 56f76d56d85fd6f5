use thiserror::Error;

/// Errors surfaced by the numerical kernel, the simulated runtime and the drivers.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("unsupported topology: {0} processes (must be a power of two)")]
    UnsupportedTopology(usize),

    #[error("invalid failure schedule: {0}")]
    InvalidSchedule(String),

    #[error("protocol violation: {0}")]
    ProtocolViolation(String),

    /// The addressed peer is failed or has returned.
    #[error("peer {0} failed")]
    PeerFailed(usize),

    /// An internal invariant broke; the run produced no trustworthy result.
    #[error("defect: {0}")]
    Defect(String),
}

pub type Result<T> = std::result::Result<T, Error>;
