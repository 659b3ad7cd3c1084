use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised across the assessment pipeline.
///
/// The variants fall in two families: input validation problems (malformed
/// case files, bad arguments, dimension mismatches) and numerical failures
/// (singular systems, infeasible operating points). [`Error::is_validation`]
/// tells them apart, which the CLI uses for its exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("singular Jacobian at power flow iteration {iteration}")]
    SingularJacobian { iteration: usize },

    #[error("power flow state is not converged")]
    Unconverged,

    #[error("base case is infeasible: {0}")]
    InfeasibleBase(String),

    #[error("Hankel moment matrix of variable {var} is singular at degree {degree} (condition {condition:.3e})")]
    SingularHankel {
        var: usize,
        degree: usize,
        condition: f64,
    },

    #[error("underdetermined regression: {samples} samples for {terms} basis terms")]
    Underdetermined { samples: usize, terms: usize },

    #[error("rank-deficient design matrix (condition {condition:.3e})")]
    RankDeficient { condition: f64 },

    #[error("model variance is zero")]
    ZeroVariance,

    #[error("too few samples: need at least {needed}, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("state of charge {soc} left [0, {capacity}] after update")]
    SocBounds { soc: f64, capacity: f64 },

    #[error("slot {slot}: {source}")]
    Slot {
        slot: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn in_slot(self, slot: &str) -> Error {
        Error::Slot {
            slot: slot.to_string(),
            source: Box::new(self),
        }
    }

    /// True for errors caused by bad input rather than by a numerical failure.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Io { .. }
            | Error::Parse(_)
            | Error::Validation(_)
            | Error::InvalidArgument(_)
            | Error::Dimension { .. }
            | Error::TooFewSamples { .. } => true,
            Error::Slot { source, .. } => source.is_validation(),
            _ => false,
        }
    }
}
