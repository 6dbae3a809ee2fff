use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("validation error: {0}")]
    Validation(String),

    #[error("group too large: closure exceeded {0} elements")]
    GroupTooLarge(usize),

    #[error("gate set is not a group: {0}")]
    NotAGroup(String),

    #[error("internal consistency error: {0}")]
    InternalConsistency(String),

    #[error(
        "enumeration cap exceeded: {count} allowable sequences > cap {cap}; \
         estimate the survival distribution by Monte Carlo instead"
    )]
    EnumerationCap { count: f64, cap: usize },

    #[error("unsupported moment order t={0}")]
    UnsupportedMoment(u32),

    #[error("invalid experiment type {0}")]
    InvalidExperiment(String),

    #[error("degenerate leakage: L1 + L2 = {0:e} is below the degeneracy threshold")]
    DegenerateLeakage(f64),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("constraint infeasible: {0}")]
    ConstraintInfeasible(String),

    #[error("sampler error: {0}")]
    Sampler(String),

    #[error("optimizer error: {0}")]
    Optimizer(String),

    #[error("design error: {0}")]
    Design(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn validation<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Validation(msg.into()))
}
