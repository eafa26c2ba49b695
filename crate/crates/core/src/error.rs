use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not unitary (residual {residual:.3e})")]
    NonUnitary { residual: f64 },

    #[error("matrix is not symplectic (residual {residual:.3e})")]
    NotSymplectic { residual: f64 },

    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("numerical breakdown: {0}")]
    NumericalBreakdown(String),

    #[error("invalid post-processing factor: {0}")]
    InvalidFactor(String),

    #[error("measured equations do not determine the anti-squeezed quadratures (condition number {condition:.3e})")]
    SingularElimination { condition: f64 },

    #[error("rotation plan has {expected} rotations but {found} angles were given")]
    PlanMismatch { expected: usize, found: usize },

    #[error("invalid optimizer configuration: {0}")]
    InvalidConfig(String),

    #[error("at least {required} samples are needed, got {found}")]
    InsufficientSamples { required: usize, found: usize },

    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse { .. }
            | Error::Validation(_)
            | Error::InvalidConfig(_)
            | Error::DimensionMismatch { .. }
            | Error::PlanMismatch { .. }
            | Error::InvalidFactor(_)
            | Error::NonUnitary { .. }
            | Error::NotSymplectic { .. }
            | Error::InsufficientSamples { .. }
            | Error::Io(_) => 2,
            Error::NumericalBreakdown(_) | Error::SingularElimination { .. } => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
