use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("affine map has a singular scale matrix")]
    SingularTransform,

    /// Too few or degenerate samples to form a full-rank covariance.
    #[error("rank-deficient data: {samples} samples in dimension {dim}")]
    RankDeficient { samples: usize, dim: usize },

    /// The rejection sampler gave up; the parameters put negligible mass on the set.
    #[error("set mass too low: no accepted point after {attempts} attempts")]
    MassTooLow { attempts: u64 },

    #[error("infeasible domain: {0}")]
    InfeasibleDomain(String),

    #[error("data exhausted: needed {needed} samples, have {available}")]
    DataExhausted { needed: usize, available: usize },

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("validation error: {0}")]
    Validation(String),
}

impl Error {
    pub fn check_dim(expected: usize, found: usize) -> Result<()> {
        if expected == found {
            Ok(())
        } else {
            Err(Error::DimensionMismatch { expected, found })
        }
    }
}
