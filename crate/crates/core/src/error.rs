use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("mode index {index} is not valid for a {n_modes}-mode state")]
    InvalidMode { index: usize, n_modes: usize },

    #[error("duplicate mode index {0}")]
    DuplicateMode(usize),

    #[error("covariance matrix is not physical: smallest symplectic eigenvalue {min_eigenvalue}")]
    Unphysical { min_eigenvalue: f64 },

    #[error("covariance matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("matrix is not symplectic (max deviation {deviation:e})")]
    NotSymplectic { deviation: f64 },

    /// The matrix inverted during a conditional update, row-major.
    #[error("singular conditioning matrix {matrix:?}")]
    SingularConditioning { matrix: Vec<Vec<f64>> },

    #[error("mixture would grow to {requested} components (limit {limit})")]
    ComponentLimit { requested: usize, limit: usize },

    #[error("mixture has no components")]
    EmptyMixture,

    #[error("round {round} is out of range (schedule has {len} rounds)")]
    RoundOutOfRange { round: usize, len: usize },
}

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
