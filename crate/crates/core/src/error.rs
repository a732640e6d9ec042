use thiserror::Error;

/// Errors surfaced by model construction, integration, and the study driver.
#[derive(Debug, Error)]
pub enum CoreError {
    /// A constructor argument violates its documented domain.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Array lengths disagree with the declared (N, d, N_T) shape.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A state, cost, or gradient stopped being finite.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// The consensus-threshold quadrature failed to converge.
    #[error("quadrature did not converge: {0}")]
    Quadrature(String),
}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, CoreError>;
