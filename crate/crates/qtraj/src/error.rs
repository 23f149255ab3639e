use thiserror::Error;

/// Errors surfaced by the engine. `IntegrationDiverged` and `OracleMismatch`
/// map to a numerical-failure exit; everything else is a usage error.
#[derive(Debug, Error)]
pub enum QtrajError {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("matrix is not unitary (max deviation {deviation:.3e} > tol {tol:.3e})")]
    NotUnitary { deviation: f64, tol: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("record stream error: {0}")]
    Records(String),

    #[error("integration diverged: {0}")]
    IntegrationDiverged(String),

    #[error("oracle mismatch: closed-form verdict {closed_form} but product table symmetry {oracle} on instance {instance}")]
    OracleMismatch {
        closed_form: bool,
        oracle: bool,
        instance: String,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, QtrajError>;
