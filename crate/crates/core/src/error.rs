use alloc::string::String;

/// Errors produced by the core algorithms.
///
/// `Config` covers invalid specs and hyper-parameters, `Shape` covers tensor
/// dimension mismatches (the usual symptom of a feature-tap
/// misconfiguration), `Validation` covers bad data values.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CoreError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("range error: {0}")]
    Range(String),
    /// A training run produced a non-finite loss; carries a diagnostic dump.
    #[error("non-finite loss at iteration {iter}: {diagnostic}")]
    NonFiniteLoss { iter: u64, diagnostic: String },
}

pub type Result<T> = core::result::Result<T, CoreError>;
