use thiserror::Error;

pub type Result<T, E = FusionError> = std::result::Result<T, E>;

/// Errors raised by a backend or similarity provider implementation.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{0}")]
pub struct BackendError(pub String);

impl BackendError {
    pub fn new(msg: impl Into<String>) -> Self {
        Self(msg.into())
    }
}

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("zero-length vector")]
    ZeroVector,

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimMismatch { expected: usize, actual: usize },

    #[error("scale factors must be positive (beta1 = {beta1}, beta2 = {beta2})")]
    NonPositiveScale { beta1: f64, beta2: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("empty vector")]
    EmptyVector,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid strategy: {0}")]
    InvalidStrategy(String),

    #[error("backend failure at step {step}: {source}")]
    BackendFailure {
        step: usize,
        #[source]
        source: BackendError,
    },

    #[error("backend failure: {0}")]
    Backend(#[from] BackendError),

    #[error("similarity provider failed for concept {concept}: {source}")]
    ProviderFailure {
        concept: usize,
        #[source]
        source: BackendError,
    },

    #[error("objective returned a non-finite value at x = {x}")]
    NonFiniteObjective { x: f64 },

    #[error("sample set is empty")]
    EmptySet,

    #[error("unknown concept `{0}`")]
    UnknownConcept(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<FusionError>,
    },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl FusionError {
    pub(crate) fn in_stage(self, stage: &'static str) -> Self {
        FusionError::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// True when the error (or the error it wraps) originated in a backend or provider.
    pub fn is_backend_failure(&self) -> bool {
        match self {
            FusionError::BackendFailure { .. }
            | FusionError::Backend(_)
            | FusionError::ProviderFailure { .. }
            | FusionError::Protocol(_)
            | FusionError::Io(_) => true,
            FusionError::Stage { source, .. } => source.is_backend_failure(),
            _ => false,
        }
    }
}
