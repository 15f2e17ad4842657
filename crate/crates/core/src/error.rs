use thiserror::Error;

/// Errors raised by the engine and its oracles.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid case: {0}")]
    InvalidCase(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invariant violation: {0}")]
    InvariantViolation(String),

    #[error(
        "{facts} facts exceed the exact enumeration limit of {limit}; use Monte Carlo estimation"
    )]
    TooLarge { facts: usize, limit: usize },

    /// Transient oracle failure (transport, timeout, 5xx). Callers may retry.
    #[error("oracle error (retryable): {0}")]
    OracleRetryable(String),

    /// Permanent oracle failure (4xx, bad credentials, protocol error).
    #[error("oracle error: {0}")]
    OracleFatal(String),

    #[error("capability missing: {0}")]
    CapabilityMissing(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("degenerate group: {0}")]
    DegenerateGroup(String),

    #[error("template {template}: no binding for placeholder {{{placeholder}}}")]
    MissingBinding {
        template: String,
        placeholder: String,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// The innermost error, skipping context wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            other => other,
        }
    }

    pub fn is_retryable(&self) -> bool {
        matches!(self.root(), Error::OracleRetryable(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
