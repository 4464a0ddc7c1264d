use advisor_core::Error as CoreError;

pub type ServiceResult<T> = std::result::Result<T, ServiceError>;

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("session `{0}` not found")]
    SessionNotFound(String),
    #[error("job `{0}` not found")]
    JobNotFound(String),
    #[error("invalid request: {0}")]
    Invalid(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("profiler backend unavailable: {0}")]
    Backend(String),
    #[error("journal failure: {0}")]
    Journal(String),
    #[error(transparent)]
    Core(#[from] CoreError),
}

impl ServiceError {
    /// Stable machine-readable code for the JSON error body.
    pub fn code(&self) -> &'static str {
        match self {
            Self::SessionNotFound(_) => "session_not_found",
            Self::JobNotFound(_) => "job_not_found",
            Self::Invalid(_) => "invalid_request",
            Self::Config(_) => "invalid_config",
            Self::Backend(_) => "backend_degraded",
            Self::Journal(_) => "journal_failure",
            Self::Core(e) if is_caller_error(e) => "invalid_config",
            Self::Core(_) => "internal",
        }
    }

    pub fn status(&self) -> u16 {
        match self {
            Self::SessionNotFound(_) | Self::JobNotFound(_) => 404,
            Self::Invalid(_) | Self::Config(_) => 422,
            Self::Backend(_) => 503,
            Self::Journal(_) => 500,
            Self::Core(e) if is_caller_error(e) => 422,
            Self::Core(_) => 500,
        }
    }
}

fn is_caller_error(e: &CoreError) -> bool {
    matches!(
        e,
        CoreError::Config(_)
            | CoreError::Input(_)
            | CoreError::Dimension { .. }
            | CoreError::Ingest { .. }
            | CoreError::Alignment { .. }
            | CoreError::SeriesTooShort { .. }
    )
}

impl From<std::io::Error> for ServiceError {
    fn from(e: std::io::Error) -> Self {
        Self::Journal(e.to_string())
    }
}
