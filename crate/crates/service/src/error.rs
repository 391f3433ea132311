use thiserror::Error;

/// Every failure the service reports, each with a stable machine-readable
/// code and an HTTP status.
#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("malformed image: {0}")]
    MalformedImage(String),
    #[error("image {width}x{height} is too small")]
    ImageTooSmall { width: u32, height: u32 },
    #[error("payload exceeds the {limit}-byte limit")]
    PayloadTooLarge { limit: usize },
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("no active model")]
    NoActiveModel,
    #[error("unknown request {0:?}")]
    UnknownRequest(String),
    #[error("malformed label: {0}")]
    MalformedLabel(String),
    #[error("invalid cost matrix: {0}")]
    InvalidCosts(String),
    #[error("no validation set for model {0:?}")]
    NoValidationSet(String),
    #[error("no feedback recorded yet")]
    NoFeedback,
    #[error("unknown model {0:?}")]
    UnknownModel(String),
    #[error("store: {0}")]
    Store(String),
    #[error("internal: {0}")]
    Internal(String),
}

impl ServiceError {
    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::MalformedImage(_) => "malformed_image",
            ServiceError::ImageTooSmall { .. } => "image_too_small",
            ServiceError::PayloadTooLarge { .. } => "payload_too_large",
            ServiceError::BadRequest(_) => "bad_request",
            ServiceError::NoActiveModel => "no_active_model",
            ServiceError::UnknownRequest(_) => "unknown_request",
            ServiceError::MalformedLabel(_) => "malformed_label",
            ServiceError::InvalidCosts(_) => "invalid_costs",
            ServiceError::NoValidationSet(_) => "no_validation_set",
            ServiceError::NoFeedback => "no_feedback",
            ServiceError::UnknownModel(_) => "unknown_model",
            ServiceError::Store(_) => "store_failure",
            ServiceError::Internal(_) => "internal",
        }
    }

    pub fn status(&self) -> u16 {
        match self {
            ServiceError::MalformedImage(_)
            | ServiceError::ImageTooSmall { .. }
            | ServiceError::BadRequest(_) => 400,
            ServiceError::UnknownRequest(_) | ServiceError::NoFeedback | ServiceError::UnknownModel(_) => 404,
            ServiceError::MalformedLabel(_) => 409,
            ServiceError::PayloadTooLarge { .. } => 413,
            ServiceError::InvalidCosts(_) => 422,
            ServiceError::Store(_) | ServiceError::Internal(_) => 500,
            ServiceError::NoActiveModel | ServiceError::NoValidationSet(_) => 503,
        }
    }
}

impl From<markguard_core::error::PipelineError> for ServiceError {
    fn from(e: markguard_core::error::PipelineError) -> Self {
        use markguard_core::error::PipelineError as P;
        match e {
            P::MalformedImage(m) => ServiceError::MalformedImage(m),
            P::ImageTooSmall { width, height } => ServiceError::ImageTooSmall { width, height },
            P::ModelUnavailable(_) => ServiceError::NoActiveModel,
            other => ServiceError::Internal(other.to_string()),
        }
    }
}

impl From<std::io::Error> for ServiceError {
    fn from(e: std::io::Error) -> Self {
        ServiceError::Store(e.to_string())
    }
}
