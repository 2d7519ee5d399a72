use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use lumactl_core::pipeline::PipelineError;
use lumactl_core::prompt::Span;
use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorBody {
    /// Machine-readable kind, e.g. `no_verb`, `not_found`, `busy`.
    pub error: String,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub span: Option<Span>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stage: Option<&'static str>,
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: ErrorBody,
}

impl ApiError {
    pub fn new(status: StatusCode, error: &str, message: impl Into<String>) -> Self {
        Self { status, body: ErrorBody { error: error.into(), message: message.into(), span: None, stage: None } }
    }

    pub fn bad_request(error: &str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, error, message)
    }

    pub fn not_found(what: &str, id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", format!("unknown {what} {id:?}"))
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl From<std::io::Error> for ApiError {
    fn from(e: std::io::Error) -> Self {
        ApiError::internal(format!("storage: {e}"))
    }
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        let stage = Some(e.stage());
        let message = e.to_string();
        let (status, error, span) = match &e {
            PipelineError::Parse(p) => (StatusCode::BAD_REQUEST, p.kind(), p.span()),
            PipelineError::EmptyMask => (StatusCode::BAD_REQUEST, "empty_mask", None),
            PipelineError::Mask(_) => (StatusCode::BAD_REQUEST, "bad_mask", None),
            PipelineError::Invalid(_) => (StatusCode::BAD_REQUEST, "invalid_request", None),
            PipelineError::TooLarge { .. } => (StatusCode::PAYLOAD_TOO_LARGE, "too_large", None),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal", None),
        };
        Self { status, body: ErrorBody { error: error.into(), message, span, stage } }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}
