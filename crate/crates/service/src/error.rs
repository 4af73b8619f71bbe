use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde_json::json;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("storage error: {0}")]
    Io(#[from] std::io::Error),

    #[error("corrupt store file {path}: {detail}")]
    Corrupt { path: String, detail: String },

    #[error("store at {0} is locked by another process")]
    Locked(String),

    #[error(transparent)]
    Core(#[from] epiwatch_core::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("{0}")]
    BadRequest(String),

    #[error("{0}")]
    NotFound(String),

    #[error("{0}")]
    Conflict(String),

    #[error("missing or invalid bearer token")]
    Unauthorized,
}

pub type Result<T, E = ServiceError> = std::result::Result<T, E>;

impl ServiceError {
    pub fn status(&self) -> StatusCode {
        match self {
            Self::BadRequest(_) => StatusCode::BAD_REQUEST,
            Self::NotFound(_) => StatusCode::NOT_FOUND,
            Self::Conflict(_) => StatusCode::CONFLICT,
            Self::Unauthorized => StatusCode::UNAUTHORIZED,
            Self::Core(e) if is_client_error(e) => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }

    /// Machine-readable code carried in error bodies.
    pub fn code(&self) -> &'static str {
        match self {
            Self::Io(_) => "storage_failure",
            Self::Corrupt { .. } => "store_corrupt",
            Self::Locked(_) => "store_locked",
            Self::Core(e) if is_client_error(e) => "invalid_request",
            Self::Core(_) => "internal",
            Self::Json(_) => "internal",
            Self::BadRequest(_) => "invalid_request",
            Self::NotFound(_) => "not_found",
            Self::Conflict(_) => "conflict",
            Self::Unauthorized => "unauthorized",
        }
    }
}

fn is_client_error(e: &epiwatch_core::Error) -> bool {
    use epiwatch_core::Error as E;
    matches!(
        e,
        E::InvalidParameter(_) | E::EmptyRange | E::Parse(_) | E::Ingest(_) | E::TooManyTopics { .. } | E::SeriesTooShort { .. }
    )
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = self.status();
        if status.is_server_error() {
            tracing::error!(error = %self, "request failed");
        }
        let body = json!({ "error": { "code": self.code(), "message": self.to_string() } });
        (status, Json(body)).into_response()
    }
}
