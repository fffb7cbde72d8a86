use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use copilot_sim::session::SessionError;
use serde::Serialize;

/// An error as returned to HTTP clients.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct ApiError(#[from] pub SessionError);

#[derive(Serialize)]
struct Body<'a> {
    error: &'a str,
    message: String,
    field: Option<&'a str>,
}

impl ApiError {
    pub fn status(&self) -> StatusCode {
        match &self.0 {
            SessionError::NotFound(_) => StatusCode::NOT_FOUND,
            SessionError::Conflict(_) => StatusCode::CONFLICT,
            SessionError::Validation { .. } => StatusCode::UNPROCESSABLE_ENTITY,
            SessionError::Generation(g) if g.kind() == "Timeout" => StatusCode::GATEWAY_TIMEOUT,
            SessionError::Generation(_) => StatusCode::BAD_GATEWAY,
            SessionError::Storage(_) | SessionError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }

    pub(crate) fn validation(field: &str, message: impl Into<String>) -> Self {
        Self(SessionError::Validation {
            field: field.to_string(),
            message: message.into(),
        })
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = self.status();
        if status.is_server_error() {
            tracing::warn!(kind = self.0.kind(), "{}", self.0);
        }
        let field = match &self.0 {
            SessionError::Validation { field, .. } => Some(field.as_str()),
            _ => None,
        };
        let body = Body {
            error: self.0.kind(),
            message: self.0.to_string(),
            field,
        };
        (status, Json(body)).into_response()
    }
}
