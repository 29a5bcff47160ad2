use axum::extract::rejection::JsonRejection;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use grounder_core::GraphError;
use serde_json::{json, Value};

/// Error body shared by every endpoint: `{code, message, detail}`.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
    pub detail: Value,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code,
            message: message.into(),
            detail: Value::Null,
        }
    }

    pub fn with_detail(mut self, detail: Value) -> Self {
        self.detail = detail;
        self
    }

    pub fn session_not_found(id: &str) -> Self {
        ApiError::new(StatusCode::NOT_FOUND, "SESSION_NOT_FOUND", format!("no session `{id}`"))
            .with_detail(json!({ "session_id": id }))
    }

    pub fn unprocessable(code: &'static str, message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, code, message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "INTERNAL", message)
    }
}

impl From<JsonRejection> for ApiError {
    fn from(rej: JsonRejection) -> Self {
        let status = match rej.status() {
            StatusCode::UNSUPPORTED_MEDIA_TYPE => StatusCode::UNSUPPORTED_MEDIA_TYPE,
            _ => StatusCode::UNPROCESSABLE_ENTITY,
        };
        ApiError::new(status, "INVALID_BODY", rej.body_text())
    }
}

impl From<GraphError> for ApiError {
    fn from(e: GraphError) -> Self {
        let message = e.to_string();
        match e {
            GraphError::UnknownNode(id) => {
                ApiError::new(StatusCode::NOT_FOUND, "NODE_NOT_FOUND", message).with_detail(json!({ "node_id": id }))
            }
            GraphError::DuplicateId(id) => {
                ApiError::unprocessable("DUPLICATE_NODE_ID", message).with_detail(json!({ "node_id": id }))
            }
            GraphError::InvalidExtents { id, .. } | GraphError::InvalidNode { id, .. } => {
                ApiError::unprocessable("INVALID_NODE", message).with_detail(json!({ "node_id": id }))
            }
            GraphError::EmptyAction { id, .. } => {
                ApiError::unprocessable("EMPTY_ACTION", message).with_detail(json!({ "node_id": id }))
            }
            _ => ApiError::unprocessable("INVALID_GRAPH", message),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        if self.status.is_server_error() {
            log::error!("{}: {}", self.code, self.message);
        }
        let body = json!({ "code": self.code, "message": self.message, "detail": self.detail });
        (self.status, Json(body)).into_response()
    }
}
