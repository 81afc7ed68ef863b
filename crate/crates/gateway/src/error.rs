use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde_json::json;

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error(transparent)]
    Engine(#[from] richtx::Error),

    #[error("bad request: {0}")]
    BadRequest(String),

    #[error("job {0} not found")]
    NotFound(String),

    #[error("job {id} is {state}; {what} is available once it is done")]
    NotReady {
        id: String,
        state: String,
        what: &'static str,
    },

    #[error("job queue is full ({0} waiting); retry later")]
    QueueFull(usize),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl ServiceError {
    pub fn status(&self) -> StatusCode {
        match self {
            ServiceError::Engine(e) if e.is_client_error() => StatusCode::BAD_REQUEST,
            ServiceError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ServiceError::NotFound(_) => StatusCode::NOT_FOUND,
            ServiceError::NotReady { .. } => StatusCode::CONFLICT,
            ServiceError::QueueFull(_) => StatusCode::SERVICE_UNAVAILABLE,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }

    fn code(&self) -> &'static str {
        match self {
            ServiceError::Engine(richtx::Error::Validation { .. }) => "validation",
            ServiceError::Engine(richtx::Error::Parse { .. }) => "parse",
            ServiceError::Engine(e) if e.is_client_error() => "invalid_input",
            ServiceError::BadRequest(_) => "bad_request",
            ServiceError::NotFound(_) => "not_found",
            ServiceError::NotReady { .. } => "not_ready",
            ServiceError::QueueFull(_) => "queue_full",
            _ => "internal",
        }
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let mut body = json!({ "error": { "code": self.code(), "message": self.to_string() } });
        if let ServiceError::Engine(richtx::Error::Validation { element, field, .. }) = &self {
            body["error"]["element"] = json!(element);
            body["error"]["field"] = json!(field);
        }
        let mut resp = (self.status(), Json(body)).into_response();
        if matches!(self, ServiceError::QueueFull(_)) {
            resp.headers_mut()
                .insert("retry-after", axum::http::HeaderValue::from_static("1"));
        }
        resp
    }
}
