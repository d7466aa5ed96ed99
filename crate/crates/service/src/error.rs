use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde_json::json;

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("unknown subject {0:?}")]
    UnknownSubject(String),

    #[error("unknown document {0:?}")]
    UnknownDocument(String),

    #[error("worker {worker_id:?} already annotated {doc_id:?}")]
    Duplicate { doc_id: String, worker_id: String },

    #[error("task {0:?} is already resolved or discarded")]
    Closed(String),

    #[error("label {0} is not on the sentiment scale")]
    OffScale(f64),

    #[error("{0}")]
    BadRequest(String),

    #[error("no resolved labels to refit on")]
    NoResolvedLabels,

    #[error("refit failed: {0}")]
    Refit(String),

    #[error("store: {0}")]
    Store(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl ServiceError {
    pub fn status(&self) -> StatusCode {
        match self {
            ServiceError::UnknownSubject(_) | ServiceError::UnknownDocument(_) => StatusCode::NOT_FOUND,
            ServiceError::Duplicate { .. } | ServiceError::Closed(_) => StatusCode::CONFLICT,
            ServiceError::OffScale(_) | ServiceError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ServiceError::NoResolvedLabels | ServiceError::Refit(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ServiceError::Store(_) | ServiceError::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        (self.status(), Json(json!({ "error": self.to_string() }))).into_response()
    }
}
