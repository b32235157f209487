use axum::extract::rejection::JsonRejection;
use axum::extract::{FromRequest, Request};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use learnpath_core::QuestionId;

use crate::api::ErrorBody;

#[derive(Debug, thiserror::Error)]
pub enum ApiError {
    #[error("unknown strategy `{0}`")]
    UnknownStrategy(String),
    #[error("unknown topic `{0}`")]
    UnknownTopic(String),
    #[error("{0}")]
    InvalidRequest(String),
    #[error("strategy `{0}` has no trainable model")]
    NotTrainable(String),
    #[error("session `{0}` not found")]
    SessionNotFound(String),
    #[error("no such endpoint")]
    NotFound,
    #[error("topic `{topic}` has {available} questions but {requested} were requested")]
    InsufficientQuestions {
        topic: String,
        available: usize,
        requested: usize,
    },
    #[error("answer is for {got}, but {expected} is the question being served")]
    QuestionMismatch { expected: QuestionId, got: QuestionId },
    #[error("session `{0}` has expired")]
    SessionExpired(String),
    #[error("session `{0}` is finished")]
    SessionFinished(String),
    #[error("a model is already being trained")]
    TrainingInProgress,
    #[error("{0}")]
    Internal(String),
}

impl ApiError {
    pub fn status(&self) -> StatusCode {
        use ApiError::*;
        match self {
            UnknownStrategy(_) | UnknownTopic(_) | InvalidRequest(_) | NotTrainable(_) => StatusCode::BAD_REQUEST,
            SessionNotFound(_) | NotFound => StatusCode::NOT_FOUND,
            InsufficientQuestions { .. } | QuestionMismatch { .. } => StatusCode::CONFLICT,
            SessionExpired(_) | SessionFinished(_) => StatusCode::GONE,
            TrainingInProgress => StatusCode::SERVICE_UNAVAILABLE,
            Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }

    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        use ApiError::*;
        match self {
            UnknownStrategy(_) => "unknown_strategy",
            UnknownTopic(_) => "unknown_topic",
            InvalidRequest(_) => "invalid_request",
            NotTrainable(_) => "not_trainable",
            SessionNotFound(_) => "session_not_found",
            NotFound => "not_found",
            InsufficientQuestions { .. } => "insufficient_questions",
            QuestionMismatch { .. } => "question_mismatch",
            SessionExpired(_) => "session_expired",
            SessionFinished(_) => "session_finished",
            TrainingInProgress => "training_in_progress",
            Internal(_) => "internal",
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        if matches!(self, ApiError::Internal(_)) {
            tracing::error!("{self}");
        }
        let body = ErrorBody {
            error: self.code().into(),
            message: self.to_string(),
        };
        (self.status(), Json(body)).into_response()
    }
}

/// `Json` whose rejections use the API error body.
pub struct ApiJson<T>(pub T);

impl<S, T> FromRequest<S> for ApiJson<T>
where
    Json<T>: FromRequest<S, Rejection = JsonRejection>,
    S: Send + Sync,
{
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        Json::<T>::from_request(req, state)
            .await
            .map(|Json(v)| ApiJson(v))
            .map_err(|e| ApiError::InvalidRequest(e.body_text()))
    }
}
