use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use curation_core::collector::CollectorError;
use curation_core::ingestion::IngestError;
use curation_core::store::StoreError;
use curation_core::workflow::WorkflowError;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    NotFound,
    Validation,
    Conflict,
    StaleVersion,
    ForbiddenTransition,
    Unauthorized,
    Internal,
}

impl ErrorCode {
    pub fn status(self) -> StatusCode {
        match self {
            ErrorCode::NotFound => StatusCode::NOT_FOUND,
            ErrorCode::Validation => StatusCode::BAD_REQUEST,
            ErrorCode::Conflict | ErrorCode::StaleVersion => StatusCode::CONFLICT,
            ErrorCode::ForbiddenTransition => StatusCode::UNPROCESSABLE_ENTITY,
            ErrorCode::Unauthorized => StatusCode::UNAUTHORIZED,
            ErrorCode::Internal => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    pub code: ErrorCode,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<serde_json::Value>,
}

impl ApiError {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        ApiError {
            code,
            message: message.into(),
            detail: None,
        }
    }

    pub fn with_detail(mut self, detail: serde_json::Value) -> Self {
        self.detail = Some(detail);
        self
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        Self::new(ErrorCode::NotFound, message)
    }

    pub fn validation(message: impl Into<String>) -> Self {
        Self::new(ErrorCode::Validation, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        if self.code == ErrorCode::Internal {
            tracing::error!(message = %self.message, "request failed");
        }
        (self.code.status(), Json(self)).into_response()
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let code = match &e {
            StoreError::UnknownRecord(_) | StoreError::Unknown { .. } => ErrorCode::NotFound,
            StoreError::InvalidQuery(_) | StoreError::Invalid(_) | StoreError::MalformedDump { .. } => {
                ErrorCode::Validation
            }
            StoreError::Duplicate { .. }
            | StoreError::BrokenChain { .. }
            | StoreError::ForkedChain(_)
            | StoreError::ImmutableField { .. }
            | StoreError::NotEmpty => ErrorCode::Conflict,
            StoreError::Io { .. } | StoreError::Corrupt { .. } => ErrorCode::Internal,
        };
        ApiError::new(code, e.to_string())
    }
}

impl From<WorkflowError> for ApiError {
    fn from(e: WorkflowError) -> Self {
        let message = e.to_string();
        match e {
            WorkflowError::UnknownRecord(_) => ApiError::not_found(message),
            WorkflowError::StaleVersion { latest, .. } => {
                ApiError::new(ErrorCode::StaleVersion, message).with_detail(serde_json::json!({ "latest": latest }))
            }
            WorkflowError::ForbiddenTransition { state, .. } => ApiError::new(ErrorCode::ForbiddenTransition, message)
                .with_detail(serde_json::json!({ "state": state })),
            WorkflowError::MissingErrorType(_) | WorkflowError::EmptyPayload | WorkflowError::InvalidPayload(_) => {
                ApiError::validation(message)
            }
            WorkflowError::SameCurator { .. } => ApiError::new(ErrorCode::Conflict, message),
            WorkflowError::Store(e) => e.into(),
        }
    }
}

impl From<CollectorError> for ApiError {
    fn from(e: CollectorError) -> Self {
        let message = e.to_string();
        match e {
            CollectorError::UnknownExample(_) => ApiError::not_found(message),
            CollectorError::InvalidTransition { .. } => ApiError::new(ErrorCode::Conflict, message),
            CollectorError::InvalidExport(_) => ApiError::validation(message),
            CollectorError::Store(e) => e.into(),
        }
    }
}

impl From<IngestError> for ApiError {
    fn from(e: IngestError) -> Self {
        match e {
            IngestError::Unreadable { .. } => ApiError::validation(e.to_string()),
            IngestError::Store(e) => e.into(),
        }
    }
}
