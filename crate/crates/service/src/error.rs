//! The API error shape and the mapping from pipeline errors to stable codes.

use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use b2d_core::analytics::AnalyticsError;
use b2d_core::domain::DomainError;
use b2d_core::prompts::PromptError;
use b2d_core::providers::ProviderError;
use b2d_core::store::StoreError;
use b2d_core::PipelineError;
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    pub code: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub details: Option<Value>,
    #[serde(skip)]
    status: u16,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self { code: code.to_owned(), message: message.into(), details: None, status: status.as_u16() }
    }

    pub fn with_details(mut self, details: Value) -> Self {
        self.details = Some(details);
        self
    }

    pub fn status(&self) -> StatusCode {
        StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR)
    }

    pub fn not_found(code: &str, what: impl std::fmt::Display) -> Self {
        Self::new(StatusCode::NOT_FOUND, code, format!("{what} not found"))
    }

    pub fn invalid(code: &str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, code, message)
    }

    /// Process exit status for the CLI, one per HTTP status class.
    pub fn exit_code(&self) -> i32 {
        match self.status {
            404 => 3,
            409 => 4,
            422 => 5,
            502 => 6,
            _ => 7,
        }
    }
}

impl std::fmt::Display for ApiError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.code, self.message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status(), Json(self)).into_response()
    }
}

fn domain_code(e: &DomainError) -> (StatusCode, &'static str) {
    use DomainError::*;
    match e {
        UnknownCard(_) => (StatusCode::NOT_FOUND, "card_not_found"),
        UnknownEntry(_) => (StatusCode::NOT_FOUND, "entry_not_found"),
        MissingComposition => (StatusCode::CONFLICT, "missing_composition"),
        NoText => (StatusCode::CONFLICT, "missing_text"),
        DuplicateEntry { .. } => (StatusCode::UNPROCESSABLE_ENTITY, "duplicate_entry"),
        TypeMismatch { .. } | DuplicateSelection(_) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_selection"),
        NoColon | EmptyPart | InvalidTextFormat(_) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_text_format"),
        EmptyAfterTrim => (StatusCode::UNPROCESSABLE_ENTITY, "empty_text"),
        UnknownVariant { .. } => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_value"),
        Invariant(_) => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
    }
}

fn provider_code(e: &ProviderError) -> &'static str {
    match e {
        ProviderError::Timeout => "provider_timeout",
        ProviderError::Transport(_) => "provider_transport",
        ProviderError::SchemaViolation { .. } => "provider_schema_violation",
        ProviderError::InvalidInput(_) => "provider_invalid_input",
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let (status, code) = match &e {
            StoreError::NotFound(_) => (StatusCode::NOT_FOUND, "session_not_found"),
            StoreError::IdCollision(_) => (StatusCode::CONFLICT, "id_collision"),
            StoreError::CorruptRecord { .. } => (StatusCode::INTERNAL_SERVER_ERROR, "corrupt_record"),
            StoreError::MissingBlob(_) => (StatusCode::INTERNAL_SERVER_ERROR, "missing_blob"),
            StoreError::Io(_) => (StatusCode::INTERNAL_SERVER_ERROR, "storage_error"),
        };
        Self::new(status, code, e.to_string())
    }
}

impl From<AnalyticsError> for ApiError {
    fn from(e: AnalyticsError) -> Self {
        match &e {
            AnalyticsError::TooFewItems(_) => Self::invalid("too_few_items", e.to_string()),
            AnalyticsError::DimensionMismatch(..) => Self::invalid("dimension_mismatch", e.to_string()),
            AnalyticsError::Provider(p) => Self::new(StatusCode::BAD_GATEWAY, provider_code(p), e.to_string()),
        }
    }
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        let message = e.to_string();
        let (status, code) = match e {
            PipelineError::AutoAborted { session_id, source } => {
                return Self::from(*source).with_details(serde_json::json!({ "session_id": session_id }))
            }
            PipelineError::Store(s) => return s.into(),
            PipelineError::Analytics(a) => return a.into(),
            PipelineError::Domain(d) => domain_code(&d),
            PipelineError::Prompt(PromptError::MissingContext(_)) => {
                (StatusCode::UNPROCESSABLE_ENTITY, "missing_context")
            }
            PipelineError::Prompt(_) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_prompt_input"),
            PipelineError::Provider(p) => (StatusCode::BAD_GATEWAY, provider_code(&p)),
            PipelineError::EmptyBrief => (StatusCode::UNPROCESSABLE_ENTITY, "empty_brief"),
            PipelineError::InvalidCount => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_count"),
            PipelineError::UnsupportedForText(_) => (StatusCode::CONFLICT, "unsupported_for_text"),
            PipelineError::NoPriorArtifact => (StatusCode::CONFLICT, "no_prior_artifact"),
            PipelineError::InvalidState(_) => (StatusCode::CONFLICT, "invalid_state"),
            PipelineError::SessionClosed(_) => (StatusCode::CONFLICT, "session_closed"),
        };
        Self::new(status, code, message)
    }
}
