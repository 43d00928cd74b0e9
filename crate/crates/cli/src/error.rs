use arena_core::arena::{ArenaError, ERROR_CODES};
use arena_core::config::ConfigError;
use arena_core::metrics::MetricsError;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::{Deserialize, Serialize};

/// Codes that only the HTTP/CLI layer produces.
pub const SURFACE_CODES: [&str; 2] = ["METHOD_NOT_ALLOWED", "PORT_IN_USE"];

/// Every code an [`ApiError`] can carry.
pub fn all_codes() -> impl Iterator<Item = &'static str> {
    ERROR_CODES.iter().chain(SURFACE_CODES.iter()).copied()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiError {
    pub http_status: u16,
    pub code: String,
    pub message: String,
}

pub fn status_for(code: &str) -> StatusCode {
    match code {
        "VALIDATION_FAILED" | "UNKNOWN_TICKER" | "UNKNOWN_MODEL" | "UNKNOWN_PROVIDER" | "UNKNOWN_METRIC" => {
            StatusCode::BAD_REQUEST
        }
        "UNKNOWN_FUND" | "UNKNOWN_RUN" | "NOT_FOUND" => StatusCode::NOT_FOUND,
        "METHOD_NOT_ALLOWED" => StatusCode::METHOD_NOT_ALLOWED,
        "FUND_EXISTS" | "FUND_BUSY" | "OUT_OF_ORDER" | "ILLEGAL_TRANSITION" | "SEQ_CONFLICT" => StatusCode::CONFLICT,
        "NOT_TRADING_DAY" | "DATASET_GAP" | "CUTOFF_VIOLATION" | "MISSING_PRICE" | "CASSETTE_MISS" => {
            StatusCode::UNPROCESSABLE_ENTITY
        }
        "LLM_UNAVAILABLE" | "PROVIDER_UNAVAILABLE" => StatusCode::SERVICE_UNAVAILABLE,
        // Integrity and configuration faults on the server side.
        _ => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

impl ApiError {
    pub fn new(code: &str, message: impl Into<String>) -> Self {
        Self { http_status: status_for(code).as_u16(), code: code.to_string(), message: message.into() }
    }

    pub fn validation(message: impl Into<String>) -> Self {
        Self::new("VALIDATION_FAILED", message)
    }
}

impl std::fmt::Display for ApiError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.code, self.message)
    }
}

impl std::error::Error for ApiError {}

impl From<ArenaError> for ApiError {
    fn from(e: ArenaError) -> Self {
        Self::new(e.code(), e.to_string())
    }
}

impl From<ConfigError> for ApiError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Arena(a) => a.into(),
            ConfigError::BadConfig(m) => Self::new("BAD_CONFIG", m),
            ConfigError::Io(io) => Self::new("STORAGE_FAILURE", io.to_string()),
        }
    }
}

impl From<MetricsError> for ApiError {
    fn from(e: MetricsError) -> Self {
        ArenaError::from(e).into()
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.http_status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}
