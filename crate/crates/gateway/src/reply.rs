use axum::http::header::{CONTENT_TYPE, RETRY_AFTER};
use axum::http::{HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use openport_core::envelope::{wrap_error, wrap_success, Envelope, ReasonCode};
use serde_json::Value;

/// An envelope plus the transport details that accompany it.
#[derive(Debug, Clone, PartialEq)]
pub struct Reply {
    pub status: StatusCode,
    pub envelope: Envelope,
    pub retry_after_secs: Option<u64>,
}

impl Reply {
    pub fn ok(data: Value) -> Self {
        Self::success(ReasonCode::Ok, data)
    }

    pub fn success(code: ReasonCode, data: Value) -> Self {
        Self::from_envelope(wrap_success(code, data))
    }

    pub fn error(code: ReasonCode, message: impl Into<String>) -> Self {
        Self::from_envelope(wrap_error(code, message, None))
    }

    pub fn error_with(code: ReasonCode, message: impl Into<String>, details: Option<Value>) -> Self {
        Self::from_envelope(wrap_error(code, message, details))
    }

    /// Malformed request bodies: 400 with `agent.action_invalid`.
    pub fn malformed(message: impl Into<String>) -> Self {
        Self::error(ReasonCode::ActionInvalid, message).with_status(StatusCode::BAD_REQUEST)
    }

    fn from_envelope(envelope: Envelope) -> Self {
        let status = StatusCode::from_u16(envelope.http_status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        Reply { status, envelope, retry_after_secs: None }
    }

    pub fn with_status(mut self, status: StatusCode) -> Self {
        self.status = status;
        self
    }

    pub fn with_retry_after(mut self, secs: u64) -> Self {
        self.retry_after_secs = Some(secs.max(1));
        self
    }

    pub fn code(&self) -> ReasonCode {
        self.envelope.code()
    }
}

impl IntoResponse for Reply {
    fn into_response(self) -> Response {
        let body = serde_json::to_vec(&self.envelope).expect("envelopes serialize");
        let mut resp = (self.status, body).into_response();
        resp.headers_mut().insert(CONTENT_TYPE, HeaderValue::from_static("application/json"));
        if let Some(secs) = self.retry_after_secs {
            resp.headers_mut().insert(RETRY_AFTER, HeaderValue::from(secs));
        }
        resp
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn status_follows_code() {
        assert_eq!(Reply::error(ReasonCode::TokenInvalid, "x").status, StatusCode::UNAUTHORIZED);
        assert_eq!(Reply::error(ReasonCode::RateLimited, "x").status, StatusCode::TOO_MANY_REQUESTS);
        assert_eq!(Reply::ok(json!({})).status, StatusCode::OK);
        assert_eq!(Reply::malformed("x").status, StatusCode::BAD_REQUEST);
        assert_eq!(Reply::malformed("x").code(), ReasonCode::ActionInvalid);
    }

    #[test]
    fn retry_after_header_is_at_least_one() {
        let resp = Reply::error(ReasonCode::RateLimited, "x").with_retry_after(0).into_response();
        assert_eq!(resp.headers()[RETRY_AFTER], "1");
        assert_eq!(resp.headers()[CONTENT_TYPE], "application/json");
    }
}
