//! HTTP surface of the OpenPort reference runtime.
//!
//! Two planes share one [`Runtime`]: the agent plane under
//! `/api/agent/v1/*` (bearer tokens issued to integration apps) and the
//! admin plane under `/api/agent-admin/v1/*` (a static operator token).
//! Every response body, including router-level failures, is an envelope.

mod admin;
mod agent;
mod config;
mod extract;
mod reply;
mod runtime;

use std::sync::Arc;

use axum::extract::DefaultBodyLimit;
use axum::Router;

use openport_core::envelope::ReasonCode;

pub use config::GatewayConfig;
pub use reply::Reply;
pub use runtime::Runtime;

pub const AGENT_PREFIX: &str = "/api/agent/v1";
pub const ADMIN_PREFIX: &str = "/api/agent-admin/v1";
pub const OPERATOR_HEADER: &str = "x-operator-id";

/// Builds the complete router for both planes.
pub fn router(rt: Arc<Runtime>) -> Router {
    let limit = rt.config.max_body_bytes;
    Router::new()
        .nest(AGENT_PREFIX, agent::routes())
        .nest(ADMIN_PREFIX, admin::routes())
        .fallback(not_found)
        .method_not_allowed_fallback(method_not_allowed)
        .layer(DefaultBodyLimit::max(limit))
        .with_state(rt)
}

async fn not_found() -> Reply {
    Reply::error(ReasonCode::ActionUnknown, "no such route")
}

async fn method_not_allowed() -> Reply {
    Reply::error(ReasonCode::ActionUnknown, "method not allowed").with_status(axum::http::StatusCode::METHOD_NOT_ALLOWED)
}
