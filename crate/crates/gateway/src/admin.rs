//! Admin plane: app and key lifecycle, policy and auto-execute updates,
//! draft review and audit queries. Authenticated by the static admin token
//! only; agent tokens are never accepted here.

use std::collections::{BTreeSet, HashMap};
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::rejection::{BytesRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::routing::{get, patch, post};
use axum::Router;
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use openport_core::audit::{actions, AuditEntry, AuditFilter, AuditStatus};
use openport_core::credentials::{AgentKey, AutoExecConfig, CredentialError, NewApp, Operator, Policy};
use openport_core::envelope::ReasonCode;
use openport_core::pipeline::{DraftStatus, PipelineError};

use crate::extract::{parse_json, parse_json_or_default, read_body, Client};
use crate::reply::Reply;
use crate::runtime::Runtime;
use crate::OPERATOR_HEADER;

const DEFAULT_OPERATOR: &str = "operator";
const DEFAULT_AUDIT_LIMIT: usize = 100;

type Rt = State<Arc<Runtime>>;
type Body = Result<Bytes, BytesRejection>;
type Params = Result<Query<HashMap<String, String>>, QueryRejection>;

pub fn routes() -> Router<Arc<Runtime>> {
    Router::new()
        .route("/apps", post(create_app).get(list_apps))
        .route("/apps/{id}/keys", post(issue_key))
        .route("/apps/{id}/revoke", post(revoke_app))
        .route("/apps/{id}/disable", post(disable_app))
        .route("/apps/{id}/enable", post(enable_app))
        .route("/apps/{id}/policy", patch(update_policy))
        .route("/apps/{id}/scopes", patch(update_scopes))
        .route("/apps/{id}/auto-execute", patch(update_auto_exec))
        .route("/keys/{id}/revoke", post(revoke_key))
        .route("/drafts", get(list_drafts))
        .route("/drafts/{id}/approve", post(approve))
        .route("/drafts/{id}/reject", post(reject))
        .route("/audit", get(audit))
}

fn settle(r: Result<Reply, Reply>) -> Reply {
    r.unwrap_or_else(|e| e)
}

fn ct_eq(a: &[u8], b: &[u8]) -> bool {
    a.len() == b.len() && a.iter().zip(b).fold(0u8, |acc, (x, y)| acc | (x ^ y)) == 0
}

/// Admin token check. The operator id comes from `X-Operator-Id`.
fn operator(rt: &Runtime, client: &Client, endpoint: &str) -> Result<Operator, Reply> {
    let presented = client.bearer.as_deref().unwrap_or_default();
    if rt.config.admin_token.is_empty() || !ct_eq(presented.as_bytes(), rt.config.admin_token.as_bytes()) {
        rt.audit.emit(
            AuditEntry::new(actions::AUTHENTICATE, AuditStatus::Denied, &client.meta)
                .code(ReasonCode::TokenInvalid)
                .details(json!({"plane": "admin", "endpoint": endpoint})),
        );
        return Err(Reply::error(ReasonCode::TokenInvalid, "admin authentication required"));
    }
    let user_id = client.header(OPERATOR_HEADER).unwrap_or_else(|| DEFAULT_OPERATOR.into());
    Ok(Operator::new(user_id, client.meta.clone()))
}

fn credential_error(e: CredentialError) -> Reply {
    Reply::error(ReasonCode::ActionInvalid, e.to_string())
}

fn pipeline_error(e: PipelineError) -> Reply {
    Reply::error_with(e.code, e.message.clone(), e.details())
}

fn body<T: serde::de::DeserializeOwned>(b: Body) -> Result<T, Reply> {
    read_body(b).and_then(|b| parse_json(&b))
}

/// Key record without its secret hash.
#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct KeyView {
    id: String,
    app_id: String,
    token_prefix: String,
    status: openport_core::credentials::KeyStatus,
    created_at: DateTime<Utc>,
    expires_at: Option<DateTime<Utc>>,
    last_used_at: Option<DateTime<Utc>>,
}

impl From<AgentKey> for KeyView {
    fn from(k: AgentKey) -> Self {
        KeyView {
            id: k.id,
            app_id: k.app_id,
            token_prefix: k.token_prefix,
            status: k.status,
            created_at: k.created_at,
            expires_at: k.expires_at,
            last_used_at: k.last_used_at,
        }
    }
}

fn to_data<T: Serialize>(v: T) -> Value {
    serde_json::to_value(v).expect("admin records serialize")
}

async fn create_app(State(rt): Rt, client: Client, b: Body) -> Reply {
    settle((|| {
        let by = operator(&rt, &client, "apps.create")?;
        let new: NewApp = body(b)?;
        let app = rt.credentials.create_app(new, &by).map_err(credential_error)?;
        Ok(Reply::ok(to_data(app)))
    })())
}

async fn list_apps(State(rt): Rt, client: Client) -> Reply {
    settle((|| {
        operator(&rt, &client, "apps.list")?;
        let apps: Vec<Value> = rt
            .credentials
            .apps()
            .into_iter()
            .map(|app| {
                let keys: Vec<KeyView> = rt.credentials.keys_for(&app.id).into_iter().map(KeyView::from).collect();
                json!({"app": app, "keys": keys})
            })
            .collect();
        Ok(Reply::ok(json!({"apps": apps})))
    })())
}

#[derive(Debug, Default, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct IssueKey {
    expires_at: Option<DateTime<Utc>>,
}

async fn issue_key(State(rt): Rt, client: Client, Path(app_id): Path<String>, b: Body) -> Reply {
    settle((|| {
        let by = operator(&rt, &client, "keys.create")?;
        let req: IssueKey = read_body(b).and_then(|b| parse_json_or_default(&b))?;
        let (key, token) = rt.credentials.issue_key(&app_id, req.expires_at, &by).map_err(credential_error)?;
        Ok(Reply::ok(json!({"key": KeyView::from(key), "token": token})))
    })())
}

async fn revoke_key(State(rt): Rt, client: Client, Path(key_id): Path<String>) -> Reply {
    settle((|| {
        let by = operator(&rt, &client, "keys.revoke")?;
        let key = rt.credentials.revoke_key(&key_id, &by).map_err(credential_error)?;
        Ok(Reply::ok(to_data(KeyView::from(key))))
    })())
}

async fn revoke_app(State(rt): Rt, client: Client, Path(app_id): Path<String>) -> Reply {
    settle((|| {
        let by = operator(&rt, &client, "apps.revoke")?;
        Ok(Reply::ok(to_data(rt.credentials.revoke_app(&app_id, &by).map_err(credential_error)?)))
    })())
}

async fn disable_app(State(rt): Rt, client: Client, Path(app_id): Path<String>) -> Reply {
    settle((|| {
        let by = operator(&rt, &client, "apps.disable")?;
        Ok(Reply::ok(to_data(rt.credentials.disable_app(&app_id, &by).map_err(credential_error)?)))
    })())
}

async fn enable_app(State(rt): Rt, client: Client, Path(app_id): Path<String>) -> Reply {
    settle((|| {
        let by = operator(&rt, &client, "apps.enable")?;
        Ok(Reply::ok(to_data(rt.credentials.enable_app(&app_id, &by).map_err(credential_error)?)))
    })())
}

async fn update_policy(State(rt): Rt, client: Client, Path(app_id): Path<String>, b: Body) -> Reply {
    settle((|| {
        let by = operator(&rt, &client, "apps.policy")?;
        let policy: Policy = body(b)?;
        Ok(Reply::ok(to_data(rt.credentials.update_policy(&app_id, policy, &by).map_err(credential_error)?)))
    })())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Scopes {
    scopes: BTreeSet<String>,
}

async fn update_scopes(State(rt): Rt, client: Client, Path(app_id): Path<String>, b: Body) -> Reply {
    settle((|| {
        let by = operator(&rt, &client, "apps.scopes")?;
        let req: Scopes = body(b)?;
        Ok(Reply::ok(to_data(rt.credentials.update_scopes(&app_id, req.scopes, &by).map_err(credential_error)?)))
    })())
}

async fn update_auto_exec(State(rt): Rt, client: Client, Path(app_id): Path<String>, b: Body) -> Reply {
    settle((|| {
        let by = operator(&rt, &client, "apps.auto_execute")?;
        let cfg: AutoExecConfig = body(b)?;
        Ok(Reply::ok(to_data(rt.credentials.update_auto_exec(&app_id, cfg, &by).map_err(credential_error)?)))
    })())
}

fn params(p: Params) -> Result<HashMap<String, String>, Reply> {
    p.map(|Query(q)| q).map_err(|_| Reply::malformed("malformed query string"))
}

async fn list_drafts(State(rt): Rt, client: Client, p: Params) -> Reply {
    settle((|| {
        operator(&rt, &client, "drafts.list")?;
        let q = params(p)?;
        let status = match q.get("status") {
            None => None,
            Some(s) => Some(
                DraftStatus::parse(s).ok_or_else(|| Reply::error(ReasonCode::ActionInvalid, format!("unknown draft status `{s}`")))?,
            ),
        };
        Ok(Reply::ok(json!({"drafts": rt.pipeline.list_drafts(status)})))
    })())
}

async fn approve(State(rt): Rt, client: Client, Path(draft_id): Path<String>) -> Reply {
    settle((|| {
        let by = operator(&rt, &client, "drafts.approve")?;
        let (draft, execution) = rt.pipeline.approve(&draft_id, &by).map_err(pipeline_error)?;
        Ok(Reply::ok(json!({"draft": draft, "execution": execution})))
    })())
}

async fn reject(State(rt): Rt, client: Client, Path(draft_id): Path<String>) -> Reply {
    settle((|| {
        let by = operator(&rt, &client, "drafts.reject")?;
        let draft = rt.pipeline.reject(&draft_id, &by).map_err(pipeline_error)?;
        Ok(Reply::ok(json!({"draft": draft})))
    })())
}

fn audit_filter(q: &HashMap<String, String>) -> Result<AuditFilter, String> {
    let mut f = AuditFilter { limit: Some(DEFAULT_AUDIT_LIMIT), ..Default::default() };
    for (k, v) in q {
        match k.as_str() {
            "action" => f.action = Some(v.clone()),
            "appId" => f.app_id = Some(v.clone()),
            "status" => f.status = Some(serde_json::from_value(json!(v)).map_err(|_| format!("unknown status `{v}`"))?),
            "code" => f.code = Some(v.parse().map_err(|_| format!("unknown code `{v}`"))?),
            "since" => f.since = Some(v.parse().map_err(|_| format!("`since` must be RFC 3339, got `{v}`"))?),
            "limit" => f.limit = Some(v.parse().map_err(|_| format!("`limit` must be a non-negative integer, got `{v}`"))?),
            other => return Err(format!("unknown filter `{other}`")),
        }
    }
    Ok(f)
}

async fn audit(State(rt): Rt, client: Client, p: Params) -> Reply {
    settle((|| {
        operator(&rt, &client, "audit.list")?;
        let filter = audit_filter(&params(p)?).map_err(|m| Reply::error(ReasonCode::ActionInvalid, m))?;
        let events = rt.audit.list(&filter);
        Ok(Reply::ok(json!({"events": events, "total": rt.audit.len()})))
    })())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_time_compare() {
        assert!(ct_eq(b"abc", b"abc"));
        assert!(!ct_eq(b"abc", b"abd"));
        assert!(!ct_eq(b"abc", b"abcd"));
    }

    #[test]
    fn audit_filter_parsing() {
        let q: HashMap<String, String> =
            [("status", "denied"), ("code", "agent.rate_limited"), ("limit", "5")].into_iter().map(|(k, v)| (k.into(), v.into())).collect();
        let f = audit_filter(&q).unwrap();
        assert_eq!(f.status, Some(AuditStatus::Denied));
        assert_eq!(f.code, Some(ReasonCode::RateLimited));
        assert_eq!(f.limit, Some(5));
        let bad: HashMap<String, String> = [("status".to_string(), "weird".to_string())].into();
        assert!(audit_filter(&bad).is_err());
        let unknown: HashMap<String, String> = [("nope".to_string(), "1".to_string())].into();
        assert!(audit_filter(&unknown).is_err());
    }
}
