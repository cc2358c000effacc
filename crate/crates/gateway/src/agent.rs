//! Agent plane. Each handler runs: bearer, Authn, Net, Rate, body parse,
//! tool resolution and Scope, Policy, Boundary, schema, handler, audit.

use std::collections::BTreeSet;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::rejection::{BytesRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::routing::{get, post};
use axum::Router;
use chrono::NaiveDate;
use serde_json::{json, Map, Value};

use openport_core::adapter::{LEDGER_LIST, TRANSACTION_LIST};
use openport_core::audit::{actions, AuditEntry, AuditStatus};
use openport_core::credentials::{AuthContext, AuthFailure};
use openport_core::envelope::ReasonCode;
use openport_core::pipeline::{agent_entry, ActionRequest, PipelineError, PreflightRequest};
use openport_core::policy::{authorize, gate, present_with, Decision, WindowRequest};
use openport_core::registry::{ExecContext, ToolDescriptor};

use crate::extract::{parse_json, read_body, Client};
use crate::reply::Reply;
use crate::runtime::Runtime;

const IDEMPOTENCY_HEADER: &str = "idempotency-key";

type Rt = State<Arc<Runtime>>;
type QueryPairs = Result<Query<Vec<(String, String)>>, QueryRejection>;

pub fn routes() -> Router<Arc<Runtime>> {
    Router::new()
        .route("/manifest", get(manifest))
        .route("/ledgers", get(ledgers))
        .route("/transactions", get(transactions))
        .route("/preflight", post(preflight))
        .route("/actions", post(actions))
        .route("/drafts/{id}", get(draft))
}

fn settle(r: Result<Reply, Reply>) -> Reply {
    r.unwrap_or_else(|e| e)
}

/// One request on behalf of an agent, named by its audit action.
struct Call<'a> {
    rt: &'a Runtime,
    client: &'a Client,
    action: &'static str,
}

impl Call<'_> {
    /// Authn, Net and Rate.
    fn admit(&self) -> Result<AuthContext, Reply> {
        let now = self.rt.now();
        let auth = match &self.client.bearer {
            Some(token) => self.rt.credentials.authenticate(token, now),
            None => Err(AuthFailure::Invalid),
        };
        let gated = gate(auth.as_ref().map_err(|f| *f), self.client.meta.ip, now, &self.rt.admission).map(|_| ());
        match (gated, auth) {
            (Ok(()), Ok(ctx)) => Ok(ctx),
            (Err(decision), auth) => Err(self.deny(auth.as_ref().ok(), decision)),
            (Ok(()), Err(_)) => unreachable!("gate admits only authenticated callers"),
        }
    }

    /// Scope, Policy and Boundary. Returns the resolved query window.
    fn authorize(
        &self,
        auth: &AuthContext,
        required: Result<&BTreeSet<String>, ReasonCode>,
        window: Option<&WindowRequest>,
        resources: &[String],
    ) -> Result<Option<(NaiveDate, NaiveDate)>, Reply> {
        let decision = authorize(auth, self.rt.now(), required, window, resources, self.rt.resolver());
        if decision.allowed {
            Ok(decision.window)
        } else {
            Err(self.deny(Some(auth), decision))
        }
    }

    fn deny(&self, auth: Option<&AuthContext>, decision: Decision) -> Reply {
        let code = decision.code.unwrap_or(ReasonCode::PolicyDenied);
        let meta = &self.client.meta;
        let entry = match auth {
            Some(ctx) => agent_entry(self.action, AuditStatus::Denied, ctx, meta)
                .details(json!({"predicate": decision.failed_predicate_index})),
            None => AuditEntry::new(actions::AUTHENTICATE, AuditStatus::Denied, meta)
                .details(json!({"endpoint": self.action, "predicate": decision.failed_predicate_index})),
        };
        self.rt.audit.emit(entry.code(code));
        let message = match code {
            ReasonCode::RateLimited => "Rate limit exceeded".to_owned(),
            _ => decision.message.unwrap_or_else(|| "request denied".into()),
        };
        let reply = Reply::error(code, message);
        match decision.retry_after_secs {
            Some(secs) => reply.with_retry_after(secs),
            None => reply,
        }
    }

    /// Records a rejection that happened after admission.
    fn reject(&self, auth: &AuthContext, reply: Reply) -> Reply {
        let status = if reply.status.is_server_error() { AuditStatus::Failed } else { AuditStatus::Denied };
        self.rt.audit.emit(agent_entry(self.action, status, auth, &self.client.meta).code(reply.code()));
        reply
    }

    fn pipeline_error(&self, auth: &AuthContext, e: PipelineError) -> Reply {
        let reply = Reply::error_with(e.code, e.message.clone(), e.details());
        if e.audited {
            reply
        } else {
            self.reject(auth, reply)
        }
    }

    fn succeed(&self, auth: &AuthContext, details: Value) {
        self.rt.audit.emit(agent_entry(self.action, AuditStatus::Success, auth, &self.client.meta).details(details));
    }

    fn body<T: serde::de::DeserializeOwned>(&self, auth: &AuthContext, body: Result<Bytes, BytesRejection>) -> Result<T, Reply> {
        read_body(body).and_then(|b| parse_json(&b)).map_err(|r| self.reject(auth, r))
    }
}

async fn manifest(State(rt): Rt, client: Client) -> Reply {
    let call = Call { rt: &rt, client: &client, action: actions::MANIFEST_READ };
    settle((|| {
        let auth = call.admit()?;
        call.authorize(&auth, Ok(&BTreeSet::new()), None, &[])?;
        let manifest = rt.registry.build_manifest(&auth.app, rt.resolver());
        let count = manifest["tools"].as_array().map_or(0, Vec::len);
        call.succeed(&auth, json!({"toolCount": count}));
        Ok(Reply::ok(manifest))
    })())
}

struct ReadOutcome {
    auth: AuthContext,
    tool: Arc<ToolDescriptor>,
    output: Value,
    window: Option<(NaiveDate, NaiveDate)>,
}

/// Shared path of the read-only tool endpoints. Query parameters form the
/// tool payload; the resolved window replaces the raw bounds.
fn run_read(call: &Call<'_>, tool_name: &str, query: QueryPairs) -> Result<ReadOutcome, Reply> {
    let auth = call.admit()?;
    let pairs = query.map(|Query(q)| q).map_err(|_| call.reject(&auth, Reply::malformed("malformed query string")))?;
    let mut payload = Map::new();
    for (k, v) in pairs {
        if payload.insert(k.clone(), Value::String(v)).is_some() {
            return Err(call.reject(&auth, Reply::error(ReasonCode::ActionInvalid, format!("duplicate query parameter `{k}`"))));
        }
    }
    let payload = Value::Object(payload);
    let tool = call.rt.registry.resolve(tool_name, &auth.app, call.rt.resolver());
    let window_req = tool.as_ref().ok().and_then(|t| t.window_fields.as_ref()).map(|(s, e)| WindowRequest {
        start: payload.get(s).and_then(Value::as_str).map(str::to_owned),
        end: payload.get(e).and_then(Value::as_str).map(str::to_owned),
    });
    let resources = tool.as_ref().map(|t| t.resources_in(&payload)).unwrap_or_default();
    let window = call.authorize(&auth, tool.as_ref().map(|t| &t.required_scopes).map_err(|c| *c), window_req.as_ref(), &resources)?;
    let tool = tool.expect("authorized tools resolve");
    tool.validate_input(&payload).map_err(|m| call.reject(&auth, Reply::error(ReasonCode::ActionInvalid, m)))?;

    let mut exec_payload = payload;
    if let (Some((start_field, end_field)), Some((start, end))) = (&tool.window_fields, window) {
        exec_payload[start_field.as_str()] = json!(start.to_string());
        exec_payload[end_field.as_str()] = json!(end.to_string());
    }
    let ctx = ExecContext { actor_user_id: auth.actor_user_id.clone(), tenant_id: auth.app.tenant_id.clone() };
    let output = (tool.execute_fn)(&ctx, &exec_payload)
        .map_err(|e| call.reject(&auth, Reply::error(ReasonCode::ActionInvalid, e.0)))?;
    Ok(ReadOutcome { auth, tool, output, window })
}

async fn ledgers(State(rt): Rt, client: Client, query: QueryPairs) -> Reply {
    let call = Call { rt: &rt, client: &client, action: actions::LEDGER_LIST };
    settle((|| {
        let ReadOutcome { auth, tool, mut output, .. } = run_read(&call, LEDGER_LIST, query)?;
        if let (Some(allowed), Some(items)) = (&auth.app.policy.allowed_resource_ids, output.as_array_mut()) {
            items.retain(|l| l["id"].as_str().is_some_and(|id| allowed.contains(id)));
        }
        let shown = present_with(&output, &auth.app.policy, &tool.sensitive_paths);
        let count = shown.value.as_array().map_or(0, Vec::len);
        call.succeed(&auth, json!({"resultCount": count, "redactedPaths": shown.redacted_paths}));
        Ok(Reply::ok(json!({"ledgers": shown.value, "redactedPaths": shown.redacted_paths})))
    })())
}

async fn transactions(State(rt): Rt, client: Client, query: QueryPairs) -> Reply {
    let call = Call { rt: &rt, client: &client, action: actions::TRANSACTION_LIST };
    settle((|| {
        let ReadOutcome { auth, tool, output, window } = run_read(&call, TRANSACTION_LIST, query)?;
        let shown = present_with(&output, &auth.app.policy, &tool.sensitive_paths);
        let count = shown.value.as_array().map_or(0, Vec::len);
        let window = window.map(|(s, e)| json!({"start": s.to_string(), "end": e.to_string()}));
        call.succeed(&auth, json!({"resultCount": count, "window": window, "redactedPaths": shown.redacted_paths}));
        Ok(Reply::ok(json!({"transactions": shown.value, "window": window, "redactedPaths": shown.redacted_paths})))
    })())
}

async fn preflight(State(rt): Rt, client: Client, body: Result<Bytes, BytesRejection>) -> Reply {
    let call = Call { rt: &rt, client: &client, action: actions::ACTION_PREFLIGHT };
    settle((|| {
        let auth = call.admit()?;
        let req: PreflightRequest = call.body(&auth, body)?;
        let tool = rt.registry.resolve(&req.action, &auth.app, rt.resolver());
        let resources = tool.as_ref().map(|t| t.resources_in(&req.payload)).unwrap_or_default();
        call.authorize(&auth, tool.as_ref().map(|t| &t.required_scopes).map_err(|c| *c), None, &resources)?;
        let tool = tool.expect("authorized tools resolve");
        let result = rt.pipeline.preflight(&auth, &client.meta, &tool, req.payload).map_err(|e| call.pipeline_error(&auth, e))?;
        Ok(Reply::ok(serde_json::to_value(result).expect("preflight results serialize")))
    })())
}

async fn actions(State(rt): Rt, client: Client, body: Result<Bytes, BytesRejection>) -> Reply {
    let call = Call { rt: &rt, client: &client, action: actions::ACTION_REQUEST };
    settle((|| {
        let auth = call.admit()?;
        let mut req: ActionRequest = call.body(&auth, body)?;
        if let Some(header_key) = client.header(IDEMPOTENCY_HEADER) {
            match &req.idempotency_key {
                None => req.idempotency_key = Some(header_key),
                Some(k) if *k == header_key => {}
                Some(_) => {
                    let reply = Reply::error(ReasonCode::ActionInvalid, "idempotency key in header and body differ");
                    return Err(call.reject(&auth, reply));
                }
            }
        }
        let tool = rt.registry.resolve(&req.action, &auth.app, rt.resolver());
        let resources = match &tool {
            Ok(t) => {
                let payload = req
                    .payload
                    .clone()
                    .or_else(|| req.preflight_id.as_deref().and_then(|id| rt.pipeline.peek_preflight_payload(&auth, id)));
                payload.map(|p| t.resources_in(&p)).unwrap_or_default()
            }
            Err(_) => Vec::new(),
        };
        call.authorize(&auth, tool.as_ref().map(|t| &t.required_scopes).map_err(|c| *c), None, &resources)?;
        let tool = tool.expect("authorized tools resolve");
        let outcome = rt.pipeline.submit(&auth, &client.meta, &tool, req).map_err(|e| call.pipeline_error(&auth, e))?;
        Ok(Reply::success(outcome.code(), outcome.to_json()))
    })())
}

async fn draft(State(rt): Rt, client: Client, Path(id): Path<String>) -> Reply {
    let call = Call { rt: &rt, client: &client, action: actions::DRAFT_READ };
    settle((|| {
        let auth = call.admit()?;
        call.authorize(&auth, Ok(&BTreeSet::new()), None, &[])?;
        let (draft, execution) = rt.pipeline.get_draft(&id, &auth.app.id).map_err(|e| call.pipeline_error(&auth, e))?;
        rt.audit.emit(agent_entry(actions::DRAFT_READ, AuditStatus::Success, &auth, &client.meta).draft(&draft.id));
        Ok(Reply::ok(json!({"draft": draft, "execution": execution})))
    })())
}
