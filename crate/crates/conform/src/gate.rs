//! Release gate: workspace tests, the core profile, the fuzz budget and the
//! reason-code regressions, folded into one verdict.

use std::path::PathBuf;
use std::process::Command;

use axum::http::Method;
use chrono::{Duration, Utc};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::fuzz::{run_fuzz, FuzzReport, DEFAULT_SEED, MIN_CORPUS};
use crate::profile::ConformanceProfile;
use crate::runner::{observe, run_profile, ConformanceReport};
use crate::transport::{HttpRequest, HttpResponse, LocalReference, Target};

const ADMIN: &str = "/api/agent-admin/v1";
const AGENT: &str = "/api/agent/v1";
const TENANT: &str = "org1";
const OUTSIDE_ALLOWLIST: &str = "10.255.0.0/16";

#[derive(Debug, Clone)]
pub struct GateOptions {
    /// Runs `cargo test --workspace` in `workspace` first.
    pub cargo_tests: bool,
    pub workspace: PathBuf,
    pub fuzz_count: usize,
    pub seed: u64,
}

impl Default for GateOptions {
    fn default() -> Self {
        GateOptions { cargo_tests: false, workspace: PathBuf::from("."), fuzz_count: MIN_CORPUS, seed: DEFAULT_SEED }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Regression {
    pub code: String,
    pub scenario: String,
    pub observed: String,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct GateReport {
    pub steps: Vec<Step>,
    pub profile: ConformanceReport,
    pub fuzz: FuzzReport,
    pub regressions: Vec<Regression>,
    pub pass: bool,
}

impl GateReport {
    pub fn exit_code(&self) -> i32 {
        if self.pass { 0 } else { 1 }
    }

    pub fn render(&self) -> String {
        let mut out = String::from("gate\n");
        for s in &self.steps {
            out.push_str(&format!("  [{}] {}: {}\n", mark(s.pass), s.name, s.detail));
        }
        for r in &self.regressions {
            out.push_str(&format!("  [{}] regression {} ({}): {}\n", mark(r.pass), r.code, r.scenario, r.observed));
        }
        out.push_str(&format!("{}\n", if self.pass { "PASS" } else { "FAIL" }));
        out
    }
}

fn mark(pass: bool) -> &'static str {
    if pass { "PASS" } else { "FAIL" }
}

/// Credentials for driving a target through both planes.
pub struct GateTarget<'a> {
    pub target: &'a Target,
    pub agent_token: &'a str,
    pub admin_token: &'a str,
}

/// Gate against a fresh in-process reference runtime.
pub async fn gate(opts: &GateOptions) -> GateReport {
    let local = LocalReference::new();
    let t = GateTarget { target: &local.target, agent_token: &local.agent_token, admin_token: &local.admin_token };
    gate_target(&t, opts).await
}

pub async fn gate_target(t: &GateTarget<'_>, opts: &GateOptions) -> GateReport {
    let mut steps = Vec::new();
    if opts.cargo_tests {
        steps.push(cargo_tests(&opts.workspace));
    }
    let core = ConformanceProfile::builtin("core-v1").expect("core profile ships valid");
    let profile = run_profile(&core, t.target, t.agent_token).await;
    let passed = profile.checks.iter().filter(|c| c.pass).count();
    steps.push(Step { name: "core-v1 profile".into(), pass: profile.pass, detail: format!("{passed}/{} checks", profile.checks.len()) });

    let fuzz = run_fuzz(t.target, Some(t.agent_token), opts.fuzz_count, opts.seed, &core.envelope).await;
    steps.push(Step {
        name: "fuzz".into(),
        pass: fuzz.pass(),
        detail: format!(
            "{} requests, seed {}, {} responses >= 500, {} envelope violations",
            fuzz.count, fuzz.seed, fuzz.count_5xx, fuzz.count_envelope_violations
        ),
    });

    let regressions = regressions(t).await;
    let pass = steps.iter().all(|s| s.pass) && regressions.iter().all(|r| r.pass);
    GateReport { steps, profile, fuzz, regressions, pass }
}

fn cargo_tests(workspace: &PathBuf) -> Step {
    let name = "cargo test --workspace".to_owned();
    match Command::new(std::env::var("CARGO").unwrap_or_else(|_| "cargo".into()))
        .args(["test", "--workspace", "--quiet"])
        .current_dir(workspace)
        .output()
    {
        Err(e) => Step { name, pass: false, detail: format!("cannot run cargo: {e}") },
        Ok(out) => {
            let stdout = String::from_utf8_lossy(&out.stdout);
            let summaries = stdout.lines().filter(|l| l.starts_with("test result:")).count();
            Step { name, pass: out.status.success(), detail: format!("exit {}; {summaries} test binaries", out.status) }
        }
    }
}

struct Driver<'a> {
    t: &'a GateTarget<'a>,
}

impl Driver<'_> {
    async fn send(&self, req: HttpRequest) -> Result<HttpResponse, String> {
        self.t.target.send(&req).await.map_err(|e| e.to_string())
    }

    async fn admin(&self, method: Method, path: &str, body: Option<Value>) -> Result<Value, String> {
        let mut req = HttpRequest::new(method, format!("{ADMIN}{path}")).bearer(Some(self.t.admin_token)).header("x-operator-id", "gate");
        if let Some(b) = body {
            req = req.json(&b);
        }
        let resp = self.send(req).await?;
        if resp.status != 200 {
            return Err(format!("admin {path}: {}", observe(&resp)));
        }
        Ok(resp.json().and_then(|v| v.get("data").cloned()).unwrap_or(Value::Null))
    }

    /// Returns (app id, key id, token).
    async fn agent(&self, policy: Value) -> Result<(String, String, String), String> {
        let scopes: Vec<&str> = openport_core::adapter::SCOPES.to_vec();
        let app = self.admin(Method::POST, "/apps", Some(json!({"name": "gate", "tenantId": TENANT, "scopes": scopes, "policy": policy}))).await?;
        let app_id = app["id"].as_str().ok_or("app id missing")?.to_owned();
        let key = self.admin(Method::POST, &format!("/apps/{app_id}/keys"), None).await?;
        let key_id = key.pointer("/key/id").and_then(Value::as_str).ok_or("key id missing")?.to_owned();
        let token = key["token"].as_str().ok_or("token missing")?.to_owned();
        Ok((app_id, key_id, token))
    }

    async fn agent_call(&self, req: HttpRequest, token: &str) -> Result<HttpResponse, String> {
        self.send(req.bearer(Some(token))).await
    }
}

fn code(resp: &HttpResponse) -> String {
    resp.json().and_then(|v| v.get("code").and_then(Value::as_str).map(str::to_owned)).unwrap_or_default()
}

fn regression(code: &str, scenario: &str, outcome: Result<(bool, String), String>) -> Regression {
    let (pass, observed) = outcome.unwrap_or_else(|e| (false, e));
    Regression { code: code.into(), scenario: scenario.into(), observed, pass }
}

async fn revoked_key(d: &Driver<'_>) -> Result<(bool, String), String> {
    let (_, key_id, token) = d.agent(json!({})).await?;
    let before = d.agent_call(HttpRequest::get(format!("{AGENT}/manifest")), &token).await?;
    d.admin(Method::POST, &format!("/keys/{key_id}/revoke"), None).await?;
    let after = d.agent_call(HttpRequest::get(format!("{AGENT}/manifest")), &token).await?;
    let pass = before.status == 200 && after.status == 401 && code(&after) == "agent.token_invalid";
    Ok((pass, format!("before {}; after {}", observe(&before), observe(&after))))
}

async fn ip_outside_allowlist(d: &Driver<'_>) -> Result<(bool, String), String> {
    let (_, _, token) = d.agent(json!({"ipAllowlist": [OUTSIDE_ALLOWLIST]})).await?;
    let resp = d.agent_call(HttpRequest::get(format!("{AGENT}/manifest")), &token).await?;
    Ok((resp.status == 403 && code(&resp) == "agent.policy_denied", observe(&resp)))
}

async fn window_too_wide(d: &Driver<'_>) -> Result<(bool, String), String> {
    let (_, _, token) = d.agent(json!({})).await?;
    let resp = d.agent_call(HttpRequest::get(format!("{AGENT}/transactions?ledgerId=L1&start=2000-01-01")), &token).await?;
    Ok((resp.status == 403 && code(&resp) == "agent.policy_denied", observe(&resp)))
}

async fn execute_without_key(d: &Driver<'_>) -> Result<(bool, String), String> {
    let (app_id, _, token) = d.agent(json!({})).await?;
    let expires = (Utc::now() + Duration::hours(1)).to_rfc3339();
    d.admin(
        Method::PATCH,
        &format!("/apps/{app_id}/auto-execute"),
        Some(json!({"enabled": true, "expiresAt": expires, "allowList": ["transaction.hard_delete"]})),
    )
    .await?;
    let intent = json!({"action": "transaction.hard_delete", "payload": {"transactionId": "T0002"}});
    let pf = d.agent_call(HttpRequest::post_json(format!("{AGENT}/preflight"), &intent), &token).await?;
    let hash = pf.json().and_then(|v| v.pointer("/data/impactHash").and_then(Value::as_str).map(str::to_owned));
    let Some(hash) = hash else {
        return Ok((false, format!("preflight {}", observe(&pf))));
    };
    let mut body = intent;
    body["execute"] = json!(true);
    body["preflightHash"] = json!(hash);
    body["justification"] = json!("gate regression");
    let resp = d.agent_call(HttpRequest::post_json(format!("{AGENT}/actions"), &body), &token).await?;
    let data = resp.json().and_then(|v| v.get("data").cloned()).unwrap_or(Value::Null);
    let denial = data.get("denialCode").and_then(Value::as_str).unwrap_or("absent").to_owned();
    let executed = data.get("execution").is_some_and(|e| !e.is_null());
    let pass = resp.status == 200 && denial == "agent.idempotency_required" && !executed;
    Ok((pass, format!("{}; denialCode {denial}; execution {executed}", observe(&resp))))
}

/// The three stable reason codes, each on a dedicated app.
pub async fn regressions(t: &GateTarget<'_>) -> Vec<Regression> {
    let d = Driver { t };
    vec![
        regression("agent.token_invalid", "revoked key on /manifest", revoked_key(&d).await),
        regression("agent.policy_denied", "client IP outside allowlist", ip_outside_allowlist(&d).await),
        regression("agent.policy_denied", "query window wider than the policy maximum", window_too_wide(&d).await),
        regression("agent.idempotency_required", "high-risk execute without idempotency key", execute_without_key(&d).await),
    ]
}
