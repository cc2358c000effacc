//! Append-only structured audit log.
//!
//! Events follow the minimum field set (id, created_at, action, status, code,
//! app/key/actor/operator ids, request/draft/execution correlation, ip,
//! user_agent, details). There is no update or delete path.

use std::collections::HashMap;
use std::io::{self, Write};
use std::net::IpAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use chrono::{DateTime, Utc};
use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::clock::Clock;
use crate::envelope::{bound_details, ReasonCode};
use crate::ids::new_id;
use crate::pipeline::{Draft, Execution};

/// Action names of the event taxonomy.
pub mod actions {
    pub const MANIFEST_READ: &str = "agent.manifest.read";
    pub const LEDGER_LIST: &str = "agent.ledger.list";
    pub const TRANSACTION_LIST: &str = "agent.transaction.list";
    pub const ACTION_PREFLIGHT: &str = "agent.action.preflight";
    pub const ACTION_REQUEST: &str = "agent.action.request";
    pub const DRAFT_CREATED: &str = "agent.action.draft.created";
    pub const AUTO_EXECUTE_REQUESTED: &str = "agent.action.auto_execute.requested";
    pub const ACTION_EXECUTE: &str = "agent.action.execute";
    pub const IDEMPOTENCY_REPLAY: &str = "agent.action.idempotency_replay";
    pub const DRAFT_READ: &str = "agent.draft.read";
    pub const DRAFT_APPROVE: &str = "agent.draft.approve";
    pub const DRAFT_REJECT: &str = "agent.draft.reject";
    pub const AUTHENTICATE: &str = "agent.auth";
    pub const APP_CREATE: &str = "agent_app.create";
    pub const APP_REVOKE: &str = "agent_app.revoke";
    pub const APP_DISABLE: &str = "agent_app.disable";
    pub const APP_ENABLE: &str = "agent_app.enable";
    pub const APP_POLICY_UPDATE: &str = "agent_app.policy.update";
    pub const APP_AUTO_EXECUTE_UPDATE: &str = "agent_app.auto_execute.update";
    pub const KEY_CREATE: &str = "agent_key.create";
    pub const KEY_REVOKE: &str = "agent_key.revoke";
}

pub fn is_registered_namespace(action: &str) -> bool {
    ["agent.", "agent_app.", "agent_key."]
        .iter()
        .any(|ns| action.strip_prefix(ns).is_some_and(|rest| !rest.is_empty()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AuditStatus {
    Success,
    Denied,
    Failed,
}

/// One persisted event. Field order is the export order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEvent {
    pub id: String,
    pub created_at: DateTime<Utc>,
    pub action: String,
    pub status: AuditStatus,
    pub code: Option<ReasonCode>,
    pub app_id: Option<String>,
    pub key_id: Option<String>,
    pub actor_user_id: Option<String>,
    pub performed_by_user_id: Option<String>,
    pub request_id: Option<String>,
    pub draft_id: Option<String>,
    pub execution_id: Option<String>,
    pub ip: String,
    pub user_agent: Option<String>,
    pub details: Value,
    #[serde(skip)]
    seq: u64,
}

/// Request metadata carried into every event.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RequestMeta {
    pub ip: IpAddr,
    pub user_agent: Option<String>,
    pub request_id: Option<String>,
}

impl RequestMeta {
    pub fn new(ip: IpAddr) -> Self {
        RequestMeta { ip, user_agent: None, request_id: None }
    }

    pub fn local() -> Self {
        Self::new(IpAddr::from([127, 0, 0, 1]))
    }
}

/// Event under construction; `emit` assigns id and timestamp.
#[derive(Debug, Clone)]
pub struct AuditEntry {
    action: String,
    status: AuditStatus,
    code: Option<ReasonCode>,
    app_id: Option<String>,
    key_id: Option<String>,
    actor_user_id: Option<String>,
    performed_by_user_id: Option<String>,
    request_id: Option<String>,
    draft_id: Option<String>,
    execution_id: Option<String>,
    ip: String,
    user_agent: Option<String>,
    details: Value,
}

impl AuditEntry {
    pub fn new(action: &str, status: AuditStatus, meta: &RequestMeta) -> Self {
        AuditEntry {
            action: action.to_owned(),
            status,
            code: None,
            app_id: None,
            key_id: None,
            actor_user_id: None,
            performed_by_user_id: None,
            request_id: meta.request_id.clone(),
            draft_id: None,
            execution_id: None,
            ip: meta.ip.to_string(),
            user_agent: meta.user_agent.as_ref().map(|ua| ua.chars().take(256).collect()),
            details: json!({}),
        }
    }

    pub fn code(mut self, code: ReasonCode) -> Self {
        self.code = Some(code);
        self
    }

    pub fn maybe_code(mut self, code: Option<ReasonCode>) -> Self {
        self.code = code;
        self
    }

    pub fn app(mut self, app_id: &str) -> Self {
        self.app_id = Some(app_id.to_owned());
        self
    }

    pub fn key(mut self, key_id: &str) -> Self {
        self.key_id = Some(key_id.to_owned());
        self
    }

    pub fn actor(mut self, actor_user_id: &str) -> Self {
        self.actor_user_id = Some(actor_user_id.to_owned());
        self
    }

    pub fn performed_by(mut self, operator: &str) -> Self {
        self.performed_by_user_id = Some(operator.to_owned());
        self
    }

    pub fn draft(mut self, draft_id: &str) -> Self {
        self.draft_id = Some(draft_id.to_owned());
        self
    }

    pub fn execution(mut self, execution_id: &str) -> Self {
        self.execution_id = Some(execution_id.to_owned());
        self
    }

    pub fn details(mut self, details: Value) -> Self {
        self.details = details;
        self
    }
}

#[derive(Debug, Clone, Default)]
pub struct AuditFilter {
    pub action: Option<String>,
    pub app_id: Option<String>,
    pub status: Option<AuditStatus>,
    pub code: Option<ReasonCode>,
    pub since: Option<DateTime<Utc>>,
    pub limit: Option<usize>,
}

impl AuditFilter {
    fn matches(&self, e: &AuditEvent) -> bool {
        self.action.as_ref().is_none_or(|a| &e.action == a)
            && self.app_id.as_ref().is_none_or(|a| e.app_id.as_ref() == Some(a))
            && self.status.is_none_or(|s| e.status == s)
            && self.code.is_none_or(|c| e.code == Some(c))
            && self.since.is_none_or(|t| e.created_at >= t)
    }
}

pub struct AuditLog {
    events: RwLock<Vec<AuditEvent>>,
    clock: Arc<dyn Clock>,
    scrubbed: AtomicU64,
}

impl std::fmt::Debug for AuditLog {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AuditLog")
            .field("events", &self.events.read().len())
            .field("scrubbed", &self.scrubbed.load(Ordering::Relaxed))
            .finish()
    }
}

impl AuditLog {
    pub fn new(clock: Arc<dyn Clock>) -> Self {
        AuditLog { events: RwLock::new(Vec::new()), clock, scrubbed: AtomicU64::new(0) }
    }

    pub fn emit(&self, entry: AuditEntry) -> AuditEvent {
        debug_assert!(is_registered_namespace(&entry.action), "unregistered audit action {}", entry.action);
        let details = if contains_secret(&entry.details) {
            self.scrubbed.fetch_add(1, Ordering::Relaxed);
            json!({ "redacted": true })
        } else {
            bound_details(entry.details)
        };
        let mut events = self.events.write();
        let event = AuditEvent {
            id: new_id("aud"),
            created_at: self.clock.now(),
            action: entry.action,
            status: entry.status,
            code: entry.code,
            app_id: entry.app_id,
            key_id: entry.key_id,
            actor_user_id: entry.actor_user_id,
            performed_by_user_id: entry.performed_by_user_id,
            request_id: entry.request_id,
            draft_id: entry.draft_id,
            execution_id: entry.execution_id,
            ip: entry.ip,
            user_agent: entry.user_agent,
            details,
            seq: events.len() as u64,
        };
        events.push(event.clone());
        event
    }

    /// Newest first; filters are conjunctive.
    pub fn list(&self, filter: &AuditFilter) -> Vec<AuditEvent> {
        let events = self.events.read();
        let matching = events.iter().rev().filter(|e| filter.matches(e)).cloned();
        match filter.limit {
            Some(n) => matching.take(n).collect(),
            None => matching.collect(),
        }
    }

    pub fn snapshot(&self) -> Vec<AuditEvent> {
        self.events.read().clone()
    }

    pub fn len(&self) -> usize {
        self.events.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// How many events had their details scrubbed for secret material.
    pub fn scrubbed_count(&self) -> u64 {
        self.scrubbed.load(Ordering::Relaxed)
    }

    /// JSON Lines, oldest first, one event per line.
    pub fn export_jsonl<W: Write>(&self, mut out: W) -> io::Result<()> {
        for event in self.events.read().iter() {
            serde_json::to_writer(&mut out, event)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn export_jsonl_string(&self) -> String {
        let mut buf = Vec::new();
        self.export_jsonl(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("serde_json emits UTF-8")
    }
}

impl AuditEvent {
    pub fn sequence(&self) -> u64 {
        self.seq
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct LinkViolation {
    pub execution_id: String,
    pub draft_id: String,
    pub matching_drafts: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LinkReport {
    pub ok: bool,
    pub violations: Vec<LinkViolation>,
}

/// Every execution must reference exactly one recorded draft.
pub fn verify_draft_execution_links(drafts: &[Draft], executions: &[Execution]) -> LinkReport {
    let mut by_id: HashMap<&str, usize> = HashMap::new();
    for d in drafts {
        *by_id.entry(d.id.as_str()).or_default() += 1;
    }
    let violations: Vec<LinkViolation> = executions
        .iter()
        .filter_map(|e| {
            let n = by_id.get(e.draft_id.as_str()).copied().unwrap_or(0);
            (n != 1).then(|| LinkViolation {
                execution_id: e.id.clone(),
                draft_id: e.draft_id.clone(),
                matching_drafts: n,
            })
        })
        .collect();
    LinkReport { ok: violations.is_empty(), violations }
}

/// Token-shaped material: the agent key prefix, or a long run of
/// high-entropy token characters.
/// A display prefix (`opk_` + 4) is not a secret; a longer run is.
const MIN_TOKEN_BODY: usize = 16;

pub fn looks_like_secret(s: &str) -> bool {
    let prefix = crate::credentials::TOKEN_PREFIX;
    let token_shaped = s.match_indices(prefix).any(|(i, _)| {
        s[i + prefix.len()..].bytes().take_while(u8::is_ascii_alphanumeric).count() >= MIN_TOKEN_BODY
    });
    if token_shaped {
        return true;
    }
    s.split(|c: char| !(c.is_ascii_alphanumeric() || c == '_' || c == '-'))
        .any(|run| run.len() >= 32 && shannon_entropy(run) > 4.5)
}

fn shannon_entropy(s: &str) -> f64 {
    let mut counts = [0usize; 256];
    for b in s.bytes() {
        counts[b as usize] += 1;
    }
    let n = s.len() as f64;
    counts
        .iter()
        .filter(|c| **c > 0)
        .map(|c| {
            let p = *c as f64 / n;
            -p * p.log2()
        })
        .sum()
}

fn contains_secret(v: &Value) -> bool {
    match v {
        Value::String(s) => looks_like_secret(s),
        Value::Array(items) => items.iter().any(contains_secret),
        Value::Object(map) => map.iter().any(|(k, v)| looks_like_secret(k) || contains_secret(v)),
        _ => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::ManualClock;
    use chrono::TimeZone;

    fn log() -> (AuditLog, ManualClock) {
        let clock = ManualClock::new(Utc.with_ymd_and_hms(2026, 2, 15, 0, 0, 0).unwrap());
        (AuditLog::new(Arc::new(clock.clone())), clock)
    }

    #[test]
    fn draft_created_event_shape() {
        let (log, _) = log();
        let meta = RequestMeta {
            ip: "203.0.113.4".parse().unwrap(),
            user_agent: None,
            request_id: Some("req_1".into()),
        };
        let e = log.emit(
            AuditEntry::new(actions::DRAFT_CREATED, AuditStatus::Denied, &meta)
                .code(ReasonCode::AutoExecuteDisabled)
                .app("app_1")
                .key("key_1")
                .draft("drf_1")
                .details(json!({"actionType": "transaction.hard_delete", "risk": "high"})),
        );
        let v = serde_json::to_value(&e).unwrap();
        assert_eq!(v["action"], "agent.action.draft.created");
        assert_eq!(v["status"], "denied");
        assert_eq!(v["code"], "agent.auto_execute_disabled");
        assert_eq!(v["draft_id"], "drf_1");
        assert_eq!(v["ip"], "203.0.113.4");
        assert_eq!(v["created_at"], "2026-02-15T00:00:00Z");
        assert!(v["id"].as_str().unwrap().starts_with("aud_"));
        let keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
        for field in [
            "id",
            "created_at",
            "action",
            "status",
            "code",
            "app_id",
            "key_id",
            "actor_user_id",
            "performed_by_user_id",
            "request_id",
            "draft_id",
            "execution_id",
            "ip",
            "user_agent",
            "details",
        ] {
            assert!(keys.contains(&field), "missing {field}");
        }
    }

    #[test]
    fn replay_event_carries_execution() {
        let (log, _) = log();
        let e = log.emit(
            AuditEntry::new(actions::IDEMPOTENCY_REPLAY, AuditStatus::Success, &RequestMeta::local())
                .execution("exe_1")
                .code(ReasonCode::IdempotencyReplay),
        );
        assert_eq!(e.execution_id.as_deref(), Some("exe_1"));
    }

    #[test]
    fn list_filters_and_orders_newest_first() {
        let (log, clock) = log();
        for i in 0..50 {
            clock.advance(chrono::Duration::seconds(1));
            let app = if i % 2 == 0 { "app_a" } else { "app_b" };
            log.emit(
                AuditEntry::new(actions::LEDGER_LIST, AuditStatus::Success, &RequestMeta::local())
                    .app(app)
                    .details(json!({"resultCount": i})),
            );
        }
        let top = log.list(&AuditFilter { limit: Some(10), ..Default::default() });
        assert_eq!(top.len(), 10);
        let counts: Vec<i64> = top.iter().map(|e| e.details["resultCount"].as_i64().unwrap()).collect();
        assert_eq!(counts, (40..50).rev().collect::<Vec<_>>());

        let only_a = log.list(&AuditFilter { app_id: Some("app_a".into()), ..Default::default() });
        assert_eq!(only_a.len(), 25);
        assert!(only_a.iter().all(|e| e.app_id.as_deref() == Some("app_a")));
    }

    #[test]
    fn denied_filter_finds_scope_denial() {
        let (log, _) = log();
        log.emit(AuditEntry::new(actions::LEDGER_LIST, AuditStatus::Success, &RequestMeta::local()));
        log.emit(
            AuditEntry::new(actions::LEDGER_LIST, AuditStatus::Denied, &RequestMeta::local())
                .code(ReasonCode::ScopeDenied),
        );
        let denied = log.list(&AuditFilter { status: Some(AuditStatus::Denied), ..Default::default() });
        assert_eq!(denied.len(), 1);
        assert_eq!(denied[0].code, Some(ReasonCode::ScopeDenied));
    }

    #[test]
    fn secrets_are_scrubbed_not_dropped() {
        let (log, _) = log();
        let e = log.emit(
            AuditEntry::new(actions::ACTION_REQUEST, AuditStatus::Failed, &RequestMeta::local())
                .details(json!({"note": "Bearer opk_abcdefghijklmnop"})),
        );
        assert_eq!(e.details, json!({"redacted": true}));
        assert_eq!(log.scrubbed_count(), 1);
        assert_eq!(log.len(), 1);
    }

    #[test]
    fn entropy_heuristic_spares_digests_and_ids() {
        assert!(!looks_like_secret(&"ab12".repeat(16)));
        assert!(!looks_like_secret(&crate::ids::new_id("drf")));
        assert!(!looks_like_secret(crate::canonical::Digest::of(b"x").as_str()));
        assert!(looks_like_secret("Zq8Kp2Lm9Xr4Tv7Wb1Nc6Yd3Hf5Gj0Se2Au8Io4Ep"));
    }

    #[test]
    fn link_check() {
        use crate::pipeline::test_support::{draft_with_id, execution_for};
        assert!(verify_draft_execution_links(&[], &[]).ok);
        let drafts = vec![draft_with_id("drf_1"), draft_with_id("drf_2")];
        let execs = vec![execution_for("exe_1", "drf_1")];
        assert_eq!(verify_draft_execution_links(&drafts, &execs), LinkReport { ok: true, violations: vec![] });
        let dangling = vec![execution_for("exe_1", "drf_1"), execution_for("exe_x", "drf_missing")];
        let report = verify_draft_execution_links(&drafts, &dangling);
        assert!(!report.ok);
        assert_eq!(report.violations.len(), 1);
        assert_eq!(report.violations[0].execution_id, "exe_x");
        let dup = vec![draft_with_id("drf_1"), draft_with_id("drf_1")];
        assert!(!verify_draft_execution_links(&dup, &execs[..1]).ok);
    }

    #[test]
    fn jsonl_export_one_line_per_event() {
        let (log, _) = log();
        for _ in 0..3 {
            log.emit(AuditEntry::new(actions::MANIFEST_READ, AuditStatus::Success, &RequestMeta::local()));
        }
        let text = log.export_jsonl_string();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        for line in lines {
            let v: Value = serde_json::from_str(line).unwrap();
            assert!(v["id"].as_str().unwrap().starts_with("aud_"));
            assert!(line.starts_with("{\"id\":"));
        }
    }
}
