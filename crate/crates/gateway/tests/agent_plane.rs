mod support;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use chrono::Duration;
use openport_core::audit::{actions, AuditStatus};
use openport_core::envelope::ReasonCode;
use serde_json::{json, Value};
use support::Harness;

const V1: &str = "/api/agent/v1";

fn p(path: &str) -> String {
    format!("{V1}{path}")
}

#[tokio::test]
async fn discovery_requires_a_token() {
    let h = Harness::new();
    let r = h.call(Method::GET, &p("/manifest"), None, None).await;
    assert_eq!(r.status, StatusCode::UNAUTHORIZED);
    assert_eq!(r.code(), "agent.token_invalid");
    assert_eq!(r.body["ok"], false);
    let r = h.get(&p("/manifest"), "opk_notarealtoken").await;
    assert_eq!(r.code(), "agent.token_invalid");
    let auth_events = h.rt.audit.snapshot().into_iter().filter(|e| e.action == actions::AUTHENTICATE).count();
    assert_eq!(auth_events, 2);
}

#[tokio::test]
async fn manifest_lists_visible_tools_only() {
    let h = Harness::new();
    let (_, full) = h.full_agent("org1").await;
    let r = h.get(&p("/manifest"), &full).await;
    assert_eq!(r.status, StatusCode::OK);
    assert_eq!(r.code(), "agent.ok");
    let m = r.data();
    assert_eq!(m["integration"]["tenantId"], "org1");
    let names: Vec<&str> = m["tools"].as_array().unwrap().iter().map(|t| t["name"].as_str().unwrap()).collect();
    assert_eq!(names.len(), 5);
    for tool in m["tools"].as_array().unwrap() {
        for field in ["name", "description", "requiredScopes", "risk", "requiresConfirmation", "http", "inputSchema", "outputSchema"] {
            assert!(tool.get(field).is_some(), "{field} missing");
        }
    }

    let (_, reader) = h.agent("org1", &["ledger.read"]).await;
    let r = h.get(&p("/manifest"), &reader).await;
    let names: Vec<&str> = r.data()["tools"].as_array().unwrap().iter().map(|t| t["name"].as_str().unwrap()).collect();
    assert_eq!(names, ["ledger.list"]);
}

#[tokio::test]
async fn unknown_routes_and_methods_get_envelopes() {
    let h = Harness::new();
    let (_, tok) = h.full_agent("org1").await;
    let r = h.get(&p("/nope"), &tok).await;
    assert_eq!(r.status, StatusCode::NOT_FOUND);
    assert_eq!(r.code(), "agent.action_unknown");
    let r = h.get("/", &tok).await;
    assert_eq!(r.status, StatusCode::NOT_FOUND);
    let r = h.call(Method::DELETE, &p("/manifest"), Some(&tok), None).await;
    assert_eq!(r.status, StatusCode::METHOD_NOT_ALLOWED);
    assert_eq!(r.body["ok"], false);
    let r = h.call(Method::GET, &p("/actions"), Some(&tok), None).await;
    assert_eq!(r.status, StatusCode::METHOD_NOT_ALLOWED);
}

#[tokio::test]
async fn ledgers_are_tenant_scoped() {
    let h = Harness::new();
    let (_, tok) = h.full_agent("org1").await;
    let r = h.get(&p("/ledgers"), &tok).await;
    let ids: Vec<&str> = r.data()["ledgers"].as_array().unwrap().iter().map(|l| l["id"].as_str().unwrap()).collect();
    assert_eq!(ids, ["L1", "L2"]);
    let r = h.get(&p("/ledgers?extra=1"), &tok).await;
    assert_eq!(r.code(), "agent.action_invalid");
}

#[tokio::test]
async fn transaction_window_is_bounded() {
    let h = Harness::new();
    let (_, tok) = h.full_agent("org1").await;
    let r = h.get(&p("/transactions?ledgerId=L1&start=2025-01-01&end=2026-03-02"), &tok).await;
    assert_eq!(r.status, StatusCode::FORBIDDEN);
    assert_eq!(r.code(), "agent.policy_denied");

    let r = h.get(&p("/transactions?ledgerId=L1&start=2025-12-02&end=2026-03-02"), &tok).await;
    assert_eq!(r.status, StatusCode::OK, "{}", r.body);
    assert_eq!(r.data()["window"], json!({"start": "2025-12-02", "end": "2026-03-02"}));

    let r = h.get(&p("/transactions?ledgerId=L1"), &tok).await;
    assert_eq!(r.data()["window"], json!({"start": "2025-12-02", "end": "2026-03-02"}));
    let txs = r.data()["transactions"].as_array().unwrap();
    assert!(!txs.is_empty());
    assert!(txs.iter().all(|t| t["ledgerId"] == "L1"));

    let r = h.get(&p("/transactions?ledgerId=L1&start=2026-03-02&end=2026-01-01"), &tok).await;
    assert_eq!(r.code(), "agent.action_invalid");
    let r = h.get(&p("/transactions?ledgerId=L1&start=yesterday"), &tok).await;
    assert_eq!(r.code(), "agent.action_invalid");
    let r = h.get(&p("/transactions"), &tok).await;
    assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY);
    let r = h.get(&p("/transactions?ledgerId=L1&ledgerId=L2"), &tok).await;
    assert_eq!(r.code(), "agent.action_invalid");
}

#[tokio::test]
async fn foreign_and_unknown_ledgers_are_forbidden() {
    let h = Harness::new();
    let (_, tok) = h.full_agent("org1").await;
    for ledger in ["L3", "L9"] {
        let r = h.get(&p(&format!("/transactions?ledgerId={ledger}")), &tok).await;
        assert_eq!(r.status, StatusCode::FORBIDDEN, "{ledger}");
        assert_eq!(r.code(), "agent.forbidden");
        assert_eq!(r.body["message"], h.get(&p("/transactions?ledgerId=L9"), &tok).await.body["message"]);
    }
}

#[tokio::test]
async fn redaction_follows_policy() {
    let h = Harness::new();
    let (app, tok) = h.full_agent("org1").await;
    let r = h.get(&p("/transactions?ledgerId=L1"), &tok).await;
    assert!(r.data()["transactions"][0]["memo"].as_str().unwrap() != "[REDACTED]");
    assert_eq!(r.data()["redactedPaths"], json!([]));

    let r = h
        .admin(Method::PATCH, &format!("/api/agent-admin/v1/apps/{app}/policy"), Some(json!({"redactSensitiveFields": true})))
        .await;
    assert_eq!(r.status, StatusCode::OK, "{}", r.body);
    let r = h.get(&p("/transactions?ledgerId=L1"), &tok).await;
    assert!(r.data()["transactions"].as_array().unwrap().iter().all(|t| t["memo"] == "[REDACTED]"));
    assert_eq!(r.data()["redactedPaths"], json!(["memo"]));
}

#[tokio::test]
async fn allowlist_filters_and_denies() {
    let h = Harness::new();
    let (app, tok) = h.full_agent("org1").await;
    h.admin(Method::PATCH, &format!("/api/agent-admin/v1/apps/{app}/policy"), Some(json!({"allowedResourceIds": ["L1"]})))
        .await;
    let r = h.get(&p("/ledgers"), &tok).await;
    assert_eq!(r.data()["ledgers"].as_array().unwrap().len(), 1);
    let r = h.get(&p("/transactions?ledgerId=L2"), &tok).await;
    assert_eq!(r.code(), "agent.policy_denied");
}

#[tokio::test]
async fn malformed_bodies_are_client_errors() {
    let h = Harness::new();
    let (_, tok) = h.full_agent("org1").await;
    let send = |body: Vec<u8>| {
        Request::builder()
            .method(Method::POST)
            .uri(p("/actions"))
            .header("authorization", format!("Bearer {tok}"))
            .body(Body::from(body))
            .unwrap()
    };
    let r = h.raw(send(b"{not json".to_vec())).await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);
    assert_eq!(r.code(), "agent.action_invalid");

    let r = h.post(&p("/actions"), &tok, json!({"payload": {}})).await;
    assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(r.code(), "agent.action_invalid");

    let nested = "[".repeat(64 * 1024);
    let r = h.raw(send(nested.into_bytes())).await;
    assert!(r.status.is_client_error());

    let big = json!({"action": "transaction.create", "payload": {"memo": "x".repeat(300 * 1024)}});
    let r = h.raw(send(serde_json::to_vec(&big).unwrap())).await;
    assert_eq!(r.status, StatusCode::PAYLOAD_TOO_LARGE);
    assert_eq!(r.code(), "agent.action_invalid");

    let r = h
        .post(&p("/actions"), &tok, json!({"action": "transaction.create", "payload": {"ledgerId": "L1", "amount": "many"}}))
        .await;
    assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY);
    let r = h.post(&p("/actions"), &tok, json!({"action": "transaction.teleport", "payload": {}})).await;
    assert_eq!(r.code(), "agent.action_unknown");
}

#[tokio::test]
async fn auto_execute_disabled_yields_a_draft() {
    let h = Harness::new();
    let (_, tok) = h.full_agent("org1").await;
    let r = h
        .post(&p("/actions"), &tok, json!({"action": "transaction.hard_delete", "payload": {"transactionId": "T0001"}, "execute": true}))
        .await;
    assert_eq!(r.status, StatusCode::OK, "{}", r.body);
    assert_eq!(r.data()["kind"], "draft");
    assert_eq!(r.data()["denialCode"], "agent.auto_execute_disabled");
    assert_eq!(r.data()["draft"]["status"], "draft");
    let id = r.data()["draft"]["id"].as_str().unwrap();
    let r = h.get(&p(&format!("/drafts/{id}")), &tok).await;
    assert_eq!(r.data()["draft"]["id"], id);
    assert_eq!(r.data()["execution"], Value::Null);
}

#[tokio::test]
async fn preflight_then_auto_execute() {
    let h = Harness::new();
    let (app, tok) = h.full_agent("org1").await;
    let expires = (h.rt.now() + Duration::hours(1)).to_rfc3339();
    let r = h
        .admin(
            Method::PATCH,
            &format!("/api/agent-admin/v1/apps/{app}/auto-execute"),
            Some(json!({"enabled": true, "expiresAt": expires, "allowList": ["transaction.hard_delete"]})),
        )
        .await;
    assert_eq!(r.status, StatusCode::OK, "{}", r.body);

    let payload = json!({"transactionId": "T0002"});
    let pf = h.post(&p("/preflight"), &tok, json!({"action": "transaction.hard_delete", "payload": payload})).await;
    assert_eq!(pf.status, StatusCode::OK, "{}", pf.body);
    let pf_id = pf.data()["preflightId"].as_str().unwrap();
    assert_eq!(pf.data()["impact"]["transactionId"], "T0002");

    let body = json!({"action": "transaction.hard_delete", "preflightId": pf_id, "execute": true, "justification": "duplicate"});
    let r = h.call_with(Method::POST, &p("/actions"), Some(&tok), Some(body.clone()), &[("idempotency-key", "k1")]).await;
    assert_eq!(r.status, StatusCode::OK, "{}", r.body);
    assert_eq!(r.data()["kind"], "executed");
    assert_eq!(r.data()["execution"]["status"], "succeeded");

    let r = h.call_with(Method::POST, &p("/actions"), Some(&tok), Some(body), &[("idempotency-key", "k1")]).await;
    assert_eq!(r.code(), "agent.idempotency_replay");
    assert_eq!(h.rt.domain.mutation_count(), 1);

    let mismatched = json!({"action": "transaction.hard_delete", "preflightId": pf_id, "idempotencyKey": "a"});
    let r = h.call_with(Method::POST, &p("/actions"), Some(&tok), Some(mismatched), &[("idempotency-key", "b")]).await;
    assert_eq!(r.code(), "agent.action_invalid");
}

#[tokio::test]
async fn high_risk_without_preflight_is_refused() {
    let h = Harness::new();
    let (app, tok) = h.full_agent("org1").await;
    let expires = (h.rt.now() + Duration::hours(1)).to_rfc3339();
    h.admin(
        Method::PATCH,
        &format!("/api/agent-admin/v1/apps/{app}/auto-execute"),
        Some(json!({"enabled": true, "expiresAt": expires, "allowList": ["transaction.hard_delete"]})),
    )
    .await;
    let r = h
        .post(
            &p("/actions"),
            &tok,
            json!({"action": "transaction.hard_delete", "payload": {"transactionId": "T0003"}, "execute": true, "idempotencyKey": "z", "justification": "dup"}),
        )
        .await;
    assert_eq!(r.data()["denialCode"], "agent.preflight_required");
    assert_eq!(h.rt.domain.mutation_count(), 0);
}

#[tokio::test]
async fn rate_limit_returns_retry_after_and_creates_nothing() {
    let h = Harness::with(|c| c.rate_limit = 3);
    let (_, tok) = h.full_agent("org1").await;
    let draft = json!({"action": "transaction.create", "payload": {"ledgerId": "L1", "date": "2026-03-01", "amount": 5}});
    for _ in 0..3 {
        assert_eq!(h.post(&p("/actions"), &tok, draft.clone()).await.status, StatusCode::OK);
    }
    let r = h.post(&p("/actions"), &tok, draft.clone()).await;
    assert_eq!(r.status, StatusCode::TOO_MANY_REQUESTS);
    assert_eq!(r.body, json!({"ok": false, "code": "agent.rate_limited", "message": "Rate limit exceeded"}));
    let retry: u64 = r.headers["retry-after"].to_str().unwrap().parse().unwrap();
    assert_eq!(retry, 60);
    assert_eq!(h.rt.pipeline.draft_count(), 3);

    h.clock.advance(Duration::seconds(59));
    let r = h.get(&p("/manifest"), &tok).await;
    assert_eq!(r.headers["retry-after"], "1");
    h.clock.advance(Duration::seconds(1));
    assert_eq!(h.get(&p("/manifest"), &tok).await.status, StatusCode::OK);
}

#[tokio::test]
async fn buckets_are_per_client_address() {
    let h = Harness::with(|c| c.rate_limit = 1);
    let (_, tok) = h.full_agent("org1").await;
    let path = p("/manifest");
    for (ip, expected) in [("10.0.0.1", StatusCode::OK), ("10.0.0.1", StatusCode::TOO_MANY_REQUESTS), ("10.0.0.2", StatusCode::OK)] {
        let r = h.call_with(Method::GET, &path, Some(&tok), None, &[("x-forwarded-for", ip)]).await;
        assert_eq!(r.status, expected, "{ip}");
    }
}

#[tokio::test]
async fn ip_allowlist_is_enforced_before_rate() {
    let h = Harness::with(|c| c.rate_limit = 1);
    let (app, tok) = h.full_agent("org1").await;
    h.admin(Method::PATCH, &format!("/api/agent-admin/v1/apps/{app}/policy"), Some(json!({"ipAllowlist": ["10.1.0.0/16"]})))
        .await;
    for _ in 0..3 {
        let r = h.call_with(Method::GET, &p("/manifest"), Some(&tok), None, &[("x-forwarded-for", "192.168.1.5")]).await;
        assert_eq!(r.code(), "agent.policy_denied");
    }
    let r = h.call_with(Method::GET, &p("/manifest"), Some(&tok), None, &[("x-forwarded-for", "10.1.2.3")]).await;
    assert_eq!(r.status, StatusCode::OK);
}

#[tokio::test]
async fn draft_ids_do_not_leak_across_apps() {
    let h = Harness::new();
    let (_, a) = h.full_agent("org1").await;
    let (_, b) = h.full_agent("org1").await;
    let r = h
        .post(&p("/actions"), &a, json!({"action": "transaction.create", "payload": {"ledgerId": "L1", "date": "2026-03-01", "amount": 5}}))
        .await;
    let id = r.data()["draft"]["id"].as_str().unwrap().to_owned();
    let r = h.get(&p(&format!("/drafts/{id}")), &b).await;
    assert_eq!(r.status, StatusCode::NOT_FOUND);
    assert_eq!(r.code(), "agent.draft_not_found");
    assert_eq!(r.body["message"], h.get(&p("/drafts/drf_missing"), &b).await.body["message"]);
}

#[tokio::test]
async fn every_authenticated_request_is_audited() {
    let h = Harness::new();
    let (app, tok) = h.full_agent("org1").await;
    let before = h.rt.audit.len();
    let requests = [
        h.get(&p("/manifest"), &tok).await,
        h.get(&p("/ledgers"), &tok).await,
        h.get(&p("/transactions?ledgerId=L3"), &tok).await,
        h.post(&p("/actions"), &tok, json!({"action": "nope"})).await,
        h.post(&p("/preflight"), &tok, json!({"action": "transaction.hard_delete", "payload": {"transactionId": "T0001"}})).await,
        h.get(&p("/drafts/drf_x"), &tok).await,
    ];
    let events: Vec<_> = h.rt.audit.snapshot().into_iter().skip(before).collect();
    assert!(events.len() >= requests.len());
    assert!(events.iter().all(|e| e.app_id.as_deref() == Some(app.as_str())));
    let denied: Vec<_> = events.iter().filter(|e| e.status == AuditStatus::Denied).collect();
    assert_eq!(denied.len(), 3);
    assert_eq!(denied[0].code, Some(ReasonCode::Forbidden));
    assert!(!h.rt.audit.export_jsonl_string().contains(&tok));
}

#[tokio::test]
async fn revocation_is_immediate() {
    let h = Harness::new();
    let (app, tok) = h.full_agent("org1").await;
    assert_eq!(h.get(&p("/manifest"), &tok).await.status, StatusCode::OK);
    let keys = h.admin(Method::GET, "/api/agent-admin/v1/apps", None).await;
    let key_id = keys.data()["apps"]
        .as_array()
        .unwrap()
        .iter()
        .find(|a| a["app"]["id"] == app.as_str())
        .unwrap()["keys"][0]["id"]
        .as_str()
        .unwrap()
        .to_owned();
    let r = h.admin(Method::POST, &format!("/api/agent-admin/v1/keys/{key_id}/revoke"), None).await;
    assert_eq!(r.data()["status"], "revoked");
    assert!(r.data().get("secretHash").is_none());
    for path in ["/manifest", "/ledgers", "/transactions?ledgerId=L1", "/drafts/x"] {
        assert_eq!(h.get(&p(path), &tok).await.code(), "agent.token_invalid", "{path}");
    }
}
