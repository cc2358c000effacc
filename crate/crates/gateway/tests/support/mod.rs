#![allow(dead_code)]

use std::sync::Arc;

use axum::body::{to_bytes, Body};
use axum::http::{HeaderMap, Method, Request, StatusCode};
use axum::Router;
use chrono::{TimeZone, Utc};
use openport_core::clock::ManualClock;
use openport_core::envelope::Envelope;
use openport_gateway::{router, GatewayConfig, Runtime};
use serde_json::{json, Value};
use tower::ServiceExt;

pub const ADMIN: &str = "test-admin-token";

pub struct Resp {
    pub status: StatusCode,
    pub headers: HeaderMap,
    pub body: Value,
}

impl Resp {
    pub fn code(&self) -> &str {
        self.body["code"].as_str().unwrap_or_default()
    }

    pub fn data(&self) -> &Value {
        &self.body["data"]
    }
}

pub struct Harness {
    pub rt: Arc<Runtime>,
    pub clock: ManualClock,
    pub app: Router,
}

impl Harness {
    pub fn new() -> Self {
        Self::with(|_| {})
    }

    pub fn with(f: impl FnOnce(&mut GatewayConfig)) -> Self {
        let mut cfg = GatewayConfig { admin_token: ADMIN.into(), trust_forwarded_for: true, ..Default::default() };
        f(&mut cfg);
        let clock = ManualClock::new(Utc.with_ymd_and_hms(2026, 3, 2, 9, 0, 0).unwrap());
        let rt = Runtime::with_clock(cfg, Arc::new(clock.clone()));
        Harness { app: router(rt.clone()), rt, clock }
    }

    pub async fn raw(&self, req: Request<Body>) -> Resp {
        let resp = self.app.clone().oneshot(req).await.unwrap();
        let status = resp.status();
        let headers = resp.headers().clone();
        let bytes = to_bytes(resp.into_body(), usize::MAX).await.unwrap();
        let body: Value = serde_json::from_slice(&bytes)
            .unwrap_or_else(|e| panic!("non-JSON body ({e}) for status {status}: {:?}", String::from_utf8_lossy(&bytes)));
        Envelope::from_value(&body).unwrap_or_else(|e| panic!("not an envelope ({e}): {body}"));
        Resp { status, headers, body }
    }

    pub async fn call(&self, method: Method, path: &str, token: Option<&str>, body: Option<Value>) -> Resp {
        self.call_with(method, path, token, body, &[]).await
    }

    pub async fn call_with(
        &self,
        method: Method,
        path: &str,
        token: Option<&str>,
        body: Option<Value>,
        headers: &[(&str, &str)],
    ) -> Resp {
        let mut req = Request::builder().method(method).uri(path);
        if let Some(t) = token {
            req = req.header("authorization", format!("Bearer {t}"));
        }
        for (k, v) in headers {
            req = req.header(*k, *v);
        }
        let body = match body {
            Some(v) => {
                req = req.header("content-type", "application/json");
                Body::from(serde_json::to_vec(&v).unwrap())
            }
            None => Body::empty(),
        };
        self.raw(req.body(body).unwrap()).await
    }

    pub async fn get(&self, path: &str, token: &str) -> Resp {
        self.call(Method::GET, path, Some(token), None).await
    }

    pub async fn post(&self, path: &str, token: &str, body: Value) -> Resp {
        self.call(Method::POST, path, Some(token), Some(body)).await
    }

    pub async fn admin(&self, method: Method, path: &str, body: Option<Value>) -> Resp {
        self.call_with(method, path, Some(ADMIN), body, &[("x-operator-id", "op-alice")]).await
    }

    /// Creates an app through the admin plane and issues a key.
    pub async fn agent(&self, tenant: &str, scopes: &[&str]) -> (String, String) {
        let r = self
            .admin(Method::POST, "/api/agent-admin/v1/apps", Some(json!({"name": "bot", "tenantId": tenant, "scopes": scopes})))
            .await;
        assert_eq!(r.status, StatusCode::OK, "{}", r.body);
        let app_id = r.data()["id"].as_str().unwrap().to_owned();
        let r = self.admin(Method::POST, &format!("/api/agent-admin/v1/apps/{app_id}/keys"), None).await;
        assert_eq!(r.status, StatusCode::OK, "{}", r.body);
        (app_id, r.data()["token"].as_str().unwrap().to_owned())
    }

    pub async fn full_agent(&self, tenant: &str) -> (String, String) {
        self.agent(tenant, &openport_core::adapter::SCOPES).await
    }
}
