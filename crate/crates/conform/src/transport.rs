//! Request transport: in-process against a router, or over HTTP.

use std::sync::Arc;
use std::time::Duration;

use axum::body::{to_bytes, Body};
use axum::http::{Method, Request};
use axum::Router;
use openport_gateway::{router, GatewayConfig, Runtime};
use serde_json::Value;
use tower::ServiceExt;

const REMOTE_TIMEOUT: Duration = Duration::from_secs(10);

#[derive(Debug, thiserror::Error)]
pub enum TransportError {
    #[error("invalid request: {0}")]
    Request(String),
    #[error("transport failure: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpRequest {
    pub method: Method,
    /// Path and query, relative to the target root.
    pub path: String,
    pub headers: Vec<(String, String)>,
    pub body: Option<Vec<u8>>,
}

impl HttpRequest {
    pub fn new(method: Method, path: impl Into<String>) -> Self {
        HttpRequest { method, path: path.into(), headers: Vec::new(), body: None }
    }

    pub fn get(path: impl Into<String>) -> Self {
        Self::new(Method::GET, path)
    }

    pub fn post_json(path: impl Into<String>, body: &Value) -> Self {
        Self::new(Method::POST, path).json(body)
    }

    pub fn header(mut self, name: &str, value: impl Into<String>) -> Self {
        self.headers.push((name.to_ascii_lowercase(), value.into()));
        self
    }

    pub fn bearer(self, token: Option<&str>) -> Self {
        match token {
            Some(t) => self.header("authorization", format!("Bearer {t}")),
            None => self,
        }
    }

    pub fn json(self, body: &Value) -> Self {
        self.raw_body(serde_json::to_vec(body).expect("values serialize"), "application/json")
    }

    pub fn raw_body(mut self, body: Vec<u8>, content_type: &str) -> Self {
        self.body = Some(body);
        self.header("content-type", content_type)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpResponse {
    pub status: u16,
    /// Lowercased names.
    pub headers: Vec<(String, String)>,
    pub body: Vec<u8>,
}

impl HttpResponse {
    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers.iter().find(|(k, _)| k == name).map(|(_, v)| v.as_str())
    }

    pub fn json(&self) -> Option<Value> {
        serde_json::from_slice(&self.body).ok()
    }
}

#[derive(Clone)]
pub enum Target {
    Local(Router),
    Remote { base_url: String, client: reqwest::Client },
}

impl std::fmt::Debug for Target {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.describe())
    }
}

impl Target {
    pub fn local(router: Router) -> Self {
        Target::Local(router)
    }

    pub fn remote(base_url: &str) -> Result<Self, TransportError> {
        let client = reqwest::Client::builder().timeout(REMOTE_TIMEOUT).build().map_err(|e| TransportError::Io(e.to_string()))?;
        Ok(Target::Remote { base_url: base_url.trim_end_matches('/').to_owned(), client })
    }

    pub fn describe(&self) -> String {
        match self {
            Target::Local(_) => "local".into(),
            Target::Remote { base_url, .. } => format!("remote {base_url}"),
        }
    }

    pub async fn send(&self, req: &HttpRequest) -> Result<HttpResponse, TransportError> {
        match self {
            Target::Local(router) => send_local(router, req).await,
            Target::Remote { base_url, client } => send_remote(client, base_url, req).await,
        }
    }
}

async fn send_local(router: &Router, req: &HttpRequest) -> Result<HttpResponse, TransportError> {
    let mut builder = Request::builder().method(req.method.clone()).uri(&req.path);
    for (k, v) in &req.headers {
        builder = builder.header(k, v);
    }
    let body = req.body.clone().map(Body::from).unwrap_or_else(Body::empty);
    let request = builder.body(body).map_err(|e| TransportError::Request(e.to_string()))?;
    let resp = router.clone().oneshot(request).await.map_err(|e| TransportError::Io(e.to_string()))?;
    let status = resp.status().as_u16();
    let headers = collect_headers(resp.headers());
    let body = to_bytes(resp.into_body(), usize::MAX).await.map_err(|e| TransportError::Io(e.to_string()))?;
    Ok(HttpResponse { status, headers, body: body.to_vec() })
}

async fn send_remote(client: &reqwest::Client, base_url: &str, req: &HttpRequest) -> Result<HttpResponse, TransportError> {
    let method = reqwest::Method::from_bytes(req.method.as_str().as_bytes()).map_err(|e| TransportError::Request(e.to_string()))?;
    let mut builder = client.request(method, format!("{base_url}{}", req.path));
    for (k, v) in &req.headers {
        builder = builder.header(k, v);
    }
    if let Some(body) = &req.body {
        builder = builder.body(body.clone());
    }
    let resp = builder.send().await.map_err(|e| TransportError::Io(e.to_string()))?;
    let status = resp.status().as_u16();
    let headers = resp
        .headers()
        .iter()
        .filter_map(|(k, v)| Some((k.as_str().to_owned(), v.to_str().ok()?.to_owned())))
        .collect();
    let body = resp.bytes().await.map_err(|e| TransportError::Io(e.to_string()))?;
    Ok(HttpResponse { status, headers, body: body.to_vec() })
}

fn collect_headers(h: &axum::http::HeaderMap) -> Vec<(String, String)> {
    h.iter().filter_map(|(k, v)| Some((k.as_str().to_owned(), v.to_str().ok()?.to_owned()))).collect()
}

/// In-process reference runtime with a bootstrapped agent credential.
pub struct LocalReference {
    pub runtime: Arc<Runtime>,
    pub target: Target,
    pub agent_token: String,
    pub admin_token: String,
}

impl LocalReference {
    pub const TENANT: &'static str = "org1";

    pub fn new() -> Self {
        Self::with_config(GatewayConfig::default())
    }

    pub fn with_config(config: GatewayConfig) -> Self {
        Self::from_runtime(Runtime::reference(config))
    }

    pub fn from_runtime(runtime: Arc<Runtime>) -> Self {
        let (_, agent_token) = runtime.bootstrap_app("conformance", Self::TENANT).expect("bootstrap app");
        let admin_token = runtime.config.admin_token.clone();
        LocalReference { target: Target::local(router(runtime.clone())), runtime, agent_token, admin_token }
    }
}

impl Default for LocalReference {
    fn default() -> Self {
        Self::new()
    }
}
