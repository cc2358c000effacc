use std::convert::Infallible;
use std::net::{IpAddr, SocketAddr};
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::rejection::BytesRejection;
use axum::extract::{ConnectInfo, FromRequestParts};
use axum::http::header::{AUTHORIZATION, USER_AGENT};
use axum::http::request::Parts;
use axum::http::{HeaderMap, StatusCode};
use openport_core::audit::RequestMeta;
use openport_core::envelope::ReasonCode;
use serde::de::DeserializeOwned;
use serde_json::Value;

use crate::reply::Reply;
use crate::runtime::Runtime;

const MAX_HEADER_CHARS: usize = 256;

/// Caller identity as seen by the transport: bearer token and audit metadata.
#[derive(Debug, Clone)]
pub struct Client {
    pub bearer: Option<String>,
    pub meta: RequestMeta,
    pub headers: HeaderMap,
}

impl FromRequestParts<Arc<Runtime>> for Client {
    type Rejection = Infallible;

    async fn from_request_parts(parts: &mut Parts, rt: &Arc<Runtime>) -> Result<Self, Self::Rejection> {
        let connected = parts.extensions.get::<ConnectInfo<SocketAddr>>().map(|c| c.0.ip());
        let forwarded = rt.config.trust_forwarded_for.then(|| forwarded_for(&parts.headers)).flatten();
        let ip = forwarded.or(connected).unwrap_or(IpAddr::from([127, 0, 0, 1]));
        let meta = RequestMeta {
            ip,
            user_agent: header_text(&parts.headers, USER_AGENT.as_str()),
            request_id: header_text(&parts.headers, "x-request-id"),
        };
        Ok(Client { bearer: bearer_token(&parts.headers), meta, headers: parts.headers.clone() })
    }
}

impl Client {
    pub fn header(&self, name: &str) -> Option<String> {
        header_text(&self.headers, name)
    }
}

fn header_text(headers: &HeaderMap, name: &str) -> Option<String> {
    let v = headers.get(name)?.to_str().ok()?.trim();
    (!v.is_empty()).then(|| v.chars().take(MAX_HEADER_CHARS).collect())
}

fn forwarded_for(headers: &HeaderMap) -> Option<IpAddr> {
    headers.get("x-forwarded-for")?.to_str().ok()?.split(',').next()?.trim().parse().ok()
}

/// `Authorization: Bearer <token>`; the scheme is case-insensitive.
pub fn bearer_token(headers: &HeaderMap) -> Option<String> {
    let raw = headers.get(AUTHORIZATION)?.to_str().ok()?.trim();
    let (scheme, token) = raw.split_once(' ')?;
    let token = token.trim();
    (scheme.eq_ignore_ascii_case("bearer") && !token.is_empty()).then(|| token.to_owned())
}

pub fn read_body(body: Result<Bytes, BytesRejection>) -> Result<Bytes, Reply> {
    body.map_err(|rejection| {
        if rejection.status() == StatusCode::PAYLOAD_TOO_LARGE {
            Reply::error(ReasonCode::ActionInvalid, "request body too large").with_status(StatusCode::PAYLOAD_TOO_LARGE)
        } else {
            Reply::malformed("unreadable request body")
        }
    })
}

/// Syntax errors are 400; well-formed JSON of the wrong shape is 422.
pub fn parse_json<T: DeserializeOwned>(bytes: &[u8]) -> Result<T, Reply> {
    let value: Value = serde_json::from_slice(bytes).map_err(|e| Reply::malformed(format!("malformed JSON body: {e}")))?;
    serde_json::from_value(value).map_err(|e| Reply::error(ReasonCode::ActionInvalid, format!("invalid request body: {e}")))
}

/// An empty body stands for `T::default()`.
pub fn parse_json_or_default<T: DeserializeOwned + Default>(bytes: &[u8]) -> Result<T, Reply> {
    if bytes.iter().all(u8::is_ascii_whitespace) {
        return Ok(T::default());
    }
    parse_json(bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use axum::http::HeaderValue;

    fn headers(auth: &str) -> HeaderMap {
        let mut h = HeaderMap::new();
        h.insert(AUTHORIZATION, HeaderValue::from_str(auth).unwrap());
        h
    }

    #[test]
    fn bearer_parsing() {
        assert_eq!(bearer_token(&headers("Bearer opk_x")), Some("opk_x".into()));
        assert_eq!(bearer_token(&headers("bearer   opk_x ")), Some("opk_x".into()));
        assert_eq!(bearer_token(&headers("Basic opk_x")), None);
        assert_eq!(bearer_token(&headers("Bearer")), None);
        assert_eq!(bearer_token(&headers("Bearer ")), None);
        assert_eq!(bearer_token(&HeaderMap::new()), None);
    }

    #[test]
    fn json_errors_split_by_kind() {
        #[derive(serde::Deserialize, Debug)]
        #[allow(dead_code)]
        struct Body {
            action: String,
        }
        assert_eq!(parse_json::<Body>(b"{").unwrap_err().status, StatusCode::BAD_REQUEST);
        let shape = parse_json::<Body>(b"{}").unwrap_err();
        assert_eq!(shape.status, StatusCode::UNPROCESSABLE_ENTITY);
        assert_eq!(shape.code(), ReasonCode::ActionInvalid);
        let deep = "[".repeat(10_000);
        assert_eq!(parse_json::<Body>(deep.as_bytes()).unwrap_err().status, StatusCode::BAD_REQUEST);
    }

    #[test]
    fn empty_body_is_default() {
        let v: Option<u8> = parse_json_or_default(b"  ").unwrap();
        assert_eq!(v, None);
    }
}
