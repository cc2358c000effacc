//! Response envelope and the `agent.*` reason-code registry.
//!
//! Every endpoint body is one of two shapes:
//!
//! - success: `{ "ok": true, "code": ..., "data": ... }`
//! - error: `{ "ok": false, "code": ..., "message": ..., "details"?: ... }`
//!
//! Codes are stable identifiers. Each carries the HTTP status it is served
//! with and the recovery class a client should apply.

use std::fmt;
use std::str::FromStr;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{Map, Value};

/// Serialized size cap for error `details`.
pub const DETAILS_MAX_BYTES: usize = 4 * 1024;

/// How a client is expected to react to a code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RetryClass {
    Stop,
    RefreshDiscovery,
    Operator,
    Backoff,
    SuccessEquivalent,
    RePreflight,
}

macro_rules! reason_codes {
    ($( $variant:ident => $id:literal, $status:literal, $class:ident; )*) => {
        /// Registered reason codes.
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub enum ReasonCode {
            $( $variant, )*
        }

        impl ReasonCode {
            pub const ALL: &'static [ReasonCode] = &[ $( ReasonCode::$variant, )* ];

            pub fn as_str(self) -> &'static str {
                match self { $( ReasonCode::$variant => $id, )* }
            }

            pub fn http_status(self) -> u16 {
                match self { $( ReasonCode::$variant => $status, )* }
            }

            pub fn retry_class(self) -> RetryClass {
                match self { $( ReasonCode::$variant => RetryClass::$class, )* }
            }
        }

        impl FromStr for ReasonCode {
            type Err = UnknownReasonCode;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s {
                    $( $id => Ok(ReasonCode::$variant), )*
                    other => Err(UnknownReasonCode(other.to_owned())),
                }
            }
        }
    };
}

reason_codes! {
    Ok                  => "agent.ok", 200, SuccessEquivalent;
    TokenInvalid        => "agent.token_invalid", 401, Stop;
    TokenExpired        => "agent.token_expired", 401, Stop;
    ScopeDenied         => "agent.scope_denied", 403, RefreshDiscovery;
    PolicyDenied        => "agent.policy_denied", 403, Operator;
    Forbidden           => "agent.forbidden", 403, Operator;
    ActionUnknown       => "agent.action_unknown", 404, RefreshDiscovery;
    ActionInvalid       => "agent.action_invalid", 422, RefreshDiscovery;
    PreflightRequired   => "agent.preflight_required", 409, RePreflight;
    PreflightMismatch   => "agent.preflight_mismatch", 409, RePreflight;
    PreflightNotFound   => "agent.preflight_not_found", 404, RePreflight;
    PreconditionFailed  => "agent.precondition_failed", 409, RePreflight;
    IdempotencyRequired => "agent.idempotency_required", 409, Stop;
    IdempotencyReplay   => "agent.idempotency_replay", 200, SuccessEquivalent;
    AutoExecuteDisabled => "agent.auto_execute_disabled", 403, Operator;
    AutoExecuteExpired  => "agent.auto_execute_expired", 403, Operator;
    AutoExecuteDenied   => "agent.auto_execute_denied", 403, Operator;
    DraftNotFound       => "agent.draft_not_found", 404, Stop;
    DraftAlreadyFinal   => "agent.draft_already_final", 409, Stop;
    StepUpRequired      => "agent.step_up_required", 403, Operator;
    StepUpInvalid       => "agent.step_up_invalid", 403, Operator;
    RateLimited         => "agent.rate_limited", 429, Backoff;
}

impl ReasonCode {
    pub fn is_success(self) -> bool {
        matches!(self, ReasonCode::Ok | ReasonCode::IdempotencyReplay)
    }
}

impl fmt::Display for ReasonCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unregistered reason code `{0}`")]
pub struct UnknownReasonCode(pub String);

impl Serialize for ReasonCode {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for ReasonCode {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(D::Error::custom)
    }
}

/// The predicates of the authorization conjunction, in evaluation order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Predicate {
    Authn,
    Net,
    Rate,
    Scope,
    Policy,
    Boundary,
}

impl Predicate {
    pub const ORDER: [Predicate; 6] = [
        Predicate::Authn,
        Predicate::Net,
        Predicate::Rate,
        Predicate::Scope,
        Predicate::Policy,
        Predicate::Boundary,
    ];

    /// 1-based position in the evaluation order.
    pub fn index(self) -> usize {
        Self::ORDER.iter().position(|p| *p == self).unwrap_or(0) + 1
    }
}

/// Maps the first failing predicate to its denial code. Authentication
/// failures distinguish expiry, every other credential problem is invalid.
pub fn code_for_first_failure(failed: Predicate, credential_expired: bool) -> ReasonCode {
    match failed {
        Predicate::Authn if credential_expired => ReasonCode::TokenExpired,
        Predicate::Authn => ReasonCode::TokenInvalid,
        Predicate::Net => ReasonCode::PolicyDenied,
        Predicate::Rate => ReasonCode::RateLimited,
        Predicate::Scope => ReasonCode::ScopeDenied,
        Predicate::Policy => ReasonCode::PolicyDenied,
        Predicate::Boundary => ReasonCode::Forbidden,
    }
}

/// Wire envelope.
#[derive(Debug, Clone, PartialEq)]
pub enum Envelope {
    Success {
        code: ReasonCode,
        data: Value,
    },
    Error {
        code: ReasonCode,
        message: String,
        details: Option<Value>,
    },
}

pub fn wrap_success(code: ReasonCode, data: Value) -> Envelope {
    Envelope::Success { code, data }
}

pub fn wrap_error(code: ReasonCode, message: impl Into<String>, details: Option<Value>) -> Envelope {
    Envelope::Error {
        code,
        message: message.into(),
        details: details.map(bound_details),
    }
}

/// Caps `details` at [`DETAILS_MAX_BYTES`]; oversized values are replaced by a
/// truncation marker carrying the original size.
pub fn bound_details(details: Value) -> Value {
    let size = serde_json::to_vec(&details).map(|v| v.len()).unwrap_or(usize::MAX);
    if size <= DETAILS_MAX_BYTES {
        return details;
    }
    serde_json::json!({ "truncated": true, "originalBytes": size })
}

impl Envelope {
    pub fn ok(data: Value) -> Self {
        wrap_success(ReasonCode::Ok, data)
    }

    pub fn error(code: ReasonCode, message: impl Into<String>) -> Self {
        wrap_error(code, message, None)
    }

    pub fn is_ok(&self) -> bool {
        matches!(self, Envelope::Success { .. })
    }

    pub fn code(&self) -> ReasonCode {
        match self {
            Envelope::Success { code, .. } | Envelope::Error { code, .. } => *code,
        }
    }

    pub fn data(&self) -> Option<&Value> {
        match self {
            Envelope::Success { data, .. } => Some(data),
            Envelope::Error { .. } => None,
        }
    }

    pub fn http_status(&self) -> u16 {
        self.code().http_status()
    }

    pub fn to_value(&self) -> Value {
        let mut map = Map::new();
        match self {
            Envelope::Success { code, data } => {
                map.insert("ok".into(), Value::Bool(true));
                map.insert("code".into(), Value::String(code.as_str().into()));
                map.insert("data".into(), data.clone());
            }
            Envelope::Error { code, message, details } => {
                map.insert("ok".into(), Value::Bool(false));
                map.insert("code".into(), Value::String(code.as_str().into()));
                map.insert("message".into(), Value::String(message.clone()));
                if let Some(d) = details {
                    map.insert("details".into(), d.clone());
                }
            }
        }
        Value::Object(map)
    }

    /// Strict parse: the exact field set for the variant, a registered code.
    pub fn from_value(value: &Value) -> Result<Self, EnvelopeError> {
        let obj = value.as_object().ok_or(EnvelopeError::NotAnObject)?;
        let ok = obj
            .get("ok")
            .and_then(Value::as_bool)
            .ok_or(EnvelopeError::MissingField("ok"))?;
        let code: ReasonCode = obj
            .get("code")
            .and_then(Value::as_str)
            .ok_or(EnvelopeError::MissingField("code"))?
            .parse()
            .map_err(EnvelopeError::UnknownCode)?;
        if ok {
            let data = obj.get("data").ok_or(EnvelopeError::MissingField("data"))?;
            if let Some(extra) = obj.keys().find(|k| !matches!(k.as_str(), "ok" | "code" | "data")) {
                return Err(EnvelopeError::UnexpectedField(extra.clone()));
            }
            Ok(Envelope::Success { code, data: data.clone() })
        } else {
            let message = obj
                .get("message")
                .and_then(Value::as_str)
                .ok_or(EnvelopeError::MissingField("message"))?;
            if let Some(extra) = obj
                .keys()
                .find(|k| !matches!(k.as_str(), "ok" | "code" | "message" | "details"))
            {
                return Err(EnvelopeError::UnexpectedField(extra.clone()));
            }
            Ok(Envelope::Error {
                code,
                message: message.to_owned(),
                details: obj.get("details").cloned(),
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EnvelopeError {
    #[error("envelope is not a JSON object")]
    NotAnObject,
    #[error("envelope missing field `{0}`")]
    MissingField(&'static str),
    #[error("envelope has unexpected field `{0}`")]
    UnexpectedField(String),
    #[error(transparent)]
    UnknownCode(UnknownReasonCode),
}

/// Wire field order: ok, code, then data or message/details.
impl Serialize for Envelope {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeMap;
        match self {
            Envelope::Success { code, data } => {
                let mut m = s.serialize_map(Some(3))?;
                m.serialize_entry("ok", &true)?;
                m.serialize_entry("code", code.as_str())?;
                m.serialize_entry("data", data)?;
                m.end()
            }
            Envelope::Error { code, message, details } => {
                let mut m = s.serialize_map(Some(3 + details.is_some() as usize))?;
                m.serialize_entry("ok", &false)?;
                m.serialize_entry("code", code.as_str())?;
                m.serialize_entry("message", message)?;
                if let Some(d) = details {
                    m.serialize_entry("details", d)?;
                }
                m.end()
            }
        }
    }
}

impl<'de> Deserialize<'de> for Envelope {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = Value::deserialize(d)?;
        Envelope::from_value(&v).map_err(D::Error::custom)
    }
}
