//! Ordered authorization, ABAC constraint checks, tenant boundary and
//! response redaction.
//!
//! Predicates run in a fixed order and evaluation stops at the first
//! failure: Authn, Net, Rate, Scope, Policy, Boundary.

use std::collections::BTreeSet;
use std::net::IpAddr;

use chrono::{DateTime, Days, NaiveDate, Utc};
use serde_json::Value;

use crate::admission::{Admission, AdmissionController};
use crate::credentials::{AuthContext, AuthFailure, Policy};
use crate::envelope::{code_for_first_failure, Predicate, ReasonCode};

pub const REDACTION_MARKER: &str = "[REDACTED]";

/// Server-side ownership lookups. Tenant ids never come from client input.
pub trait DomainResolver: Send + Sync {
    /// Owning tenant of any resource id, or `None` if unknown.
    fn owner_tenant(&self, resource_id: &str) -> Option<String>;
    /// The id that resource allowlists govern (a transaction maps to its ledger).
    fn policy_resource(&self, resource_id: &str) -> Option<String>;
    /// All ids of a resource domain visible to a tenant.
    fn domain_ids(&self, domain: &str, tenant_id: &str) -> BTreeSet<String>;
}

/// Raw query window bounds as received.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct WindowRequest {
    pub start: Option<String>,
    pub end: Option<String>,
}

#[derive(Debug, Clone)]
pub struct RequestContext<'a> {
    pub auth: Result<&'a AuthContext, AuthFailure>,
    pub ip: IpAddr,
    pub now: DateTime<Utc>,
    /// Scope requirement of the endpoint or tool. `Err` carries a denial
    /// decided during tool resolution, reported at the scope position.
    pub required_scopes: Result<&'a BTreeSet<String>, ReasonCode>,
    pub window: Option<WindowRequest>,
    pub resources: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decision {
    pub allowed: bool,
    pub code: Option<ReasonCode>,
    /// 1-based position of the failing predicate.
    pub failed_predicate_index: Option<usize>,
    pub message: Option<String>,
    pub retry_after_secs: Option<u64>,
    /// Resolved query window, when one was requested and allowed.
    pub window: Option<(NaiveDate, NaiveDate)>,
}

impl Decision {
    fn allow(window: Option<(NaiveDate, NaiveDate)>) -> Self {
        Decision { allowed: true, code: None, failed_predicate_index: None, message: None, retry_after_secs: None, window }
    }

    fn deny(at: Predicate, code: ReasonCode, message: impl Into<String>) -> Self {
        Decision {
            allowed: false,
            code: Some(code),
            failed_predicate_index: Some(at.index()),
            message: Some(message.into()),
            retry_after_secs: None,
            window: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Denial {
    pub code: ReasonCode,
    pub message: String,
}

impl Denial {
    fn new(code: ReasonCode, message: impl Into<String>) -> Self {
        Denial { code, message: message.into() }
    }
}

/// Runs the six predicates in order. Only an admitted request consumes rate
/// budget; nothing else is mutated.
pub fn evaluate(ctx: &RequestContext<'_>, admission: &AdmissionController, resolver: &dyn DomainResolver) -> Decision {
    match gate(ctx.auth, ctx.ip, ctx.now, admission) {
        Ok(auth) => authorize(auth, ctx.now, ctx.required_scopes, ctx.window.as_ref(), &ctx.resources, resolver),
        Err(denied) => denied,
    }
}

/// Authn, Net and Rate. Runs before the request body is interpreted.
pub fn gate<'a>(
    auth: Result<&'a AuthContext, AuthFailure>,
    ip: IpAddr,
    now: DateTime<Utc>,
    admission: &AdmissionController,
) -> Result<&'a AuthContext, Decision> {
    let auth = match auth {
        Ok(auth) => auth,
        Err(failure) => {
            let code = code_for_first_failure(Predicate::Authn, failure == AuthFailure::Expired);
            return Err(Decision::deny(Predicate::Authn, code, "authentication failed"));
        }
    };
    if !auth.app.policy.ip_allowed(ip) {
        return Err(Decision::deny(Predicate::Net, ReasonCode::PolicyDenied, "client address not allowed"));
    }
    if let Admission::Denied { retry_after_secs } = admission.admit(&auth.key.id, ip, now) {
        let mut d = Decision::deny(Predicate::Rate, ReasonCode::RateLimited, "rate limit exceeded");
        d.retry_after_secs = Some(retry_after_secs);
        return Err(d);
    }
    Ok(auth)
}

/// Scope, Policy and Boundary for an already admitted caller.
pub fn authorize(
    auth: &AuthContext,
    now: DateTime<Utc>,
    required_scopes: Result<&BTreeSet<String>, ReasonCode>,
    window: Option<&WindowRequest>,
    resources: &[String],
    resolver: &dyn DomainResolver,
) -> Decision {
    let policy = &auth.app.policy;
    match required_scopes {
        Err(code) => return Decision::deny(Predicate::Scope, code, "unknown action"),
        Ok(required) if !required.is_subset(&auth.app.scopes) => {
            return Decision::deny(Predicate::Scope, ReasonCode::ScopeDenied, "missing required scope");
        }
        Ok(_) => {}
    }

    let mut resolved = None;
    if let Some(w) = window {
        match check_query_window_raw(w, policy.max_query_window_days, now.date_naive()) {
            Ok(r) => resolved = Some(r),
            Err(d) => return Decision::deny(Predicate::Policy, d.code, d.message),
        }
    }
    let governed: BTreeSet<String> = resources
        .iter()
        .map(|id| resolver.policy_resource(id).unwrap_or_else(|| id.clone()))
        .collect();
    if let Err(d) = check_resource(&governed, policy) {
        return Decision::deny(Predicate::Policy, d.code, d.message);
    }

    for id in resources {
        if let Err(d) = check_tenant_boundary(auth, id, resolver) {
            return Decision::deny(Predicate::Boundary, d.code, d.message);
        }
    }

    Decision::allow(resolved)
}

/// Defaults: absent end is today, absent start is `end - d_max` days.
/// The bound is inclusive.
pub fn check_query_window(
    start: Option<NaiveDate>,
    end: Option<NaiveDate>,
    d_max: u32,
    today: NaiveDate,
) -> Result<(NaiveDate, NaiveDate), Denial> {
    let end = end.unwrap_or(today);
    let start = match start {
        Some(s) => s,
        None => end
            .checked_sub_days(Days::new(d_max as u64))
            .ok_or_else(|| Denial::new(ReasonCode::ActionInvalid, "window out of range"))?,
    };
    if start > end {
        return Err(Denial::new(ReasonCode::ActionInvalid, "start is after end"));
    }
    if (end - start).num_days() > d_max as i64 {
        return Err(Denial::new(
            ReasonCode::PolicyDenied,
            format!("query window exceeds {d_max} days"),
        ));
    }
    Ok((start, end))
}

fn check_query_window_raw(w: &WindowRequest, d_max: u32, today: NaiveDate) -> Result<(NaiveDate, NaiveDate), Denial> {
    let parse = |s: &Option<String>, field: &str| -> Result<Option<NaiveDate>, Denial> {
        s.as_deref()
            .map(|s| {
                NaiveDate::parse_from_str(s, "%Y-%m-%d")
                    .map_err(|_| Denial::new(ReasonCode::ActionInvalid, format!("{field} must be YYYY-MM-DD")))
            })
            .transpose()
    };
    check_query_window(parse(&w.start, "start")?, parse(&w.end, "end")?, d_max, today)
}

pub fn check_resource(requested: &BTreeSet<String>, policy: &Policy) -> Result<(), Denial> {
    match &policy.allowed_resource_ids {
        Some(allowed) if !requested.is_subset(allowed) => {
            Err(Denial::new(ReasonCode::PolicyDenied, "resource not allowed by policy"))
        }
        _ => Ok(()),
    }
}

/// Unknown and foreign resources are indistinguishable.
pub fn check_tenant_boundary(auth: &AuthContext, resource_id: &str, resolver: &dyn DomainResolver) -> Result<(), Denial> {
    match resolver.owner_tenant(resource_id) {
        Some(owner) if owner == auth.app.tenant_id => Ok(()),
        _ => Err(Denial::new(ReasonCode::Forbidden, "resource not accessible")),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Presented {
    pub value: Value,
    pub redacted_paths: BTreeSet<String>,
}

/// Redaction under the app policy alone.
pub fn present(object: &Value, policy: &Policy) -> Presented {
    present_with(object, policy, &[])
}

/// `sensitive` adds tool-declared paths to the policy's own list. Nothing is
/// redacted unless `redactSensitiveFields` is set.
pub fn present_with(object: &Value, policy: &Policy, sensitive: &[String]) -> Presented {
    let mut value = object.clone();
    let mut redacted_paths = BTreeSet::new();
    if !policy.redact_sensitive_fields {
        return Presented { value, redacted_paths };
    }
    let paths: BTreeSet<&str> =
        policy.redacted_field_paths.iter().map(String::as_str).chain(sensitive.iter().map(String::as_str)).collect();
    for path in paths {
        let segments: Vec<&str> = path.split('.').collect();
        if redact_path(&mut value, &segments) {
            redacted_paths.insert(path.to_owned());
        }
    }
    Presented { value, redacted_paths }
}

// Arrays are traversed transparently: a path applies to every element.
fn redact_path(value: &mut Value, segments: &[&str]) -> bool {
    match value {
        Value::Array(items) => items.iter_mut().fold(false, |hit, item| redact_path(item, segments) | hit),
        Value::Object(map) => {
            let Some((head, rest)) = segments.split_first() else { return false };
            let Some(child) = map.get_mut(*head) else { return false };
            if rest.is_empty() {
                if child.as_str() == Some(REDACTION_MARKER) {
                    return false;
                }
                *child = Value::String(REDACTION_MARKER.to_owned());
                true
            } else {
                redact_path(child, rest)
            }
        }
        _ => false,
    }
}
