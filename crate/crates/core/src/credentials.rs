//! Integration apps and agent keys: issuance, rotation, revocation and
//! bearer authentication.
//!
//! Secrets are returned once from [`CredentialStore::issue_key`] and never
//! stored; the store keeps a SHA-256 of the secret plus an 8-char prefix.

use std::collections::{BTreeSet, HashMap};
use std::net::IpAddr;
use std::sync::Arc;

use chrono::{DateTime, Utc};
use ipnet::IpNet;
use parking_lot::RwLock;
use rand::distr::{Alphanumeric, SampleString};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::audit::{actions, AuditEntry, AuditLog, AuditStatus, RequestMeta};
use crate::canonical::Digest;
use crate::clock::Clock;
use crate::envelope::ReasonCode;
use crate::ids::new_id;

pub const TOKEN_PREFIX: &str = "opk_";
const TOKEN_BODY_LEN: usize = 43;
const DISPLAY_PREFIX_LEN: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AppStatus {
    Active,
    Revoked,
    Disabled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KeyStatus {
    Active,
    Revoked,
}

/// ABAC constraints applied after scope checks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct Policy {
    /// Absent: no network restriction. Present but empty: deny all.
    pub ip_allowlist: Option<Vec<String>>,
    /// Absent: unrestricted.
    pub allowed_resource_ids: Option<BTreeSet<String>>,
    pub max_query_window_days: u32,
    pub redact_sensitive_fields: bool,
    pub redacted_field_paths: BTreeSet<String>,
    pub disabled_tools: BTreeSet<String>,
}

impl Default for Policy {
    fn default() -> Self {
        Policy {
            ip_allowlist: None,
            allowed_resource_ids: None,
            max_query_window_days: 90,
            redact_sensitive_fields: false,
            redacted_field_paths: BTreeSet::new(),
            disabled_tools: BTreeSet::new(),
        }
    }
}

impl Policy {
    pub fn validate(&self) -> Result<(), CredentialError> {
        if self.max_query_window_days < 1 {
            return Err(CredentialError::Validation("maxQueryWindowDays must be >= 1".into()));
        }
        for entry in self.ip_allowlist.iter().flatten() {
            parse_net(entry)
                .ok_or_else(|| CredentialError::Validation(format!("invalid IP or CIDR `{entry}`")))?;
        }
        if self.redacted_field_paths.iter().any(|p| p.is_empty() || p.split('.').any(str::is_empty)) {
            return Err(CredentialError::Validation("redacted field paths must be dot paths".into()));
        }
        Ok(())
    }

    /// Network predicate. Unparseable entries never match.
    pub fn ip_allowed(&self, ip: IpAddr) -> bool {
        match &self.ip_allowlist {
            None => true,
            Some(entries) => entries.iter().filter_map(|e| parse_net(e)).any(|net| net.contains(&ip)),
        }
    }
}

fn parse_net(s: &str) -> Option<IpNet> {
    s.parse::<IpNet>().ok().or_else(|| s.parse::<IpAddr>().ok().map(IpNet::from))
}

/// Auto-execute window. Disabled unless explicitly enabled with an expiry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct AutoExecConfig {
    pub enabled: bool,
    pub expires_at: Option<DateTime<Utc>>,
    /// Empty: every tool is eligible.
    pub allow_list: BTreeSet<String>,
    pub require_preflight_high_risk: bool,
    pub require_idempotency_high_risk: bool,
}

impl Default for AutoExecConfig {
    fn default() -> Self {
        AutoExecConfig {
            enabled: false,
            expires_at: None,
            allow_list: BTreeSet::new(),
            require_preflight_high_risk: true,
            require_idempotency_high_risk: true,
        }
    }
}

impl AutoExecConfig {
    pub fn window(expires_at: DateTime<Utc>) -> Self {
        AutoExecConfig { enabled: true, expires_at: Some(expires_at), ..Default::default() }
    }

    pub fn validate(&self) -> Result<(), CredentialError> {
        if self.enabled && self.expires_at.is_none() {
            return Err(CredentialError::Validation("enabled auto-execute requires expiresAt".into()));
        }
        Ok(())
    }

    pub fn is_open(&self, now: DateTime<Utc>) -> bool {
        self.enabled && self.expires_at.is_some_and(|exp| now < exp)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct IntegrationApp {
    pub id: String,
    pub name: String,
    pub status: AppStatus,
    pub scopes: BTreeSet<String>,
    pub policy: Policy,
    pub auto_exec: AutoExecConfig,
    pub tenant_id: String,
    pub service_actor_user_id: String,
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AgentKey {
    pub id: String,
    pub app_id: String,
    pub secret_hash: Digest,
    pub token_prefix: String,
    pub status: KeyStatus,
    pub created_at: DateTime<Utc>,
    pub expires_at: Option<DateTime<Utc>>,
    pub last_used_at: Option<DateTime<Utc>>,
}

/// Result of a successful authentication; a snapshot taken at request start.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuthContext {
    pub app: IntegrationApp,
    pub key: AgentKey,
    pub actor_user_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AuthFailure {
    Invalid,
    Expired,
}

impl AuthFailure {
    pub fn code(self) -> ReasonCode {
        match self {
            AuthFailure::Invalid => ReasonCode::TokenInvalid,
            AuthFailure::Expired => ReasonCode::TokenExpired,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CredentialError {
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("unknown app `{0}`")]
    UnknownApp(String),
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("app `{0}` is not active")]
    AppNotActive(String),
}

/// Who performed an admin mutation, and from where.
#[derive(Debug, Clone)]
pub struct Operator {
    pub user_id: String,
    pub meta: RequestMeta,
}

impl Operator {
    pub fn new(user_id: impl Into<String>, meta: RequestMeta) -> Self {
        Operator { user_id: user_id.into(), meta }
    }

    pub fn system() -> Self {
        Operator::new("system", RequestMeta::local())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct NewApp {
    pub name: String,
    #[serde(default)]
    pub scopes: BTreeSet<String>,
    #[serde(default)]
    pub policy: Policy,
    pub tenant_id: String,
    #[serde(default)]
    pub service_actor_user_id: Option<String>,
}

#[derive(Default)]
struct Inner {
    apps: HashMap<String, IntegrationApp>,
    keys: HashMap<String, AgentKey>,
    by_secret_hash: HashMap<Digest, String>,
}

/// Linearizable in-memory store: every read and transition holds the lock.
pub struct CredentialStore {
    inner: RwLock<Inner>,
    known_scopes: BTreeSet<String>,
    audit: Arc<AuditLog>,
    clock: Arc<dyn Clock>,
}

impl std::fmt::Debug for CredentialStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let inner = self.inner.read();
        f.debug_struct("CredentialStore")
            .field("apps", &inner.apps.len())
            .field("keys", &inner.keys.len())
            .finish()
    }
}

impl CredentialStore {
    pub fn new(known_scopes: BTreeSet<String>, audit: Arc<AuditLog>, clock: Arc<dyn Clock>) -> Self {
        CredentialStore { inner: RwLock::new(Inner::default()), known_scopes, audit, clock }
    }

    pub fn known_scopes(&self) -> &BTreeSet<String> {
        &self.known_scopes
    }

    pub fn create_app(&self, new: NewApp, by: &Operator) -> Result<IntegrationApp, CredentialError> {
        if new.name.trim().is_empty() {
            return Err(CredentialError::Validation("name must not be empty".into()));
        }
        if new.tenant_id.trim().is_empty() {
            return Err(CredentialError::Validation("tenantId must not be empty".into()));
        }
        if let Some(unknown) = new.scopes.iter().find(|s| !self.known_scopes.contains(*s)) {
            return Err(CredentialError::Validation(format!("unknown scope `{unknown}`")));
        }
        new.policy.validate()?;
        let id = new_id("app");
        let app = IntegrationApp {
            service_actor_user_id: new.service_actor_user_id.unwrap_or_else(|| format!("svc_{}", &id[4..12])),
            id,
            name: new.name,
            status: AppStatus::Active,
            scopes: new.scopes,
            policy: new.policy,
            auto_exec: AutoExecConfig::default(),
            tenant_id: new.tenant_id,
            created_at: self.clock.now(),
        };
        self.inner.write().apps.insert(app.id.clone(), app.clone());
        self.audit.emit(
            self.admin_entry(actions::APP_CREATE, by)
                .app(&app.id)
                .details(json!({"name": app.name, "scopes": app.scopes, "tenantId": app.tenant_id})),
        );
        Ok(app)
    }

    /// Returns the key record and the secret. The secret is not retrievable again.
    pub fn issue_key(
        &self,
        app_id: &str,
        expires_at: Option<DateTime<Utc>>,
        by: &Operator,
    ) -> Result<(AgentKey, String), CredentialError> {
        let secret = format!("{TOKEN_PREFIX}{}", Alphanumeric.sample_string(&mut rand::rng(), TOKEN_BODY_LEN));
        let key = {
            let mut inner = self.inner.write();
            let app = inner.apps.get(app_id).ok_or_else(|| CredentialError::UnknownApp(app_id.into()))?;
            if app.status != AppStatus::Active {
                return Err(CredentialError::AppNotActive(app_id.into()));
            }
            let key = AgentKey {
                id: new_id("key"),
                app_id: app_id.to_owned(),
                secret_hash: Digest::of(secret.as_bytes()),
                token_prefix: secret[..DISPLAY_PREFIX_LEN].to_owned(),
                status: KeyStatus::Active,
                created_at: self.clock.now(),
                expires_at,
                last_used_at: None,
            };
            inner.by_secret_hash.insert(key.secret_hash.clone(), key.id.clone());
            inner.keys.insert(key.id.clone(), key.clone());
            key
        };
        self.audit.emit(
            self.admin_entry(actions::KEY_CREATE, by)
                .app(app_id)
                .key(&key.id)
                .details(json!({"tokenPrefix": key.token_prefix, "expiresAt": key.expires_at})),
        );
        Ok((key, secret))
    }

    /// Resolves a raw bearer token. Denials never reveal which check failed
    /// beyond invalid vs expired.
    pub fn authenticate(&self, bearer: &str, now: DateTime<Utc>) -> Result<AuthContext, AuthFailure> {
        if !bearer.starts_with(TOKEN_PREFIX) || bearer.len() != TOKEN_PREFIX.len() + TOKEN_BODY_LEN {
            return Err(AuthFailure::Invalid);
        }
        let hash = Digest::of(bearer.as_bytes());
        let mut inner = self.inner.write();
        let key_id = inner.by_secret_hash.get(&hash).cloned().ok_or(AuthFailure::Invalid)?;
        let key = inner.keys.get(&key_id).ok_or(AuthFailure::Invalid)?;
        if key.status != KeyStatus::Active {
            return Err(AuthFailure::Invalid);
        }
        let app = inner.apps.get(&key.app_id).ok_or(AuthFailure::Invalid)?;
        if app.status != AppStatus::Active {
            return Err(AuthFailure::Invalid);
        }
        if key.expires_at.is_some_and(|exp| now >= exp) {
            return Err(AuthFailure::Expired);
        }
        let app = app.clone();
        let key = inner.keys.get_mut(&key_id).expect("looked up above");
        key.last_used_at = Some(now);
        let key = key.clone();
        Ok(AuthContext { actor_user_id: app.service_actor_user_id.clone(), app, key })
    }

    /// True while both the key and its app can still authenticate.
    pub fn is_live(&self, app_id: &str, key_id: &str) -> bool {
        let inner = self.inner.read();
        let key_ok = inner.keys.get(key_id).is_some_and(|k| k.status == KeyStatus::Active);
        let app_ok = inner.apps.get(app_id).is_some_and(|a| a.status == AppStatus::Active);
        key_ok && app_ok
    }

    pub fn revoke_key(&self, key_id: &str, by: &Operator) -> Result<AgentKey, CredentialError> {
        let key = {
            let mut inner = self.inner.write();
            let key = inner.keys.get_mut(key_id).ok_or_else(|| CredentialError::UnknownKey(key_id.into()))?;
            key.status = KeyStatus::Revoked;
            key.clone()
        };
        self.audit.emit(self.admin_entry(actions::KEY_REVOKE, by).app(&key.app_id).key(&key.id));
        Ok(key)
    }

    pub fn revoke_app(&self, app_id: &str, by: &Operator) -> Result<IntegrationApp, CredentialError> {
        self.set_app_status(app_id, AppStatus::Revoked, actions::APP_REVOKE, by)
    }

    /// Emergency switch; reversible with [`CredentialStore::enable_app`].
    pub fn disable_app(&self, app_id: &str, by: &Operator) -> Result<IntegrationApp, CredentialError> {
        self.set_app_status(app_id, AppStatus::Disabled, actions::APP_DISABLE, by)
    }

    /// Re-activates a disabled app. Revocation is final.
    pub fn enable_app(&self, app_id: &str, by: &Operator) -> Result<IntegrationApp, CredentialError> {
        {
            let inner = self.inner.read();
            let app = inner.apps.get(app_id).ok_or_else(|| CredentialError::UnknownApp(app_id.into()))?;
            if app.status == AppStatus::Revoked {
                return Err(CredentialError::AppNotActive(app_id.into()));
            }
        }
        self.set_app_status(app_id, AppStatus::Active, actions::APP_ENABLE, by)
    }

    fn set_app_status(
        &self,
        app_id: &str,
        status: AppStatus,
        action: &str,
        by: &Operator,
    ) -> Result<IntegrationApp, CredentialError> {
        let app = self.update_app(app_id, |app| {
            app.status = status;
            Ok(())
        })?;
        self.audit.emit(self.admin_entry(action, by).app(app_id));
        Ok(app)
    }

    pub fn update_policy(&self, app_id: &str, policy: Policy, by: &Operator) -> Result<IntegrationApp, CredentialError> {
        policy.validate()?;
        let app = self.update_app(app_id, |app| {
            app.policy = policy;
            Ok(())
        })?;
        self.audit.emit(
            self.admin_entry(actions::APP_POLICY_UPDATE, by)
                .app(app_id)
                .details(json!({ "maxQueryWindowDays": app.policy.max_query_window_days })),
        );
        Ok(app)
    }

    pub fn update_auto_exec(
        &self,
        app_id: &str,
        cfg: AutoExecConfig,
        by: &Operator,
    ) -> Result<IntegrationApp, CredentialError> {
        cfg.validate()?;
        let app = self.update_app(app_id, |app| {
            app.auto_exec = cfg;
            Ok(())
        })?;
        self.audit.emit(
            self.admin_entry(actions::APP_AUTO_EXECUTE_UPDATE, by)
                .app(app_id)
                .details(json!({ "enabled": app.auto_exec.enabled, "expiresAt": app.auto_exec.expires_at })),
        );
        Ok(app)
    }

    /// Replaces the granted scope set.
    pub fn update_scopes(
        &self,
        app_id: &str,
        scopes: BTreeSet<String>,
        by: &Operator,
    ) -> Result<IntegrationApp, CredentialError> {
        if let Some(unknown) = scopes.iter().find(|s| !self.known_scopes.contains(*s)) {
            return Err(CredentialError::Validation(format!("unknown scope `{unknown}`")));
        }
        let app = self.update_app(app_id, |app| {
            app.scopes = scopes;
            Ok(())
        })?;
        self.audit.emit(
            self.admin_entry(actions::APP_POLICY_UPDATE, by).app(app_id).details(json!({ "scopes": app.scopes })),
        );
        Ok(app)
    }

    fn update_app(
        &self,
        app_id: &str,
        f: impl FnOnce(&mut IntegrationApp) -> Result<(), CredentialError>,
    ) -> Result<IntegrationApp, CredentialError> {
        let mut inner = self.inner.write();
        let app = inner.apps.get_mut(app_id).ok_or_else(|| CredentialError::UnknownApp(app_id.into()))?;
        f(app)?;
        Ok(app.clone())
    }

    pub fn app(&self, app_id: &str) -> Option<IntegrationApp> {
        self.inner.read().apps.get(app_id).cloned()
    }

    pub fn key(&self, key_id: &str) -> Option<AgentKey> {
        self.inner.read().keys.get(key_id).cloned()
    }

    pub fn apps(&self) -> Vec<IntegrationApp> {
        let mut apps: Vec<_> = self.inner.read().apps.values().cloned().collect();
        apps.sort_by(|a, b| a.created_at.cmp(&b.created_at).then_with(|| a.id.cmp(&b.id)));
        apps
    }

    pub fn keys_for(&self, app_id: &str) -> Vec<AgentKey> {
        let mut keys: Vec<_> = self.inner.read().keys.values().filter(|k| k.app_id == app_id).cloned().collect();
        keys.sort_by(|a, b| a.created_at.cmp(&b.created_at).then_with(|| a.id.cmp(&b.id)));
        keys
    }

    /// Full serialized state, for export and for secret-absence scans.
    pub fn export_snapshot(&self) -> serde_json::Value {
        let inner = self.inner.read();
        let mut apps: Vec<_> = inner.apps.values().collect();
        apps.sort_by(|a, b| a.id.cmp(&b.id));
        let mut keys: Vec<_> = inner.keys.values().collect();
        keys.sort_by(|a, b| a.id.cmp(&b.id));
        json!({ "apps": apps, "keys": keys })
    }

    fn admin_entry(&self, action: &str, by: &Operator) -> AuditEntry {
        AuditEntry::new(action, AuditStatus::Success, &by.meta).performed_by(&by.user_id)
    }
}
