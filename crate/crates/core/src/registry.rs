//! Tool registry and authorization-dependent manifests.
//!
//! A tool is visible to an app iff its required scopes are a subset of the
//! app's scopes and the app policy allows it. Invisible and nonexistent
//! tools are indistinguishable to callers.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::credentials::IntegrationApp;
use crate::envelope::ReasonCode;
use crate::policy::DomainResolver;

pub const ACTIONS_PATH: &str = "/api/agent/v1/actions";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Risk {
    Low,
    Medium,
    High,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HttpHint {
    pub method: String,
    pub path: String,
}

impl HttpHint {
    pub fn get(path: &str) -> Self {
        HttpHint { method: "GET".into(), path: path.into() }
    }

    pub fn action() -> Self {
        HttpHint { method: "POST".into(), path: ACTIONS_PATH.into() }
    }
}

/// Identity under which a tool body runs. The tenant is always the
/// authenticated app's binding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecContext {
    pub actor_user_id: String,
    pub tenant_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{0}")]
pub struct ToolError(pub String);

pub type ImpactFn = Arc<dyn Fn(&Value) -> Result<Value, ToolError> + Send + Sync>;
pub type WitnessFn = Arc<dyn Fn(&Value) -> Result<Value, ToolError> + Send + Sync>;
pub type ExecuteFn = Arc<dyn Fn(&ExecContext, &Value) -> Result<Value, ToolError> + Send + Sync>;

pub struct ToolDescriptor {
    pub name: String,
    pub description: String,
    pub required_scopes: BTreeSet<String>,
    pub risk: Risk,
    pub requires_confirmation: bool,
    pub http: HttpHint,
    pub input_schema: Value,
    pub output_schema: Value,
    pub read_only: bool,
    /// Resource domain the tool operates in; hidden when the policy's
    /// resource allowlist excludes the whole domain.
    pub resource_domain: Option<String>,
    /// Payload fields holding resource ids subject to policy and boundary checks.
    pub resource_fields: Vec<String>,
    /// Payload fields carrying a `(start, end)` query window.
    pub window_fields: Option<(String, String)>,
    /// Output paths redacted when the app policy asks for redaction.
    pub sensitive_paths: Vec<String>,
    pub impact_fn: Option<ImpactFn>,
    pub witness_fn: Option<WitnessFn>,
    pub execute_fn: ExecuteFn,
    validator: Option<jsonschema::Validator>,
}

impl fmt::Debug for ToolDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ToolDescriptor")
            .field("name", &self.name)
            .field("risk", &self.risk)
            .field("required_scopes", &self.required_scopes)
            .field("requires_confirmation", &self.requires_confirmation)
            .field("read_only", &self.read_only)
            .finish_non_exhaustive()
    }
}

impl ToolDescriptor {
    pub fn new(name: &str, description: &str, risk: Risk, execute_fn: ExecuteFn) -> Self {
        ToolDescriptor {
            name: name.to_owned(),
            description: description.to_owned(),
            required_scopes: BTreeSet::new(),
            risk,
            requires_confirmation: false,
            http: HttpHint::action(),
            input_schema: json!({"type": "object"}),
            output_schema: json!({}),
            read_only: false,
            resource_domain: None,
            resource_fields: Vec::new(),
            window_fields: None,
            sensitive_paths: Vec::new(),
            impact_fn: None,
            witness_fn: None,
            execute_fn,
            validator: None,
        }
    }

    pub fn scopes(mut self, scopes: &[&str]) -> Self {
        self.required_scopes = scopes.iter().map(|s| s.to_string()).collect();
        self
    }

    pub fn confirm(mut self) -> Self {
        self.requires_confirmation = true;
        self
    }

    pub fn read_only(mut self, http: HttpHint) -> Self {
        self.read_only = true;
        self.http = http;
        self
    }

    pub fn schemas(mut self, input: Value, output: Value) -> Self {
        self.input_schema = input;
        self.output_schema = output;
        self
    }

    pub fn domain(mut self, domain: &str, resource_fields: &[&str]) -> Self {
        self.resource_domain = Some(domain.to_owned());
        self.resource_fields = resource_fields.iter().map(|s| s.to_string()).collect();
        self
    }

    pub fn window(mut self, start: &str, end: &str) -> Self {
        self.window_fields = Some((start.to_owned(), end.to_owned()));
        self
    }

    pub fn sensitive(mut self, paths: &[&str]) -> Self {
        self.sensitive_paths = paths.iter().map(|s| s.to_string()).collect();
        self
    }

    pub fn impact(mut self, f: ImpactFn) -> Self {
        self.impact_fn = Some(f);
        self
    }

    pub fn witness(mut self, f: WitnessFn) -> Self {
        self.witness_fn = Some(f);
        self
    }

    /// Structural validation against the input schema.
    pub fn validate_input(&self, payload: &Value) -> Result<(), String> {
        match &self.validator {
            Some(v) => v.validate(payload).map_err(|e| {
                let at = e.instance_path.to_string();
                if at.is_empty() { e.to_string() } else { format!("{at}: {e}") }
            }),
            None => Ok(()),
        }
    }

    /// Resource ids named by the payload. Non-string values are skipped and
    /// left to schema validation.
    pub fn resources_in(&self, payload: &Value) -> Vec<String> {
        self.resource_fields
            .iter()
            .filter_map(|f| payload.get(f).and_then(Value::as_str).map(str::to_owned))
            .collect()
    }

    /// Agent-visible projection: governance metadata, schemas, and hint.
    pub fn manifest_entry(&self) -> Value {
        json!({
            "name": self.name,
            "description": self.description,
            "requiredScopes": self.required_scopes,
            "risk": self.risk,
            "requiresConfirmation": self.requires_confirmation,
            "http": self.http,
            "inputSchema": self.input_schema,
            "outputSchema": self.output_schema,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RegistryError {
    #[error("tool `{0}` already registered")]
    Duplicate(String),
    #[error("high-risk tool `{0}` has no impact function")]
    MissingImpact(String),
    #[error("tool name `{0}` must be dot-separated lowercase segments")]
    BadName(String),
    #[error("tool `{0}` has an invalid input schema: {1}")]
    BadSchema(String, String),
}

/// Filled at startup, then shared immutably.
#[derive(Debug, Default)]
pub struct ToolRegistry {
    tools: BTreeMap<String, Arc<ToolDescriptor>>,
}

fn valid_name(name: &str) -> bool {
    name.contains('.')
        && name
            .split('.')
            .all(|seg| !seg.is_empty() && seg.bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_'))
}

impl ToolRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, mut tool: ToolDescriptor) -> Result<(), RegistryError> {
        if !valid_name(&tool.name) {
            return Err(RegistryError::BadName(tool.name));
        }
        if self.tools.contains_key(&tool.name) {
            return Err(RegistryError::Duplicate(tool.name));
        }
        if tool.risk == Risk::High && tool.impact_fn.is_none() {
            return Err(RegistryError::MissingImpact(tool.name));
        }
        let validator = jsonschema::validator_for(&tool.input_schema)
            .map_err(|e| RegistryError::BadSchema(tool.name.clone(), e.to_string()))?;
        tool.validator = Some(validator);
        self.tools.insert(tool.name.clone(), Arc::new(tool));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<Arc<ToolDescriptor>> {
        self.tools.get(name).cloned()
    }

    pub fn all(&self) -> impl Iterator<Item = &Arc<ToolDescriptor>> {
        self.tools.values()
    }

    pub fn scope_labels(&self) -> BTreeSet<String> {
        self.tools.values().flat_map(|t| t.required_scopes.iter().cloned()).collect()
    }

    /// Tool-level policy gate: explicit per-app disablement, or a resource
    /// allowlist that leaves nothing of the tool's domain.
    pub fn policy_allows(app: &IntegrationApp, tool: &ToolDescriptor, resolver: &dyn DomainResolver) -> bool {
        if app.policy.disabled_tools.contains(&tool.name) {
            return false;
        }
        match (&app.policy.allowed_resource_ids, &tool.resource_domain) {
            (Some(allowed), Some(domain)) => {
                let ids = resolver.domain_ids(domain, &app.tenant_id);
                ids.iter().any(|id| allowed.contains(id))
            }
            _ => true,
        }
    }

    pub fn is_visible(app: &IntegrationApp, tool: &ToolDescriptor, resolver: &dyn DomainResolver) -> bool {
        tool.required_scopes.is_subset(&app.scopes) && Self::policy_allows(app, tool, resolver)
    }

    /// Visible tools in name order.
    pub fn visible_tools(&self, app: &IntegrationApp, resolver: &dyn DomainResolver) -> Vec<Arc<ToolDescriptor>> {
        self.tools.values().filter(|t| Self::is_visible(app, t, resolver)).cloned().collect()
    }

    pub fn build_manifest(&self, app: &IntegrationApp, resolver: &dyn DomainResolver) -> Value {
        let tools: Vec<Value> = self.visible_tools(app, resolver).iter().map(|t| t.manifest_entry()).collect();
        json!({
            "integration": {"appId": app.id, "name": app.name, "tenantId": app.tenant_id},
            "tools": tools,
        })
    }

    /// Nonexistent and invisible names both deny with `agent.action_unknown`.
    pub fn resolve(
        &self,
        name: &str,
        app: &IntegrationApp,
        resolver: &dyn DomainResolver,
    ) -> Result<Arc<ToolDescriptor>, ReasonCode> {
        self.tools
            .get(name)
            .filter(|t| Self::is_visible(app, t, resolver))
            .cloned()
            .ok_or(ReasonCode::ActionUnknown)
    }
}
