use std::collections::BTreeSet;
use std::sync::Arc;

use chrono::{DateTime, Utc};
use openport_core::adapter::{DemoDomain, SCOPES};
use openport_core::admission::AdmissionController;
use openport_core::audit::AuditLog;
use openport_core::clock::{Clock, SystemClock};
use openport_core::credentials::{CredentialError, CredentialStore, IntegrationApp, NewApp, Operator, Policy};
use openport_core::pipeline::WritePipeline;
use openport_core::policy::DomainResolver;
use openport_core::registry::ToolRegistry;

use crate::config::GatewayConfig;

/// Shared state behind both planes.
pub struct Runtime {
    pub config: GatewayConfig,
    pub clock: Arc<dyn Clock>,
    pub audit: Arc<AuditLog>,
    pub credentials: Arc<CredentialStore>,
    pub registry: Arc<ToolRegistry>,
    pub admission: Arc<AdmissionController>,
    pub pipeline: Arc<WritePipeline>,
    pub domain: Arc<DemoDomain>,
}

impl std::fmt::Debug for Runtime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Runtime").field("config", &self.config).finish_non_exhaustive()
    }
}

impl Runtime {
    /// Reference runtime over the demo accounting domain and the wall clock.
    pub fn reference(config: GatewayConfig) -> Arc<Self> {
        Self::with_clock(config, Arc::new(SystemClock))
    }

    /// Demo data is seeded relative to the clock's current date.
    pub fn with_clock(config: GatewayConfig, clock: Arc<dyn Clock>) -> Arc<Self> {
        let domain = Arc::new(DemoDomain::seeded(clock.now().date_naive()));
        let mut registry = ToolRegistry::new();
        domain.register_tools(&mut registry).expect("demo tools are well formed");
        let registry = Arc::new(registry);
        let audit = Arc::new(AuditLog::new(clock.clone()));
        let credentials = Arc::new(CredentialStore::new(registry.scope_labels(), audit.clone(), clock.clone()));
        let admission = Arc::new(AdmissionController::new(config.rate_window_seconds, config.rate_limit));
        let pipeline = Arc::new(WritePipeline::new(
            registry.clone(),
            credentials.clone(),
            audit.clone(),
            clock.clone(),
            config.preflight_ttl_seconds,
        ));
        Arc::new(Runtime { config, clock, audit, credentials, registry, admission, pipeline, domain })
    }

    pub fn resolver(&self) -> &dyn DomainResolver {
        &*self.domain
    }

    pub fn now(&self) -> DateTime<Utc> {
        self.clock.now()
    }

    /// Creates an app holding every demo scope in `tenant_id` and issues one
    /// key. Returns the app and the one-time token.
    pub fn bootstrap_app(&self, name: &str, tenant_id: &str) -> Result<(IntegrationApp, String), CredentialError> {
        let by = Operator::system();
        let app = self.credentials.create_app(
            NewApp {
                name: name.into(),
                scopes: SCOPES.iter().map(|s| s.to_string()).collect::<BTreeSet<_>>(),
                policy: Policy::default(),
                tenant_id: tenant_id.into(),
                service_actor_user_id: None,
            },
            &by,
        )?;
        let (_, token) = self.credentials.issue_key(&app.id, None, &by)?;
        Ok((app, token))
    }
}
