//! Risk-gated write lifecycle: preflight, draft-first submission,
//! auto-execute eligibility, idempotent execution and draft review.
//!
//! Draft transitions: draft -> confirmed, draft -> canceled,
//! confirmed -> failed. Canceled and failed are terminal.

use std::collections::{BTreeSet, HashMap};
use std::sync::Arc;

use chrono::{DateTime, Duration, Utc};
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::audit::{actions, AuditEntry, AuditLog, AuditStatus, RequestMeta};
use crate::canonical::{preflight_hash, witness_hash, Digest};
use crate::clock::Clock;
use crate::credentials::{AuthContext, AutoExecConfig, CredentialStore, Operator};
use crate::envelope::ReasonCode;
use crate::ids::new_id;
use crate::registry::{ExecContext, Risk, ToolDescriptor, ToolRegistry};

pub const DEFAULT_PREFLIGHT_TTL_SECONDS: u64 = 600;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ActionRequest {
    pub action: String,
    #[serde(default)]
    pub payload: Option<Value>,
    #[serde(default)]
    pub preflight_id: Option<String>,
    #[serde(default)]
    pub execute: bool,
    #[serde(default)]
    pub force_draft: bool,
    #[serde(default)]
    pub request_id: Option<String>,
    #[serde(default)]
    pub idempotency_key: Option<String>,
    #[serde(default)]
    pub justification: Option<String>,
    #[serde(default)]
    pub preflight_hash: Option<String>,
    #[serde(default)]
    pub state_witness_hash: Option<String>,
}

impl ActionRequest {
    pub fn new(action: &str, payload: Value) -> Self {
        ActionRequest {
            action: action.to_owned(),
            payload: Some(payload),
            preflight_id: None,
            execute: false,
            force_draft: false,
            request_id: None,
            idempotency_key: None,
            justification: None,
            preflight_hash: None,
            state_witness_hash: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct PreflightRequest {
    pub action: String,
    #[serde(default)]
    pub payload: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct PreflightRecord {
    pub preflight_id: String,
    pub app_id: String,
    pub key_id: String,
    pub actor_user_id: String,
    pub action: String,
    pub payload: Value,
    pub impact: Value,
    pub impact_hash: Digest,
    pub state_witness_hash: Option<Digest>,
    pub expires_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct PreflightResult {
    pub preflight_id: String,
    pub impact: Value,
    pub impact_hash: Digest,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub state_witness_hash: Option<Digest>,
    pub expires_at: DateTime<Utc>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DraftStatus {
    Draft,
    Confirmed,
    Canceled,
    Failed,
}

impl DraftStatus {
    pub const ALL: [DraftStatus; 4] = [DraftStatus::Draft, DraftStatus::Confirmed, DraftStatus::Canceled, DraftStatus::Failed];

    pub fn can_transition(self, to: DraftStatus) -> bool {
        matches!(
            (self, to),
            (DraftStatus::Draft, DraftStatus::Confirmed)
                | (DraftStatus::Draft, DraftStatus::Canceled)
                | (DraftStatus::Confirmed, DraftStatus::Failed)
        )
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, DraftStatus::Canceled | DraftStatus::Failed)
    }

    pub fn parse(s: &str) -> Option<Self> {
        serde_json::from_value(Value::String(s.to_owned())).ok()
    }
}

/// Governance inputs frozen at draft creation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PolicySnapshot {
    pub required_scopes: BTreeSet<String>,
    pub risk: Risk,
    pub auto_exec_config: AutoExecConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Draft {
    pub id: String,
    pub app_id: String,
    pub key_id: String,
    pub actor_user_id: String,
    pub action_type: String,
    pub payload: Value,
    pub risk: Risk,
    pub auto_execute_requested: bool,
    pub justification: Option<String>,
    pub preflight_hash: Option<Digest>,
    pub state_witness_hash: Option<Digest>,
    pub idempotency_key: Option<String>,
    pub policy_snapshot: PolicySnapshot,
    pub status: DraftStatus,
    pub denial_code: Option<ReasonCode>,
    pub created_at: DateTime<Utc>,
    pub decided_at: Option<DateTime<Utc>>,
    pub decided_by_user_id: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExecutionStatus {
    Succeeded,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Execution {
    pub id: String,
    pub draft_id: String,
    pub status: ExecutionStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub result: Option<Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error_message: Option<String>,
    pub replayed: bool,
    pub executed_at: DateTime<Utc>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum OutcomeKind {
    Draft,
    Executed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub kind: OutcomeKind,
    pub draft: Draft,
    pub execution: Option<Execution>,
    pub denial_code: Option<ReasonCode>,
    pub replayed: bool,
}

impl Outcome {
    pub fn code(&self) -> ReasonCode {
        if self.replayed { ReasonCode::IdempotencyReplay } else { ReasonCode::Ok }
    }

    pub fn to_json(&self) -> Value {
        let mut v = json!({
            "kind": self.kind,
            "draft": self.draft,
            "replayed": self.replayed,
        });
        if let Some(e) = &self.execution {
            v["execution"] = json!(e);
        }
        if let Some(c) = self.denial_code {
            v["denialCode"] = json!(c);
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{code}: {message}")]
pub struct PipelineError {
    pub code: ReasonCode,
    pub message: String,
    /// Draft affected by the failure, if any.
    pub draft: Option<Box<Draft>>,
    /// True when the pipeline already recorded an audit event for it.
    pub audited: bool,
}

impl PipelineError {
    fn new(code: ReasonCode, message: impl Into<String>) -> Self {
        PipelineError { code, message: message.into(), draft: None, audited: false }
    }

    pub fn details(&self) -> Option<Value> {
        self.draft.as_ref().map(|d| json!({ "draft": d }))
    }
}

impl From<ReasonCode> for PipelineError {
    fn from(code: ReasonCode) -> Self {
        let message = match code {
            ReasonCode::DraftNotFound => "draft not found",
            ReasonCode::DraftAlreadyFinal => "draft is not pending",
            ReasonCode::ActionUnknown => "unknown action",
            _ => "request denied",
        };
        PipelineError::new(code, message)
    }
}

/// Eligibility terms in order; the first failing term decides the code.
pub fn auto_exec_allowed(
    req: &ActionRequest,
    supplied_hash: Option<&str>,
    tool: &ToolDescriptor,
    cfg: &AutoExecConfig,
    now: DateTime<Utc>,
    expected_hash: &Digest,
) -> Result<(), ReasonCode> {
    if !req.execute || req.force_draft {
        return Err(ReasonCode::AutoExecuteDenied);
    }
    if !cfg.enabled {
        return Err(ReasonCode::AutoExecuteDisabled);
    }
    if cfg.expires_at.is_none_or(|exp| now >= exp) {
        return Err(ReasonCode::AutoExecuteExpired);
    }
    if !cfg.allow_list.is_empty() && !cfg.allow_list.contains(&tool.name) {
        return Err(ReasonCode::AutoExecuteDenied);
    }
    if tool.requires_confirmation && !cfg.allow_list.contains(&tool.name) {
        return Err(ReasonCode::AutoExecuteDenied);
    }
    if tool.risk == Risk::High {
        if req.justification.as_deref().is_none_or(|j| j.trim().is_empty()) {
            return Err(ReasonCode::ActionInvalid);
        }
        if cfg.require_idempotency_high_risk && req.idempotency_key.as_deref().is_none_or(str::is_empty) {
            return Err(ReasonCode::IdempotencyRequired);
        }
        if cfg.require_preflight_high_risk {
            match supplied_hash {
                None => return Err(ReasonCode::PreflightRequired),
                Some(h) if h != expected_hash.as_str() => return Err(ReasonCode::PreflightMismatch),
                Some(_) => {}
            }
        }
    }
    Ok(())
}

#[derive(Default)]
struct Records {
    drafts: HashMap<String, Draft>,
    order: Vec<String>,
    executions: Vec<Execution>,
    latest_execution: HashMap<String, usize>,
}

type Slot = Arc<Mutex<Option<String>>>;

pub struct WritePipeline {
    registry: Arc<ToolRegistry>,
    credentials: Arc<CredentialStore>,
    audit: Arc<AuditLog>,
    clock: Arc<dyn Clock>,
    preflight_ttl: Duration,
    preflights: Mutex<HashMap<String, PreflightRecord>>,
    records: RwLock<Records>,
    idempotency: Mutex<HashMap<(String, String), Slot>>,
}

impl std::fmt::Debug for WritePipeline {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("WritePipeline")
            .field("drafts", &self.draft_count())
            .field("executions", &self.execution_count())
            .finish_non_exhaustive()
    }
}

impl WritePipeline {
    pub fn new(
        registry: Arc<ToolRegistry>,
        credentials: Arc<CredentialStore>,
        audit: Arc<AuditLog>,
        clock: Arc<dyn Clock>,
        preflight_ttl_seconds: u64,
    ) -> Self {
        WritePipeline {
            registry,
            credentials,
            audit,
            clock,
            preflight_ttl: Duration::seconds(preflight_ttl_seconds as i64),
            preflights: Mutex::new(HashMap::new()),
            records: RwLock::new(Records::default()),
            idempotency: Mutex::new(HashMap::new()),
        }
    }

    pub fn preflight(
        &self,
        ctx: &AuthContext,
        meta: &RequestMeta,
        tool: &ToolDescriptor,
        payload: Value,
    ) -> Result<PreflightResult, PipelineError> {
        if tool.read_only {
            return Err(PipelineError::new(ReasonCode::ActionInvalid, "read-only tools have no preflight"));
        }
        tool.validate_input(&payload).map_err(|m| PipelineError::new(ReasonCode::ActionInvalid, m))?;
        let impact = compute_impact(tool, &payload)?;
        let impact_hash = hash_or_invalid(preflight_hash(&tool.name, &payload, &impact))?;
        let state_witness_hash = current_witness(tool, &payload)?;
        let now = self.clock.now();
        let record = PreflightRecord {
            preflight_id: new_id("pf"),
            app_id: ctx.app.id.clone(),
            key_id: ctx.key.id.clone(),
            actor_user_id: ctx.actor_user_id.clone(),
            action: tool.name.clone(),
            payload,
            impact: impact.clone(),
            impact_hash: impact_hash.clone(),
            state_witness_hash: state_witness_hash.clone(),
            expires_at: now + self.preflight_ttl,
        };
        let result = PreflightResult {
            preflight_id: record.preflight_id.clone(),
            impact,
            impact_hash,
            state_witness_hash,
            expires_at: record.expires_at,
        };
        {
            let mut cache = self.preflights.lock();
            cache.retain(|_, r| now < r.expires_at);
            cache.insert(record.preflight_id.clone(), record);
        }
        self.audit.emit(
            agent_entry(actions::ACTION_PREFLIGHT, AuditStatus::Success, ctx, meta)
                .details(json!({"actionType": tool.name, "impactHash": result.impact_hash})),
        );
        Ok(result)
    }

    /// Cached payload of a live preflight owned by this credential context.
    pub fn peek_preflight_payload(&self, ctx: &AuthContext, preflight_id: &str) -> Option<Value> {
        self.lookup_preflight(ctx, preflight_id, None).map(|r| r.payload)
    }

    fn lookup_preflight(&self, ctx: &AuthContext, preflight_id: &str, action: Option<&str>) -> Option<PreflightRecord> {
        let now = self.clock.now();
        let cache = self.preflights.lock();
        cache
            .get(preflight_id)
            .filter(|r| {
                now < r.expires_at
                    && r.app_id == ctx.app.id
                    && r.key_id == ctx.key.id
                    && r.actor_user_id == ctx.actor_user_id
                    && action.is_none_or(|a| a == r.action)
            })
            .cloned()
    }

    /// Authorization must already have passed for `tool`.
    pub fn submit(
        &self,
        ctx: &AuthContext,
        meta: &RequestMeta,
        tool: &ToolDescriptor,
        req: ActionRequest,
    ) -> Result<Outcome, PipelineError> {
        if tool.read_only {
            return Err(PipelineError::new(ReasonCode::ActionInvalid, "read-only tools cannot be submitted as actions"));
        }
        for h in [&req.preflight_hash, &req.state_witness_hash].into_iter().flatten() {
            if Digest::parse(h).is_none() {
                return Err(PipelineError::new(ReasonCode::ActionInvalid, "hashes must be 64 lowercase hex characters"));
            }
        }

        let slot = match (&req.idempotency_key, req.execute && !req.force_draft) {
            (Some(k), true) if !k.is_empty() => Some(self.slot(&ctx.app.id, k)),
            _ => None,
        };
        let mut guard = slot.as_ref().map(|s| s.lock());
        if let Some(execution_id) = guard.as_ref().and_then(|g| (**g).clone()) {
            return self.replay(ctx, meta, &execution_id);
        }

        let record = match &req.preflight_id {
            Some(id) => Some(
                self.lookup_preflight(ctx, id, Some(&tool.name))
                    .ok_or_else(|| PipelineError::new(ReasonCode::PreflightNotFound, "preflight not found or expired"))?,
            ),
            None => None,
        };
        let payload = req
            .payload
            .clone()
            .or_else(|| record.as_ref().map(|r| r.payload.clone()))
            .ok_or_else(|| PipelineError::new(ReasonCode::ActionInvalid, "payload is required"))?;
        tool.validate_input(&payload).map_err(|m| PipelineError::new(ReasonCode::ActionInvalid, m))?;

        let impact = compute_impact(tool, &payload)?;
        let expected_hash = hash_or_invalid(preflight_hash(&tool.name, &payload, &impact))?;
        let supplied_hash = req
            .preflight_hash
            .clone()
            .or_else(|| record.as_ref().map(|r| r.impact_hash.as_str().to_owned()));
        let witness = match req.state_witness_hash.as_deref().and_then(Digest::parse) {
            Some(w) => Some(w),
            None => match record.as_ref().and_then(|r| r.state_witness_hash.clone()) {
                Some(w) => Some(w),
                None => current_witness(tool, &payload)?,
            },
        };

        let now = self.clock.now();
        let denial = if req.execute {
            auto_exec_allowed(&req, supplied_hash.as_deref(), tool, &ctx.app.auto_exec, now, &expected_hash).err()
        } else {
            None
        };
        let eligible = req.execute && denial.is_none();

        let draft = Draft {
            id: new_id("drf"),
            app_id: ctx.app.id.clone(),
            key_id: ctx.key.id.clone(),
            actor_user_id: ctx.actor_user_id.clone(),
            action_type: tool.name.clone(),
            payload,
            risk: tool.risk,
            auto_execute_requested: req.execute,
            justification: req.justification.clone(),
            preflight_hash: supplied_hash.as_deref().and_then(Digest::parse),
            state_witness_hash: witness,
            idempotency_key: req.idempotency_key.clone(),
            policy_snapshot: PolicySnapshot {
                required_scopes: tool.required_scopes.clone(),
                risk: tool.risk,
                auto_exec_config: ctx.app.auto_exec.clone(),
            },
            status: if eligible { DraftStatus::Confirmed } else { DraftStatus::Draft },
            denial_code: denial,
            created_at: now,
            decided_at: eligible.then_some(now),
            decided_by_user_id: None,
        };
        {
            let mut records = self.records.write();
            records.order.push(draft.id.clone());
            records.drafts.insert(draft.id.clone(), draft.clone());
        }
        self.audit.emit(
            agent_entry(
                actions::DRAFT_CREATED,
                if denial.is_some() { AuditStatus::Denied } else { AuditStatus::Success },
                ctx,
                meta,
            )
            .maybe_code(denial)
            .draft(&draft.id)
            .details(json!({
                "actionType": draft.action_type,
                "risk": draft.risk,
                "autoExecuteRequested": draft.auto_execute_requested,
            })),
        );

        if !eligible {
            return Ok(Outcome { kind: OutcomeKind::Draft, draft, execution: None, denial_code: denial, replayed: false });
        }

        let execution = self.execute_draft(&draft, meta, None)?;
        if let Some(g) = guard.as_mut() {
            **g = Some(execution.id.clone());
        }
        let draft = self.draft(&draft.id).expect("draft was just stored");
        Ok(Outcome { kind: OutcomeKind::Executed, draft, execution: Some(execution), denial_code: None, replayed: false })
    }

    fn slot(&self, app_id: &str, key: &str) -> Slot {
        self.idempotency.lock().entry((app_id.to_owned(), key.to_owned())).or_default().clone()
    }

    fn replay(&self, ctx: &AuthContext, meta: &RequestMeta, execution_id: &str) -> Result<Outcome, PipelineError> {
        let (draft, mut execution) = {
            let records = self.records.read();
            let execution = records
                .executions
                .iter()
                .find(|e| e.id == execution_id)
                .cloned()
                .expect("idempotency slots only name recorded executions");
            let draft = records.drafts.get(&execution.draft_id).cloned().expect("executions reference drafts");
            (draft, execution)
        };
        execution.replayed = true;
        self.audit.emit(
            agent_entry(actions::IDEMPOTENCY_REPLAY, AuditStatus::Success, ctx, meta)
                .code(ReasonCode::IdempotencyReplay)
                .draft(&draft.id)
                .execution(&execution.id),
        );
        Ok(Outcome { kind: OutcomeKind::Executed, draft, execution: Some(execution), denial_code: None, replayed: true })
    }

    /// Runs a confirmed draft. A witness mismatch fails the draft without
    /// touching domain state.
    fn execute_draft(
        &self,
        draft: &Draft,
        meta: &RequestMeta,
        performed_by: Option<&str>,
    ) -> Result<Execution, PipelineError> {
        let tool = self
            .registry
            .get(&draft.action_type)
            .ok_or_else(|| PipelineError::new(ReasonCode::ActionUnknown, "tool no longer registered"))?;
        let entry = |status| {
            let mut e = AuditEntry::new(actions::ACTION_EXECUTE, status, meta)
                .app(&draft.app_id)
                .key(&draft.key_id)
                .actor(&draft.actor_user_id)
                .draft(&draft.id);
            if let Some(op) = performed_by {
                e = e.performed_by(op);
            }
            e
        };

        if let (Some(expected), Some(wf)) = (&draft.state_witness_hash, &tool.witness_fn) {
            let current = wf(&draft.payload).ok().and_then(|w| witness_hash(&w).ok());
            if current.as_ref() != Some(expected) {
                let failed = self.transition(&draft.id, DraftStatus::Confirmed, DraftStatus::Failed, None)?;
                self.audit.emit(
                    entry(AuditStatus::Failed)
                        .code(ReasonCode::PreconditionFailed)
                        .details(json!({"actionType": draft.action_type})),
                );
                return Err(PipelineError {
                    code: ReasonCode::PreconditionFailed,
                    message: "target state changed since the witness was taken".into(),
                    draft: Some(Box::new(failed)),
                    audited: true,
                });
            }
        }

        let tenant_id = self.credentials.app(&draft.app_id).map(|a| a.tenant_id).unwrap_or_default();
        let exec_ctx = ExecContext { actor_user_id: draft.actor_user_id.clone(), tenant_id };
        let outcome = (tool.execute_fn)(&exec_ctx, &draft.payload);
        let now = self.clock.now();
        let execution = match outcome {
            Ok(result) => Execution {
                id: new_id("exe"),
                draft_id: draft.id.clone(),
                status: ExecutionStatus::Succeeded,
                result: Some(result),
                error_message: None,
                replayed: false,
                executed_at: now,
            },
            Err(e) => Execution {
                id: new_id("exe"),
                draft_id: draft.id.clone(),
                status: ExecutionStatus::Failed,
                result: None,
                error_message: Some(e.0),
                replayed: false,
                executed_at: now,
            },
        };
        {
            let mut records = self.records.write();
            let idx = records.executions.len();
            records.executions.push(execution.clone());
            records.latest_execution.insert(draft.id.clone(), idx);
        }
        if execution.status == ExecutionStatus::Failed {
            self.transition(&draft.id, DraftStatus::Confirmed, DraftStatus::Failed, None)?;
        }
        let status = match execution.status {
            ExecutionStatus::Succeeded => AuditStatus::Success,
            ExecutionStatus::Failed => AuditStatus::Failed,
        };
        self.audit.emit(
            entry(status)
                .execution(&execution.id)
                .details(json!({"actionType": draft.action_type, "status": execution.status})),
        );
        Ok(execution)
    }

    /// Compare-and-set on draft status.
    fn transition(
        &self,
        draft_id: &str,
        from: DraftStatus,
        to: DraftStatus,
        decided_by: Option<&str>,
    ) -> Result<Draft, PipelineError> {
        debug_assert!(from.can_transition(to));
        let now = self.clock.now();
        let mut records = self.records.write();
        let draft = records.drafts.get_mut(draft_id).ok_or(ReasonCode::DraftNotFound)?;
        if draft.status != from || !from.can_transition(to) {
            return Err(ReasonCode::DraftAlreadyFinal.into());
        }
        draft.status = to;
        if from == DraftStatus::Draft {
            draft.decided_at = Some(now);
            draft.decided_by_user_id = decided_by.map(str::to_owned);
        }
        Ok(draft.clone())
    }

    pub fn approve(&self, draft_id: &str, by: &Operator) -> Result<(Draft, Execution), PipelineError> {
        let current = self.draft(draft_id).ok_or(ReasonCode::DraftNotFound)?;
        if current.status != DraftStatus::Draft {
            return Err(ReasonCode::DraftAlreadyFinal.into());
        }
        if !self.credentials.is_live(&current.app_id, &current.key_id) {
            return Err(PipelineError::new(ReasonCode::PolicyDenied, "credentials of the draft are no longer active"));
        }
        let confirmed = self.transition(draft_id, DraftStatus::Draft, DraftStatus::Confirmed, Some(&by.user_id))?;
        let admin = |status| {
            AuditEntry::new(actions::DRAFT_APPROVE, status, &by.meta)
                .app(&confirmed.app_id)
                .key(&confirmed.key_id)
                .actor(&confirmed.actor_user_id)
                .performed_by(&by.user_id)
                .draft(&confirmed.id)
        };
        match self.execute_draft(&confirmed, &by.meta, Some(&by.user_id)) {
            Ok(execution) => {
                if let Some(k) = &confirmed.idempotency_key {
                    let slot = self.slot(&confirmed.app_id, k);
                    let mut g = slot.lock();
                    if g.is_none() {
                        *g = Some(execution.id.clone());
                    }
                }
                self.audit.emit(admin(AuditStatus::Success).execution(&execution.id));
                Ok((self.draft(draft_id).expect("draft exists"), execution))
            }
            Err(e) => {
                self.audit.emit(admin(AuditStatus::Failed).code(e.code));
                Err(PipelineError { audited: true, ..e })
            }
        }
    }

    pub fn reject(&self, draft_id: &str, by: &Operator) -> Result<Draft, PipelineError> {
        let draft = self.transition(draft_id, DraftStatus::Draft, DraftStatus::Canceled, Some(&by.user_id))?;
        self.audit.emit(
            AuditEntry::new(actions::DRAFT_REJECT, AuditStatus::Success, &by.meta)
                .app(&draft.app_id)
                .key(&draft.key_id)
                .actor(&draft.actor_user_id)
                .performed_by(&by.user_id)
                .draft(&draft.id),
        );
        Ok(draft)
    }

    /// Drafts of other apps are reported as not found.
    pub fn get_draft(&self, draft_id: &str, app_id: &str) -> Result<(Draft, Option<Execution>), PipelineError> {
        let records = self.records.read();
        let draft = records.drafts.get(draft_id).filter(|d| d.app_id == app_id).ok_or(ReasonCode::DraftNotFound)?;
        let execution = records.latest_execution.get(draft_id).map(|i| records.executions[*i].clone());
        Ok((draft.clone(), execution))
    }

    pub fn draft(&self, draft_id: &str) -> Option<Draft> {
        self.records.read().drafts.get(draft_id).cloned()
    }

    pub fn latest_execution(&self, draft_id: &str) -> Option<Execution> {
        let records = self.records.read();
        records.latest_execution.get(draft_id).map(|i| records.executions[*i].clone())
    }

    /// Newest first.
    pub fn list_drafts(&self, status: Option<DraftStatus>) -> Vec<Draft> {
        let records = self.records.read();
        records
            .order
            .iter()
            .rev()
            .filter_map(|id| records.drafts.get(id))
            .filter(|d| status.is_none_or(|s| d.status == s))
            .cloned()
            .collect()
    }

    /// Creation order.
    pub fn drafts(&self) -> Vec<Draft> {
        let records = self.records.read();
        records.order.iter().filter_map(|id| records.drafts.get(id)).cloned().collect()
    }

    pub fn executions(&self) -> Vec<Execution> {
        self.records.read().executions.clone()
    }

    pub fn draft_count(&self) -> usize {
        self.records.read().drafts.len()
    }

    pub fn execution_count(&self) -> usize {
        self.records.read().executions.len()
    }
}

/// Event attributed to an authenticated agent credential.
pub fn agent_entry(action: &str, status: AuditStatus, ctx: &AuthContext, meta: &RequestMeta) -> AuditEntry {
    AuditEntry::new(action, status, meta).app(&ctx.app.id).key(&ctx.key.id).actor(&ctx.actor_user_id)
}

fn compute_impact(tool: &ToolDescriptor, payload: &Value) -> Result<Value, PipelineError> {
    match &tool.impact_fn {
        Some(f) => f(payload).map_err(|e| PipelineError::new(ReasonCode::ActionInvalid, e.0)),
        None => Ok(json!({})),
    }
}

fn current_witness(tool: &ToolDescriptor, payload: &Value) -> Result<Option<Digest>, PipelineError> {
    match &tool.witness_fn {
        Some(f) => {
            let w = f(payload).map_err(|e| PipelineError::new(ReasonCode::ActionInvalid, e.0))?;
            Ok(Some(hash_or_invalid(witness_hash(&w))?))
        }
        None => Ok(None),
    }
}

fn hash_or_invalid(r: Result<Digest, crate::canonical::CanonicalError>) -> Result<Digest, PipelineError> {
    r.map_err(|e| PipelineError::new(ReasonCode::ActionInvalid, e.to_string()))
}
