//! Synthetic multi-tenant accounting domain used as the reference adapter.
//!
//! Amounts are integer minor units. `version` increments on every mutation
//! of a transaction; the mutation counter counts domain side effects.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use chrono::{Days, NaiveDate};
use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::policy::DomainResolver;
use crate::registry::{ExecContext, HttpHint, Risk, RegistryError, ToolDescriptor, ToolError, ToolRegistry};

pub const SCOPES: [&str; 4] = ["ledger.read", "transaction.read", "transaction.write", "transaction.delete"];
pub const LEDGERS_PATH: &str = "/api/agent/v1/ledgers";
pub const TRANSACTIONS_PATH: &str = "/api/agent/v1/transactions";
pub const LEDGER_LIST: &str = "ledger.list";
pub const TRANSACTION_LIST: &str = "transaction.list";
pub const TRANSACTION_CREATE: &str = "transaction.create";
pub const TRANSACTION_UPDATE: &str = "transaction.update";
pub const TRANSACTION_HARD_DELETE: &str = "transaction.hard_delete";

const SEED_SPAN_DAYS: u64 = 120;
const PER_LEDGER: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Ledger {
    pub id: String,
    pub tenant_id: String,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TransactionRecord {
    pub id: String,
    pub ledger_id: String,
    pub date: NaiveDate,
    /// Minor currency units.
    pub amount: i64,
    pub memo: String,
    pub version: u64,
}

#[derive(Debug, Default)]
struct State {
    ledgers: BTreeMap<String, Ledger>,
    transactions: BTreeMap<String, TransactionRecord>,
    /// Deleted transaction id to its former ledger. Ownership outlives the
    /// record so replays and audits of a delete still resolve a tenant.
    tombstones: BTreeMap<String, String>,
    next_tx: u64,
}

impl State {
    fn ledger_of<'a>(&'a self, transaction_id: &str) -> Option<&'a str> {
        self.transactions
            .get(transaction_id)
            .map(|t| t.ledger_id.as_str())
            .or_else(|| self.tombstones.get(transaction_id).map(String::as_str))
    }
}

#[derive(Debug, Default)]
pub struct DemoDomain {
    state: RwLock<State>,
    mutations: AtomicU64,
}

impl DemoDomain {
    /// Two tenants with two ledgers each (L1, L2 in org1; L3, L4 in org2),
    /// ten transactions per ledger spread over the 120 days up to `today`.
    pub fn seeded(today: NaiveDate) -> Self {
        let mut state = State::default();
        let ledgers = [("L1", "org1", "Operating"), ("L2", "org1", "Payroll"), ("L3", "org2", "Operating"), ("L4", "org2", "Reserve")];
        for (li, (id, tenant, name)) in ledgers.into_iter().enumerate() {
            state.ledgers.insert(id.into(), Ledger { id: id.into(), tenant_id: tenant.into(), name: name.into() });
            for i in 0..PER_LEDGER {
                state.next_tx += 1;
                let n = state.next_tx;
                let back = (i as u64 * SEED_SPAN_DAYS / PER_LEDGER as u64 + li as u64) % SEED_SPAN_DAYS;
                let tx = TransactionRecord {
                    id: format!("T{n:04}"),
                    ledger_id: id.into(),
                    date: today.checked_sub_days(Days::new(back)).expect("seed dates in range"),
                    amount: 1_250 + (n as i64 * 7_919) % 250_000,
                    memo: format!("{name} entry {n}"),
                    version: 1,
                };
                state.transactions.insert(tx.id.clone(), tx);
            }
        }
        DemoDomain { state: RwLock::new(state), mutations: AtomicU64::new(0) }
    }

    pub fn mutation_count(&self) -> u64 {
        self.mutations.load(Ordering::SeqCst)
    }

    pub fn transaction_count(&self) -> usize {
        self.state.read().transactions.len()
    }

    pub fn list_ledgers(&self, _actor_user_id: &str, tenant_id: &str) -> Vec<Ledger> {
        self.state.read().ledgers.values().filter(|l| l.tenant_id == tenant_id).cloned().collect()
    }

    /// Inclusive window; sorted by id.
    pub fn list_transactions(&self, _actor_user_id: &str, ledger_id: &str, start: NaiveDate, end: NaiveDate) -> Vec<TransactionRecord> {
        self.state
            .read()
            .transactions
            .values()
            .filter(|t| t.ledger_id == ledger_id && t.date >= start && t.date <= end)
            .cloned()
            .collect()
    }

    pub fn transaction(&self, id: &str) -> Option<TransactionRecord> {
        self.state.read().transactions.get(id).cloned()
    }

    pub fn ledger(&self, id: &str) -> Option<Ledger> {
        self.state.read().ledgers.get(id).cloned()
    }

    pub fn create_transaction(
        &self,
        ledger_id: &str,
        date: NaiveDate,
        amount: i64,
        memo: &str,
    ) -> Result<TransactionRecord, ToolError> {
        let mut state = self.state.write();
        if !state.ledgers.contains_key(ledger_id) {
            return Err(ToolError("ledger not found".into()));
        }
        state.next_tx += 1;
        let tx = TransactionRecord {
            id: format!("T{:04}", state.next_tx),
            ledger_id: ledger_id.into(),
            date,
            amount,
            memo: memo.into(),
            version: 1,
        };
        state.transactions.insert(tx.id.clone(), tx.clone());
        self.mutations.fetch_add(1, Ordering::SeqCst);
        Ok(tx)
    }

    pub fn update_transaction(&self, id: &str, memo: Option<&str>, amount: Option<i64>) -> Result<TransactionRecord, ToolError> {
        let mut state = self.state.write();
        let tx = state.transactions.get_mut(id).ok_or_else(|| ToolError("transaction not found".into()))?;
        if let Some(m) = memo {
            tx.memo = m.into();
        }
        if let Some(a) = amount {
            tx.amount = a;
        }
        tx.version += 1;
        self.mutations.fetch_add(1, Ordering::SeqCst);
        Ok(tx.clone())
    }

    pub fn delete_transaction(&self, id: &str) -> Result<TransactionRecord, ToolError> {
        let mut state = self.state.write();
        let removed = state.transactions.remove(id).ok_or_else(|| ToolError("transaction not found".into()))?;
        state.tombstones.insert(removed.id.clone(), removed.ledger_id.clone());
        drop(state);
        self.mutations.fetch_add(1, Ordering::SeqCst);
        Ok(removed)
    }

    /// Registers the five demo tools bound to this domain.
    pub fn register_tools(self: &Arc<Self>, registry: &mut ToolRegistry) -> Result<(), RegistryError> {
        for tool in tools(self) {
            registry.register(tool)?;
        }
        Ok(())
    }
}

impl DomainResolver for DemoDomain {
    fn owner_tenant(&self, resource_id: &str) -> Option<String> {
        let state = self.state.read();
        let ledger_id = state.ledger_of(resource_id).unwrap_or(resource_id);
        state.ledgers.get(ledger_id).map(|l| l.tenant_id.clone())
    }

    fn policy_resource(&self, resource_id: &str) -> Option<String> {
        let state = self.state.read();
        if state.ledgers.contains_key(resource_id) {
            return Some(resource_id.to_owned());
        }
        state.ledger_of(resource_id).map(str::to_owned)
    }

    fn domain_ids(&self, domain: &str, tenant_id: &str) -> BTreeSet<String> {
        match domain {
            "ledger" => self.state.read().ledgers.values().filter(|l| l.tenant_id == tenant_id).map(|l| l.id.clone()).collect(),
            _ => BTreeSet::new(),
        }
    }
}

fn str_field<'a>(payload: &'a Value, field: &str) -> Result<&'a str, ToolError> {
    payload.get(field).and_then(Value::as_str).ok_or_else(|| ToolError(format!("{field} is required")))
}

fn date_field(payload: &Value, field: &str) -> Result<NaiveDate, ToolError> {
    NaiveDate::parse_from_str(str_field(payload, field)?, "%Y-%m-%d").map_err(|_| ToolError(format!("{field} must be YYYY-MM-DD")))
}

const DATE_PATTERN: &str = "^[0-9]{4}-[0-9]{2}-[0-9]{2}$";

fn tx_schema() -> Value {
    json!({
        "type": "object",
        "properties": {
            "id": {"type": "string"},
            "ledgerId": {"type": "string"},
            "date": {"type": "string"},
            "amount": {"type": "integer"},
            "memo": {"type": "string"},
            "version": {"type": "integer"}
        }
    })
}

fn tools(domain: &Arc<DemoDomain>) -> Vec<ToolDescriptor> {
    let d = domain.clone();
    let ledger_list = ToolDescriptor::new(
        LEDGER_LIST,
        "List ledgers of the bound workspace.",
        Risk::Low,
        Arc::new(move |ctx: &ExecContext, _p: &Value| Ok(json!(d.list_ledgers(&ctx.actor_user_id, &ctx.tenant_id)))),
    )
    .scopes(&["ledger.read"])
    .read_only(HttpHint::get(LEDGERS_PATH))
    .domain("ledger", &[])
    .schemas(
        json!({"type": "object", "additionalProperties": false}),
        json!({"type": "array", "items": {"type": "object", "properties": {"id": {"type": "string"}, "tenantId": {"type": "string"}, "name": {"type": "string"}}}}),
    );

    let d = domain.clone();
    let transaction_list = ToolDescriptor::new(
        TRANSACTION_LIST,
        "List transactions of a ledger within a bounded date window.",
        Risk::Low,
        Arc::new(move |ctx: &ExecContext, p: &Value| {
            let ledger = str_field(p, "ledgerId")?;
            Ok(json!(d.list_transactions(&ctx.actor_user_id, ledger, date_field(p, "start")?, date_field(p, "end")?)))
        }),
    )
    .scopes(&["transaction.read"])
    .read_only(HttpHint::get(TRANSACTIONS_PATH))
    .domain("ledger", &["ledgerId"])
    .window("start", "end")
    .sensitive(&["memo"])
    .schemas(
        json!({
            "type": "object",
            "required": ["ledgerId"],
            "additionalProperties": false,
            "properties": {
                "ledgerId": {"type": "string", "minLength": 1},
                "start": {"type": "string", "pattern": DATE_PATTERN},
                "end": {"type": "string", "pattern": DATE_PATTERN}
            }
        }),
        json!({"type": "array", "items": tx_schema()}),
    );

    let d = domain.clone();
    let create = ToolDescriptor::new(
        TRANSACTION_CREATE,
        "Record a new transaction in a ledger.",
        Risk::Medium,
        Arc::new(move |_ctx: &ExecContext, p: &Value| {
            let amount = p.get("amount").and_then(Value::as_i64).ok_or_else(|| ToolError("amount is required".into()))?;
            let memo = p.get("memo").and_then(Value::as_str).unwrap_or("");
            Ok(json!(d.create_transaction(str_field(p, "ledgerId")?, date_field(p, "date")?, amount, memo)?))
        }),
    )
    .scopes(&["transaction.write"])
    .domain("ledger", &["ledgerId"])
    .sensitive(&["memo"])
    .impact(Arc::new(|p: &Value| {
        Ok(json!({"ledgerId": p.get("ledgerId"), "amount": p.get("amount"), "date": p.get("date")}))
    }))
    .schemas(
        json!({
            "type": "object",
            "required": ["ledgerId", "date", "amount"],
            "additionalProperties": false,
            "properties": {
                "ledgerId": {"type": "string", "minLength": 1},
                "date": {"type": "string", "pattern": DATE_PATTERN},
                "amount": {"type": "integer"},
                "memo": {"type": "string", "maxLength": 512}
            }
        }),
        tx_schema(),
    );

    let d = domain.clone();
    let dw = domain.clone();
    let update = ToolDescriptor::new(
        TRANSACTION_UPDATE,
        "Update memo or amount of a transaction.",
        Risk::Medium,
        Arc::new(move |_ctx: &ExecContext, p: &Value| {
            let memo = p.get("memo").and_then(Value::as_str);
            let amount = p.get("amount").and_then(Value::as_i64);
            Ok(json!(d.update_transaction(str_field(p, "transactionId")?, memo, amount)?))
        }),
    )
    .scopes(&["transaction.write"])
    .domain("ledger", &["transactionId"])
    .sensitive(&["memo"])
    .witness(Arc::new(move |p: &Value| witness_of(&dw, p)))
    .schemas(
        json!({
            "type": "object",
            "required": ["transactionId"],
            "additionalProperties": false,
            "properties": {
                "transactionId": {"type": "string", "minLength": 1},
                "memo": {"type": "string", "maxLength": 512},
                "amount": {"type": "integer"}
            }
        }),
        tx_schema(),
    );

    let d = domain.clone();
    let di = domain.clone();
    let dw = domain.clone();
    let hard_delete = ToolDescriptor::new(
        TRANSACTION_HARD_DELETE,
        "Permanently delete a transaction.",
        Risk::High,
        Arc::new(move |_ctx: &ExecContext, p: &Value| {
            let removed = d.delete_transaction(str_field(p, "transactionId")?)?;
            Ok(json!({"deleted": true, "transactionId": removed.id}))
        }),
    )
    .scopes(&["transaction.delete"])
    .confirm()
    .domain("ledger", &["transactionId"])
    .impact(Arc::new(move |p: &Value| {
        let id = str_field(p, "transactionId")?;
        let tx = di.transaction(id).ok_or_else(|| ToolError("transaction not found".into()))?;
        Ok(json!({"transactionId": tx.id, "amount": tx.amount, "date": tx.date}))
    }))
    .witness(Arc::new(move |p: &Value| witness_of(&dw, p)))
    .schemas(
        json!({
            "type": "object",
            "required": ["transactionId"],
            "additionalProperties": false,
            "properties": {"transactionId": {"type": "string", "minLength": 1}}
        }),
        json!({"type": "object", "properties": {"deleted": {"type": "boolean"}, "transactionId": {"type": "string"}}}),
    );

    vec![ledger_list, transaction_list, create, update, hard_delete]
}

fn witness_of(domain: &DemoDomain, p: &Value) -> Result<Value, ToolError> {
    let id = str_field(p, "transactionId")?;
    let tx = domain.transaction(id).ok_or_else(|| ToolError("transaction not found".into()))?;
    Ok(json!({"id": tx.id, "version": tx.version}))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::credentials::Policy;
    use crate::policy::present_with;

    fn today() -> NaiveDate {
        NaiveDate::from_ymd_opt(2026, 6, 1).unwrap()
    }

    fn domain() -> Arc<DemoDomain> {
        Arc::new(DemoDomain::seeded(today()))
    }

    fn ctx(tenant: &str) -> ExecContext {
        ExecContext { actor_user_id: "svc".into(), tenant_id: tenant.into() }
    }

    #[test]
    fn seed_fixture_shape() {
        let d = domain();
        assert_eq!(d.list_ledgers("svc", "org1").iter().map(|l| l.id.as_str()).collect::<Vec<_>>(), ["L1", "L2"]);
        assert_eq!(d.list_ledgers("svc", "org2").len(), 2);
        assert_eq!(d.transaction_count(), 40);
        let all = d.list_transactions("svc", "L1", today() - Days::new(365), today());
        assert_eq!(all.len(), 10);
        let oldest = all.iter().map(|t| t.date).min().unwrap();
        assert!((today() - oldest).num_days() < 120);
        assert!((today() - oldest).num_days() >= 100);
        assert!(all.windows(2).all(|w| w[0].id < w[1].id));
        assert_eq!(d.mutation_count(), 0);
    }

    #[test]
    fn resolve_tenant_and_policy_resource() {
        let d = domain();
        assert_eq!(d.owner_tenant("L1").as_deref(), Some("org1"));
        assert_eq!(d.owner_tenant("nope"), None);
        let t = d.list_transactions("svc", "L3", today() - Days::new(200), today())[0].id.clone();
        assert_eq!(d.owner_tenant(&t).as_deref(), Some("org2"));
        assert_eq!(d.policy_resource(&t).as_deref(), Some("L3"));
        assert_eq!(d.domain_ids("ledger", "org2"), ["L3".to_string(), "L4".to_string()].into());
    }

    #[test]
    fn deleted_transactions_keep_their_owner() {
        let d = domain();
        let t = d.list_transactions("svc", "L3", today() - Days::new(200), today())[0].id.clone();
        d.delete_transaction(&t).unwrap();
        assert!(d.transaction(&t).is_none());
        assert_eq!(d.owner_tenant(&t).as_deref(), Some("org2"));
        assert_eq!(d.policy_resource(&t).as_deref(), Some("L3"));
    }

    #[test]
    fn empty_window_returns_nothing() {
        let d = domain();
        assert!(d.list_transactions("svc", "L1", today() + Days::new(1), today() + Days::new(5)).is_empty());
    }

    #[test]
    fn redacted_listing() {
        let d = domain();
        let rows = json!(d.list_transactions("svc", "L1", today() - Days::new(30), today()));
        let p = Policy { redact_sensitive_fields: true, ..Policy::default() };
        let out = present_with(&rows, &p, &["memo".into()]);
        assert!(out.value.as_array().unwrap().iter().all(|r| r["memo"] == "[REDACTED]"));
        assert_eq!(out.redacted_paths, ["memo".to_string()].into());
    }

    #[test]
    fn tools_register_and_behave() {
        let d = domain();
        let mut r = ToolRegistry::new();
        d.register_tools(&mut r).unwrap();
        assert_eq!(r.all().count(), 5);
        assert_eq!(r.scope_labels(), SCOPES.iter().map(|s| s.to_string()).collect());

        let create = r.get(TRANSACTION_CREATE).unwrap();
        let made = (create.execute_fn)(&ctx("org1"), &json!({"ledgerId": "L1", "date": "2026-05-30", "amount": 4200, "memo": "x"})).unwrap();
        assert_eq!(made["version"], 1);
        let id = made["id"].as_str().unwrap().to_owned();
        assert!(d.list_transactions("svc", "L1", today() - Days::new(5), today()).iter().any(|t| t.id == id));
        assert_eq!(d.mutation_count(), 1);

        let del = r.get(TRANSACTION_HARD_DELETE).unwrap();
        let impact = (del.impact_fn.as_ref().unwrap())(&json!({"transactionId": id})).unwrap();
        assert_eq!(impact, json!({"transactionId": id, "amount": 4200, "date": "2026-05-30"}));
        let w1 = (del.witness_fn.as_ref().unwrap())(&json!({"transactionId": id})).unwrap();
        d.update_transaction(&id, Some("changed"), None).unwrap();
        let w2 = (del.witness_fn.as_ref().unwrap())(&json!({"transactionId": id})).unwrap();
        assert_eq!(w1["version"], 1);
        assert_eq!(w2["version"], 2);

        (del.execute_fn)(&ctx("org1"), &json!({"transactionId": id})).unwrap();
        let again = (del.execute_fn)(&ctx("org1"), &json!({"transactionId": id})).unwrap_err();
        assert_eq!(again.0, "transaction not found");
        assert_eq!(d.mutation_count(), 3);
    }

    #[test]
    fn list_tool_is_tenant_bound() {
        let d = domain();
        let mut r = ToolRegistry::new();
        d.register_tools(&mut r).unwrap();
        let list = r.get(LEDGER_LIST).unwrap();
        let out = (list.execute_fn)(&ctx("org2"), &json!({})).unwrap();
        assert!(out.as_array().unwrap().iter().all(|l| l["tenantId"] == "org2"));
        assert!(list.read_only && list.validate_input(&json!({"tenantId": "org1"})).is_err());
    }
}
