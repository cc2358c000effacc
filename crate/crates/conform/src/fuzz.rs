//! Seeded malformed-request corpus over the action and query surfaces.
//!
//! Case `i` uses mutation `MUTATIONS[i % MUTATIONS.len()]`; its parameters
//! come from a ChaCha8 stream seeded with the run seed, so a seed fixes
//! the corpus byte for byte. Every case is malformed by construction:
//! none of them can create a draft or execute a tool.

use std::collections::BTreeMap;

use axum::http::Method;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::profile::EnvelopeRequirements;
use crate::runner::envelope_violation;
use crate::transport::{HttpRequest, Target};

pub const MIN_CORPUS: usize = 80;
pub const DEFAULT_SEED: u64 = 0x0A11CE;

const ACTIONS: &str = "/api/agent/v1/actions";
const PREFLIGHT: &str = "/api/agent/v1/preflight";
const TRANSACTIONS: &str = "/api/agent/v1/transactions";
const LEDGERS: &str = "/api/agent/v1/ledgers";
const DRAFTS: &str = "/api/agent/v1/drafts";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mutation {
    /// A field holds a value of the wrong JSON type.
    WrongType,
    /// A required field is absent.
    MissingField,
    /// Arrays or objects nested past any sane parser depth.
    DeepNesting,
    /// Strings from 32 KiB up to past the body cap.
    OversizedString,
    /// Query window bounds that are not calendar dates or are out of order.
    InvalidDate,
    /// A valid body cut short.
    TruncatedJson,
    /// An otherwise valid body with an undeclared top-level field.
    UnknownField,
    /// A JSON value that is not an object, or no body at all.
    NonObjectBody,
    /// Bytes that are not UTF-8.
    InvalidUtf8,
    /// Malformed, duplicated or undeclared query parameters.
    QueryGarbage,
    /// Hostile path identifiers.
    BadPathId,
}

pub const MUTATIONS: [Mutation; 11] = [
    Mutation::WrongType,
    Mutation::MissingField,
    Mutation::DeepNesting,
    Mutation::OversizedString,
    Mutation::InvalidDate,
    Mutation::TruncatedJson,
    Mutation::UnknownField,
    Mutation::NonObjectBody,
    Mutation::InvalidUtf8,
    Mutation::QueryGarbage,
    Mutation::BadPathId,
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FuzzCase {
    pub index: usize,
    pub mutation: Mutation,
    pub request: HttpRequest,
}

fn pick<'a, T>(rng: &mut ChaCha8Rng, items: &'a [T]) -> &'a T {
    &items[rng.random_range(0..items.len())]
}

fn action_surface(rng: &mut ChaCha8Rng) -> &'static str {
    pick(rng, &[ACTIONS, PREFLIGHT])
}

fn valid_create() -> Value {
    json!({"action": "transaction.create", "payload": {"ledgerId": "L1", "date": "2026-01-15", "amount": 1200}})
}

fn wrong_type(rng: &mut ChaCha8Rng) -> HttpRequest {
    let bodies = [
        json!({"action": 42, "payload": {}}),
        json!({"action": true, "payload": {}}),
        json!({"action": ["transaction.create"], "payload": {}}),
        json!({"action": {"name": "transaction.create"}}),
        json!({"action": null}),
        json!({"action": "transaction.create", "payload": {"ledgerId": "L1", "date": "2026-01-15", "amount": "ten"}}),
        json!({"action": "transaction.create", "payload": {"ledgerId": 1, "date": "2026-01-15", "amount": 5}}),
        json!({"action": "transaction.hard_delete", "payload": {"transactionId": ["T0001"]}}),
        json!({"action": "transaction.create", "payload": "ledger L1", "execute": "yes"}),
    ];
    let body = pick(rng, &bodies).clone();
    let surface = if body.get("execute").is_some() { ACTIONS } else { action_surface(rng) };
    HttpRequest::post_json(surface, &body)
}

fn missing_field(rng: &mut ChaCha8Rng) -> HttpRequest {
    match rng.random_range(0..5) {
        0 => HttpRequest::post_json(action_surface(rng), &json!({})),
        1 => HttpRequest::post_json(action_surface(rng), &json!({"payload": {"ledgerId": "L1"}})),
        2 => HttpRequest::post_json(action_surface(rng), &json!({"action": "transaction.create", "payload": {"ledgerId": "L1"}})),
        3 => HttpRequest::post_json(action_surface(rng), &json!({"action": "transaction.hard_delete", "payload": {}})),
        _ => HttpRequest::get(format!("{TRANSACTIONS}?start=2026-01-01")),
    }
}

fn deep_nesting(rng: &mut ChaCha8Rng) -> HttpRequest {
    let depth = rng.random_range(129..8192);
    let nested = if rng.random_bool(0.5) {
        format!("{}{}", "[".repeat(depth), "]".repeat(depth))
    } else {
        format!("{}0{}", "{\"a\":".repeat(depth), "}".repeat(depth))
    };
    let body = format!("{{\"action\":\"transaction.create\",\"payload\":{nested}}}");
    HttpRequest::new(Method::POST, action_surface(rng)).raw_body(body.into_bytes(), "application/json")
}

fn oversized_string(rng: &mut ChaCha8Rng) -> HttpRequest {
    let len = rng.random_range(32 * 1024..320 * 1024);
    let filler: String = (0..len).map(|i| (b'a' + (i % 26) as u8) as char).collect();
    let body = match rng.random_range(0..3) {
        0 => json!({"action": filler}),
        1 => json!({"action": "transaction.create", "payload": {"ledgerId": "L1", "date": "2026-01-15", "amount": filler}}),
        _ => json!({"action": "transaction.hard_delete", "payload": {"transactionId": filler}}),
    };
    HttpRequest::post_json(action_surface(rng), &body)
}

fn invalid_date(rng: &mut ChaCha8Rng) -> HttpRequest {
    let bad = ["2026-13-45", "yesterday", "0000-00-00", "99999-01-01", "2026-02-30", "2026-1-1", "26-01-01", "2026%2F01%2F01"];
    let query = match rng.random_range(0..4) {
        0 => format!("ledgerId=L1&start={}", pick(rng, &bad)),
        1 => format!("ledgerId=L1&end={}", pick(rng, &bad)),
        2 => "ledgerId=L1&start=2026-03-01&end=2025-03-01".to_owned(),
        _ => format!("ledgerId=L1&start=1900-01-{:02}&end=2026-01-01", rng.random_range(1..29)),
    };
    HttpRequest::get(format!("{TRANSACTIONS}?{query}"))
}

fn truncated_json(rng: &mut ChaCha8Rng) -> HttpRequest {
    let full = serde_json::to_vec(&valid_create()).expect("values serialize");
    let cut = rng.random_range(1..full.len() - 1);
    HttpRequest::new(Method::POST, action_surface(rng)).raw_body(full[..cut].to_vec(), "application/json")
}

fn unknown_field(rng: &mut ChaCha8Rng) -> HttpRequest {
    let mut body = valid_create();
    let field = *pick(rng, &["sudo", "tenantId", "appId", "approve", "__proto__"]);
    body[field] = json!(true);
    HttpRequest::post_json(action_surface(rng), &body)
}

fn non_object_body(rng: &mut ChaCha8Rng) -> HttpRequest {
    let body = *pick(rng, &["[]", "null", "42", "\"transaction.create\"", "true", "", "   ", "[{\"action\":\"transaction.create\"}]"]);
    HttpRequest::new(Method::POST, action_surface(rng)).raw_body(body.as_bytes().to_vec(), "application/json")
}

fn invalid_utf8(rng: &mut ChaCha8Rng) -> HttpRequest {
    let len = rng.random_range(1..512);
    let mut bytes: Vec<u8> = (0..len).map(|_| rng.random()).collect();
    bytes[0] = 0xff;
    HttpRequest::new(Method::POST, action_surface(rng)).raw_body(bytes, "application/json")
}

fn query_garbage(rng: &mut ChaCha8Rng) -> HttpRequest {
    let paths = [
        format!("{TRANSACTIONS}?%zz=1"),
        format!("{TRANSACTIONS}?ledgerId=L1&ledgerId=L2"),
        format!("{TRANSACTIONS}?ledgerId=%00"),
        format!("{TRANSACTIONS}?ledgerId=L1&start=2026-01-01&start=2026-01-02"),
        format!("{TRANSACTIONS}?=&&&"),
        format!("{TRANSACTIONS}?ledgerId=L1&limit=-1"),
        format!("{TRANSACTIONS}?ledgerId={}", "L".repeat(rng.random_range(256..4096))),
        format!("{LEDGERS}?limit=-1"),
        format!("{LEDGERS}?%E0%A4%A=1"),
        format!("{LEDGERS}?tenantId=org2"),
    ];
    HttpRequest::get(pick(rng, &paths).clone())
}

fn bad_path_id(rng: &mut ChaCha8Rng) -> HttpRequest {
    let ids = [
        "%2e%2e".to_owned(),
        "%00".to_owned(),
        "drf_%27%3B%20DROP".to_owned(),
        "%F0%9F%92%A9".to_owned(),
        "x".repeat(rng.random_range(512..4096)),
        "%ZZ".to_owned(),
    ];
    HttpRequest::get(format!("{DRAFTS}/{}", pick(rng, &ids)))
}

fn generate(mutation: Mutation, rng: &mut ChaCha8Rng) -> HttpRequest {
    match mutation {
        Mutation::WrongType => wrong_type(rng),
        Mutation::MissingField => missing_field(rng),
        Mutation::DeepNesting => deep_nesting(rng),
        Mutation::OversizedString => oversized_string(rng),
        Mutation::InvalidDate => invalid_date(rng),
        Mutation::TruncatedJson => truncated_json(rng),
        Mutation::UnknownField => unknown_field(rng),
        Mutation::NonObjectBody => non_object_body(rng),
        Mutation::InvalidUtf8 => invalid_utf8(rng),
        Mutation::QueryGarbage => query_garbage(rng),
        Mutation::BadPathId => bad_path_id(rng),
    }
}

pub fn generate_corpus(count: usize, seed: u64) -> Vec<FuzzCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|index| {
            let mutation = MUTATIONS[index % MUTATIONS.len()];
            FuzzCase { index, mutation, request: generate(mutation, &mut rng) }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct FuzzFailure {
    pub index: usize,
    pub mutation: Mutation,
    pub method: String,
    /// Truncated to keep reports small.
    pub path: String,
    pub status: Option<u16>,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct FuzzReport {
    pub seed: u64,
    pub count: usize,
    #[serde(rename = "count5xx")]
    pub count_5xx: usize,
    pub count_envelope_violations: usize,
    pub transport_failures: usize,
    pub by_mutation: BTreeMap<Mutation, usize>,
    pub by_status: BTreeMap<u16, usize>,
    pub failures: Vec<FuzzFailure>,
}

impl FuzzReport {
    pub fn pass(&self) -> bool {
        self.count_5xx == 0 && self.count_envelope_violations == 0 && self.transport_failures == 0
    }
}

/// Sends the corpus sequentially.
pub async fn run_fuzz(target: &Target, token: Option<&str>, count: usize, seed: u64, envelope: &EnvelopeRequirements) -> FuzzReport {
    let corpus = generate_corpus(count, seed);
    let mut report = FuzzReport {
        seed,
        count,
        count_5xx: 0,
        count_envelope_violations: 0,
        transport_failures: 0,
        by_mutation: BTreeMap::new(),
        by_status: BTreeMap::new(),
        failures: Vec::new(),
    };
    for case in corpus {
        *report.by_mutation.entry(case.mutation).or_default() += 1;
        let failure = |status: Option<u16>, reason: String| FuzzFailure {
            index: case.index,
            mutation: case.mutation,
            method: case.request.method.to_string(),
            path: case.request.path.chars().take(120).collect(),
            status,
            reason,
        };
        let req = case.request.clone().bearer(token);
        match target.send(&req).await {
            Err(e) => {
                report.transport_failures += 1;
                report.failures.push(failure(None, e.to_string()));
            }
            Ok(resp) => {
                *report.by_status.entry(resp.status).or_default() += 1;
                let mut reasons = Vec::new();
                if resp.status >= 500 {
                    report.count_5xx += 1;
                    reasons.push(format!("server error {}", resp.status));
                }
                if let Some(v) = envelope_violation(&resp, envelope) {
                    report.count_envelope_violations += 1;
                    reasons.push(format!("envelope violation: {v}"));
                }
                if !reasons.is_empty() {
                    report.failures.push(failure(Some(resp.status), reasons.join("; ")));
                }
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_is_seed_determined() {
        assert_eq!(generate_corpus(120, 7), generate_corpus(120, 7));
        assert_ne!(generate_corpus(120, 7), generate_corpus(120, 8));
    }

    #[test]
    fn every_mutation_appears_in_the_minimum_corpus() {
        let corpus = generate_corpus(MIN_CORPUS, DEFAULT_SEED);
        for m in MUTATIONS {
            assert!(corpus.iter().filter(|c| c.mutation == m).count() >= 7, "{m:?}");
        }
    }

    #[test]
    fn corpus_covers_action_and_query_surfaces() {
        let corpus = generate_corpus(MIN_CORPUS, DEFAULT_SEED);
        let posts = corpus.iter().filter(|c| c.request.method == Method::POST).count();
        let gets = corpus.iter().filter(|c| c.request.method == Method::GET).count();
        assert!(posts >= 40 && gets >= 20, "{posts} {gets}");
    }

    #[test]
    fn truncated_bodies_never_parse() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let req = truncated_json(&mut rng);
            assert!(serde_json::from_slice::<Value>(req.body.as_ref().unwrap()).is_err());
        }
    }
}
