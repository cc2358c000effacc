//! Machine-readable conformance profiles.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Security checks the runner knows how to execute.
pub const KNOWN_MINIMUMS: &[&str] = &[
    "unauthenticated-manifest-denied",
    "invalid-token-denied",
    "malformed-bearer-denied",
    "unknown-route-envelope",
    "unknown-action-hidden",
    "unknown-draft-hidden",
    "high-risk-preflight-hash",
    "draft-retrieval-roundtrip",
    "draft-first-default",
    "high-risk-execute-guarded",
    "fuzz-no-5xx",
    "rate-limit-no-drafts",
];

const BUILTIN: &[(&str, &str)] = &[
    ("core-v1", include_str!("../profiles/core-v1.json")),
    ("authz-v1", include_str!("../profiles/authz-v1.json")),
    ("writes-v1", include_str!("../profiles/writes-v1.json")),
    ("abuse-v1", include_str!("../profiles/abuse-v1.json")),
];

#[derive(Debug, thiserror::Error)]
pub enum ProfileError {
    #[error("cannot read profile: {0}")]
    Io(#[from] std::io::Error),
    #[error("profile is not valid JSON for the profile format: {0}")]
    Format(#[from] serde_json::Error),
    #[error("profile `{profile}` names unknown security minimum `{check}`")]
    UnknownCheck { profile: String, check: String },
    #[error("profile `{0}` lists no required endpoints")]
    NoEndpoints(String),
    #[error("no built-in profile named `{0}`")]
    UnknownBuiltin(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Endpoint {
    pub method: String,
    pub path: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct FieldRequirement {
    pub required_fields: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvelopeRequirements {
    pub success: FieldRequirement,
    pub error: FieldRequirement,
}

/// A write intent the runner may submit. It must be safe as a draft.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionFixture {
    pub action: String,
    pub payload: Value,
}

/// Deployment-specific inputs. Checks that need a fixture fail when it is
/// absent rather than guessing domain data.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Fixtures {
    #[serde(default)]
    pub high_risk: Option<ActionFixture>,
    /// A read path with a bounded query window, without window parameters.
    #[serde(default)]
    pub windowed_query: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ConformanceProfile {
    pub name: String,
    #[serde(default = "enabled_default")]
    pub enabled: bool,
    #[serde(default)]
    pub description: String,
    pub required_endpoints: Vec<Endpoint>,
    pub envelope: EnvelopeRequirements,
    #[serde(default)]
    pub security_minimums: Vec<String>,
    #[serde(default)]
    pub fixtures: Fixtures,
}

fn enabled_default() -> bool {
    true
}

impl ConformanceProfile {
    pub fn parse(text: &str) -> Result<Self, ProfileError> {
        let profile: ConformanceProfile = serde_json::from_str(text)?;
        if profile.required_endpoints.is_empty() {
            return Err(ProfileError::NoEndpoints(profile.name));
        }
        if let Some(check) = profile.security_minimums.iter().find(|c| !KNOWN_MINIMUMS.contains(&c.as_str())) {
            return Err(ProfileError::UnknownCheck { profile: profile.name.clone(), check: check.clone() });
        }
        Ok(profile)
    }

    pub fn load(path: &Path) -> Result<Self, ProfileError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn builtin(name: &str) -> Result<Self, ProfileError> {
        let (_, text) = BUILTIN.iter().find(|(n, _)| *n == name).ok_or_else(|| ProfileError::UnknownBuiltin(name.into()))?;
        Self::parse(text)
    }

    /// A path to an existing file, else a built-in profile name.
    pub fn resolve(spec: &str) -> Result<Self, ProfileError> {
        let path = Path::new(spec);
        if path.is_file() {
            Self::load(path)
        } else {
            Self::builtin(spec.trim_end_matches(".json"))
        }
    }

    pub fn builtin_names() -> impl Iterator<Item = &'static str> {
        BUILTIN.iter().map(|(n, _)| *n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_parse_and_only_core_is_enabled() {
        for name in ConformanceProfile::builtin_names() {
            let p = ConformanceProfile::builtin(name).unwrap();
            assert_eq!(p.name, name);
            assert_eq!(p.enabled, name == "core-v1", "{name}");
        }
    }

    #[test]
    fn core_lists_exactly_six_agent_endpoints() {
        let p = ConformanceProfile::builtin("core-v1").unwrap();
        assert_eq!(p.required_endpoints.len(), 6);
        assert!(p.required_endpoints.iter().all(|e| e.path.starts_with("/api/agent/v1/")));
        assert_eq!(p.envelope.success.required_fields, ["ok", "code", "data"]);
        assert_eq!(p.envelope.error.required_fields, ["ok", "code", "message"]);
        assert!(p.security_minimums.contains(&"unauthenticated-manifest-denied".to_string()));
    }

    #[test]
    fn fragment_without_optional_sections_parses() {
        let p = ConformanceProfile::parse(
            r#"{"name": "mini", "requiredEndpoints": [{"method": "GET", "path": "/api/agent/v1/manifest"}],
                "envelope": {"success": {"requiredFields": ["ok","code","data"]}, "error": {"requiredFields": ["ok","code","message"]}}}"#,
        )
        .unwrap();
        assert!(p.enabled);
        assert!(p.security_minimums.is_empty());
        assert_eq!(p.fixtures, Fixtures::default());
    }

    #[test]
    fn unknown_checks_and_empty_endpoint_lists_are_rejected() {
        let bad = r#"{"name": "x", "requiredEndpoints": [{"method": "GET", "path": "/"}],
            "envelope": {"success": {"requiredFields": []}, "error": {"requiredFields": []}}, "securityMinimums": ["trust-me"]}"#;
        assert!(matches!(ConformanceProfile::parse(bad), Err(ProfileError::UnknownCheck { .. })));
        let empty = r#"{"name": "x", "requiredEndpoints": [],
            "envelope": {"success": {"requiredFields": []}, "error": {"requiredFields": []}}}"#;
        assert!(matches!(ConformanceProfile::parse(empty), Err(ProfileError::NoEndpoints(_))));
        assert!(matches!(ConformanceProfile::builtin("gold-v9"), Err(ProfileError::UnknownBuiltin(_))));
    }
}
