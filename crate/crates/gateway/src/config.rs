use openport_core::admission::{DEFAULT_LIMIT, DEFAULT_WINDOW_SECONDS};
use openport_core::pipeline::DEFAULT_PREFLIGHT_TTL_SECONDS;
use serde::{Deserialize, Serialize};

pub const DEFAULT_MAX_BODY_BYTES: usize = 256 * 1024;

/// Runtime parameters. The clock is supplied separately to [`crate::Runtime`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct GatewayConfig {
    pub listen_address: String,
    pub rate_window_seconds: u64,
    pub rate_limit: u32,
    pub preflight_ttl_seconds: u64,
    /// Static operator credential. Not a production authentication scheme.
    pub admin_token: String,
    /// Take the client address from the first `X-Forwarded-For` hop.
    pub trust_forwarded_for: bool,
    pub max_body_bytes: usize,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig {
            listen_address: "127.0.0.1:8080".into(),
            rate_window_seconds: DEFAULT_WINDOW_SECONDS,
            rate_limit: DEFAULT_LIMIT,
            preflight_ttl_seconds: DEFAULT_PREFLIGHT_TTL_SECONDS,
            admin_token: "openport-dev-admin".into(),
            trust_forwarded_for: false,
            max_body_bytes: DEFAULT_MAX_BODY_BYTES,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_reference_parameters() {
        let c = GatewayConfig::default();
        assert_eq!((c.rate_window_seconds, c.rate_limit, c.preflight_ttl_seconds), (60, 240, 600));
        assert_eq!(c.max_body_bytes, 262_144);
    }

    #[test]
    fn partial_config_fills_defaults() {
        let c: GatewayConfig = serde_json::from_str(r#"{"rateLimit": 5, "adminToken": "t"}"#).unwrap();
        assert_eq!(c.rate_limit, 5);
        assert_eq!(c.admin_token, "t");
        assert_eq!(c.rate_window_seconds, 60);
    }
}
