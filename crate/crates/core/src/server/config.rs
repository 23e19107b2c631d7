use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::idp::{DEFAULT_AUDIENCE, DEFAULT_ISSUER};

pub const ENV_ISSUER: &str = "MCPIDG_ISSUER";
pub const ENV_RESOURCE: &str = "MCPIDG_RESOURCE";
pub const ENV_BIND: &str = "MCPIDG_BIND";
pub const ENV_POLICY: &str = "MCPIDG_POLICY";
pub const ENV_AUDIT: &str = "MCPIDG_AUDIT";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServerConfig {
    pub server_name: String,
    pub bind_address: String,
    pub mcp_path: String,
    /// Issuer whose tokens are accepted.
    pub issuer_url: String,
    /// Further authorization servers to advertise after `issuer_url`.
    pub additional_authorization_servers: Vec<String>,
    /// Externally visible URL of the MCP endpoint; also the required audience.
    pub resource_url: String,
    /// Scopes every token must carry, checked before any tool policy.
    pub required_scopes: Vec<String>,
    pub jwks_ttl_secs: u64,
    pub clock_skew_secs: i64,
    pub audit_sink: PathBuf,
    /// `None` uses the shipped role/scope policy.
    pub policy_path: Option<PathBuf>,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            server_name: "Sample MCP server".to_string(),
            bind_address: "127.0.0.1:8000".to_string(),
            mcp_path: "/mcp".to_string(),
            issuer_url: DEFAULT_ISSUER.to_string(),
            additional_authorization_servers: Vec::new(),
            resource_url: DEFAULT_AUDIENCE.to_string(),
            required_scopes: vec!["openid".to_string(), "profile".to_string()],
            jwks_ttl_secs: 300,
            clock_skew_secs: 30,
            audit_sink: PathBuf::from("mcpidg-audit.jsonl"),
            policy_path: None,
        }
    }
}

impl ServerConfig {
    /// Apply `MCPIDG_*` overrides from `lookup` (normally the process environment).
    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) {
        if let Some(v) = lookup(ENV_ISSUER) {
            self.issuer_url = v;
        }
        if let Some(v) = lookup(ENV_RESOURCE) {
            self.resource_url = v;
        }
        if let Some(v) = lookup(ENV_BIND) {
            self.bind_address = v;
        }
        if let Some(v) = lookup(ENV_POLICY) {
            self.policy_path = Some(PathBuf::from(v));
        }
        if let Some(v) = lookup(ENV_AUDIT) {
            self.audit_sink = PathBuf::from(v);
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let resource = url::Url::parse(&self.resource_url)
            .map_err(|e| format!("resource_url {:?} is not a URL: {e}", self.resource_url))?;
        if !self.mcp_path.starts_with('/') {
            return Err(format!("mcp_path {:?} must start with '/'", self.mcp_path));
        }
        if resource.path() != self.mcp_path {
            return Err(format!(
                "resource_url path {:?} must equal mcp_path {:?}",
                resource.path(),
                self.mcp_path
            ));
        }
        url::Url::parse(&self.issuer_url)
            .map_err(|e| format!("issuer_url {:?} is not a URL: {e}", self.issuer_url))?;
        Ok(())
    }

    pub fn authorization_servers(&self) -> Vec<String> {
        let mut servers = vec![self.issuer_url.clone()];
        for extra in &self.additional_authorization_servers {
            if !servers.contains(extra) {
                servers.push(extra.clone());
            }
        }
        servers
    }

    /// scheme://host[:port] of the resource URL.
    pub fn resource_origin(&self) -> String {
        url::Url::parse(&self.resource_url)
            .map(|u| u.origin().ascii_serialization())
            .unwrap_or_default()
    }

    pub fn metadata_url(&self) -> String {
        format!("{}{}", self.resource_origin(), super::metadata::WELL_KNOWN_PATH)
    }
}
