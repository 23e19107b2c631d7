use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

pub const DEFAULT_ISSUER: &str = "http://localhost:8081/realms/master";
pub const DEFAULT_AUDIENCE: &str = "http://localhost:8000/mcp";
pub const DEFAULT_CLIENT_ID: &str = "vscode-mcp";
pub const DEFAULT_REDIRECT_URI: &str = "http://127.0.0.1:33418/callback";
pub const DEFAULT_TOKEN_LIFETIME_SECS: i64 = 300;
pub const DEFAULT_CODE_LIFETIME_SECS: i64 = 60;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserRecord {
    pub username: String,
    pub roles: BTreeSet<String>,
    pub grantable_scopes: BTreeSet<String>,
}

impl UserRecord {
    pub fn new(username: &str, roles: &[&str], scopes: &[&str]) -> Self {
        UserRecord {
            username: username.to_string(),
            roles: roles.iter().map(|s| s.to_string()).collect(),
            grantable_scopes: scopes.iter().map(|s| s.to_string()).collect(),
        }
    }
}

/// A pre-registered public client. PKCE is always required.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClientRegistration {
    pub client_id: String,
    pub redirect_uris: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct IdpConfig {
    pub issuer: String,
    /// Overrides the listen address; otherwise derived from the issuer.
    pub bind: Option<String>,
    /// Value placed in the `aud` claim of every token.
    pub audience: String,
    pub token_lifetime_secs: i64,
    pub code_lifetime_secs: i64,
    pub users: Vec<UserRecord>,
    pub clients: Vec<ClientRegistration>,
}

impl Default for IdpConfig {
    fn default() -> Self {
        IdpConfig {
            issuer: DEFAULT_ISSUER.to_string(),
            bind: None,
            audience: DEFAULT_AUDIENCE.to_string(),
            token_lifetime_secs: DEFAULT_TOKEN_LIFETIME_SECS,
            code_lifetime_secs: DEFAULT_CODE_LIFETIME_SECS,
            users: fixture_users(),
            clients: vec![ClientRegistration {
                client_id: DEFAULT_CLIENT_ID.to_string(),
                redirect_uris: [DEFAULT_REDIRECT_URI, "https://vscode.dev/redirect"]
                    .map(String::from)
                    .into(),
            }],
        }
    }
}

/// One user per persona, each grantable the scopes of its role plus the
/// OIDC basics.
pub fn fixture_users() -> Vec<UserRecord> {
    vec![
        UserRecord::new(
            "developer",
            &["developer"],
            &["openid", "profile", "mcp.docs.read", "mcp.code.search"],
        ),
        UserRecord::new("contractor", &["contractor"], &["openid", "profile", "mcp.docs.read"]),
        UserRecord::new("operator", &["operator"], &["openid", "profile", "mcp.ops.read"]),
    ]
}

impl IdpConfig {
    /// Listen address: explicit `bind`, else host:port of the issuer URL.
    pub fn bind_address(&self) -> Result<String, String> {
        if let Some(bind) = &self.bind {
            return Ok(bind.clone());
        }
        let url = url::Url::parse(&self.issuer).map_err(|e| format!("bad issuer URL: {e}"))?;
        let host = url.host_str().ok_or("issuer URL has no host")?;
        let port = url.port_or_known_default().ok_or("issuer URL has no port")?;
        Ok(format!("{host}:{port}"))
    }

    /// Path prefix under which the endpoints are served, without a trailing slash.
    pub fn base_path(&self) -> String {
        url::Url::parse(&self.issuer)
            .map(|u| u.path().trim_end_matches('/').to_string())
            .unwrap_or_default()
    }

    pub fn user(&self, username: &str) -> Option<&UserRecord> {
        self.users.iter().find(|u| u.username == username)
    }

    pub fn client(&self, client_id: &str) -> Option<&ClientRegistration> {
        self.clients.iter().find(|c| c.client_id == client_id)
    }
}
