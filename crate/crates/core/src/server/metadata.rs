use serde::{Deserialize, Serialize};

use super::ServerConfig;

pub const WELL_KNOWN_PATH: &str = "/.well-known/oauth-protected-resource";

/// OAuth protected resource metadata. Field order is the serialization order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProtectedResourceMetadata {
    pub resource: String,
    pub scopes_supported: Vec<String>,
    pub authorization_servers: Vec<String>,
    pub bearer_methods_supported: Vec<String>,
}

pub fn metadata_document(config: &ServerConfig) -> ProtectedResourceMetadata {
    ProtectedResourceMetadata {
        resource: config.resource_url.clone(),
        scopes_supported: config.required_scopes.clone(),
        authorization_servers: config.authorization_servers(),
        bearer_methods_supported: vec!["header".to_string(), "body".to_string()],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_document_bytes() {
        let doc = metadata_document(&ServerConfig::default());
        assert_eq!(
            serde_json::to_string(&doc).unwrap(),
            r#"{"resource":"http://localhost:8000/mcp","scopes_supported":["openid","profile"],"authorization_servers":["http://localhost:8081/realms/master"],"bearer_methods_supported":["header","body"]}"#
        );
    }

    #[test]
    fn two_issuers() {
        let config = ServerConfig {
            additional_authorization_servers: vec!["https://login.example.com".into()],
            ..Default::default()
        };
        assert_eq!(metadata_document(&config).authorization_servers.len(), 2);
    }
}
