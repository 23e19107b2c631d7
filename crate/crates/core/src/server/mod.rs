//! The MCP resource server.
//!
//! Every POST to the MCP endpoint is authenticated before its body is
//! interpreted: a missing or invalid bearer token yields a 401 challenge that
//! points at the protected resource metadata. Authenticated `tools/call`
//! requests are authorized against the policy, audited, and only then
//! dispatched.

mod audit;
mod config;
mod handler;
mod metadata;

use std::sync::{Arc, RwLock};
use std::time::Duration;

use thiserror::Error;

use crate::clock::{system_clock, SharedClock};
use crate::eventlog::{EventLog, TracingLog};
use crate::net::{spawn_server, ServerHandle};
use crate::policy::{PolicyTable, ToolRegistry};
use crate::token::{BearerConfig, HttpJwksFetcher, JwksCache};

pub use audit::{read_audit_file, AuditDecision, AuditRecord, AuditSink, AuditSinkFailure};
pub use config::{ServerConfig, ENV_AUDIT, ENV_BIND, ENV_ISSUER, ENV_POLICY, ENV_RESOURCE};
pub use handler::{extract_bearer, BearerError, PROTOCOL_VERSION};
pub use metadata::{metadata_document, ProtectedResourceMetadata, WELL_KNOWN_PATH};

#[derive(Debug, Error)]
pub enum ServerError {
    #[error("cannot bind {address}: {source}")]
    BindFailure {
        address: String,
        source: std::io::Error,
    },
    #[error("invalid server config: {0}")]
    Config(String),
}

pub struct McpServer {
    config: ServerConfig,
    bearer: BearerConfig,
    cache: Arc<JwksCache>,
    policy: RwLock<Arc<PolicyTable>>,
    registry: Arc<ToolRegistry>,
    audit: AuditSink,
    log: Arc<dyn EventLog>,
    clock: SharedClock,
    metadata: ProtectedResourceMetadata,
}

impl std::fmt::Debug for McpServer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("McpServer")
            .field("config", &self.config)
            .field("cache", &self.cache)
            .finish_non_exhaustive()
    }
}

impl McpServer {
    /// Server with the HTTP JWKS fetcher, tracing log, system clock and a
    /// file audit sink at `config.audit_sink`.
    pub fn new(config: ServerConfig, policy: PolicyTable, registry: Arc<ToolRegistry>) -> Self {
        let cache = Arc::new(JwksCache::new(
            Duration::from_secs(config.jwks_ttl_secs),
            Arc::new(HttpJwksFetcher::default()),
        ));
        let bearer = BearerConfig {
            issuer: config.issuer_url.clone(),
            resource: config.resource_url.clone(),
            required_scopes: config.required_scopes.iter().cloned().collect(),
            skew: config.clock_skew_secs,
        };
        McpServer {
            metadata: metadata_document(&config),
            audit: AuditSink::file(config.audit_sink.clone()),
            config,
            bearer,
            cache,
            policy: RwLock::new(Arc::new(policy)),
            registry,
            log: Arc::new(TracingLog),
            clock: system_clock(),
        }
    }

    pub fn with_log(mut self, log: Arc<dyn EventLog>) -> Self {
        self.log = log;
        self
    }

    pub fn with_clock(mut self, clock: SharedClock) -> Self {
        self.clock = clock;
        self
    }

    pub fn with_jwks_cache(mut self, cache: Arc<JwksCache>) -> Self {
        self.cache = cache;
        self
    }

    pub fn with_audit(mut self, audit: AuditSink) -> Self {
        self.audit = audit;
        self
    }

    pub fn config(&self) -> &ServerConfig {
        &self.config
    }

    pub fn bearer_config(&self) -> &BearerConfig {
        &self.bearer
    }

    pub fn jwks_cache(&self) -> &Arc<JwksCache> {
        &self.cache
    }

    pub fn registry(&self) -> &Arc<ToolRegistry> {
        &self.registry
    }

    pub fn audit(&self) -> &AuditSink {
        &self.audit
    }

    pub fn metadata(&self) -> &ProtectedResourceMetadata {
        &self.metadata
    }

    pub fn policy(&self) -> Arc<PolicyTable> {
        self.policy.read().expect("policy lock").clone()
    }

    /// Atomically replace the policy; in-flight requests keep the old one.
    pub fn reload_policy(&self, table: PolicyTable) {
        *self.policy.write().expect("policy lock") = Arc::new(table);
    }

    pub fn router(self: &Arc<Self>) -> axum::Router {
        handler::router(self.clone())
    }

    /// Serve on an already-bound listener.
    pub fn serve_on(self: Arc<Self>, listener: tokio::net::TcpListener) -> std::io::Result<ServerHandle> {
        let router = self.router();
        spawn_server(listener, router)
    }

    /// Bind `config.bind_address` and serve.
    pub async fn serve(self: Arc<Self>) -> Result<ServerHandle, ServerError> {
        self.config.validate().map_err(ServerError::Config)?;
        let address = self.config.bind_address.clone();
        let listener = tokio::net::TcpListener::bind(&address)
            .await
            .map_err(|source| ServerError::BindFailure {
                address: address.clone(),
                source,
            })?;
        self.serve_on(listener)
            .map_err(|source| ServerError::BindFailure { address, source })
    }
}
