//! IdP and MCP server wired together on ephemeral loopback ports.

use std::sync::Arc;

use tokio::net::TcpListener;

use crate::eventlog::RecordingLog;
use crate::idp::{serve_idp, IdpConfig, MockIdp};
use crate::net::ServerHandle;
use crate::policy::{load_policy, PolicyDocument, PolicyTable, ToolRegistry};
use crate::server::{AuditSink, McpServer, ServerConfig};

pub struct StackOptions {
    pub policy: PolicyTable,
    pub registry: Arc<ToolRegistry>,
    pub jwks_ttl_secs: u64,
    pub audit: AuditSink,
    /// Users, clients and lifetimes. Issuer and audience are overwritten
    /// with the loopback addresses.
    pub idp: IdpConfig,
}

impl Default for StackOptions {
    fn default() -> Self {
        let registry = Arc::new(ToolRegistry::stub());
        StackOptions {
            policy: load_policy(&PolicyDocument::shipped(), &registry)
                .expect("shipped policy matches the stub tools"),
            registry,
            jwks_ttl_secs: 300,
            audit: AuditSink::memory(),
            idp: IdpConfig::default(),
        }
    }
}

pub struct LoopbackStack {
    pub idp: Arc<MockIdp>,
    pub server: Arc<McpServer>,
    /// Server console output, in order.
    pub log: RecordingLog,
    pub mcp_url: String,
    idp_handle: Option<ServerHandle>,
    mcp_handle: ServerHandle,
}

impl LoopbackStack {
    pub async fn start(options: StackOptions) -> std::io::Result<Self> {
        let idp_listener = TcpListener::bind("127.0.0.1:0").await?;
        let mcp_listener = TcpListener::bind("127.0.0.1:0").await?;
        let idp_addr = idp_listener.local_addr()?;
        let mcp_addr = mcp_listener.local_addr()?;
        let issuer = format!("http://{idp_addr}/realms/master");
        let mcp_url = format!("http://{mcp_addr}/mcp");

        let mut idp_config = options.idp;
        idp_config.issuer = issuer.clone();
        idp_config.audience = mcp_url.clone();
        idp_config.bind = Some(idp_addr.to_string());
        let idp = Arc::new(MockIdp::new(idp_config));

        let config = ServerConfig {
            bind_address: mcp_addr.to_string(),
            issuer_url: issuer,
            resource_url: mcp_url.clone(),
            jwks_ttl_secs: options.jwks_ttl_secs,
            ..ServerConfig::default()
        };
        let log = RecordingLog::new();
        let server = Arc::new(
            McpServer::new(config, options.policy, options.registry)
                .with_audit(options.audit)
                .with_log(Arc::new(log.clone())),
        );
        let idp_handle = serve_idp(idp.clone(), idp_listener)?;
        let mcp_handle = server.clone().serve_on(mcp_listener)?;
        Ok(LoopbackStack {
            idp,
            server,
            log,
            mcp_url,
            idp_handle: Some(idp_handle),
            mcp_handle,
        })
    }

    pub fn issuer(&self) -> &str {
        self.idp.issuer()
    }

    /// Take the IdP offline, leaving the MCP server up.
    pub async fn stop_idp(&mut self) -> std::io::Result<()> {
        match self.idp_handle.take() {
            Some(handle) => handle.shutdown().await,
            None => Ok(()),
        }
    }

    pub async fn shutdown(mut self) -> std::io::Result<()> {
        self.stop_idp().await?;
        self.mcp_handle.shutdown().await
    }
}
