use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicU64, Ordering};

use serde::Serialize;
use serde_json::{json, Value};

pub const DOCS_SEARCH: &str = "docs_search";
pub const CODE_SEARCH: &str = "code_search";
pub const BUILD_STATUS: &str = "build_status";
pub const OPS_STATUS: &str = "ops_status";

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ToolDescriptor {
    pub name: String,
    pub description: String,
    pub required_scopes: BTreeSet<String>,
    /// Name of the registered stub handler.
    pub handler: String,
}

impl ToolDescriptor {
    pub fn new(name: &str, description: &str, required_scopes: &[&str]) -> Self {
        ToolDescriptor {
            name: name.to_string(),
            description: description.to_string(),
            required_scopes: required_scopes.iter().map(|s| s.to_string()).collect(),
            handler: name.to_string(),
        }
    }

    /// Entry for a `tools/list` result.
    pub fn to_listing(&self) -> Value {
        json!({
            "name": self.name,
            "description": self.description,
            "inputSchema": {
                "type": "object",
                "properties": { "query": { "type": "string" } },
            },
        })
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum RegistryError {
    #[error("duplicate tool {0}")]
    DuplicateTool(String),
    #[error("no handler for tool {0}")]
    UnknownTool(String),
}

/// Registered tools and their deterministic stub handlers.
#[derive(Debug, Default)]
pub struct ToolRegistry {
    tools: BTreeMap<String, ToolDescriptor>,
    dispatches: AtomicU64,
}

impl ToolRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// The four stub tools. `build_status` has no dedicated scope of its own
    /// and borrows `mcp.code.search`.
    pub fn stub() -> Self {
        let mut registry = ToolRegistry::new();
        for tool in [
            ToolDescriptor::new(DOCS_SEARCH, "Search internal documentation", &["mcp.docs.read"]),
            ToolDescriptor::new(CODE_SEARCH, "Search the code catalog", &["mcp.code.search"]),
            ToolDescriptor::new(BUILD_STATUS, "Query the build system", &["mcp.code.search"]),
            ToolDescriptor::new(OPS_STATUS, "Deployment and status queries", &["mcp.ops.read"]),
        ] {
            registry.register(tool).expect("stub names are unique");
        }
        registry
    }

    pub fn register(&mut self, tool: ToolDescriptor) -> Result<(), RegistryError> {
        if self.tools.contains_key(&tool.name) {
            return Err(RegistryError::DuplicateTool(tool.name));
        }
        self.tools.insert(tool.name.clone(), tool);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&ToolDescriptor> {
        self.tools.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tools.contains_key(name)
    }

    /// Name-sorted.
    pub fn tools(&self) -> impl Iterator<Item = &ToolDescriptor> {
        self.tools.values()
    }

    pub fn names(&self) -> Vec<String> {
        self.tools.keys().cloned().collect()
    }

    /// Number of handler invocations so far.
    pub fn dispatch_count(&self) -> u64 {
        self.dispatches.load(Ordering::SeqCst)
    }

    /// Run a tool's stub handler. Callers must have authorized the call.
    pub fn invoke(&self, name: &str, arguments: &Value) -> Result<Value, RegistryError> {
        let tool = self
            .tools
            .get(name)
            .ok_or_else(|| RegistryError::UnknownTool(name.to_string()))?;
        self.dispatches.fetch_add(1, Ordering::SeqCst);
        let query = arguments
            .get("query")
            .and_then(Value::as_str)
            .unwrap_or("");
        let payload = stub_payload(&tool.handler, query);
        Ok(json!({
            "content": [{ "type": "text", "text": payload.to_string() }],
            "structuredContent": payload,
            "isError": false,
        }))
    }
}

fn stub_payload(handler: &str, query: &str) -> Value {
    match handler {
        DOCS_SEARCH => json!({
            "query": query,
            "results": [
                { "title": "Service onboarding guide", "path": "docs/onboarding.md" },
                { "title": "Architecture standards", "path": "docs/standards/architecture.md" },
            ],
        }),
        CODE_SEARCH => json!({
            "query": query,
            "matches": [
                { "repo": "platform/auth", "file": "src/token.rs", "line": 42 },
            ],
        }),
        BUILD_STATUS => json!({
            "pipeline": "main",
            "status": "passing",
            "last_build": 1287,
        }),
        OPS_STATUS => json!({
            "environment": "production",
            "deployments": [{ "service": "mcp-gateway", "version": "1.4.2", "healthy": true }],
        }),
        other => json!({ "handler": other, "query": query }),
    }
}
