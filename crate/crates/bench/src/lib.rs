//! Fixtures shared by the criterion benches.

use mcpidg_core::{LoopbackStack, StackOptions};
use serde_json::json;

pub fn runtime() -> tokio::runtime::Runtime {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .expect("tokio runtime")
}

pub async fn stack() -> LoopbackStack {
    LoopbackStack::start(StackOptions::default())
        .await
        .expect("loopback stack")
}

/// A token the stack's server accepts for the developer persona.
pub fn developer_token(stack: &LoopbackStack) -> String {
    let now = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .expect("clock after epoch")
        .as_secs() as i64;
    stack.idp.sign_claims(&json!({
        "iss": stack.issuer(),
        "sub": "developer",
        "aud": [stack.mcp_url],
        "iat": now,
        "exp": now + 3600,
        "scope": "openid profile mcp.docs.read mcp.code.search",
        "roles": ["developer"],
    }))
}
