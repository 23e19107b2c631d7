#![allow(dead_code)]

use mcpidg_core::LoopbackStack;
use serde_json::{json, Value};

pub fn now() -> i64 {
    chrono::Utc::now().timestamp()
}

/// Claims the stack's server accepts for `sub`.
pub fn claims(stack: &LoopbackStack, sub: &str, roles: &[&str], scope: &str) -> Value {
    let now = now();
    json!({
        "iss": stack.issuer(),
        "sub": sub,
        "aud": [stack.mcp_url],
        "iat": now,
        "exp": now + 300,
        "scope": scope,
        "roles": roles,
    })
}

pub fn mint(stack: &LoopbackStack, sub: &str, roles: &[&str], scope: &str) -> String {
    stack.idp.sign_claims(&claims(stack, sub, roles, scope))
}

pub fn persona_token(stack: &LoopbackStack, persona: &str) -> String {
    let scope = match persona {
        "developer" => "openid profile mcp.docs.read mcp.code.search",
        "contractor" => "openid profile mcp.docs.read",
        "operator" => "openid profile mcp.ops.read",
        other => panic!("no persona {other}"),
    };
    mint(stack, persona, &[persona], scope)
}

pub fn rpc(id: i64, method: &str, params: Value) -> Value {
    json!({ "jsonrpc": "2.0", "id": id, "method": method, "params": params })
}

pub async fn post(
    http: &reqwest::Client,
    url: &str,
    token: Option<&str>,
    body: &Value,
) -> (reqwest::StatusCode, reqwest::header::HeaderMap, Option<Value>) {
    let mut req = http.post(url).json(body);
    if let Some(t) = token {
        req = req.bearer_auth(t);
    }
    let resp = req.send().await.unwrap();
    let status = resp.status();
    let headers = resp.headers().clone();
    let bytes = resp.bytes().await.unwrap();
    let value = (!bytes.is_empty()).then(|| serde_json::from_slice(&bytes).unwrap());
    (status, headers, value)
}
