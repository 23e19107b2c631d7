mod common;

use std::sync::Arc;

use common::{mint, persona_token, post, rpc};
use mcpidg_core::policy::{load_policy, PolicyDocument};
use mcpidg_core::server::{AuditDecision, AuditSink, ServerError};
use mcpidg_core::{LoopbackStack, McpServer, ServerConfig, StackOptions, ToolRegistry};
use reqwest::header::WWW_AUTHENTICATE;
use reqwest::StatusCode;
use serde_json::{json, Value};

async fn stack() -> LoopbackStack {
    LoopbackStack::start(StackOptions::default()).await.unwrap()
}

fn shipped_policy(registry: &ToolRegistry) -> mcpidg_core::PolicyTable {
    load_policy(&PolicyDocument::shipped(), registry).unwrap()
}

#[tokio::test]
async fn reference_config_metadata_on_both_paths() {
    let registry = Arc::new(ToolRegistry::stub());
    let server = Arc::new(McpServer::new(
        ServerConfig::default(),
        shipped_policy(&registry),
        registry,
    ));
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let handle = server.serve_on(listener).unwrap();
    let base = format!("http://{}", handle.local_addr());
    let expected = json!({
        "resource": "http://localhost:8000/mcp",
        "scopes_supported": ["openid", "profile"],
        "authorization_servers": ["http://localhost:8081/realms/master"],
        "bearer_methods_supported": ["header", "body"],
    });
    let mut bodies = Vec::new();
    for path in ["/.well-known/oauth-protected-resource", "/.well-known/oauth-protected-resource/mcp"] {
        let resp = reqwest::get(format!("{base}{path}")).await.unwrap();
        assert_eq!(resp.status(), StatusCode::OK);
        let body = resp.bytes().await.unwrap();
        let value: Value = serde_json::from_slice(&body).unwrap();
        assert_eq!(value, expected);
        bodies.push(body);
    }
    assert_eq!(bodies[0], bodies[1]);
    handle.shutdown().await.unwrap();
}

#[tokio::test]
async fn challenge_distinguishes_absent_and_invalid_tokens() {
    let stack = stack().await;
    let http = reqwest::Client::new();
    let body = rpc(1, "tools/list", json!({}));
    let metadata_url = format!(
        "{}/.well-known/oauth-protected-resource",
        stack.mcp_url.trim_end_matches("/mcp")
    );

    let (status, headers, _) = post(&http, &stack.mcp_url, None, &body).await;
    assert_eq!(status, StatusCode::UNAUTHORIZED);
    assert_eq!(
        headers[WWW_AUTHENTICATE].to_str().unwrap(),
        format!("Bearer resource_metadata=\"{metadata_url}\"")
    );

    let mut expired = common::claims(&stack, "developer", &["developer"], "openid profile");
    expired["exp"] = json!(common::now() - 600);
    expired["iat"] = json!(common::now() - 900);
    let token = stack.idp.sign_claims(&expired);
    let (status, headers, _) = post(&http, &stack.mcp_url, Some(&token), &body).await;
    assert_eq!(status, StatusCode::UNAUTHORIZED);
    assert_eq!(
        headers[WWW_AUTHENTICATE].to_str().unwrap(),
        format!("Bearer resource_metadata=\"{metadata_url}\", error=\"invalid_token\"")
    );

    let resp = http
        .post(&stack.mcp_url)
        .header("authorization", "Basic dXNlcg==")
        .json(&body)
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), StatusCode::UNAUTHORIZED);

    // the challenge is machine-followable
    let doc: Value = reqwest::get(&metadata_url).await.unwrap().json().await.unwrap();
    assert_eq!(doc["resource"], json!(stack.mcp_url));
    assert_eq!(doc["authorization_servers"][0], json!(stack.issuer()));

    assert_eq!(
        stack.log.lines()[0],
        "INFO  \"POST /mcp HTTP/1.1\" 401 Unauthorized"
    );
    stack.shutdown().await.unwrap();
}

#[tokio::test]
async fn status_sequence_and_log_lines() {
    let stack = stack().await;
    let http = reqwest::Client::new();
    let token = persona_token(&stack, "developer");
    let (s1, _, _) = post(&http, &stack.mcp_url, None, &rpc(1, "initialize", json!({}))).await;
    let s2 = reqwest::get(format!(
        "{}/.well-known/oauth-protected-resource",
        stack.mcp_url.trim_end_matches("/mcp")
    ))
    .await
    .unwrap()
    .status();
    let notification = json!({"jsonrpc": "2.0", "method": "notifications/initialized"});
    let (s3, _, body3) = post(&http, &stack.mcp_url, Some(&token), &notification).await;
    let call = rpc(2, "tools/call", json!({"name": "docs_search", "arguments": {"query": "q"}}));
    let (s4, _, body4) = post(&http, &stack.mcp_url, Some(&token), &call).await;
    assert_eq!([s1, s2, s3, s4].map(|s| s.as_u16()), [401, 200, 202, 200]);
    assert!(body3.is_none(), "notification must not get a body");
    let body4 = body4.unwrap();
    assert_eq!(body4["id"], json!(2));
    assert_eq!(body4["result"]["isError"], json!(false));

    assert_eq!(
        stack.log.lines(),
        vec![
            "INFO  \"POST /mcp HTTP/1.1\" 401 Unauthorized",
            "INFO  \"GET /.well-known/oauth-protected-resource HTTP/1.1\" 200 OK",
            "Verifying token...",
            "Authenticated user: d********",
            "INFO  \"POST /mcp HTTP/1.1\" 202 Accepted",
            "Verifying token...",
            "Authenticated user: d********",
            "INFO  \"POST /mcp HTTP/1.1\" 200 OK",
        ]
    );
    stack.shutdown().await.unwrap();
}

#[tokio::test]
async fn tools_list_and_call_follow_policy() {
    let stack = stack().await;
    let http = reqwest::Client::new();

    let listed = |v: Value| -> Vec<String> {
        v["result"]["tools"]
            .as_array()
            .unwrap()
            .iter()
            .map(|t| t["name"].as_str().unwrap().to_string())
            .collect()
    };
    let dev = persona_token(&stack, "developer");
    let (_, _, body) = post(&http, &stack.mcp_url, Some(&dev), &rpc(1, "tools/list", json!({}))).await;
    assert_eq!(listed(body.unwrap()), ["build_status", "code_search", "docs_search"]);
    let op = persona_token(&stack, "operator");
    let (_, _, body) = post(&http, &stack.mcp_url, Some(&op), &rpc(1, "tools/list", json!({}))).await;
    assert_eq!(listed(body.unwrap()), ["ops_status"]);

    let contractor = persona_token(&stack, "contractor");
    let call = rpc(7, "tools/call", json!({"name": "code_search", "arguments": {}}));
    let (status, _, body) = post(&http, &stack.mcp_url, Some(&contractor), &call).await;
    assert_eq!(status, StatusCode::OK);
    let body = body.unwrap();
    assert_eq!(body["error"]["code"], json!(-32001));
    assert_eq!(body["error"]["message"], json!("forbidden"));
    assert_eq!(body["error"]["data"]["reason"], json!("no_matching_role"));

    let call = rpc(8, "tools/call", json!({"name": "docs_search", "arguments": {}}));
    let (_, _, body) = post(&http, &stack.mcp_url, Some(&dev), &call).await;
    assert!(body.unwrap()["result"]["structuredContent"].is_object());

    let records = stack.server.audit().records().unwrap();
    assert_eq!(records.len(), 2);
    assert_eq!(records[0].decision, AuditDecision::Deny);
    assert_eq!(records[0].subject, "contractor");
    assert_eq!(records[0].deny_reason.as_deref(), Some("no_matching_role"));
    assert_eq!(records[1].decision, AuditDecision::Allow);
    assert_eq!(records[1].subject, "developer");
    assert_ne!(records[0].request_id, records[1].request_id);
    stack.shutdown().await.unwrap();
}

#[tokio::test]
async fn role_without_scope_is_missing_scope() {
    let stack = stack().await;
    let http = reqwest::Client::new();
    let token = mint(&stack, "dana", &["developer"], "openid profile mcp.code.search");
    let call = rpc(1, "tools/call", json!({"name": "docs_search"}));
    let (_, _, body) = post(&http, &stack.mcp_url, Some(&token), &call).await;
    let body = body.unwrap();
    assert_eq!(body["error"]["data"]["reason"], json!("missing_scope"));
    assert_eq!(body["error"]["data"]["missing_scopes"], json!(["mcp.docs.read"]));
    let records = stack.server.audit().records().unwrap();
    assert_eq!(records[0].deny_reason.as_deref(), Some("missing_scope(mcp.docs.read)"));
    stack.shutdown().await.unwrap();
}

#[tokio::test]
async fn rejected_tokens_never_reach_dispatch() {
    let stack = stack().await;
    let http = reqwest::Client::new();
    let mut wrong_aud = common::claims(&stack, "developer", &["developer"], "openid profile mcp.docs.read");
    wrong_aud["aud"] = json!(["http://elsewhere/mcp"]);
    let tokens = [
        None,
        Some("not-a-jwt".to_string()),
        Some(stack.idp.sign_claims(&wrong_aud)),
        Some(mint(&stack, "developer", &["developer"], "mcp.docs.read")),
    ];
    for token in &tokens {
        let call = rpc(1, "tools/call", json!({"name": "docs_search"}));
        let (status, _, _) = post(&http, &stack.mcp_url, token.as_deref(), &call).await;
        assert_eq!(status, StatusCode::UNAUTHORIZED);
    }
    assert_eq!(stack.server.registry().dispatch_count(), 0);
    let records = stack.server.audit().records().unwrap();
    assert_eq!(records.len(), tokens.len());
    assert!(records.iter().all(|r| r.decision == AuditDecision::Unauthenticated));
    let reasons: Vec<_> = records.iter().map(|r| r.deny_reason.clone().unwrap()).collect();
    assert_eq!(
        reasons,
        ["missing_token", "malformed_token", "wrong_audience", "insufficient_scope"]
    );
    stack.shutdown().await.unwrap();
}

#[tokio::test]
async fn protocol_errors() {
    let stack = stack().await;
    let http = reqwest::Client::new();
    let token = persona_token(&stack, "developer");
    let (status, _, body) = post(&http, &stack.mcp_url, Some(&token), &rpc(3, "resources/read", json!({}))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body.unwrap()["error"]["code"], json!(-32601));

    let resp = http
        .post(&stack.mcp_url)
        .bearer_auth(&token)
        .body("{ not json")
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), StatusCode::BAD_REQUEST);
    let body: Value = resp.json().await.unwrap();
    assert_eq!(body["error"]["code"], json!(-32700));
    assert_eq!(body["id"], Value::Null);

    let (_, _, body) = post(&http, &stack.mcp_url, Some(&token), &json!({"jsonrpc": "1.0", "id": 1, "method": "x"})).await;
    assert_eq!(body.unwrap()["error"]["code"], json!(-32600));
    stack.shutdown().await.unwrap();
}

#[tokio::test]
async fn unwritable_audit_sink_fails_closed() {
    let dir = tempfile::tempdir().unwrap();
    let stack = LoopbackStack::start(StackOptions {
        audit: AuditSink::file(dir.path().join("missing-dir").join("audit.jsonl")),
        ..StackOptions::default()
    })
    .await
    .unwrap();
    let http = reqwest::Client::new();
    let token = persona_token(&stack, "developer");
    let call = rpc(1, "tools/call", json!({"name": "docs_search"}));
    let (status, _, body) = post(&http, &stack.mcp_url, Some(&token), &call).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body.unwrap()["error"]["code"], json!(-32603));
    assert_eq!(stack.server.registry().dispatch_count(), 0);
    stack.shutdown().await.unwrap();
}

#[tokio::test]
async fn file_audit_has_one_line_per_call() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("audit.jsonl");
    let stack = LoopbackStack::start(StackOptions {
        audit: AuditSink::file(&path),
        ..StackOptions::default()
    })
    .await
    .unwrap();
    let http = reqwest::Client::new();
    let token = persona_token(&stack, "operator");
    for i in 0..25 {
        let tool = if i % 2 == 0 { "ops_status" } else { "docs_search" };
        post(&http, &stack.mcp_url, Some(&token), &rpc(i, "tools/call", json!({"name": tool}))).await;
    }
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 25);
    let first: Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    let keys: Vec<&str> = first.as_object().unwrap().keys().map(String::as_str).collect();
    for field in [
        "timestamp",
        "request_id",
        "subject",
        "roles",
        "scopes",
        "tool",
        "decision",
        "validation_latency_us",
        "total_latency_us",
    ] {
        assert!(keys.contains(&field), "missing {field}");
    }
    assert!(chrono::DateTime::parse_from_rfc3339(first["timestamp"].as_str().unwrap()).is_ok());
    stack.shutdown().await.unwrap();
}

#[tokio::test]
async fn policy_reload_is_atomic_and_effective() {
    let stack = stack().await;
    let http = reqwest::Client::new();
    let token = persona_token(&stack, "contractor");
    let call = rpc(1, "tools/call", json!({"name": "docs_search"}));
    let (_, _, body) = post(&http, &stack.mcp_url, Some(&token), &call).await;
    assert!(body.unwrap().get("result").is_some());

    let empty = PolicyDocument::from_json(r#"{"rules": []}"#).unwrap();
    stack
        .server
        .reload_policy(load_policy(&empty, stack.server.registry()).unwrap());
    let (_, _, body) = post(&http, &stack.mcp_url, Some(&token), &call).await;
    assert_eq!(body.unwrap()["error"]["code"], json!(-32001));
    stack.shutdown().await.unwrap();
}

#[tokio::test]
async fn occupied_port_is_bind_failure() {
    let taken = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let port = taken.local_addr().unwrap().port();
    let registry = Arc::new(ToolRegistry::stub());
    let config = ServerConfig {
        bind_address: format!("127.0.0.1:{port}"),
        ..ServerConfig::default()
    };
    let server = Arc::new(McpServer::new(config, shipped_policy(&registry), registry));
    match server.serve().await {
        Err(ServerError::BindFailure { address, .. }) => assert!(address.ends_with(&port.to_string())),
        other => panic!("expected BindFailure, got {other:?}"),
    }
}

#[tokio::test]
async fn shutdown_lets_in_flight_requests_finish() {
    let stack = stack().await;
    let token = persona_token(&stack, "developer");
    let url = stack.mcp_url.clone();
    let http = reqwest::Client::new();
    // warm the key cache so the IdP going down first does not matter
    post(&http, &url, Some(&token), &rpc(0, "tools/list", json!({}))).await;
    let inflight = tokio::spawn(async move {
        post(&http, &url, Some(&token), &rpc(1, "tools/list", json!({}))).await.0
    });
    tokio::task::yield_now().await;
    stack.shutdown().await.unwrap();
    // either served fully before the listener closed or never accepted
    if let Ok(status) = inflight.await {
        assert_eq!(status, StatusCode::OK);
    }
}
