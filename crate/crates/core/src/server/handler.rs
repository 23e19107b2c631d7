use std::collections::BTreeSet;
use std::sync::Arc;
use std::time::Instant;

use axum::body::{Body, Bytes};
use axum::extract::{Request, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde_json::{json, Value};
use thiserror::Error;

use super::audit::{AuditDecision, AuditRecord};
use super::metadata::WELL_KNOWN_PATH;
use super::McpServer;
use crate::eventlog::access_line;
use crate::policy::{authorize, visible_tools, Decision, DenyReason};
use crate::protocol::{
    self, decode_request, RpcError, RpcRequest, RpcResponse, FORBIDDEN, INTERNAL_ERROR,
    INVALID_PARAMS,
};
use crate::token::{verify_bearer, ValidatedIdentity};

pub const PROTOCOL_VERSION: &str = "2025-06-18";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BearerError {
    #[error("Authorization header does not use the Bearer scheme")]
    MalformedAuthorizationHeader,
}

/// Token from the `Authorization: Bearer` header, else from a top-level
/// `authorization` field in the JSON-RPC params. The header wins.
pub fn extract_bearer(headers: &HeaderMap, body: &[u8]) -> Result<Option<String>, BearerError> {
    if let Some(value) = headers.get(header::AUTHORIZATION) {
        let value = value
            .to_str()
            .map_err(|_| BearerError::MalformedAuthorizationHeader)?;
        return match value.split_once(' ') {
            Some((scheme, token)) if scheme.eq_ignore_ascii_case("bearer") => {
                Ok(Some(token.trim().to_string()))
            }
            _ => Err(BearerError::MalformedAuthorizationHeader),
        };
    }
    let Ok(Value::Object(message)) = serde_json::from_slice::<Value>(body) else {
        return Ok(None);
    };
    let field = message
        .get("params")
        .and_then(|p| p.get("authorization"))
        .and_then(Value::as_str);
    Ok(field.map(|v| {
        match v.split_once(' ') {
            Some((scheme, token)) if scheme.eq_ignore_ascii_case("bearer") => token.trim(),
            _ => v.trim(),
        }
        .to_string()
    }))
}

/// Tool name of a `tools/call` body, read without authenticating. Only used
/// to attribute audit records for rejected requests.
fn peek_tool_call(body: &[u8]) -> Option<String> {
    let value: Value = serde_json::from_slice(body).ok()?;
    if value.get("method")?.as_str()? != protocol::METHOD_TOOLS_CALL {
        return None;
    }
    Some(
        value
            .get("params")
            .and_then(|p| p.get("name"))
            .and_then(Value::as_str)
            .unwrap_or("-")
            .to_string(),
    )
}

fn now_rfc3339() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Micros, true)
}

fn micros(since: Instant) -> u64 {
    since.elapsed().as_micros() as u64
}

fn challenge(server: &McpServer, error: Option<&str>) -> Response {
    let mut value = format!("Bearer resource_metadata=\"{}\"", server.config.metadata_url());
    if let Some(error) = error {
        value.push_str(&format!(", error=\"{error}\""));
    }
    let mut resp = (StatusCode::UNAUTHORIZED, Body::empty()).into_response();
    resp.headers_mut().insert(
        header::WWW_AUTHENTICATE,
        HeaderValue::from_str(&value).expect("challenge is a valid header"),
    );
    resp
}

fn rpc_reply(status: StatusCode, resp: &RpcResponse) -> Response {
    (
        status,
        [(header::CONTENT_TYPE, "application/json")],
        protocol::encode_response(resp),
    )
        .into_response()
}

async fn metadata(State(server): State<Arc<McpServer>>) -> Response {
    Json(server.metadata.clone()).into_response()
}

async fn access_log(State(server): State<Arc<McpServer>>, req: Request, next: Next) -> Response {
    let method = req.method().to_string();
    let path = req.uri().path().to_string();
    let resp = next.run(req).await;
    let status = resp.status();
    server.log.line(&access_line(
        &method,
        &path,
        status.as_u16(),
        status.canonical_reason().unwrap_or(""),
    ));
    resp
}

struct CallContext<'a> {
    server: &'a McpServer,
    identity: &'a ValidatedIdentity,
    request_id: String,
    started: Instant,
    validation_us: u64,
}

impl CallContext<'_> {
    fn record(&self, tool: &str, decision: &Decision) -> AuditRecord {
        AuditRecord {
            timestamp: now_rfc3339(),
            request_id: self.request_id.clone(),
            subject: self.identity.subject().to_string(),
            roles: self.identity.roles().clone(),
            scopes: self.identity.scopes().clone(),
            tool: tool.to_string(),
            decision: if decision.is_allow() {
                AuditDecision::Allow
            } else {
                AuditDecision::Deny
            },
            deny_reason: (!decision.is_allow()).then(|| decision.reason.to_string()),
            validation_latency_us: self.validation_us,
            total_latency_us: micros(self.started),
        }
    }

    fn tools_call(&self, req: &RpcRequest) -> RpcResponse {
        let server = self.server;
        let id = req.id.clone();
        let name = req.param("name").and_then(Value::as_str);
        let policy = server.policy();
        let tool = name.unwrap_or("-");
        let decision = authorize(self.identity, tool, &policy, &server.registry);
        // the record is written before dispatch; no record, no call
        if let Err(e) = server.audit.append(&self.record(tool, &decision)) {
            tracing::error!(error = %e, "audit append failed");
            return RpcResponse::error(id, RpcError::new(INTERNAL_ERROR, "audit sink failure"));
        }
        if name.is_none() {
            return RpcResponse::error(
                id,
                RpcError::new(INVALID_PARAMS, "tools/call requires a string name"),
            );
        }
        if !decision.is_allow() {
            let mut data = json!({ "reason": decision.reason.as_str(), "tool": tool });
            if let DenyReason::MissingScope(missing) = &decision.reason {
                data["missing_scopes"] = json!(missing);
            }
            return RpcResponse::error(id, RpcError::new(FORBIDDEN, "forbidden").with_data(data));
        }
        let arguments = req.param("arguments").cloned().unwrap_or_else(|| json!({}));
        match server.registry.invoke(tool, &arguments) {
            Ok(result) => RpcResponse::result(id, result),
            Err(e) => RpcResponse::error(id, RpcError::new(INTERNAL_ERROR, e.to_string())),
        }
    }

    fn dispatch(&self, req: &RpcRequest) -> RpcResponse {
        let server = self.server;
        let id = req.id.clone();
        match req.method.as_str() {
            protocol::METHOD_INITIALIZE => RpcResponse::result(
                id,
                json!({
                    "protocolVersion": PROTOCOL_VERSION,
                    "capabilities": { "tools": { "listChanged": false } },
                    "serverInfo": {
                        "name": server.config.server_name,
                        "version": env!("CARGO_PKG_VERSION"),
                    },
                }),
            ),
            protocol::METHOD_TOOLS_LIST => {
                let policy = server.policy();
                let tools: Vec<Value> = visible_tools(self.identity, &policy, &server.registry)
                    .iter()
                    .map(|t| t.to_listing())
                    .collect();
                RpcResponse::result(id, json!({ "tools": tools }))
            }
            protocol::METHOD_TOOLS_CALL => self.tools_call(req),
            other => RpcResponse::error(id, RpcError::method_not_found(other)),
        }
    }
}

async fn handle_mcp(State(server): State<Arc<McpServer>>, headers: HeaderMap, body: Bytes) -> Response {
    let started = Instant::now();
    let request_id = uuid::Uuid::new_v4().to_string();

    let unauthenticated = |reason: &str, error: Option<&str>| {
        if let Some(tool) = peek_tool_call(&body) {
            let record = AuditRecord {
                timestamp: now_rfc3339(),
                request_id: request_id.clone(),
                subject: "-".to_string(),
                roles: BTreeSet::new(),
                scopes: BTreeSet::new(),
                tool,
                decision: AuditDecision::Unauthenticated,
                deny_reason: Some(reason.to_string()),
                validation_latency_us: micros(started),
                total_latency_us: micros(started),
            };
            if let Err(e) = server.audit.append(&record) {
                tracing::error!(error = %e, "audit append failed");
            }
        }
        challenge(&server, error)
    };

    let token = match extract_bearer(&headers, &body) {
        Ok(Some(token)) => token,
        Ok(None) => return unauthenticated("missing_token", None),
        Err(_) => return unauthenticated("malformed_authorization_header", Some("invalid_token")),
    };
    let identity = match verify_bearer(
        &token,
        &server.bearer,
        &server.cache,
        server.clock.now(),
        server.log.as_ref(),
    )
    .await
    {
        Ok(identity) => identity,
        Err(e) => {
            tracing::debug!(error = %e, "bearer token rejected");
            return unauthenticated(e.kind(), Some("invalid_token"));
        }
    };
    let validation_us = micros(started);

    let req = match decode_request(&body) {
        Ok(req) => req,
        Err(e) => {
            return rpc_reply(
                StatusCode::BAD_REQUEST,
                &RpcResponse::error(None, e.to_rpc_error()),
            )
        }
    };
    if req.is_notification() {
        return StatusCode::ACCEPTED.into_response();
    }

    let ctx = CallContext {
        server: &server,
        identity: &identity,
        request_id,
        started,
        validation_us,
    };
    rpc_reply(StatusCode::OK, &ctx.dispatch(&req))
}

pub(super) fn router(server: Arc<McpServer>) -> Router {
    let mcp_path = server.config.mcp_path.clone();
    Router::new()
        .route(WELL_KNOWN_PATH, get(metadata))
        .route(&format!("{WELL_KNOWN_PATH}{mcp_path}"), get(metadata))
        .route(&mcp_path, post(handle_mcp))
        .layer(middleware::from_fn_with_state(server.clone(), access_log))
        .with_state(server)
}
