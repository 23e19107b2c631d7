use std::collections::BTreeSet;
use std::sync::atomic::{AtomicI64, Ordering};
use std::time::{Duration, Instant};

use reqwest::header::{AUTHORIZATION, WWW_AUTHENTICATE};
use reqwest::StatusCode;
use serde::Deserialize;
use serde_json::{json, Value};
use thiserror::Error;
use url::Url;

use super::store::{StoredToken, TokenStore};
use super::transcript::FlowTranscript;
use crate::clock::{system_clock, SharedClock};
use crate::idp::{DEFAULT_CLIENT_ID, DEFAULT_REDIRECT_URI};
use crate::pkce::{digest_hex, PkcePair, S256};
use crate::protocol::{
    decode_response, RpcRequest, RpcResponse, METHOD_INITIALIZE, METHOD_INITIALIZED,
    METHOD_TOOLS_CALL, METHOD_TOOLS_LIST,
};
use crate::server::{ProtectedResourceMetadata, PROTOCOL_VERSION, WELL_KNOWN_PATH};

/// Where the bearer token travels on MCP requests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BearerMode {
    #[default]
    Header,
    /// `params.authorization` in the JSON-RPC body.
    Body,
}

#[derive(Debug, Clone)]
pub struct HarnessConfig {
    pub client_id: String,
    pub redirect_uri: String,
    /// Requested on top of whatever the resource metadata advertises.
    pub extra_scopes: Vec<String>,
    pub bearer_mode: BearerMode,
    pub timeout: Duration,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        HarnessConfig {
            client_id: DEFAULT_CLIENT_ID.to_string(),
            redirect_uri: DEFAULT_REDIRECT_URI.to_string(),
            extra_scopes: ["mcp.docs.read", "mcp.code.search", "mcp.ops.read"]
                .map(String::from)
                .to_vec(),
            bearer_mode: BearerMode::Header,
            timeout: Duration::from_secs(10),
        }
    }
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("step {index} failed: {detail}")]
    StepFailure {
        index: u8,
        detail: String,
        transcript: FlowTranscript,
    },
    #[error("authorization flow failed: {0}")]
    AuthFlowError(String),
    #[error("transport error: {0}")]
    TransportError(String),
    #[error("server rejected the bearer token")]
    Unauthorized { challenge: Option<String> },
}

impl HarnessError {
    pub fn step_index(&self) -> Option<u8> {
        match self {
            HarnessError::StepFailure { index, .. } => Some(*index),
            _ => None,
        }
    }

    pub fn transcript(&self) -> Option<&FlowTranscript> {
        match self {
            HarnessError::StepFailure { transcript, .. } => Some(transcript),
            _ => None,
        }
    }
}

impl From<reqwest::Error> for HarnessError {
    fn from(e: reqwest::Error) -> Self {
        HarnessError::TransportError(e.to_string())
    }
}

/// Parsed `WWW-Authenticate: Bearer ...` challenge.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Challenge {
    pub resource_metadata: Option<String>,
    pub error: Option<String>,
}

/// Parse the auth-params of a Bearer challenge. Quoted values may contain
/// commas; backslash escapes are honoured.
pub fn parse_challenge(header: &str) -> Option<Challenge> {
    let header = header.trim();
    let (scheme, rest) = header.split_once(' ').unwrap_or((header, ""));
    if !scheme.eq_ignore_ascii_case("bearer") {
        return None;
    }
    let mut out = Challenge::default();
    let mut chars = rest.chars().peekable();
    loop {
        while chars.peek().is_some_and(|c| *c == ',' || c.is_whitespace()) {
            chars.next();
        }
        let name: String = std::iter::from_fn(|| chars.next_if(|c| *c != '=')).collect();
        if name.is_empty() || chars.next() != Some('=') {
            break;
        }
        let mut value = String::new();
        if chars.peek() == Some(&'"') {
            chars.next();
            while let Some(c) = chars.next() {
                match c {
                    '\\' => value.extend(chars.next()),
                    '"' => break,
                    c => value.push(c),
                }
            }
        } else {
            value = std::iter::from_fn(|| chars.next_if(|c| *c != ',')).collect();
            value.truncate(value.trim_end().len());
        }
        match name.trim() {
            "resource_metadata" => out.resource_metadata = Some(value),
            "error" => out.error = Some(value),
            _ => {}
        }
    }
    Some(out)
}

/// The subset of an OpenID Provider configuration the harness uses.
#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct OidcDiscovery {
    pub issuer: String,
    pub authorization_endpoint: String,
    pub token_endpoint: String,
    pub jwks_uri: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AcquiredToken {
    pub access_token: String,
    pub expires_at: i64,
    pub scope: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenSource {
    /// Full discovery and code flow.
    Fresh,
    /// Reused from the token store.
    Cached,
}

/// Result of a completed sequence. `response` is the `tools/call` reply,
/// which may itself be a JSON-RPC error (a policy deny is still a completed run).
#[derive(Debug, Clone)]
pub struct SequenceOutcome {
    pub transcript: FlowTranscript,
    pub response: RpcResponse,
    pub token_source: TokenSource,
}

pub struct HarnessClient {
    http: reqwest::Client,
    config: HarnessConfig,
    store: Option<TokenStore>,
    clock: SharedClock,
    next_id: AtomicI64,
}

fn micros(since: Instant) -> u64 {
    since.elapsed().as_micros() as u64
}

fn summarize(resp: &RpcResponse) -> String {
    match (resp.as_result(), resp.as_error()) {
        (_, Some(e)) => format!("error {} {}", e.code, e.message),
        (Some(v), _) if v.get("isError").and_then(Value::as_bool) == Some(true) => {
            "result isError=true".to_string()
        }
        _ => "result".to_string(),
    }
}

fn well_known_variant(mcp_url: &Url) -> Url {
    let mut url = mcp_url.clone();
    let path = mcp_url.path().trim_end_matches('/');
    url.set_path(&format!("{WELL_KNOWN_PATH}{path}"));
    url.set_query(None);
    url
}

/// Sequence state threaded through the cold-start steps.
struct Run {
    transcript: FlowTranscript,
}

impl Run {
    fn fail(&self, index: u8, detail: impl Into<String>) -> HarnessError {
        HarnessError::StepFailure {
            index,
            detail: detail.into(),
            transcript: self.transcript.clone(),
        }
    }
}

impl HarnessClient {
    pub fn new(config: HarnessConfig) -> Self {
        let http = reqwest::Client::builder()
            .redirect(reqwest::redirect::Policy::none())
            .timeout(config.timeout)
            .build()
            .expect("HTTP client builds");
        HarnessClient {
            http,
            config,
            store: None,
            clock: system_clock(),
            next_id: AtomicI64::new(1),
        }
    }

    pub fn with_store(mut self, store: TokenStore) -> Self {
        self.store = Some(store);
        self
    }

    pub fn with_clock(mut self, clock: SharedClock) -> Self {
        self.clock = clock;
        self
    }

    pub fn config(&self) -> &HarnessConfig {
        &self.config
    }

    fn request(&self, method: &str, params: Value) -> RpcRequest {
        RpcRequest::new(self.next_id.fetch_add(1, Ordering::Relaxed), method, Some(params))
    }

    /// POST one JSON-RPC message. Returns the HTTP status, the raw
    /// `WWW-Authenticate` header and the decoded reply, if any.
    async fn post_mcp(
        &self,
        mcp_url: &str,
        token: Option<&str>,
        mut req: RpcRequest,
    ) -> Result<(StatusCode, Option<String>, Option<RpcResponse>), HarnessError> {
        let mut builder = self.http.post(mcp_url);
        if let Some(token) = token {
            match self.config.bearer_mode {
                BearerMode::Header => builder = builder.header(AUTHORIZATION, format!("Bearer {token}")),
                BearerMode::Body => {
                    req.params
                        .get_or_insert_with(Default::default)
                        .insert("authorization".into(), Value::from(token));
                }
            }
        }
        let resp = builder
            .header(reqwest::header::CONTENT_TYPE, "application/json")
            .body(req.encode())
            .send()
            .await?;
        let status = resp.status();
        let challenge = resp
            .headers()
            .get(WWW_AUTHENTICATE)
            .and_then(|v| v.to_str().ok())
            .map(str::to_string);
        let body = resp.bytes().await?;
        let reply = if body.is_empty() {
            None
        } else {
            Some(decode_response(&body).map_err(|e| {
                HarnessError::TransportError(format!("undecodable MCP reply ({status}): {e}"))
            })?)
        };
        Ok((status, challenge, reply))
    }

    /// Authenticated `tools/call`.
    pub async fn call_tool(
        &self,
        mcp_url: &str,
        token: &str,
        tool: &str,
        arguments: Value,
    ) -> Result<RpcResponse, HarnessError> {
        let req = self.request(METHOD_TOOLS_CALL, json!({ "name": tool, "arguments": arguments }));
        self.expect_reply(mcp_url, token, req).await
    }

    async fn expect_reply(&self, mcp_url: &str, token: &str, req: RpcRequest) -> Result<RpcResponse, HarnessError> {
        let (status, challenge, reply) = self.post_mcp(mcp_url, Some(token), req).await?;
        if status == StatusCode::UNAUTHORIZED {
            return Err(HarnessError::Unauthorized { challenge });
        }
        reply.ok_or_else(|| HarnessError::TransportError(format!("empty MCP reply ({status})")))
    }

    pub async fn discover(&self, authorization_server: &str) -> Result<OidcDiscovery, HarnessError> {
        let url = format!(
            "{}/.well-known/openid-configuration",
            authorization_server.trim_end_matches('/')
        );
        let resp = self.http.get(&url).send().await?;
        if !resp.status().is_success() {
            return Err(HarnessError::AuthFlowError(format!("discovery {url}: {}", resp.status())));
        }
        let doc: OidcDiscovery = resp.json().await?;
        if doc.issuer.trim_end_matches('/') != authorization_server.trim_end_matches('/') {
            return Err(HarnessError::AuthFlowError(format!(
                "discovery issuer {} does not match {authorization_server}",
                doc.issuer
            )));
        }
        Ok(doc)
    }

    /// Authorization request; returns the code from the 302 redirect.
    async fn authorize(
        &self,
        discovery: &OidcDiscovery,
        persona: &str,
        pkce: &PkcePair,
        scopes: &BTreeSet<String>,
    ) -> Result<String, HarnessError> {
        let state = uuid::Uuid::new_v4().simple().to_string();
        let scope = scopes.iter().cloned().collect::<Vec<_>>().join(" ");
        let resp = self
            .http
            .get(&discovery.authorization_endpoint)
            .query(&[
                ("response_type", "code"),
                ("client_id", &self.config.client_id),
                ("redirect_uri", &self.config.redirect_uri),
                ("scope", &scope),
                ("state", &state),
                ("code_challenge", &pkce.challenge),
                ("code_challenge_method", S256),
                ("username", persona),
            ])
            .send()
            .await?;
        if resp.status() != StatusCode::FOUND {
            let status = resp.status();
            let body = resp.text().await.unwrap_or_default();
            return Err(HarnessError::AuthFlowError(format!("authorize returned {status}: {body}")));
        }
        let location = resp
            .headers()
            .get(reqwest::header::LOCATION)
            .and_then(|v| v.to_str().ok())
            .ok_or_else(|| HarnessError::AuthFlowError("authorize redirect has no Location".into()))?;
        let location = Url::parse(location)
            .map_err(|e| HarnessError::AuthFlowError(format!("bad redirect {location}: {e}")))?;
        if !location.as_str().starts_with(&self.config.redirect_uri) {
            return Err(HarnessError::AuthFlowError(format!(
                "redirected to {location}, expected {}",
                self.config.redirect_uri
            )));
        }
        let param = |key: &str| {
            location
                .query_pairs()
                .find(|(k, _)| k == key)
                .map(|(_, v)| v.into_owned())
        };
        if param("state").as_deref() != Some(state.as_str()) {
            return Err(HarnessError::AuthFlowError("state mismatch on redirect".into()));
        }
        param("code").ok_or_else(|| HarnessError::AuthFlowError("redirect carries no code".into()))
    }

    /// Code redemption. Fails if the response offers a refresh token.
    async fn redeem(&self, discovery: &OidcDiscovery, code: &str, verifier: &str) -> Result<AcquiredToken, HarnessError> {
        let resp = self
            .http
            .post(&discovery.token_endpoint)
            .form(&[
                ("grant_type", "authorization_code"),
                ("code", code),
                ("code_verifier", verifier),
                ("client_id", &self.config.client_id),
                ("redirect_uri", &self.config.redirect_uri),
            ])
            .send()
            .await?;
        let status = resp.status();
        let body: Value = resp.json().await?;
        if !status.is_success() {
            return Err(HarnessError::AuthFlowError(format!(
                "token endpoint returned {status}: {} {}",
                body["error"].as_str().unwrap_or("?"),
                body["error_description"].as_str().unwrap_or("")
            )));
        }
        if body.get("refresh_token").is_some() {
            return Err(HarnessError::AuthFlowError("token response carries a refresh_token".into()));
        }
        let access_token = body["access_token"]
            .as_str()
            .ok_or_else(|| HarnessError::AuthFlowError("token response has no access_token".into()))?;
        let expires_in = body["expires_in"].as_i64().unwrap_or(0);
        Ok(AcquiredToken {
            access_token: access_token.to_string(),
            expires_at: self.clock.now() + expires_in,
            scope: body["scope"].as_str().unwrap_or_default().to_string(),
        })
    }

    /// Authorization-code flow with the given PKCE pair.
    pub async fn acquire_token(
        &self,
        discovery: &OidcDiscovery,
        persona: &str,
        pkce: &PkcePair,
        scopes: &BTreeSet<String>,
    ) -> Result<AcquiredToken, HarnessError> {
        let code = self.authorize(discovery, persona, pkce, scopes).await?;
        self.redeem(discovery, &code, &pkce.verifier).await
    }

    /// Steps 10 to 13 with an existing token.
    async fn authenticated_calls(
        &self,
        run: &mut Run,
        mcp_url: &str,
        token: &str,
        tool: &str,
        arguments: Value,
    ) -> Result<RpcResponse, HarnessError> {
        let started = Instant::now();
        let init = self.request(
            METHOD_INITIALIZE,
            json!({
                "protocolVersion": PROTOCOL_VERSION,
                "capabilities": {},
                "clientInfo": { "name": "mcpidg-harness", "version": env!("CARGO_PKG_VERSION") },
            }),
        );
        let init = self.expect_reply(mcp_url, token, init).await?;
        if init.as_error().is_some() {
            return Err(run.fail(10, format!("initialize failed: {}", summarize(&init))));
        }
        let (status, _, _) = self
            .post_mcp(mcp_url, Some(token), RpcRequest::notification(METHOD_INITIALIZED))
            .await?;
        if status != StatusCode::ACCEPTED {
            return Err(run.fail(10, format!("initialized notification returned {status}, expected 202")));
        }
        let list = self.request(METHOD_TOOLS_LIST, json!({}));
        let list = self.expect_reply(mcp_url, token, list).await?;
        let names: Vec<&str> = list
            .as_result()
            .and_then(|r| r["tools"].as_array())
            .map(|tools| tools.iter().filter_map(|t| t["name"].as_str()).collect())
            .ok_or_else(|| run.fail(10, format!("tools/list failed: {}", summarize(&list))))?;
        run.transcript.push(
            10,
            "POST initialize, notifications/initialized, tools/list + Bearer",
            format!("200 initialize; 202 Accepted; tools [{}]", names.join(", ")),
            micros(started),
        );
        // The server validates against JWKS before answering; the client only
        // sees that the authenticated calls were accepted.
        run.transcript.push(11, "server-side", "signature checked against cached JWKS", 0);
        run.transcript.push(12, "server-side", "claims accepted", 0);

        let started = Instant::now();
        let reply = self.call_tool(mcp_url, token, tool, arguments).await?;
        run.transcript.push(
            13,
            format!("POST tools/call {tool} + Bearer"),
            summarize(&reply),
            micros(started),
        );
        Ok(reply)
    }

    /// Drive the whole sequence for `persona` and call `tool`.
    ///
    /// With a token store holding an unexpired token for this resource and
    /// persona, discovery and the code flow are skipped; a 401 on the cached
    /// token drops it and falls back to the full flow.
    pub async fn run_sequence(
        &self,
        mcp_url: &str,
        persona: &str,
        tool: &str,
        arguments: Value,
    ) -> Result<SequenceOutcome, HarnessError> {
        if let Some(cached) = self.cached_token(mcp_url, persona) {
            let mut run = Run {
                transcript: FlowTranscript::default(),
            };
            match self
                .authenticated_calls(&mut run, mcp_url, &cached.access_token, tool, arguments.clone())
                .await
            {
                Ok(response) => {
                    return Ok(SequenceOutcome {
                        transcript: run.transcript,
                        response,
                        token_source: TokenSource::Cached,
                    })
                }
                Err(HarnessError::Unauthorized { .. }) => {
                    tracing::info!("cached token rejected, starting a fresh authorization");
                    if let Some(store) = &self.store {
                        if let Err(e) = store.remove(mcp_url) {
                            tracing::warn!(error = %e, "could not drop rejected token");
                        }
                    }
                }
                Err(e) => return Err(e),
            }
        }
        self.cold_sequence(mcp_url, persona, tool, arguments).await
    }

    fn cached_token(&self, mcp_url: &str, persona: &str) -> Option<StoredToken> {
        self.store
            .as_ref()?
            .get(mcp_url)
            .filter(|t| t.username == persona)
    }

    async fn cold_sequence(
        &self,
        mcp_url: &str,
        persona: &str,
        tool: &str,
        arguments: Value,
    ) -> Result<SequenceOutcome, HarnessError> {
        let mut run = Run {
            transcript: FlowTranscript::default(),
        };
        let parsed_mcp = Url::parse(mcp_url).map_err(|e| run.fail(1, format!("bad MCP URL {mcp_url}: {e}")))?;

        // 1-2: bare request, expect the challenge
        let started = Instant::now();
        let bare = self.request(METHOD_INITIALIZE, json!({ "protocolVersion": PROTOCOL_VERSION }));
        let (status, header, _) = self
            .post_mcp(mcp_url, None, bare)
            .await
            .map_err(|e| run.fail(1, e.to_string()))?;
        run.transcript.push(1, format!("POST {} initialize (no token)", parsed_mcp.path()), status.to_string(), micros(started));
        if status != StatusCode::UNAUTHORIZED {
            return Err(run.fail(2, format!("expected 401, got {status}")));
        }
        let header = header.ok_or_else(|| run.fail(2, "401 without WWW-Authenticate"))?;
        let metadata_url = parse_challenge(&header)
            .and_then(|c| c.resource_metadata)
            .ok_or_else(|| run.fail(2, format!("challenge lacks resource_metadata: {header}")))?;
        run.transcript.push(2, "-", header.clone(), 0);

        // 3-6: both metadata variants, which must agree
        let started = Instant::now();
        let first = self.fetch_bytes(&metadata_url).await.map_err(|e| run.fail(3, e))?;
        run.transcript.push(3, format!("GET {metadata_url}"), "200", micros(started));
        let metadata: ProtectedResourceMetadata = serde_json::from_slice(&first)
            .map_err(|e| run.fail(4, format!("metadata document: {e}")))?;
        let authorization_server = metadata
            .authorization_servers
            .first()
            .cloned()
            .ok_or_else(|| run.fail(4, "metadata lists no authorization server"))?;
        run.transcript.push(4, "-", format!("authorization_servers[0]={authorization_server}"), 0);

        let started = Instant::now();
        let variant = well_known_variant(&parsed_mcp);
        let second = self.fetch_bytes(variant.as_str()).await.map_err(|e| run.fail(5, e))?;
        run.transcript.push(5, format!("GET {variant}"), "200", micros(started));
        if first != second {
            return Err(run.fail(6, "the two metadata documents differ"));
        }
        run.transcript.push(6, "-", "identical to step 4", 0);

        // 7-9: discovery, PKCE code flow, store
        let started = Instant::now();
        let discovery = self
            .discover(&authorization_server)
            .await
            .map_err(|e| run.fail(7, e.to_string()))?;
        let pkce = PkcePair::generate();
        let scopes: BTreeSet<String> = metadata
            .scopes_supported
            .iter()
            .chain(&self.config.extra_scopes)
            .cloned()
            .collect();
        let code = self
            .authorize(&discovery, persona, &pkce, &scopes)
            .await
            .map_err(|e| run.fail(7, e.to_string()))?;
        run.transcript.push(
            7,
            format!(
                "GET {} username={persona} code_challenge={} verifier_sha256={}",
                discovery.authorization_endpoint,
                pkce.challenge,
                digest_hex(&pkce.verifier)
            ),
            "302 Found with code",
            micros(started),
        );

        let started = Instant::now();
        let token = self
            .redeem(&discovery, &code, &pkce.verifier)
            .await
            .map_err(|e| run.fail(8, e.to_string()))?;
        run.transcript.push(8, format!("POST {}", discovery.token_endpoint), "200", micros(started));
        if let Some(store) = &self.store {
            let entry = StoredToken {
                access_token: token.access_token.clone(),
                expires_at: token.expires_at,
                username: persona.to_string(),
            };
            store.put(mcp_url, entry).map_err(|e| run.fail(9, e.to_string()))?;
        }
        run.transcript.push(
            9,
            "-",
            format!("access token scope=\"{}\" expires_at={} (no refresh token)", token.scope, token.expires_at),
            0,
        );

        let response = match self
            .authenticated_calls(&mut run, mcp_url, &token.access_token, tool, arguments)
            .await
        {
            Ok(r) => r,
            Err(e @ HarnessError::StepFailure { .. }) => return Err(e),
            Err(e) => {
                let index = run.transcript.last().map_or(10, |s| s.index.max(9) + 1);
                return Err(run.fail(index.min(13), e.to_string()));
            }
        };
        Ok(SequenceOutcome {
            transcript: run.transcript,
            response,
            token_source: TokenSource::Fresh,
        })
    }

    async fn fetch_bytes(&self, url: &str) -> Result<Vec<u8>, String> {
        let resp = self.http.get(url).send().await.map_err(|e| e.to_string())?;
        if resp.status() != StatusCode::OK {
            return Err(format!("GET {url} returned {}", resp.status()));
        }
        resp.bytes().await.map(|b| b.to_vec()).map_err(|e| e.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_reference_challenge() {
        let c = parse_challenge(
            r#"Bearer resource_metadata="http://localhost:8000/.well-known/oauth-protected-resource""#,
        )
        .unwrap();
        assert_eq!(
            c.resource_metadata.as_deref(),
            Some("http://localhost:8000/.well-known/oauth-protected-resource")
        );
        assert_eq!(c.error, None);
    }

    #[test]
    fn parses_error_and_escapes() {
        let c = parse_challenge(r#"bearer resource_metadata="http://h/a,b\"c", error=invalid_token"#).unwrap();
        assert_eq!(c.resource_metadata.as_deref(), Some(r#"http://h/a,b"c"#));
        assert_eq!(c.error.as_deref(), Some("invalid_token"));
    }

    #[test]
    fn other_schemes_are_not_bearer() {
        assert_eq!(parse_challenge(r#"Basic realm="x""#), None);
    }

    #[test]
    fn suffixed_metadata_path() {
        let u = Url::parse("http://127.0.0.1:9/mcp").unwrap();
        assert_eq!(
            well_known_variant(&u).as_str(),
            "http://127.0.0.1:9/.well-known/oauth-protected-resource/mcp"
        );
    }
}
