use std::collections::{BTreeSet, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Mutex, RwLock};

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use rand::RngCore;
use rsa::RsaPrivateKey;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use super::config::IdpConfig;
use super::keys::{KeyRing, SigningKey};
use crate::clock::{system_clock, SharedClock};
use crate::pkce::{s256_challenge, S256};
use crate::token::{encode_rs256, JwkSet};

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum IdpError {
    #[error("unknown client {0:?}")]
    UnknownClient(String),
    #[error(
        "redirect_uri {redirect_uri:?} is not whitelisted for client {client_id:?}; \
         add the exact callback URL (local IDE callbacks included) to the client's redirect_uris"
    )]
    RedirectUriNotWhitelisted {
        client_id: String,
        redirect_uri: String,
    },
    #[error("PKCE code_challenge is required")]
    MissingPkceChallenge,
    #[error("unsupported code_challenge_method {0:?}; only S256 is accepted")]
    UnsupportedChallengeMethod(String),
    #[error("unknown user {0:?}")]
    UnknownUser(String),
    #[error("unsupported response_type {0:?}")]
    UnsupportedResponseType(String),
    #[error("unsupported grant_type {0:?}")]
    UnsupportedGrantType(String),
    #[error("missing parameter {0}")]
    MissingParameter(&'static str),
    #[error("invalid grant: {0}")]
    InvalidGrant(String),
    #[error("PKCE verification failed")]
    PkceVerificationFailed,
}

impl IdpError {
    /// OAuth 2.0 error code for the wire.
    pub fn oauth_code(&self) -> &'static str {
        match self {
            IdpError::UnknownClient(_) => "unauthorized_client",
            IdpError::RedirectUriNotWhitelisted { .. } => "invalid_request",
            IdpError::MissingPkceChallenge | IdpError::MissingParameter(_) => "invalid_request",
            IdpError::UnsupportedChallengeMethod(_) => "invalid_request",
            IdpError::UnknownUser(_) => "access_denied",
            IdpError::UnsupportedResponseType(_) => "unsupported_response_type",
            IdpError::UnsupportedGrantType(_) => "unsupported_grant_type",
            IdpError::InvalidGrant(_) | IdpError::PkceVerificationFailed => "invalid_grant",
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
pub struct AuthorizeParams {
    pub response_type: Option<String>,
    pub client_id: String,
    pub redirect_uri: String,
    #[serde(default)]
    pub scope: String,
    pub state: Option<String>,
    pub code_challenge: Option<String>,
    pub code_challenge_method: Option<String>,
    pub username: String,
}

#[derive(Debug, Clone, Default, Deserialize)]
pub struct TokenParams {
    pub grant_type: String,
    pub code: Option<String>,
    pub code_verifier: Option<String>,
    pub client_id: Option<String>,
    pub redirect_uri: Option<String>,
}

/// Successful token endpoint body. There is deliberately no refresh token.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenResponse {
    pub access_token: String,
    pub token_type: String,
    pub expires_in: i64,
    pub scope: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuthorizationCodeRecord {
    pub code: String,
    pub client_id: String,
    pub redirect_uri: String,
    pub code_challenge: String,
    pub username: String,
    pub scopes: BTreeSet<String>,
    pub expires_at: i64,
    pub consumed: bool,
}

#[derive(Debug, Default)]
pub struct IdpStats {
    discovery: AtomicU64,
    authorize: AtomicU64,
    token: AtomicU64,
    jwks: AtomicU64,
    tokens_issued: AtomicU64,
    refresh_tokens_sent: AtomicU64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct IdpStatsSnapshot {
    pub discovery: u64,
    pub authorize: u64,
    pub token: u64,
    pub jwks: u64,
    /// Successful token responses written to the wire.
    pub tokens_issued: u64,
    /// Token responses whose body carried a `refresh_token` member.
    pub refresh_tokens_sent: u64,
}

impl IdpStatsSnapshot {
    /// Requests received, over all endpoints.
    pub fn total(&self) -> u64 {
        self.discovery + self.authorize + self.token + self.jwks
    }
}

impl IdpStats {
    pub(crate) fn bump_discovery(&self) {
        self.discovery.fetch_add(1, Ordering::SeqCst);
    }
    pub(crate) fn bump_authorize(&self) {
        self.authorize.fetch_add(1, Ordering::SeqCst);
    }
    pub(crate) fn bump_token(&self) {
        self.token.fetch_add(1, Ordering::SeqCst);
    }
    pub(crate) fn bump_jwks(&self) {
        self.jwks.fetch_add(1, Ordering::SeqCst);
    }
    pub(crate) fn observe_token_body(&self, body: &Value) {
        self.tokens_issued.fetch_add(1, Ordering::SeqCst);
        if body.get("refresh_token").is_some() {
            self.refresh_tokens_sent.fetch_add(1, Ordering::SeqCst);
        }
    }

    pub fn snapshot(&self) -> IdpStatsSnapshot {
        IdpStatsSnapshot {
            discovery: self.discovery.load(Ordering::SeqCst),
            authorize: self.authorize.load(Ordering::SeqCst),
            token: self.token.load(Ordering::SeqCst),
            jwks: self.jwks.load(Ordering::SeqCst),
            tokens_issued: self.tokens_issued.load(Ordering::SeqCst),
            refresh_tokens_sent: self.refresh_tokens_sent.load(Ordering::SeqCst),
        }
    }
}

fn random_code() -> String {
    let mut bytes = [0u8; 32];
    rand::thread_rng().fill_bytes(&mut bytes);
    URL_SAFE_NO_PAD.encode(bytes)
}

/// In-memory OAuth 2.0 / OIDC provider: PKCE authorization-code flow with
/// auto-approval, RS256 access tokens and a JWKS.
#[derive(Debug)]
pub struct MockIdp {
    config: IdpConfig,
    clock: SharedClock,
    keys: RwLock<KeyRing>,
    codes: Mutex<HashMap<String, AuthorizationCodeRecord>>,
    stats: IdpStats,
}

impl MockIdp {
    pub fn new(config: IdpConfig) -> Self {
        Self::with_clock(config, system_clock())
    }

    pub fn with_clock(config: IdpConfig, clock: SharedClock) -> Self {
        MockIdp {
            config,
            clock,
            keys: RwLock::new(KeyRing::new(SigningKey::generate())),
            codes: Mutex::default(),
            stats: IdpStats::default(),
        }
    }

    pub fn config(&self) -> &IdpConfig {
        &self.config
    }

    pub fn issuer(&self) -> &str {
        &self.config.issuer
    }

    pub fn stats(&self) -> &IdpStats {
        &self.stats
    }

    fn endpoint(&self, suffix: &str) -> String {
        format!("{}/{suffix}", self.config.issuer.trim_end_matches('/'))
    }

    pub fn discovery(&self) -> Value {
        json!({
            "issuer": self.config.issuer,
            "authorization_endpoint": self.endpoint("authorize"),
            "token_endpoint": self.endpoint("token"),
            "jwks_uri": self.endpoint("jwks"),
            "response_types_supported": ["code"],
            "grant_types_supported": ["authorization_code"],
            "code_challenge_methods_supported": [S256],
            "subject_types_supported": ["public"],
            "id_token_signing_alg_values_supported": ["RS256"],
            "token_endpoint_auth_methods_supported": ["none"],
        })
    }

    /// Validate the request, auto-approve as `username`, and return the
    /// redirect URL carrying the code and echoed state.
    pub fn authorize(&self, params: &AuthorizeParams) -> Result<String, IdpError> {
        let client = self
            .config
            .client(&params.client_id)
            .ok_or_else(|| IdpError::UnknownClient(params.client_id.clone()))?;
        if !client.redirect_uris.contains(&params.redirect_uri) {
            return Err(IdpError::RedirectUriNotWhitelisted {
                client_id: params.client_id.clone(),
                redirect_uri: params.redirect_uri.clone(),
            });
        }
        if let Some(rt) = params.response_type.as_deref() {
            if rt != "code" {
                return Err(IdpError::UnsupportedResponseType(rt.to_string()));
            }
        }
        let challenge = params
            .code_challenge
            .as_deref()
            .filter(|c| !c.is_empty())
            .ok_or(IdpError::MissingPkceChallenge)?;
        let method = params.code_challenge_method.as_deref().unwrap_or("plain");
        if method != S256 {
            return Err(IdpError::UnsupportedChallengeMethod(method.to_string()));
        }
        let user = self
            .config
            .user(&params.username)
            .ok_or_else(|| IdpError::UnknownUser(params.username.clone()))?;

        let scopes: BTreeSet<String> = params
            .scope
            .split_whitespace()
            .filter(|s| user.grantable_scopes.contains(*s))
            .map(str::to_string)
            .collect();
        let code = random_code();
        let record = AuthorizationCodeRecord {
            code: code.clone(),
            client_id: params.client_id.clone(),
            redirect_uri: params.redirect_uri.clone(),
            code_challenge: challenge.to_string(),
            username: user.username.clone(),
            scopes,
            expires_at: self.clock.now() + self.config.code_lifetime_secs,
            consumed: false,
        };
        self.codes
            .lock()
            .expect("code store lock")
            .insert(code.clone(), record);

        let mut redirect = url::Url::parse(&params.redirect_uri)
            .map_err(|_| IdpError::RedirectUriNotWhitelisted {
                client_id: params.client_id.clone(),
                redirect_uri: params.redirect_uri.clone(),
            })?;
        {
            let mut query = redirect.query_pairs_mut();
            query.append_pair("code", &code);
            if let Some(state) = &params.state {
                query.append_pair("state", state);
            }
        }
        Ok(redirect.to_string())
    }

    /// Redeem a code. Check-and-consume happens under one lock, so of any
    /// number of concurrent redemptions at most one succeeds.
    pub fn token(&self, params: &TokenParams) -> Result<TokenResponse, IdpError> {
        if params.grant_type != "authorization_code" {
            return Err(IdpError::UnsupportedGrantType(params.grant_type.clone()));
        }
        let code = params.code.as_deref().ok_or(IdpError::MissingParameter("code"))?;
        let verifier = params
            .code_verifier
            .as_deref()
            .ok_or(IdpError::MissingParameter("code_verifier"))?;
        let client_id = params
            .client_id
            .as_deref()
            .ok_or(IdpError::MissingParameter("client_id"))?;
        let redirect_uri = params
            .redirect_uri
            .as_deref()
            .ok_or(IdpError::MissingParameter("redirect_uri"))?;

        let now = self.clock.now();
        let (username, scopes) = {
            let mut codes = self.codes.lock().expect("code store lock");
            let record = codes
                .get_mut(code)
                .ok_or_else(|| IdpError::InvalidGrant("unknown code".into()))?;
            if record.consumed {
                return Err(IdpError::InvalidGrant("code already used".into()));
            }
            if now >= record.expires_at {
                return Err(IdpError::InvalidGrant("code expired".into()));
            }
            if record.client_id != client_id {
                return Err(IdpError::InvalidGrant("code was issued to another client".into()));
            }
            if record.redirect_uri != redirect_uri {
                return Err(IdpError::InvalidGrant("redirect_uri mismatch".into()));
            }
            if s256_challenge(verifier) != record.code_challenge {
                return Err(IdpError::PkceVerificationFailed);
            }
            record.consumed = true;
            (record.username.clone(), record.scopes.clone())
        };

        let user = self
            .config
            .user(&username)
            .ok_or_else(|| IdpError::InvalidGrant("user no longer exists".into()))?;
        let scope = scopes.iter().cloned().collect::<Vec<_>>().join(" ");
        let lifetime = self.config.token_lifetime_secs;
        let claims = json!({
            "iss": self.config.issuer,
            "sub": user.username,
            "aud": [self.config.audience],
            "azp": client_id,
            "iat": now,
            "exp": now + lifetime,
            "jti": uuid::Uuid::new_v4().to_string(),
            "scope": scope,
            "roles": user.roles,
        });
        Ok(TokenResponse {
            access_token: self.sign_claims(&claims),
            token_type: "Bearer".to_string(),
            expires_in: lifetime,
            scope,
        })
    }

    pub fn jwks(&self) -> JwkSet {
        self.keys.read().expect("key lock").jwks()
    }

    pub fn active_kid(&self) -> String {
        self.keys.read().expect("key lock").active.kid.clone()
    }

    /// Swap in a new active key. Key generation happens outside the lock.
    pub fn rotate_keys(&self, retain_old: bool) -> String {
        let next = SigningKey::generate();
        self.keys.write().expect("key lock").rotate(next, retain_old)
    }

    /// Sign arbitrary claims with the active key.
    pub fn sign_claims(&self, claims: &Value) -> String {
        let keys = self.keys.read().expect("key lock");
        encode_rs256(&keys.active.kid, claims, &keys.active.private)
    }

    /// Sign with a caller-supplied key and kid.
    pub fn sign_with(kid: &str, key: &RsaPrivateKey, claims: &Value) -> String {
        encode_rs256(kid, claims, key)
    }

    /// Number of codes ever issued and still held.
    pub fn code_count(&self) -> usize {
        self.codes.lock().expect("code store lock").len()
    }
}
