//! Embedded OAuth 2.0 / OpenID Connect provider for local runs and tests.
//!
//! There is no login page: `authorize` takes the username directly and
//! approves immediately, standing in for a browser session that already
//! authenticated. Only the authorization-code grant with S256 PKCE exists;
//! no refresh tokens are ever issued.

mod config;
mod http;
mod keys;
mod provider;

pub use config::{
    fixture_users, ClientRegistration, IdpConfig, UserRecord, DEFAULT_AUDIENCE,
    DEFAULT_CLIENT_ID, DEFAULT_CODE_LIFETIME_SECS, DEFAULT_ISSUER, DEFAULT_REDIRECT_URI,
    DEFAULT_TOKEN_LIFETIME_SECS,
};
pub use http::{idp_router, serve_idp};
pub use keys::{SigningKey, KEY_BITS};
pub use provider::{
    AuthorizationCodeRecord, AuthorizeParams, IdpError, IdpStats, IdpStatsSnapshot, MockIdp,
    TokenParams, TokenResponse,
};
