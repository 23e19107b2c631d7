//! Bearer-token validation: compact JWT parsing, RS256 signature checks
//! against the identity provider's JWKS, and claim validation.

mod claims;
mod jwks;
mod jwt;
mod verify;

use std::collections::BTreeSet;

use thiserror::Error;

pub use claims::{validate_claims, ClaimExpectations, ClaimSet};
pub use jwks::{
    CacheStats, CacheStatsSnapshot, FetchError, HttpJwksFetcher, Jwk, JwkSet, JwksCache,
    JwksFetcher,
};
pub use jwt::{encode_rs256, parse_compact, verify_signature, CompactJwt, JwtHeader};
pub use verify::{mask_subject, verify_bearer, BearerConfig, ValidatedIdentity};

/// The only signing algorithm accepted.
pub const RS256: &str = "RS256";

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum TokenError {
    #[error("malformed token: {0}")]
    MalformedToken(String),
    #[error("unsupported algorithm: {0}")]
    UnsupportedAlgorithm(String),
    #[error("no key with kid {0:?} in the issuer's key set")]
    UnknownKeyId(String),
    #[error("signature verification failed")]
    SignatureInvalid,
    #[error("token issuer {found:?} does not match {expected:?}")]
    WrongIssuer { expected: String, found: String },
    #[error("token audience does not include {expected:?}")]
    WrongAudience { expected: String },
    #[error("token expired at {exp}")]
    Expired { exp: i64 },
    #[error("token not valid before {nbf}")]
    NotYetValid { nbf: i64 },
    #[error("token lacks required scopes {0:?}")]
    InsufficientScope(BTreeSet<String>),
    #[error("JWKS unreachable: {0}")]
    JwksUnreachable(String),
    #[error("subject must not be empty")]
    EmptySubject,
}

impl TokenError {
    /// Stable, machine-readable error class.
    pub fn kind(&self) -> &'static str {
        match self {
            TokenError::MalformedToken(_) => "malformed_token",
            TokenError::UnsupportedAlgorithm(_) => "unsupported_algorithm",
            TokenError::UnknownKeyId(_) => "unknown_key_id",
            TokenError::SignatureInvalid => "signature_invalid",
            TokenError::WrongIssuer { .. } => "wrong_issuer",
            TokenError::WrongAudience { .. } => "wrong_audience",
            TokenError::Expired { .. } => "expired",
            TokenError::NotYetValid { .. } => "not_yet_valid",
            TokenError::InsufficientScope(_) => "insufficient_scope",
            TokenError::JwksUnreachable(_) => "jwks_unreachable",
            TokenError::EmptySubject => "empty_subject",
        }
    }
}
