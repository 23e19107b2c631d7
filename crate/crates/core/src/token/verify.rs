use std::collections::BTreeSet;

use super::{
    parse_compact, validate_claims, verify_signature, ClaimExpectations, ClaimSet, JwksCache,
    TokenError,
};
use crate::eventlog::EventLog;

pub type BearerConfig = ClaimExpectations;

/// The authenticated principal behind a request.
///
/// Only [`verify_bearer`] produces one outside this crate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidatedIdentity {
    subject: String,
    scopes: BTreeSet<String>,
    roles: BTreeSet<String>,
    expires_at: i64,
    issuer: String,
}

impl ValidatedIdentity {
    #[cfg(test)]
    pub(crate) fn new(
        subject: impl Into<String>,
        roles: BTreeSet<String>,
        scopes: BTreeSet<String>,
        expires_at: i64,
        issuer: impl Into<String>,
    ) -> Self {
        ValidatedIdentity {
            subject: subject.into(),
            scopes,
            roles,
            expires_at,
            issuer: issuer.into(),
        }
    }

    fn from_claims(claims: ClaimSet) -> Self {
        ValidatedIdentity {
            subject: claims.subject,
            scopes: claims.scopes,
            roles: claims.roles,
            expires_at: claims.expires_at,
            issuer: claims.issuer,
        }
    }

    pub fn subject(&self) -> &str {
        &self.subject
    }

    pub fn scopes(&self) -> &BTreeSet<String> {
        &self.scopes
    }

    pub fn roles(&self) -> &BTreeSet<String> {
        &self.roles
    }

    pub fn expires_at(&self) -> i64 {
        self.expires_at
    }

    pub fn issuer(&self) -> &str {
        &self.issuer
    }
}

/// Keep the first character, star out the rest.
pub fn mask_subject(subject: &str) -> Result<String, TokenError> {
    let mut chars = subject.chars();
    let first = chars.next().ok_or(TokenError::EmptySubject)?;
    Ok(std::iter::once(first)
        .chain(chars.map(|_| '*'))
        .collect())
}

/// Full bearer validation: parse, fetch keys (one forced refresh on an
/// unknown kid), verify the signature, then check claims.
pub async fn verify_bearer(
    token: &str,
    config: &BearerConfig,
    cache: &JwksCache,
    now: i64,
    log: &dyn EventLog,
) -> Result<ValidatedIdentity, TokenError> {
    log.line("Verifying token...");
    let jwt = parse_compact(token)?;
    let (keys, fetched_at) = cache.get_keys_with_age(&config.issuer).await?;
    let claims = match verify_signature(&jwt, &keys) {
        Err(TokenError::UnknownKeyId(_)) => {
            let keys = cache.force_refresh(&config.issuer, fetched_at).await?;
            verify_signature(&jwt, &keys)?
        }
        other => other?,
    };
    let claims = validate_claims(&claims, config, now)?;
    let identity = ValidatedIdentity::from_claims(claims);
    log.line(&format!(
        "Authenticated user: {}",
        mask_subject(identity.subject())?
    ));
    Ok(identity)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn masks_all_but_first_char() {
        assert_eq!(mask_subject("alice").unwrap(), "a****");
        assert_eq!(mask_subject("x").unwrap(), "x");
        assert_eq!(
            mask_subject("administrator").unwrap(),
            format!("a{}", "*".repeat(12))
        );
        assert_eq!(mask_subject("").unwrap_err(), TokenError::EmptySubject);
    }

    #[test]
    fn masking_counts_characters_not_bytes() {
        assert_eq!(mask_subject("élan").unwrap(), "é***");
    }
}
