use std::collections::BTreeSet;

use serde_json::{Map, Value};

use super::TokenError;

/// What a resource server expects of every token it accepts.
#[derive(Debug, Clone)]
pub struct ClaimExpectations {
    pub issuer: String,
    pub resource: String,
    pub required_scopes: BTreeSet<String>,
    /// Clock skew tolerance in seconds.
    pub skew: i64,
}

/// Typed view of a signature-verified token's claims.
#[derive(Debug, Clone, PartialEq)]
pub struct ClaimSet {
    pub issuer: String,
    pub subject: String,
    pub audience: BTreeSet<String>,
    pub expires_at: i64,
    pub issued_at: i64,
    pub not_before: Option<i64>,
    pub scopes: BTreeSet<String>,
    pub roles: BTreeSet<String>,
    pub raw: Map<String, Value>,
}

fn malformed(msg: impl Into<String>) -> TokenError {
    TokenError::MalformedToken(msg.into())
}

fn int_claim(claims: &Map<String, Value>, name: &str) -> Result<Option<i64>, TokenError> {
    match claims.get(name) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => v
            .as_i64()
            .map(Some)
            .ok_or_else(|| malformed(format!("{name} must be an integer"))),
    }
}

fn string_claim<'a>(claims: &'a Map<String, Value>, name: &str) -> Result<&'a str, TokenError> {
    claims
        .get(name)
        .and_then(Value::as_str)
        .ok_or_else(|| malformed(format!("missing string claim {name}")))
}

fn audience(claims: &Map<String, Value>) -> Result<BTreeSet<String>, TokenError> {
    match claims.get("aud") {
        None => Ok(BTreeSet::new()),
        Some(Value::String(s)) => Ok(BTreeSet::from([s.clone()])),
        Some(Value::Array(items)) => items
            .iter()
            .map(|v| {
                v.as_str()
                    .map(str::to_string)
                    .ok_or_else(|| malformed("aud entries must be strings"))
            })
            .collect(),
        Some(_) => Err(malformed("aud must be a string or array")),
    }
}

fn roles(claims: &Map<String, Value>) -> Result<BTreeSet<String>, TokenError> {
    match claims.get("roles") {
        None | Some(Value::Null) => Ok(BTreeSet::new()),
        Some(Value::Array(items)) => items
            .iter()
            .map(|v| {
                v.as_str()
                    .map(str::to_string)
                    .ok_or_else(|| malformed("roles entries must be strings"))
            })
            .collect(),
        Some(_) => Err(malformed("roles must be an array")),
    }
}

fn scopes(claims: &Map<String, Value>) -> Result<BTreeSet<String>, TokenError> {
    match claims.get("scope") {
        None | Some(Value::Null) => Ok(BTreeSet::new()),
        Some(Value::String(s)) => Ok(s.split_whitespace().map(str::to_string).collect()),
        Some(_) => Err(malformed("scope must be a space-delimited string")),
    }
}

/// Check issuer, audience, lifetime and server-wide required scopes.
pub fn validate_claims(
    claims: &Map<String, Value>,
    expected: &ClaimExpectations,
    now: i64,
) -> Result<ClaimSet, TokenError> {
    let issuer = string_claim(claims, "iss")?;
    if issuer != expected.issuer {
        return Err(TokenError::WrongIssuer {
            expected: expected.issuer.clone(),
            found: issuer.to_string(),
        });
    }
    if url::Url::parse(issuer).is_err() {
        return Err(malformed("iss is not an absolute URI"));
    }

    let audience = audience(claims)?;
    if !audience.contains(&expected.resource) {
        return Err(TokenError::WrongAudience {
            expected: expected.resource.clone(),
        });
    }

    let expires_at = int_claim(claims, "exp")?.ok_or_else(|| malformed("missing exp"))?;
    let issued_at = int_claim(claims, "iat")?.ok_or_else(|| malformed("missing iat"))?;
    let not_before = int_claim(claims, "nbf")?;
    if expires_at <= issued_at {
        return Err(malformed("exp must be after iat"));
    }
    if now > expires_at + expected.skew {
        return Err(TokenError::Expired { exp: expires_at });
    }
    if let Some(nbf) = not_before {
        if now < nbf - expected.skew {
            return Err(TokenError::NotYetValid { nbf });
        }
    }

    let subject = string_claim(claims, "sub")?;
    if subject.is_empty() {
        return Err(malformed("sub must not be empty"));
    }

    let scopes = scopes(claims)?;
    let missing: BTreeSet<String> = expected
        .required_scopes
        .difference(&scopes)
        .cloned()
        .collect();
    if !missing.is_empty() {
        return Err(TokenError::InsufficientScope(missing));
    }

    Ok(ClaimSet {
        issuer: issuer.to_string(),
        subject: subject.to_string(),
        audience,
        expires_at,
        issued_at,
        not_before,
        scopes,
        roles: roles(claims)?,
        raw: claims.clone(),
    })
}
