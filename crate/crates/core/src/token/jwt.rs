use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use rsa::pkcs1v15::{Signature, SigningKey, VerifyingKey};
use rsa::signature::{SignatureEncoding, Signer, Verifier};
use rsa::RsaPrivateKey;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::Sha256;

use super::{JwkSet, TokenError, RS256};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JwtHeader {
    pub alg: String,
    pub kid: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub typ: Option<String>,
}

/// A JWT split into its parts. `signing_input` keeps the header and payload
/// exactly as transmitted, since that is what the signature covers.
#[derive(Debug, Clone)]
pub struct CompactJwt {
    pub header: JwtHeader,
    pub payload: Map<String, Value>,
    pub signature: Vec<u8>,
    pub signing_input: String,
}

fn decode_segment(segment: &str, what: &str) -> Result<Vec<u8>, TokenError> {
    URL_SAFE_NO_PAD
        .decode(segment)
        .map_err(|e| TokenError::MalformedToken(format!("{what} is not base64url: {e}")))
}

pub fn parse_compact(token: &str) -> Result<CompactJwt, TokenError> {
    let segments: Vec<&str> = token.split('.').collect();
    if segments.len() != 3 {
        return Err(TokenError::MalformedToken(format!(
            "expected 3 segments, found {}",
            segments.len()
        )));
    }
    let header_bytes = decode_segment(segments[0], "header")?;
    let header: Value = serde_json::from_slice(&header_bytes)
        .map_err(|e| TokenError::MalformedToken(format!("header is not JSON: {e}")))?;
    // alg is checked before anything else so downgrade attempts never reach key lookup.
    let alg = header
        .get("alg")
        .and_then(Value::as_str)
        .ok_or_else(|| TokenError::MalformedToken("header has no alg".into()))?;
    if alg != RS256 {
        return Err(TokenError::UnsupportedAlgorithm(alg.to_string()));
    }
    let header: JwtHeader = serde_json::from_value(header)
        .map_err(|e| TokenError::MalformedToken(format!("bad header: {e}")))?;

    let payload_bytes = decode_segment(segments[1], "payload")?;
    let payload = match serde_json::from_slice::<Value>(&payload_bytes) {
        Ok(Value::Object(map)) => map,
        Ok(_) => return Err(TokenError::MalformedToken("payload is not an object".into())),
        Err(e) => return Err(TokenError::MalformedToken(format!("payload is not JSON: {e}"))),
    };
    let signature = decode_segment(segments[2], "signature")?;

    Ok(CompactJwt {
        header,
        payload,
        signature,
        signing_input: format!("{}.{}", segments[0], segments[1]),
    })
}

/// RSASSA-PKCS1-v1_5 / SHA-256 check with the key named by the header's kid.
pub fn verify_signature(jwt: &CompactJwt, keys: &JwkSet) -> Result<Map<String, Value>, TokenError> {
    let jwk = keys
        .find(&jwt.header.kid)
        .ok_or_else(|| TokenError::UnknownKeyId(jwt.header.kid.clone()))?;
    let public = jwk.to_public_key().map_err(|_| TokenError::SignatureInvalid)?;
    let verifier = VerifyingKey::<Sha256>::new(public);
    let signature =
        Signature::try_from(jwt.signature.as_slice()).map_err(|_| TokenError::SignatureInvalid)?;
    verifier
        .verify(jwt.signing_input.as_bytes(), &signature)
        .map_err(|_| TokenError::SignatureInvalid)?;
    Ok(jwt.payload.clone())
}

/// Serialize and sign a token. Used by the mock identity provider and tests.
pub fn encode_rs256(kid: &str, claims: &Value, key: &RsaPrivateKey) -> String {
    let header = JwtHeader {
        alg: RS256.to_string(),
        kid: kid.to_string(),
        typ: Some("JWT".to_string()),
    };
    let header = URL_SAFE_NO_PAD.encode(serde_json::to_vec(&header).expect("header serializes"));
    let payload = URL_SAFE_NO_PAD.encode(serde_json::to_vec(claims).expect("claims serialize"));
    let signing_input = format!("{header}.{payload}");
    let signer = SigningKey::<Sha256>::new(key.clone());
    let signature = signer.sign(signing_input.as_bytes());
    format!(
        "{signing_input}.{}",
        URL_SAFE_NO_PAD.encode(signature.to_bytes())
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::token::Jwk;
    use serde_json::json;
    use std::sync::OnceLock;

    fn key(slot: usize) -> &'static RsaPrivateKey {
        static KEYS: OnceLock<Vec<RsaPrivateKey>> = OnceLock::new();
        &KEYS.get_or_init(|| {
            let mut rng = rand::thread_rng();
            (0..2)
                .map(|_| RsaPrivateKey::new(&mut rng, 2048).unwrap())
                .collect()
        })[slot]
    }

    fn set_with(kid: &str, slot: usize) -> JwkSet {
        JwkSet {
            keys: vec![Jwk::from_public_key(kid, &key(slot).to_public_key())],
        }
    }

    fn token() -> String {
        encode_rs256("k1", &json!({"sub": "alice", "scope": "openid"}), key(0))
    }

    #[test]
    fn parses_minted_token() {
        let jwt = parse_compact(&token()).unwrap();
        assert_eq!(jwt.header.alg, "RS256");
        assert_eq!(jwt.header.kid, "k1");
        assert_eq!(jwt.payload["sub"], "alice");
    }

    #[test]
    fn two_segments_is_malformed() {
        assert!(matches!(
            parse_compact("abc.def"),
            Err(TokenError::MalformedToken(_))
        ));
        assert!(matches!(parse_compact(""), Err(TokenError::MalformedToken(_))));
    }

    #[test]
    fn alg_none_and_hmac_rejected() {
        for alg in ["none", "HS256", "RS512", "ES256"] {
            let header = URL_SAFE_NO_PAD.encode(format!(r#"{{"alg":"{alg}","kid":"k1"}}"#));
            let payload = URL_SAFE_NO_PAD.encode(r#"{"sub":"x"}"#);
            let err = parse_compact(&format!("{header}.{payload}.")).unwrap_err();
            assert_eq!(err, TokenError::UnsupportedAlgorithm(alg.into()));
        }
    }

    #[test]
    fn verifies_with_matching_key() {
        let jwt = parse_compact(&token()).unwrap();
        let claims = verify_signature(&jwt, &set_with("k1", 0)).unwrap();
        assert_eq!(claims["scope"], "openid");
    }

    #[test]
    fn kid_mismatch_is_unknown_key() {
        let jwt = parse_compact(&token()).unwrap();
        assert_eq!(
            verify_signature(&jwt, &set_with("k2", 1)).unwrap_err(),
            TokenError::UnknownKeyId("k1".into())
        );
    }

    #[test]
    fn wrong_key_same_kid_fails_signature() {
        let jwt = parse_compact(&token()).unwrap();
        assert_eq!(
            verify_signature(&jwt, &set_with("k1", 1)).unwrap_err(),
            TokenError::SignatureInvalid
        );
    }

    #[test]
    fn flipped_payload_bit_fails_signature() {
        let token = token();
        let mut parts: Vec<String> = token.split('.').map(str::to_string).collect();
        let mut payload = URL_SAFE_NO_PAD.decode(&parts[1]).unwrap();
        // flip a bit inside the "alice" value so the payload stays valid JSON
        let pos = payload.iter().position(|&b| b == b'a').unwrap();
        payload[pos] ^= 0x02;
        parts[1] = URL_SAFE_NO_PAD.encode(&payload);
        let jwt = parse_compact(&parts.join(".")).unwrap();
        assert_eq!(
            verify_signature(&jwt, &set_with("k1", 0)).unwrap_err(),
            TokenError::SignatureInvalid
        );
    }

    #[test]
    fn independent_decoder_accepts_minted_token() {
        use jsonwebtoken::{decode, Algorithm, DecodingKey, Validation};
        use rsa::traits::PublicKeyParts;
        let public = key(0).to_public_key();
        let decoding = DecodingKey::from_rsa_raw_components(
            &public.n().to_bytes_be(),
            &public.e().to_bytes_be(),
        );
        let mut validation = Validation::new(Algorithm::RS256);
        validation.required_spec_claims.clear();
        validation.validate_exp = false;
        let data = decode::<Value>(&token(), &decoding, &validation).unwrap();
        assert_eq!(data.claims["sub"], "alice");
        assert_eq!(data.header.kid.as_deref(), Some("k1"));
    }
}
