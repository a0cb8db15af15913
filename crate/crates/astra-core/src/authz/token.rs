//! Signed compact access tokens: HS256 over `b64url(header).b64url(claims)`
//! with claims `{sub, scope, exp, jti}`. The `jti` doubles as the
//! revocation handle.

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use hmac::{Hmac, Mac};
use serde::{Deserialize, Serialize};
use sha2::Sha256;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TokenError {
    #[error("token is malformed")]
    Malformed,
    #[error("token signature does not verify")]
    BadSignature,
    #[error("token is expired")]
    Expired,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Claims {
    /// Principal the token was issued to.
    pub sub: String,
    /// Space-joined sorted scope list.
    pub scope: String,
    /// Unix expiry.
    pub exp: u64,
    /// Token id; also the revocation handle.
    pub jti: String,
}

impl Claims {
    pub fn scopes(&self) -> Vec<&str> {
        self.scope.split(' ').filter(|s| !s.is_empty()).collect()
    }

    pub fn has_scope(&self, scope: &str) -> bool {
        self.scopes().contains(&scope)
    }
}

fn hmac_sha256(key: &[u8], message: &[u8]) -> Vec<u8> {
    let mut mac = Hmac::<Sha256>::new_from_slice(key).expect("hmac accepts any key length");
    mac.update(message);
    mac.finalize().into_bytes().to_vec()
}

const HEADER: &str = r#"{"alg":"HS256","typ":"JWT"}"#;

pub fn sign_token(claims: &Claims, key: &[u8]) -> String {
    let header = URL_SAFE_NO_PAD.encode(HEADER);
    let payload = URL_SAFE_NO_PAD.encode(serde_json::to_string(claims).expect("claims serialize"));
    let signing_input = format!("{header}.{payload}");
    let signature = URL_SAFE_NO_PAD.encode(hmac_sha256(key, signing_input.as_bytes()));
    format!("{signing_input}.{signature}")
}

/// Verifies signature and expiry (`now >= exp` is expired) and returns the
/// claims. Revocation is the caller's check — the list lives outside the
/// token.
pub fn verify_token(token: &str, key: &[u8], now: u64) -> Result<Claims, TokenError> {
    let mut parts = token.split('.');
    let (Some(header), Some(payload), Some(signature), None) =
        (parts.next(), parts.next(), parts.next(), parts.next())
    else {
        return Err(TokenError::Malformed);
    };
    let signing_input = format!("{header}.{payload}");
    let expected = hmac_sha256(key, signing_input.as_bytes());
    let provided = URL_SAFE_NO_PAD
        .decode(signature)
        .map_err(|_| TokenError::Malformed)?;
    if expected.len() != provided.len()
        || expected
            .iter()
            .zip(&provided)
            .fold(0u8, |acc, (a, b)| acc | (a ^ b))
            != 0
    {
        return Err(TokenError::BadSignature);
    }
    let payload_bytes = URL_SAFE_NO_PAD
        .decode(payload)
        .map_err(|_| TokenError::Malformed)?;
    let claims: Claims =
        serde_json::from_slice(&payload_bytes).map_err(|_| TokenError::Malformed)?;
    if now >= claims.exp {
        return Err(TokenError::Expired);
    }
    Ok(claims)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn claims() -> Claims {
        Claims {
            sub: "agent-1".into(),
            scope: "azure:search-service-list".into(),
            exp: 2_000,
            jti: "handle-1".into(),
        }
    }

    #[test]
    fn hmac_matches_rfc_4231_vectors() {
        // Case 1: key = 20 x 0x0b, data = "Hi There".
        let sig = hmac_sha256(&[0x0b; 20], b"Hi There");
        assert_eq!(
            hex(&sig),
            "b0344c61d8db38535ca8afceaf0bf12b881dc200c9833da726e9376c2e32cff7"
        );
        // Case 2: key = "Jefe", data = "what do ya want for nothing?".
        let sig = hmac_sha256(b"Jefe", b"what do ya want for nothing?");
        assert_eq!(
            hex(&sig),
            "5bdcc146bf60754e6a042426089575c75a003f089d2739839dec58b964ec3843"
        );
    }

    fn hex(bytes: &[u8]) -> String {
        bytes.iter().map(|b| format!("{b:02x}")).collect()
    }

    #[test]
    fn sign_verify_round_trip() {
        let key = b"test-signing-key";
        let token = sign_token(&claims(), key);
        let verified = verify_token(&token, key, 1_000).unwrap();
        assert_eq!(verified, claims());
    }

    #[test]
    fn wrong_key_rejected() {
        let token = sign_token(&claims(), b"key-a");
        assert_eq!(
            verify_token(&token, b"key-b", 1_000),
            Err(TokenError::BadSignature)
        );
    }

    #[test]
    fn expiry_enforced_at_boundary() {
        let key = b"k";
        let token = sign_token(&claims(), key);
        assert!(verify_token(&token, key, 1_999).is_ok());
        assert_eq!(verify_token(&token, key, 2_000), Err(TokenError::Expired));
        assert_eq!(verify_token(&token, key, 3_000), Err(TokenError::Expired));
    }

    #[test]
    fn tampered_payload_rejected() {
        let key = b"k";
        let token = sign_token(&claims(), key);
        let mut parts: Vec<&str> = token.split('.').collect();
        let other = Claims {
            scope: "azure:subscription-list".into(),
            ..claims()
        };
        let forged_payload = URL_SAFE_NO_PAD.encode(serde_json::to_string(&other).unwrap());
        parts[1] = &forged_payload;
        let forged = parts.join(".");
        assert_eq!(
            verify_token(&forged, key, 1_000),
            Err(TokenError::BadSignature)
        );
    }

    #[test]
    fn garbage_is_malformed() {
        assert_eq!(
            verify_token("definitely-not-a-token", b"k", 0),
            Err(TokenError::Malformed)
        );
        assert_eq!(verify_token("a.b", b"k", 0), Err(TokenError::Malformed));
        assert_eq!(verify_token("a.b.c.d", b"k", 0), Err(TokenError::Malformed));
    }

    #[test]
    fn scope_membership() {
        let c = Claims {
            scope: "a:x b:y".into(),
            ..claims()
        };
        assert!(c.has_scope("a:x"));
        assert!(c.has_scope("b:y"));
        assert!(!c.has_scope("c:z"));
    }
}
