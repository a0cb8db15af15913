//! Proof Key for Code Exchange (S256 only).

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use sha2::{Digest, Sha256};

use super::AuthzError;

/// Constant-time byte comparison; length mismatch short-circuits, which
/// leaks only the length.
fn ct_eq(a: &[u8], b: &[u8]) -> bool {
    if a.len() != b.len() {
        return false;
    }
    a.iter().zip(b).fold(0u8, |acc, (x, y)| acc | (x ^ y)) == 0
}

/// Derives the S256 challenge for a verifier.
pub fn derive_challenge(code_verifier: &str) -> String {
    URL_SAFE_NO_PAD.encode(Sha256::digest(code_verifier.as_bytes()))
}

/// True iff base64url(SHA-256(verifier)) equals the challenge. Only the
/// S256 method is accepted; `plain` (and anything else) is rejected.
pub fn verify_pkce(
    code_verifier: &str,
    code_challenge: &str,
    method: &str,
) -> Result<bool, AuthzError> {
    if method != "S256" {
        return Err(AuthzError::UnsupportedChallengeMethod(method.to_string()));
    }
    let derived = derive_challenge(code_verifier);
    Ok(ct_eq(derived.as_bytes(), code_challenge.as_bytes()))
}

/// High-entropy verifier (43 base64url chars from 32 random bytes).
pub fn generate_verifier(rng: &mut impl rand::Rng) -> String {
    let mut bytes = [0u8; 32];
    rng.fill_bytes(&mut bytes);
    URL_SAFE_NO_PAD.encode(bytes)
}
