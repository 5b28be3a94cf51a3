//! Webhook signatures against frozen HMAC-SHA256 vectors and a from-scratch
//! HMAC built on the raw hash.

use std::path::Path;

use forgebot::gateway::{sign, verify_signature, verify_token};
use proptest::prelude::*;
use serde::Deserialize;
use sha2::{Digest, Sha256};

/// HMAC per RFC 2104 with a 64-byte block.
fn reference_hmac(key: &[u8], message: &[u8]) -> [u8; 32] {
    let mut block = [0u8; 64];
    if key.len() > 64 {
        block[..32].copy_from_slice(&Sha256::digest(key));
    } else {
        block[..key.len()].copy_from_slice(key);
    }
    let ipad: Vec<u8> = block.iter().map(|b| b ^ 0x36).collect();
    let opad: Vec<u8> = block.iter().map(|b| b ^ 0x5c).collect();
    let inner = Sha256::new().chain_update(&ipad).chain_update(message).finalize();
    Sha256::new().chain_update(&opad).chain_update(inner).finalize().into()
}

#[derive(Deserialize)]
struct Vector {
    name: String,
    key_hex: String,
    body_hex: String,
    hmac_sha256: String,
}

/// Digests in the fixture were computed with Python's `hmac` module.
fn vectors() -> Vec<(String, Vec<u8>, Vec<u8>, String)> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/hmac_vectors.json");
    let raw: Vec<Vector> = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    raw.into_iter()
        .map(|v| (v.name, hex::decode(v.key_hex).unwrap(), hex::decode(v.body_hex).unwrap(), v.hmac_sha256))
        .collect()
}

#[test]
fn frozen_vectors() {
    let vectors = vectors();
    assert!(vectors.len() >= 10);
    for (name, key, body, digest) in &vectors {
        let header = format!("sha256={digest}");
        assert_eq!(sign(key, body), header, "{name}");
        assert_eq!(&hex::encode(reference_hmac(key, body)), digest, "reference disagrees on {name}");
        assert!(verify_signature(key, body, &header), "{name}");
        assert!(verify_signature(key, body, &format!("sha256={}", digest.to_uppercase())), "{name}");
    }
    // RFC 4231 test case 2, as printed in the RFC.
    let (_, key, body, digest) = vectors.iter().find(|v| v.0 == "rfc4231 case 2").unwrap();
    assert_eq!((key.as_slice(), body.as_slice()), (&b"Jefe"[..], &b"what do ya want for nothing?"[..]));
    assert_eq!(digest, "5bdcc146bf60754e6a042426089575c75a003f089d2739839dec58b964ec3843");
}

#[test]
fn malformed_headers_are_rejected() {
    let body = b"{}";
    let good = sign(b"s", body);
    assert!(verify_signature(b"s", body, &good));
    for bad in [
        "",
        "sha256=",
        "sha1=64eca07cce67929c357d63d0a4aec207e774800403298914fc04e88ce02ac49f",
        good.trim_start_matches("sha256="),
        "sha256=zz",
        &good[..good.len() - 2],
        &format!("{good}00"),
    ] {
        assert!(!verify_signature(b"s", body, bad), "accepted {bad:?}");
    }
    assert!(!verify_signature(b"", body, &sign(b"", body)), "empty secret must never verify");
}

#[test]
fn gitlab_token_is_compared_exactly() {
    assert!(verify_token(b"tok", "tok"));
    assert!(!verify_token(b"tok", "tok "));
    assert!(!verify_token(b"tok", "to"));
    assert!(!verify_token(b"", ""));
}

proptest! {
    #[test]
    fn sign_matches_reference(key in prop::collection::vec(any::<u8>(), 1..200), body in prop::collection::vec(any::<u8>(), 0..300)) {
        prop_assert_eq!(sign(&key, &body), format!("sha256={}", hex::encode(reference_hmac(&key, &body))));
    }

    #[test]
    fn tampering_is_detected(
        key in prop::collection::vec(any::<u8>(), 1..64),
        body in prop::collection::vec(any::<u8>(), 1..200),
        at in any::<prop::sample::Index>(),
        flip in 1u8..=255,
    ) {
        let header = sign(&key, &body);
        prop_assert!(verify_signature(&key, &body, &header));
        let mut tampered = body.clone();
        tampered[at.index(body.len())] ^= flip;
        prop_assert!(!verify_signature(&key, &tampered, &header));
        let mut other_key = key.clone();
        other_key[at.index(key.len())] ^= flip;
        prop_assert!(!verify_signature(&other_key, &body, &header));
    }
}
