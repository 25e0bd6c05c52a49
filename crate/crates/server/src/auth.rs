//! Shared-key request authentication.
//!
//! Every mutating request carries three headers:
//!
//! - `X-Auth-Timestamp`: unix seconds as a decimal string
//! - `X-Auth-Nonce`: at least 16 random bytes, hex encoded
//! - `X-Auth-MAC`: hex HMAC-SHA-256 of `timestamp ‖ "\n" ‖ nonce ‖ "\n" ‖ body`
//!
//! The key is app-wide, never per user, so a valid MAC identifies nobody.

use std::collections::{BTreeSet, HashMap};

use hmac::{Hmac, KeyInit, Mac};
use parking_lot::Mutex;
use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::Sha256;
use thiserror::Error;

pub const HEADER_TIMESTAMP: &str = "x-auth-timestamp";
pub const HEADER_NONCE: &str = "x-auth-nonce";
pub const HEADER_MAC: &str = "x-auth-mac";

/// Minimum nonce length in bytes (hex doubles it).
pub const MIN_NONCE_BYTES: usize = 16;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AuthConfigError {
    #[error("shared key must not be empty")]
    EmptyKey,
    #[error("replay window must be at least one second")]
    ZeroWindow,
    #[error("nonce cache capacity must be at least 1")]
    ZeroCapacity,
}

#[derive(Clone, Serialize, Deserialize)]
pub struct AuthConfig {
    shared_key: Vec<u8>,
    replay_window: u64,
    nonce_cache_capacity: usize,
}

impl std::fmt::Debug for AuthConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AuthConfig")
            .field("shared_key", &"<redacted>")
            .field("replay_window", &self.replay_window)
            .field("nonce_cache_capacity", &self.nonce_cache_capacity)
            .finish()
    }
}

impl AuthConfig {
    pub fn new(shared_key: impl Into<Vec<u8>>, replay_window: u64, nonce_cache_capacity: usize) -> Result<Self, AuthConfigError> {
        let shared_key = shared_key.into();
        if shared_key.is_empty() {
            return Err(AuthConfigError::EmptyKey);
        }
        if replay_window == 0 {
            return Err(AuthConfigError::ZeroWindow);
        }
        if nonce_cache_capacity == 0 {
            return Err(AuthConfigError::ZeroCapacity);
        }
        Ok(Self { shared_key, replay_window, nonce_cache_capacity })
    }

    pub fn shared_key(&self) -> &[u8] {
        &self.shared_key
    }

    pub fn replay_window(&self) -> u64 {
        self.replay_window
    }

    pub fn nonce_cache_capacity(&self) -> usize {
        self.nonce_cache_capacity
    }
}

fn mac_state(key: &[u8], timestamp: &str, nonce: &str, body: &[u8]) -> Hmac<Sha256> {
    let mut mac = Hmac::<Sha256>::new_from_slice(key).expect("HMAC accepts any key length");
    mac.update(timestamp.as_bytes());
    mac.update(b"\n");
    mac.update(nonce.as_bytes());
    mac.update(b"\n");
    mac.update(body);
    mac
}

/// Lowercase hex HMAC-SHA-256 over `timestamp ‖ "\n" ‖ nonce ‖ "\n" ‖ body`.
pub fn compute_mac(key: &[u8], timestamp: &str, nonce: &str, body: &[u8]) -> String {
    hex::encode(mac_state(key, timestamp, nonce, body).finalize().into_bytes())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RejectReason {
    /// Missing or unparseable auth headers.
    Malformed,
    BadMac,
    Stale,
    Replay,
    /// The nonce cache is full of unexpired entries.
    Overloaded,
}

impl RejectReason {
    pub fn code(self) -> &'static str {
        match self {
            Self::Malformed => "MALFORMED_AUTH",
            Self::BadMac => "BAD_MAC",
            Self::Stale => "STALE",
            Self::Replay => "REPLAY",
            Self::Overloaded => "NONCE_CACHE_FULL",
        }
    }
}

impl std::fmt::Display for RejectReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.code())
    }
}

/// Raw header values as received.
#[derive(Clone, Copy, Debug, Default)]
pub struct AuthHeaders<'a> {
    pub timestamp: Option<&'a str>,
    pub nonce: Option<&'a str>,
    pub mac: Option<&'a str>,
}

/// Seen nonces with their expiry, evicted once they could no longer pass
/// the staleness check anyway.
#[derive(Debug)]
pub struct NonceCache {
    capacity: usize,
    inner: Mutex<NonceSet>,
}

#[derive(Debug, Default)]
struct NonceSet {
    expiry: HashMap<String, i64>,
    by_expiry: BTreeSet<(i64, String)>,
}

impl NonceCache {
    pub fn new(capacity: usize) -> Self {
        Self { capacity, inner: Mutex::new(NonceSet::default()) }
    }

    /// Records `nonce` until `expires_at`. Fails if it is already present.
    pub fn insert(&self, nonce: &str, expires_at: i64, now: i64) -> Result<(), RejectReason> {
        let mut set = self.inner.lock();
        while let Some((exp, _)) = set.by_expiry.first() {
            if *exp >= now {
                break;
            }
            let (_, old) = set.by_expiry.pop_first().expect("non-empty");
            set.expiry.remove(&old);
        }
        if set.expiry.contains_key(nonce) {
            return Err(RejectReason::Replay);
        }
        if set.expiry.len() >= self.capacity {
            return Err(RejectReason::Overloaded);
        }
        set.expiry.insert(nonce.to_owned(), expires_at);
        set.by_expiry.insert((expires_at, nonce.to_owned()));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.inner.lock().expiry.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub struct Verifier {
    config: AuthConfig,
    nonces: NonceCache,
}

impl Verifier {
    pub fn new(config: AuthConfig) -> Self {
        let nonces = NonceCache::new(config.nonce_cache_capacity);
        Self { config, nonces }
    }

    pub fn config(&self) -> &AuthConfig {
        &self.config
    }

    /// Checks MAC, then freshness, then replay. The nonce is recorded only
    /// when everything else passed.
    pub fn verify(&self, headers: AuthHeaders<'_>, body: &[u8], now: i64) -> Result<(), RejectReason> {
        verify_request(headers, body, &self.config, &self.nonces, now)
    }
}

fn parse_headers<'a>(h: AuthHeaders<'a>) -> Result<(&'a str, i64, &'a str, Vec<u8>), RejectReason> {
    let (Some(ts), Some(nonce), Some(mac)) = (h.timestamp, h.nonce, h.mac) else {
        return Err(RejectReason::Malformed);
    };
    if ts.is_empty() || ts.len() > 19 || !ts.bytes().all(|b| b.is_ascii_digit()) {
        return Err(RejectReason::Malformed);
    }
    let ts_value: i64 = ts.parse().map_err(|_| RejectReason::Malformed)?;
    let nonce_ok = nonce.len() >= 2 * MIN_NONCE_BYTES
        && nonce.len() <= 256
        && nonce.len() % 2 == 0
        && nonce.bytes().all(|b| b.is_ascii_hexdigit());
    if !nonce_ok {
        return Err(RejectReason::Malformed);
    }
    let mac_bytes = hex::decode(mac).map_err(|_| RejectReason::Malformed)?;
    if mac_bytes.len() != 32 {
        return Err(RejectReason::Malformed);
    }
    Ok((ts, ts_value, nonce, mac_bytes))
}

/// Accepts iff the MAC matches (constant-time), `|now - timestamp|` is
/// within the replay window, and the nonce has not been seen in the window.
pub fn verify_request(
    headers: AuthHeaders<'_>,
    body: &[u8],
    config: &AuthConfig,
    nonces: &NonceCache,
    now: i64,
) -> Result<(), RejectReason> {
    let (ts, ts_value, nonce, mac) = parse_headers(headers)?;
    mac_state(&config.shared_key, ts, nonce, body)
        .verify_slice(&mac)
        .map_err(|_| RejectReason::BadMac)?;
    let window = i64::try_from(config.replay_window).unwrap_or(i64::MAX);
    if now.abs_diff(ts_value) > config.replay_window {
        return Err(RejectReason::Stale);
    }
    // Nonces are case-insensitive hex; store one canonical form.
    nonces.insert(&nonce.to_ascii_lowercase(), ts_value.saturating_add(window), now)
}

/// Header values for one signed request.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SignedHeaders {
    pub timestamp: String,
    pub nonce: String,
    pub mac: String,
}

impl SignedHeaders {
    pub fn as_auth_headers(&self) -> AuthHeaders<'_> {
        AuthHeaders { timestamp: Some(&self.timestamp), nonce: Some(&self.nonce), mac: Some(&self.mac) }
    }

    pub fn pairs(&self) -> [(&'static str, &str); 3] {
        [(HEADER_TIMESTAMP, &self.timestamp), (HEADER_NONCE, &self.nonce), (HEADER_MAC, &self.mac)]
    }
}

/// Client-side signing with a fresh random nonce.
pub fn sign(key: &[u8], now: i64, body: &[u8]) -> SignedHeaders {
    let mut bytes = [0u8; MIN_NONCE_BYTES];
    rand::rng().fill_bytes(&mut bytes);
    sign_with_nonce(key, now, &hex::encode(bytes), body)
}

pub fn sign_with_nonce(key: &[u8], now: i64, nonce: &str, body: &[u8]) -> SignedHeaders {
    let timestamp = now.to_string();
    let mac = compute_mac(key, &timestamp, nonce, body);
    SignedHeaders { timestamp, nonce: nonce.to_owned(), mac }
}

#[cfg(test)]
mod tests {
    use super::*;

    const NONCE: &str = "00112233445566778899aabbccddeeff";

    fn verifier(window: u64, capacity: usize) -> Verifier {
        Verifier::new(AuthConfig::new(b"secret".to_vec(), window, capacity).unwrap())
    }

    #[test]
    fn config_invariants() {
        assert_eq!(AuthConfig::new(Vec::new(), 60, 10).unwrap_err(), AuthConfigError::EmptyKey);
        assert_eq!(AuthConfig::new(b"k".to_vec(), 0, 10).unwrap_err(), AuthConfigError::ZeroWindow);
        assert_eq!(AuthConfig::new(b"k".to_vec(), 1, 0).unwrap_err(), AuthConfigError::ZeroCapacity);
        assert!(!format!("{:?}", AuthConfig::new(b"hunter2".to_vec(), 1, 1).unwrap()).contains("hunter2"));
    }

    #[test]
    fn mac_is_deterministic_and_sensitive() {
        let a = compute_mac(b"k", "0", "n", b"body");
        assert_eq!(a, compute_mac(b"k", "0", "n", b"body"));
        assert_ne!(a, compute_mac(b"k", "0", "n", b"bodz"));
        assert_eq!(a.len(), 64);
        assert!(a.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b)));
    }

    #[test]
    fn round_trip_then_replay() {
        let v = verifier(300, 100);
        let h = sign_with_nonce(b"secret", 1000, NONCE, b"{}");
        assert_eq!(v.verify(h.as_auth_headers(), b"{}", 1000), Ok(()));
        assert_eq!(v.verify(h.as_auth_headers(), b"{}", 1001), Err(RejectReason::Replay));
        // same nonce in upper case is the same nonce
        let upper = sign_with_nonce(b"secret", 1000, &NONCE.to_uppercase(), b"{}");
        assert_eq!(v.verify(upper.as_auth_headers(), b"{}", 1001), Err(RejectReason::Replay));
    }

    #[test]
    fn window_edges() {
        let v = verifier(300, 100);
        let h = sign(b"secret", 1000, b"");
        assert_eq!(v.verify(h.as_auth_headers(), b"", 1301), Err(RejectReason::Stale));
        let h = sign(b"secret", 1000, b"");
        assert_eq!(v.verify(h.as_auth_headers(), b"", 1300), Ok(()));
        let h = sign(b"secret", 1000, b"");
        assert_eq!(v.verify(h.as_auth_headers(), b"", 699), Err(RejectReason::Stale));
    }

    #[test]
    fn tampering_and_wrong_key() {
        let v = verifier(300, 100);
        let h = sign(b"secret", 5, b"abc");
        assert_eq!(v.verify(h.as_auth_headers(), b"abd", 5), Err(RejectReason::BadMac));
        let h = sign(b"other", 5, b"abc");
        assert_eq!(v.verify(h.as_auth_headers(), b"abc", 5), Err(RejectReason::BadMac));
        // a rejected request does not burn its nonce
        let good = sign_with_nonce(b"secret", 5, NONCE, b"abc");
        let mut bad = good.clone();
        bad.mac = compute_mac(b"secret", "5", NONCE, b"xyz");
        assert_eq!(v.verify(bad.as_auth_headers(), b"abc", 5), Err(RejectReason::BadMac));
        assert_eq!(v.verify(good.as_auth_headers(), b"abc", 5), Ok(()));
    }

    #[test]
    fn malformed_headers() {
        let v = verifier(300, 100);
        let h = sign(b"secret", 5, b"");
        let mut cases = vec![
            AuthHeaders { timestamp: None, ..h.as_auth_headers() },
            AuthHeaders { nonce: None, ..h.as_auth_headers() },
            AuthHeaders { mac: None, ..h.as_auth_headers() },
            AuthHeaders { timestamp: Some("-5"), ..h.as_auth_headers() },
            AuthHeaders { timestamp: Some("5.0"), ..h.as_auth_headers() },
            AuthHeaders { nonce: Some("abcd"), ..h.as_auth_headers() },
            AuthHeaders { mac: Some("zz"), ..h.as_auth_headers() },
        ];
        let short_nonce = "ab".repeat(15);
        cases.push(AuthHeaders { nonce: Some(&short_nonce), ..h.as_auth_headers() });
        for c in cases {
            assert_eq!(v.verify(c, b"", 5), Err(RejectReason::Malformed), "{c:?}");
        }
    }

    #[test]
    fn nonces_expire_and_cache_bounds() {
        let cache = NonceCache::new(2);
        cache.insert("a", 10, 0).unwrap();
        cache.insert("b", 20, 0).unwrap();
        assert_eq!(cache.insert("c", 30, 5), Err(RejectReason::Overloaded));
        assert_eq!(cache.insert("a", 30, 10), Err(RejectReason::Replay));
        cache.insert("c", 30, 11).unwrap();
        assert_eq!(cache.len(), 2);
    }
}
