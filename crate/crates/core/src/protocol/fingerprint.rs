//! Keccak-256 fingerprinting and the combined data-snapshot fingerprint.

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha3::{Digest as _, Keccak256};

use crate::error::ProtocolError;
use crate::protocol::identity::Address;

pub const DIGEST_LEN: usize = 32;

/// 32-byte Keccak-256 output.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Digest([u8; DIGEST_LEN]);

impl Digest {
    pub fn from_bytes(bytes: [u8; DIGEST_LEN]) -> Self {
        Self(bytes)
    }

    pub fn from_slice(slice: &[u8]) -> Result<Self, ProtocolError> {
        let bytes: [u8; DIGEST_LEN] =
            slice
                .try_into()
                .map_err(|_| ProtocolError::InvalidLength {
                    what: "digest",
                    expected: DIGEST_LEN,
                    got: slice.len(),
                })?;
        Ok(Self(bytes))
    }

    pub fn as_bytes(&self) -> &[u8; DIGEST_LEN] {
        &self.0
    }
}

impl std::fmt::Display for Digest {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

impl std::fmt::Debug for Digest {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        std::fmt::Display::fmt(self, f)
    }
}

impl std::str::FromStr for Digest {
    type Err = ProtocolError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.strip_prefix("0x").unwrap_or(s);
        let raw = hex::decode(s).map_err(|e| ProtocolError::Decode(e.to_string()))?;
        Self::from_slice(&raw)
    }
}

impl Serialize for Digest {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Digest {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Keccak-256 of the input bytes.
pub fn fingerprint_bytes(data: &[u8]) -> Digest {
    Digest(Keccak256::digest(data).into())
}

/// Combines per-contract fingerprints into the data snapshot fingerprint:
/// Keccak-256 over the concatenated (contract_id ‖ digest) pairs.
///
/// Entries must arrive sorted ascending by contract id with no duplicates so
/// every cell hashes the identical byte stream.
pub fn combine_fingerprints(entries: &[(Address, Digest)]) -> Result<Digest, ProtocolError> {
    let mut hasher = Keccak256::new();
    for (i, (contract, digest)) in entries.iter().enumerate() {
        if i > 0 {
            let prev = &entries[i - 1].0;
            if contract < prev {
                return Err(ProtocolError::UnsortedFingerprints);
            }
            if contract == prev {
                return Err(ProtocolError::DuplicateFingerprint);
            }
        }
        hasher.update(contract.as_bytes());
        hasher.update(digest.as_bytes());
    }
    Ok(Digest(hasher.finalize().into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    // Keccak-256 of the empty string; cross-checked against the independent
    // oracle in tests/protocol_vectors.rs.
    const EMPTY_KECCAK: &str = "c5d2460186f7233c927e7db2dcc703c0e500b653ca82273b7bfad8045d85a470";

    #[test]
    fn empty_input_digest() {
        assert_eq!(fingerprint_bytes(b"").to_string(), EMPTY_KECCAK);
    }

    #[test]
    fn deterministic_and_bit_sensitive() {
        assert_eq!(fingerprint_bytes(b"snapshot"), fingerprint_bytes(b"snapshot"));
        assert_ne!(fingerprint_bytes(b"snapshot"), fingerprint_bytes(b"snapshos"));
    }

    #[test]
    fn combine_empty_is_empty_hash() {
        assert_eq!(combine_fingerprints(&[]).unwrap(), fingerprint_bytes(b""));
    }

    #[test]
    fn combine_single_entry() {
        // Pinned via the independent oracle: keccak(addr 00..01 ‖ keccak("abc")).
        let mut addr = [0u8; 20];
        addr[19] = 1;
        let entry = (Address::from_bytes(addr), fingerprint_bytes(b"abc"));
        assert_eq!(
            combine_fingerprints(&[entry]).unwrap().to_string(),
            "473119e912edf1c2a527eff4c5082789d847324a129723c47f789ff0a0a05636"
        );
    }

    #[test]
    fn combine_rejects_unsorted_and_duplicates() {
        let a = (addr(1), fingerprint_bytes(b"a"));
        let b = (addr(2), fingerprint_bytes(b"b"));
        assert_eq!(
            combine_fingerprints(&[b.clone(), a.clone()]).unwrap_err(),
            ProtocolError::UnsortedFingerprints
        );
        assert_eq!(
            combine_fingerprints(&[a.clone(), a.clone()]).unwrap_err(),
            ProtocolError::DuplicateFingerprint
        );
        assert!(combine_fingerprints(&[a, b]).is_ok());
    }

    #[test]
    fn combine_sensitive_to_single_entry_change() {
        let base = vec![
            (addr(1), fingerprint_bytes(b"one")),
            (addr(2), fingerprint_bytes(b"two")),
            (addr(3), fingerprint_bytes(b"three")),
        ];
        let combined = combine_fingerprints(&base).unwrap();
        for i in 0..base.len() {
            let mut flipped = base.clone();
            flipped[i].1 = fingerprint_bytes(b"flipped");
            assert_ne!(combine_fingerprints(&flipped).unwrap(), combined);
        }
    }

    fn addr(last: u8) -> Address {
        let mut bytes = [0u8; 20];
        bytes[19] = last;
        Address::from_bytes(bytes)
    }
}
