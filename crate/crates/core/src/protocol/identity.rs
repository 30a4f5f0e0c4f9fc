//! secp256k1 keys, recoverable signatures, and ethereum-style addresses.

use k256::ecdsa::{RecoveryId, Signature as EcdsaSignature, SigningKey, VerifyingKey};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha3::{Digest as _, Keccak256};

use crate::error::ProtocolError;
use crate::protocol::fingerprint::Digest;

pub const ADDRESS_LEN: usize = 20;
pub const PUBLIC_KEY_LEN: usize = 64;
pub const SIGNATURE_LEN: usize = 65;

/// 20-byte account identifier: the 160-bit suffix of Keccak-256 over the
/// uncompressed public key.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Address([u8; ADDRESS_LEN]);

impl Address {
    pub fn from_bytes(bytes: [u8; ADDRESS_LEN]) -> Self {
        Self(bytes)
    }

    pub fn from_slice(slice: &[u8]) -> Result<Self, ProtocolError> {
        let bytes: [u8; ADDRESS_LEN] =
            slice
                .try_into()
                .map_err(|_| ProtocolError::InvalidLength {
                    what: "address",
                    expected: ADDRESS_LEN,
                    got: slice.len(),
                })?;
        Ok(Self(bytes))
    }

    pub fn as_bytes(&self) -> &[u8; ADDRESS_LEN] {
        &self.0
    }
}

impl std::fmt::Display for Address {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

impl std::fmt::Debug for Address {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        std::fmt::Display::fmt(self, f)
    }
}

impl std::str::FromStr for Address {
    type Err = ProtocolError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.strip_prefix("0x").unwrap_or(s);
        let raw = hex::decode(s).map_err(|e| ProtocolError::Decode(e.to_string()))?;
        Self::from_slice(&raw)
    }
}

impl Serialize for Address {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Address {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Uncompressed secp256k1 public key without the SEC1 tag byte.
#[derive(Clone, Copy, PartialEq, Eq)]
pub struct PublicKey([u8; PUBLIC_KEY_LEN]);

impl PublicKey {
    /// Validates that the 64 bytes name a point on the curve.
    pub fn from_bytes(bytes: [u8; PUBLIC_KEY_LEN]) -> Result<Self, ProtocolError> {
        let mut sec1 = [0u8; PUBLIC_KEY_LEN + 1];
        sec1[0] = 0x04;
        sec1[1..].copy_from_slice(&bytes);
        VerifyingKey::from_sec1_bytes(&sec1).map_err(|_| ProtocolError::InvalidPoint)?;
        Ok(Self(bytes))
    }

    pub fn as_bytes(&self) -> &[u8; PUBLIC_KEY_LEN] {
        &self.0
    }

    fn from_verifying_key(vk: &VerifyingKey) -> Self {
        let point = vk.to_encoded_point(false);
        let mut bytes = [0u8; PUBLIC_KEY_LEN];
        bytes.copy_from_slice(&point.as_bytes()[1..]);
        Self(bytes)
    }
}

impl std::fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "PublicKey({})", hex::encode(self.0))
    }
}

/// secp256k1 keypair identifying one protocol participant.
#[derive(Clone)]
pub struct KeyPair {
    signing: SigningKey,
}

impl KeyPair {
    /// Generates a fresh keypair from the given randomness source.
    pub fn generate<R: rand::RngCore>(rng: &mut R) -> Self {
        loop {
            let mut secret = [0u8; 32];
            rng.fill_bytes(&mut secret);
            if let Ok(kp) = Self::from_secret_bytes(&secret) {
                return kp;
            }
        }
    }

    /// Rejects zero and out-of-order scalars.
    pub fn from_secret_bytes(secret: &[u8; 32]) -> Result<Self, ProtocolError> {
        let signing =
            SigningKey::from_bytes(secret.into()).map_err(|_| ProtocolError::InvalidKey)?;
        Ok(Self { signing })
    }

    pub fn from_hex(s: &str) -> Result<Self, ProtocolError> {
        let s = s.strip_prefix("0x").unwrap_or(s);
        let raw = hex::decode(s).map_err(|e| ProtocolError::Decode(e.to_string()))?;
        let secret: [u8; 32] = raw
            .as_slice()
            .try_into()
            .map_err(|_| ProtocolError::InvalidLength {
                what: "secret key",
                expected: 32,
                got: raw.len(),
            })?;
        Self::from_secret_bytes(&secret)
    }

    pub fn secret_bytes(&self) -> [u8; 32] {
        self.signing.to_bytes().into()
    }

    pub fn secret_hex(&self) -> String {
        hex::encode(self.secret_bytes())
    }

    pub fn public_key(&self) -> PublicKey {
        PublicKey::from_verifying_key(self.signing.verifying_key())
    }

    pub fn address(&self) -> Address {
        derive_address(&self.public_key())
    }

    /// Recoverable ECDSA over a 32-byte prehash: r ‖ s ‖ recovery-id.
    pub fn sign_prehash(&self, digest: &Digest) -> [u8; SIGNATURE_LEN] {
        let (sig, recid) = self
            .signing
            .sign_prehash_recoverable(digest.as_bytes())
            .expect("signing cannot fail for a valid key");
        let mut out = [0u8; SIGNATURE_LEN];
        out[..64].copy_from_slice(&sig.to_bytes());
        out[64] = recid.to_byte();
        out
    }
}

impl std::fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "KeyPair({})", self.address())
    }
}

/// Last 20 bytes of Keccak-256 over the 64-byte uncompressed public key.
pub fn derive_address(public_key: &PublicKey) -> Address {
    let hash = Keccak256::digest(public_key.as_bytes());
    let mut out = [0u8; ADDRESS_LEN];
    out.copy_from_slice(&hash[12..]);
    Address::from_bytes(out)
}

/// Recovers the signer's address from a prehash and a 65-byte signature.
pub fn recover_address(
    digest: &Digest,
    signature: &[u8; SIGNATURE_LEN],
) -> Result<Address, ProtocolError> {
    let sig = EcdsaSignature::from_slice(&signature[..64])
        .map_err(|_| ProtocolError::BadSignature)?;
    let recid = RecoveryId::from_byte(signature[64]).ok_or(ProtocolError::BadSignature)?;
    let vk = VerifyingKey::recover_from_prehash(digest.as_bytes(), &sig, recid)
        .map_err(|_| ProtocolError::BadSignature)?;
    Ok(derive_address(&PublicKey::from_verifying_key(&vk)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::fingerprint::fingerprint_bytes;

    // Pinned with an independent Keccak-256 + secp256k1 oracle; see
    // tests/protocol_vectors.rs for the oracle itself.
    const FIXED_SECRET: &str = "4c0883a69102937d6231471b5dbb6204fe51296170827936ea5cce4b76994b0f";
    const FIXED_ADDRESS: &str = "1a90d4744979058aa58a8f981542cce348a85fd5";

    #[test]
    fn fixed_key_address() {
        let kp = KeyPair::from_hex(FIXED_SECRET).unwrap();
        assert_eq!(kp.address().to_string(), FIXED_ADDRESS);
    }

    #[test]
    fn key_one_matches_known_ethereum_address() {
        let mut secret = [0u8; 32];
        secret[31] = 1;
        let kp = KeyPair::from_secret_bytes(&secret).unwrap();
        assert_eq!(
            kp.address().to_string(),
            "7e5f4552091a69125d5dfcb7b8c2659029395bdf"
        );
    }

    #[test]
    fn distinct_keys_distinct_addresses() {
        let mut rng = rand::rng();
        let a = KeyPair::generate(&mut rng);
        let b = KeyPair::generate(&mut rng);
        assert_ne!(a.address(), b.address());
    }

    #[test]
    fn address_derivation_is_deterministic() {
        let kp = KeyPair::from_hex(FIXED_SECRET).unwrap();
        assert_eq!(derive_address(&kp.public_key()), derive_address(&kp.public_key()));
    }

    #[test]
    fn zero_secret_rejected() {
        assert!(KeyPair::from_secret_bytes(&[0u8; 32]).is_err());
    }

    #[test]
    fn invalid_point_rejected() {
        assert!(PublicKey::from_bytes([0xFF; PUBLIC_KEY_LEN]).is_err());
    }

    #[test]
    fn sign_recover_round_trip() {
        let kp = KeyPair::from_hex(FIXED_SECRET).unwrap();
        let digest = fingerprint_bytes(b"round trip");
        let sig = kp.sign_prehash(&digest);
        assert_eq!(recover_address(&digest, &sig).unwrap(), kp.address());
    }

    #[test]
    fn address_hex_round_trip() {
        let kp = KeyPair::from_hex(FIXED_SECRET).unwrap();
        let addr = kp.address();
        let parsed: Address = addr.to_string().parse().unwrap();
        assert_eq!(parsed, addr);
        let prefixed: Address = format!("0x{addr}").parse().unwrap();
        assert_eq!(prefixed, addr);
    }
}
