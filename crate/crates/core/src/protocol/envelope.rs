//! Signed protocol messages: every client, cell, and auditor request travels
//! as an `Envelope` — a payload plus the sender's recoverable signature over
//! the payload's canonical byte image.

use std::collections::BTreeMap;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;

use crate::error::ProtocolError;
use crate::protocol::canonical::{from_canonical_str, to_canonical_string};
use crate::protocol::fingerprint::{fingerprint_bytes, Digest};
use crate::protocol::identity::{recover_address, Address, KeyPair, SIGNATURE_LEN};

/// Default freshness window for payload timestamps, in seconds.
pub const DEFAULT_SKEW_SECS: u64 = 300;

pub const NONCE_LEN: usize = 16;

/// 128-bit random message id, unique per sender within a deployment.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Nonce([u8; NONCE_LEN]);

impl Nonce {
    pub fn random<R: rand::RngCore>(rng: &mut R) -> Self {
        let mut bytes = [0u8; NONCE_LEN];
        rng.fill_bytes(&mut bytes);
        Self(bytes)
    }

    pub fn from_bytes(bytes: [u8; NONCE_LEN]) -> Self {
        Self(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; NONCE_LEN] {
        &self.0
    }
}

impl std::fmt::Display for Nonce {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

impl std::fmt::Debug for Nonce {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        std::fmt::Display::fmt(self, f)
    }
}

impl std::str::FromStr for Nonce {
    type Err = ProtocolError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let raw = hex::decode(s).map_err(|e| ProtocolError::Decode(e.to_string()))?;
        let bytes: [u8; NONCE_LEN] =
            raw.as_slice()
                .try_into()
                .map_err(|_| ProtocolError::InvalidLength {
                    what: "nonce",
                    expected: NONCE_LEN,
                    got: raw.len(),
                })?;
        Ok(Self(bytes))
    }
}

impl Serialize for Nonce {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Nonce {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Operation codes fixed at deployment time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Opcode {
    #[serde(rename = "TX_COMMIT")]
    TxCommit,
    #[serde(rename = "TX_FORWARD")]
    TxForward,
    #[serde(rename = "TX_CONFIRM")]
    TxConfirm,
    #[serde(rename = "DEPLOY")]
    Deploy,
    #[serde(rename = "CAS_PUT")]
    CasPut,
    #[serde(rename = "CAS_GET")]
    CasGet,
    #[serde(rename = "SNAPSHOT_GET")]
    SnapshotGet,
    #[serde(rename = "FINGERPRINT_GET")]
    FingerprintGet,
    #[serde(rename = "STATUS")]
    Status,
}

impl Opcode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Opcode::TxCommit => "TX_COMMIT",
            Opcode::TxForward => "TX_FORWARD",
            Opcode::TxConfirm => "TX_CONFIRM",
            Opcode::Deploy => "DEPLOY",
            Opcode::CasPut => "CAS_PUT",
            Opcode::CasGet => "CAS_GET",
            Opcode::SnapshotGet => "SNAPSHOT_GET",
            Opcode::FingerprintGet => "FINGERPRINT_GET",
            Opcode::Status => "STATUS",
        }
    }
}

impl std::fmt::Display for Opcode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The signed portion of a protocol message.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Payload {
    pub sender: Address,
    pub recipient: Address,
    pub opcode: Opcode,
    pub nonce: Nonce,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reply_to: Option<Nonce>,
    pub timestamp: u64,
    #[serde(default)]
    pub data: BTreeMap<String, Value>,
}

impl Payload {
    pub fn new(
        sender: Address,
        recipient: Address,
        opcode: Opcode,
        timestamp: u64,
        data: BTreeMap<String, Value>,
    ) -> Self {
        Self {
            sender,
            recipient,
            opcode,
            nonce: Nonce::random(&mut rand::rng()),
            reply_to: None,
            timestamp,
            data,
        }
    }

    pub fn with_reply_to(mut self, nonce: Nonce) -> Self {
        self.reply_to = Some(nonce);
        self
    }

    pub fn with_nonce(mut self, nonce: Nonce) -> Self {
        self.nonce = nonce;
        self
    }

    /// Keccak-256 over the canonical byte image; the value signatures bind.
    pub fn signing_digest(&self) -> Result<Digest, ProtocolError> {
        Ok(fingerprint_bytes(to_canonical_string(self)?.as_bytes()))
    }
}

/// 65-byte recoverable signature carried next to the payload.
#[derive(Clone, Copy, PartialEq, Eq)]
pub struct SignatureBytes([u8; SIGNATURE_LEN]);

impl SignatureBytes {
    pub fn as_bytes(&self) -> &[u8; SIGNATURE_LEN] {
        &self.0
    }
}

impl std::fmt::Debug for SignatureBytes {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Signature({})", hex::encode(self.0))
    }
}

impl Serialize for SignatureBytes {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&hex::encode(self.0))
    }
}

impl<'de> Deserialize<'de> for SignatureBytes {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        let raw = hex::decode(&s).map_err(serde::de::Error::custom)?;
        let bytes: [u8; SIGNATURE_LEN] = raw.as_slice().try_into().map_err(|_| {
            serde::de::Error::custom(format!("signature must be {SIGNATURE_LEN} bytes"))
        })?;
        Ok(Self(bytes))
    }
}

/// Payload plus the sender's signature; the unit that travels in HTTP bodies.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Envelope {
    pub payload: Payload,
    pub signature: SignatureBytes,
}

impl Envelope {
    /// Canonical wire form, byte-identical for identical envelopes.
    pub fn encode(&self) -> Result<String, ProtocolError> {
        to_canonical_string(self)
    }

    pub fn decode(s: &str) -> Result<Self, ProtocolError> {
        from_canonical_str(s)
    }
}

/// Signs a payload, producing an envelope bound to the key's address.
pub fn sign_envelope(payload: Payload, key: &KeyPair) -> Result<Envelope, ProtocolError> {
    let digest = payload.signing_digest()?;
    let signature = SignatureBytes(key.sign_prehash(&digest));
    Ok(Envelope { payload, signature })
}

/// Verifies signature and sender binding; returns the recovered sender.
pub fn verify_envelope(envelope: &Envelope) -> Result<Address, ProtocolError> {
    let digest = envelope.payload.signing_digest()?;
    let recovered = recover_address(&digest, envelope.signature.as_bytes())?;
    if recovered != envelope.payload.sender {
        return Err(ProtocolError::SenderMismatch {
            claimed: envelope.payload.sender.to_string(),
            recovered: recovered.to_string(),
        });
    }
    Ok(recovered)
}

/// Like [`verify_envelope`] but also enforces the timestamp skew window.
pub fn verify_envelope_fresh(
    envelope: &Envelope,
    now: u64,
    skew: u64,
) -> Result<Address, ProtocolError> {
    let t = envelope.payload.timestamp;
    if t.abs_diff(now) > skew {
        return Err(ProtocolError::StaleTimestamp {
            timestamp: t,
            now,
            skew,
        });
    }
    verify_envelope(envelope)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn test_key(tag: u8) -> KeyPair {
        let mut secret = [7u8; 32];
        secret[0] = tag;
        KeyPair::from_secret_bytes(&secret).unwrap()
    }

    fn sample_payload(key: &KeyPair) -> Payload {
        let mut data = BTreeMap::new();
        data.insert("action".to_string(), json!("transfer"));
        data.insert("amount".to_string(), json!(10));
        Payload::new(
            key.address(),
            test_key(9).address(),
            Opcode::TxCommit,
            1_700_000_000,
            data,
        )
    }

    #[test]
    fn encode_is_deterministic() {
        let key = test_key(1);
        let payload = sample_payload(&key);
        let a = to_canonical_string(&payload).unwrap();
        let b = to_canonical_string(&payload).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn nonce_changes_bytes() {
        let key = test_key(1);
        let payload = sample_payload(&key);
        let other = payload.clone().with_nonce(Nonce::from_bytes([0xAB; 16]));
        assert_ne!(
            to_canonical_string(&payload).unwrap(),
            to_canonical_string(&other).unwrap()
        );
    }

    #[test]
    fn envelope_decode_round_trip() {
        let key = test_key(1);
        let env = sign_envelope(sample_payload(&key), &key).unwrap();
        let wire = env.encode().unwrap();
        let back = Envelope::decode(&wire).unwrap();
        assert_eq!(back, env);
        assert_eq!(back.encode().unwrap(), wire);
    }

    #[test]
    fn sign_then_verify_recovers_sender() {
        let key = test_key(1);
        let env = sign_envelope(sample_payload(&key), &key).unwrap();
        assert_eq!(verify_envelope(&env).unwrap(), key.address());
    }

    #[test]
    fn sender_substitution_fails() {
        let key = test_key(1);
        let imposter = test_key(2);
        let mut payload = sample_payload(&key);
        payload.sender = imposter.address();
        let env = sign_envelope(payload, &key).unwrap();
        assert!(matches!(
            verify_envelope(&env),
            Err(ProtocolError::SenderMismatch { .. })
        ));
    }

    #[test]
    fn payload_tamper_fails() {
        let key = test_key(1);
        let mut env = sign_envelope(sample_payload(&key), &key).unwrap();
        env.payload.timestamp += 1;
        assert!(verify_envelope(&env).is_err());
    }

    #[test]
    fn skew_window_enforced() {
        let key = test_key(1);
        let env = sign_envelope(sample_payload(&key), &key).unwrap();
        let t = env.payload.timestamp;
        assert!(verify_envelope_fresh(&env, t + 299, 300).is_ok());
        assert!(verify_envelope_fresh(&env, t + 300, 300).is_ok());
        assert!(matches!(
            verify_envelope_fresh(&env, t + 301, 300),
            Err(ProtocolError::StaleTimestamp { .. })
        ));
        assert!(matches!(
            verify_envelope_fresh(&env, t.saturating_sub(301), 300),
            Err(ProtocolError::StaleTimestamp { .. })
        ));
    }

    #[test]
    fn reply_to_omitted_when_absent() {
        let key = test_key(1);
        let payload = sample_payload(&key);
        let encoded = to_canonical_string(&payload).unwrap();
        assert!(!encoded.contains("reply_to"));
        let with_reply = payload.with_reply_to(Nonce::from_bytes([1; 16]));
        assert!(to_canonical_string(&with_reply).unwrap().contains("reply_to"));
    }

    #[test]
    fn opcode_wire_names() {
        assert_eq!(serde_json::to_string(&Opcode::TxCommit).unwrap(), "\"TX_COMMIT\"");
        assert_eq!(serde_json::to_string(&Opcode::CasPut).unwrap(), "\"CAS_PUT\"");
    }
}
