//! Identities, canonical encoding, signatures, and fingerprint hashing.
//!
//! Every party — clients, cells, the anchor, auditors — shares this one
//! identity scheme: secp256k1 keys, 20-byte addresses derived from the
//! Keccak-256 of the uncompressed public key, and recoverable ECDSA
//! signatures over the canonical byte image of a payload.

pub mod canonical;
pub mod envelope;
pub mod fingerprint;
pub mod identity;

pub use canonical::{from_canonical_str, to_canonical_string};
pub use envelope::{
    sign_envelope, verify_envelope, verify_envelope_fresh, Envelope, Nonce, Opcode, Payload,
    DEFAULT_SKEW_SECS,
};
pub use fingerprint::{combine_fingerprints, fingerprint_bytes, Digest};
pub use identity::{derive_address, recover_address, Address, KeyPair, PublicKey};
