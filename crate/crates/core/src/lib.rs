//! Blockumulus: decentralized smart contracts on a fixed consortium of cloud
//! cells, kept honest by anchoring per-cycle state fingerprints in an
//! append-only public contract.
//!
//! The crate is organized around the moving parts of a deployment:
//!
//! * [`protocol`] — identities, canonical encoding, signed envelopes, and the
//!   Keccak-256 fingerprint primitives every other module shares.
//! * [`timing`] — report-cycle arithmetic (deadlines, cycle indices, the
//!   report-validity window).
//! * [`runtime`] — the bContract execution environment with the deployer and
//!   CAS system contracts plus the FastMoney payment contract.
//! * [`cell`] — the cell service: transaction workflow, report stage,
//!   peer exclusion, and the HTTP surface.
//! * [`anchor`] — the in-process stand-in for the public-chain contract:
//!   immutable fingerprint reports and the censorship-escape queue.
//! * [`auditor`] — snapshot succession and data integrity audits over public
//!   data, and the deployment-validity predicate.
//! * [`cost`] — the analytical scalability and fee estimators.
//! * [`harness`] — local deployment orchestration, load generation, and
//!   fault injection used by the CLI and the test suites.

pub mod anchor;
pub mod auditor;
pub mod cell;
pub mod clock;
pub mod config;
pub mod cost;
pub mod error;
pub mod harness;
pub mod ledger;
pub mod protocol;
pub mod receipt;
pub mod runtime;
pub mod snapshot;
pub mod timing;

pub use clock::{Clock, ManualClock, SystemClock};
pub use config::DeploymentConfig;
pub use error::{AnchorError, AuditError, CellError, ContractError, ProtocolError, TimingError};
pub use protocol::{
    derive_address, fingerprint_bytes, sign_envelope, verify_envelope, Address, Digest, Envelope,
    KeyPair, Nonce, Opcode, Payload, PublicKey,
};
pub use timing::DeploymentInvariants;
