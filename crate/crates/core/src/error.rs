//! Error types shared across the crate.

use thiserror::Error;

/// Failures in the identity/encoding/signature layer.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProtocolError {
    #[error("signature does not verify")]
    BadSignature,
    #[error("recovered signer {recovered} does not match payload sender {claimed}")]
    SenderMismatch { claimed: String, recovered: String },
    #[error("timestamp {timestamp} outside skew window of {now} (±{skew}s)")]
    StaleTimestamp { timestamp: u64, now: u64, skew: u64 },
    #[error("invalid secret key")]
    InvalidKey,
    #[error("invalid curve point")]
    InvalidPoint,
    #[error("value cannot be canonically encoded: {0}")]
    NonEncodable(String),
    #[error("decode error: {0}")]
    Decode(String),
    #[error("invalid {what} length: expected {expected} bytes, got {got}")]
    InvalidLength {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("fingerprint entries not sorted by contract id")]
    UnsortedFingerprints,
    #[error("duplicate contract id in fingerprint entries")]
    DuplicateFingerprint,
}

/// Report-cycle arithmetic failures.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TimingError {
    #[error("timestamp {timestamp} precedes first deadline t0={t0}")]
    BeforeGenesis { timestamp: u64, t0: u64 },
    #[error("timestamp {0} is not a report deadline")]
    NotADeadline(u64),
    #[error("invalid deployment invariants: {0}")]
    InvalidInvariants(String),
}

/// Failures raised by bContract execution.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ContractError {
    #[error("unknown opcode for this contract")]
    UnknownOpcode,
    #[error("contract rule violation: {0}")]
    RuleViolation(String),
    #[error("entry not found")]
    NotFound,
    #[error("reference count underflow")]
    RefcountUnderflow,
    #[error("contract id already in use")]
    DuplicateContract,
    #[error("unknown code reference")]
    UnknownCodeRef,
    #[error("malformed transaction data: {0}")]
    BadData(String),
}

/// Cell-service failures surfaced to clients and peers.
#[derive(Debug, Error)]
pub enum CellError {
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error("sender has no active subscription with this cell")]
    NotSubscribed,
    #[error("unknown contract {0}")]
    UnknownContract(String),
    #[error("forwarding cell is not a consortium member")]
    NotConsortiumMember,
    #[error("transaction reverted: {reason}")]
    Reverted { reason: RevertReason },
    #[error("transaction filtered by this cell")]
    Censored,
    #[error("anchor unreachable: {0}")]
    AnchorUnreachable(String),
    #[error(transparent)]
    Timing(#[from] TimingError),
    #[error("unsupported opcode {0} on this endpoint")]
    UnsupportedOpcode(String),
    #[error("internal: {0}")]
    Internal(String),
}

/// Why a transaction reverted (as opposed to being rejected by contract rules).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RevertReason {
    /// A consortium cell missed the forwarding deadline.
    Deadline,
    /// Post-execution fingerprints disagreed across cells.
    Mismatch,
}

impl RevertReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            RevertReason::Deadline => "deadline",
            RevertReason::Mismatch => "mismatch",
        }
    }
}

impl std::fmt::Display for RevertReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for RevertReason {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "deadline" => Ok(RevertReason::Deadline),
            "mismatch" => Ok(RevertReason::Mismatch),
            other => Err(format!("unknown revert reason {other}")),
        }
    }
}

/// Failures raised by the anchor contract simulation.
#[derive(Debug, Error)]
pub enum AnchorError {
    #[error("cell is not in the deployment allowlist")]
    NotAllowedCell,
    #[error("report for this cell and cycle already recorded")]
    DuplicateReport,
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error("anchor log io: {0}")]
    Io(#[from] std::io::Error),
    #[error("anchor log corrupt: {0}")]
    CorruptLog(String),
}

/// Failures raised while auditing.
#[derive(Debug, Error)]
pub enum AuditError {
    #[error("malformed archive: {0}")]
    MalformedArchive(String),
    #[error("archive unavailable: {0}")]
    ArchiveUnavailable(String),
    #[error("anchor unreachable: {0}")]
    AnchorUnreachable(String),
}

/// Failures in the analytical cost model.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CostError {
    #[error("per-cell delay list is empty but consortium has {0} cells")]
    EmptyDelays(usize),
    #[error("per-cell size list has {got} entries, need {need}")]
    SizeListTooShort { got: usize, need: usize },
    #[error("report period must be positive")]
    NonPositivePeriod,
}

/// Deployment configuration failures.
#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config io: {0}")]
    Io(#[from] std::io::Error),
    #[error("config parse: {0}")]
    Parse(String),
    #[error(transparent)]
    Timing(#[from] TimingError),
    #[error("invalid config: {0}")]
    Invalid(String),
}
