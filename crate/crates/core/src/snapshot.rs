//! Per-cycle state snapshots and the archive bundle served to auditors.
//!
//! An archive is content-addressed by its combined fingerprint: every store
//! it carries can be re-hashed and re-combined, so transport corruption or
//! tampering is self-detecting.

use serde::{Deserialize, Serialize};

use crate::error::AuditError;
use crate::ledger::LedgerEntry;
use crate::protocol::{combine_fingerprints, to_canonical_string, Address, Digest};
use crate::runtime::{hex_store, store_fingerprint, Store};

/// Frozen per-cycle state of all bContracts plus the combined fingerprint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub cycle: u64,
    /// Sorted (contract_id, fingerprint) pairs for non-excluded contracts.
    pub entries: Vec<(Address, Digest)>,
    pub combined: Digest,
    /// Inclusive ledger seq bounds for the cycle; `None` when no
    /// transactions executed.
    pub tx_range: Option<(u64, u64)>,
}

/// One contract's archived state within a cycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchiveEntry {
    pub contract_id: Address,
    pub fingerprint: Digest,
    #[serde(with = "hex_store")]
    pub store: Store,
}

/// The downloadable bundle: stores, fingerprints, and the cycle's ledger
/// slice, enough for an auditor to replay the state transition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotArchive {
    pub cell: Address,
    pub cycle: u64,
    pub entries: Vec<ArchiveEntry>,
    pub combined: Digest,
    pub tx_range: Option<(u64, u64)>,
    pub ledger: Vec<LedgerEntry>,
}

impl SnapshotArchive {
    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            cycle: self.cycle,
            entries: self
                .entries
                .iter()
                .map(|e| (e.contract_id, e.fingerprint))
                .collect(),
            combined: self.combined,
            tx_range: self.tx_range,
        }
    }

    /// Deterministic byte image; identical archives serialize identically.
    pub fn canonical_string(&self) -> String {
        to_canonical_string(self).expect("archive always encodes")
    }

    pub fn decode(s: &str) -> Result<Self, AuditError> {
        crate::protocol::from_canonical_str(s)
            .map_err(|e| AuditError::MalformedArchive(e.to_string()))
    }

    /// Recomputes every fingerprint from the carried stores and the combined
    /// digest from the entries; detects any bit of corruption in transit.
    pub fn verify_content_addressing(&self) -> Result<(), AuditError> {
        for entry in &self.entries {
            let recomputed = store_fingerprint(&entry.store);
            if recomputed != entry.fingerprint {
                return Err(AuditError::MalformedArchive(format!(
                    "store of {} hashes to {recomputed}, archive claims {}",
                    entry.contract_id, entry.fingerprint
                )));
            }
        }
        let pairs: Vec<(Address, Digest)> = self
            .entries
            .iter()
            .map(|e| (e.contract_id, e.fingerprint))
            .collect();
        let combined = combine_fingerprints(&pairs)
            .map_err(|e| AuditError::MalformedArchive(e.to_string()))?;
        if combined != self.combined {
            return Err(AuditError::MalformedArchive(format!(
                "entries combine to {combined}, archive claims {}",
                self.combined
            )));
        }
        Ok(())
    }

    pub fn stores(&self) -> std::collections::BTreeMap<Address, Store> {
        self.entries
            .iter()
            .map(|e| (e.contract_id, e.store.clone()))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::fingerprint_bytes;

    fn sample() -> SnapshotArchive {
        let mut store = Store::new();
        store.insert("k".into(), b"v".to_vec());
        let addr = Address::from_bytes([7; 20]);
        let fp = store_fingerprint(&store);
        SnapshotArchive {
            cell: Address::from_bytes([1; 20]),
            cycle: 4,
            entries: vec![ArchiveEntry {
                contract_id: addr,
                fingerprint: fp,
                store,
            }],
            combined: combine_fingerprints(&[(addr, fp)]).unwrap(),
            tx_range: Some((3, 9)),
            ledger: Vec::new(),
        }
    }

    #[test]
    fn canonical_round_trip_is_byte_stable() {
        let archive = sample();
        let encoded = archive.canonical_string();
        let decoded = SnapshotArchive::decode(&encoded).unwrap();
        assert_eq!(decoded, archive);
        assert_eq!(decoded.canonical_string(), encoded);
    }

    #[test]
    fn content_addressing_detects_store_tamper() {
        let mut archive = sample();
        archive.verify_content_addressing().unwrap();
        archive.entries[0].store.insert("k".into(), b"V".to_vec());
        assert!(archive.verify_content_addressing().is_err());
    }

    #[test]
    fn content_addressing_detects_combined_tamper() {
        let mut archive = sample();
        archive.combined = fingerprint_bytes(b"lies");
        assert!(archive.verify_content_addressing().is_err());
    }
}
