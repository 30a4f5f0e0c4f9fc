//! Append-only transaction ledger with mutually exclusive writes.
//!
//! Every transaction a cell executes — its own commits, forwarded peer
//! traffic, contingency injections — lands here in execution order with a
//! gapless, strictly increasing sequence number. Outcomes start pending and
//! are finalized exactly once; finalized entries are appended to the ledger
//! file so a cell can replay its history.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::Write as _;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::protocol::{Address, Envelope, Nonce};

/// Final disposition of a ledger entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TxOutcome {
    Accepted,
    Rejected,
    Reverted,
}

/// One executed transaction in arrival order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub seq: u64,
    pub cycle: u64,
    pub envelope: Envelope,
    pub outcome: TxOutcome,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
enum Disposition {
    Pending,
    Final(TxOutcome, Option<String>),
}

struct Slot {
    cycle: u64,
    envelope: Envelope,
    disposition: Disposition,
}

struct LedgerInner {
    entries: Vec<Slot>,
    by_nonce: HashMap<(Address, Nonce), u64>,
    file: Option<File>,
}

/// Mutex-guarded ledger; seq values are gapless under concurrent appends.
pub struct Ledger {
    inner: Mutex<LedgerInner>,
}

impl Ledger {
    pub fn in_memory() -> Self {
        Self {
            inner: Mutex::new(LedgerInner {
                entries: Vec::new(),
                by_nonce: HashMap::new(),
                file: None,
            }),
        }
    }

    pub fn with_file(path: &Path) -> std::io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            inner: Mutex::new(LedgerInner {
                entries: Vec::new(),
                by_nonce: HashMap::new(),
                file: Some(file),
            }),
        })
    }

    /// Appends in arrival order; seq starts at 1.
    pub fn append(&self, envelope: Envelope, cycle: u64) -> u64 {
        let mut inner = self.inner.lock().unwrap();
        let seq = inner.entries.len() as u64 + 1;
        inner.by_nonce.insert(
            (envelope.payload.sender, envelope.payload.nonce),
            seq,
        );
        inner.entries.push(Slot {
            cycle,
            envelope,
            disposition: Disposition::Pending,
        });
        seq
    }

    /// Finalizes an entry's outcome; the entry reaches the ledger file here.
    pub fn finalize(&self, seq: u64, outcome: TxOutcome, reason: Option<String>) {
        let mut inner = self.inner.lock().unwrap();
        let idx = (seq - 1) as usize;
        let line = {
            let slot = &mut inner.entries[idx];
            debug_assert_eq!(slot.disposition, Disposition::Pending, "outcome set twice");
            slot.disposition = Disposition::Final(outcome, reason.clone());
            LedgerEntry {
                seq,
                cycle: slot.cycle,
                envelope: slot.envelope.clone(),
                outcome,
                reason,
            }
        };
        if let Some(file) = inner.file.as_mut() {
            if let Ok(encoded) = crate::protocol::to_canonical_string(&line) {
                let _ = writeln!(file, "{encoded}");
            }
        }
    }

    pub fn seq_for_nonce(&self, sender: &Address, nonce: &Nonce) -> Option<u64> {
        self.inner
            .lock()
            .unwrap()
            .by_nonce
            .get(&(*sender, *nonce))
            .copied()
    }

    pub fn last_seq(&self) -> u64 {
        self.inner.lock().unwrap().entries.len() as u64
    }

    /// Finalized entries with seq in `[first, last]`.
    pub fn slice(&self, first: u64, last: u64) -> Vec<LedgerEntry> {
        let inner = self.inner.lock().unwrap();
        let mut out = Vec::new();
        for seq in first..=last.min(inner.entries.len() as u64) {
            if seq == 0 {
                continue;
            }
            let slot = &inner.entries[(seq - 1) as usize];
            if let Disposition::Final(outcome, reason) = &slot.disposition {
                out.push(LedgerEntry {
                    seq,
                    cycle: slot.cycle,
                    envelope: slot.envelope.clone(),
                    outcome: *outcome,
                    reason: reason.clone(),
                });
            }
        }
        out
    }

    pub fn pending_count(&self) -> usize {
        self.inner
            .lock()
            .unwrap()
            .entries
            .iter()
            .filter(|slot| slot.disposition == Disposition::Pending)
            .count()
    }
}

/// Parses a ledger file written by [`Ledger::finalize`], sorted by seq.
pub fn read_ledger_file(path: &Path) -> std::io::Result<Vec<LedgerEntry>> {
    let text = std::fs::read_to_string(path)?;
    let mut entries: Vec<LedgerEntry> = text
        .lines()
        .filter(|line| !line.trim().is_empty())
        .filter_map(|line| crate::protocol::from_canonical_str(line).ok())
        .collect();
    entries.sort_by_key(|e| e.seq);
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::{sign_envelope, KeyPair, Opcode, Payload};
    use std::collections::BTreeMap;
    use std::sync::Arc;

    fn env(tag: u8) -> Envelope {
        let key = KeyPair::from_secret_bytes(&[tag; 32]).unwrap();
        let payload = Payload::new(
            key.address(),
            key.address(),
            Opcode::TxCommit,
            0,
            BTreeMap::new(),
        );
        sign_envelope(payload, &key).unwrap()
    }

    #[test]
    fn gapless_under_concurrent_appends() {
        let ledger = Arc::new(Ledger::in_memory());
        let mut handles = Vec::new();
        for tag in 1..=8u8 {
            let ledger = Arc::clone(&ledger);
            handles.push(std::thread::spawn(move || {
                let mut seqs = Vec::new();
                for _ in 0..50 {
                    seqs.push(ledger.append(env(tag), 0));
                }
                seqs
            }));
        }
        let mut all: Vec<u64> = handles
            .into_iter()
            .flat_map(|h| h.join().unwrap())
            .collect();
        all.sort_unstable();
        let expected: Vec<u64> = (1..=400).collect();
        assert_eq!(all, expected);
    }

    #[test]
    fn slice_returns_only_finalized() {
        let ledger = Ledger::in_memory();
        let a = ledger.append(env(1), 0);
        let b = ledger.append(env(2), 0);
        ledger.finalize(a, TxOutcome::Accepted, None);
        assert_eq!(ledger.slice(1, 10).len(), 1);
        ledger.finalize(b, TxOutcome::Reverted, Some("mismatch".into()));
        let slice = ledger.slice(1, 10);
        assert_eq!(slice.len(), 2);
        assert_eq!(slice[1].outcome, TxOutcome::Reverted);
        assert_eq!(ledger.pending_count(), 0);
    }

    #[test]
    fn file_round_trip() {
        let dir = std::env::temp_dir().join(format!("ledger-test-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("ledger.log");
        let _ = std::fs::remove_file(&path);
        let ledger = Ledger::with_file(&path).unwrap();
        let a = ledger.append(env(1), 3);
        ledger.finalize(a, TxOutcome::Accepted, None);
        let entries = read_ledger_file(&path).unwrap();
        assert_eq!(entries.len(), 1);
        assert_eq!(entries[0].cycle, 3);
        assert_eq!(entries[0].outcome, TxOutcome::Accepted);
        std::fs::remove_file(&path).unwrap();
    }

    #[test]
    fn nonce_lookup() {
        let ledger = Ledger::in_memory();
        let e = env(1);
        let sender = e.payload.sender;
        let nonce = e.payload.nonce;
        assert!(ledger.seq_for_nonce(&sender, &nonce).is_none());
        let seq = ledger.append(e, 0);
        assert_eq!(ledger.seq_for_nonce(&sender, &nonce), Some(seq));
    }
}
