//! In-process simulation of the public-chain anchor contract.
//!
//! The contract logic is small and strict: a hard-coded cell set, at most one
//! immutable fingerprint report per (cell, cycle), a fixed gas charge per
//! report, and an append-only contingency queue that lets censored
//! transactions bypass the cells entirely. A single writer serializes all
//! mutations; every reader observes the same records.

pub mod http;

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{File, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::AnchorError;
use crate::protocol::{verify_envelope, Address, Digest, Envelope};

/// Gas charged for one report submission.
pub const GAS_PER_REPORT: u64 = 49_193;

/// One (cell, cycle, fingerprint) entry, immutable once stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRecord {
    pub cell: Address,
    pub cycle: u64,
    pub fingerprint: Digest,
    pub submitted_at: u64,
}

/// Gas accounting entry for the fee log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeeEntry {
    pub cell: Address,
    pub cycle: u64,
    pub gas: u64,
}

/// Log lines persisted by the anchor, one canonical record per line.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum LogRecord {
    Report(ReportRecord),
    Contingency { position: u64, envelope: Envelope },
}

struct AnchorInner {
    reports: BTreeMap<(Address, u64), ReportRecord>,
    contingency: Vec<Envelope>,
    fee_log: Vec<FeeEntry>,
    file: Option<File>,
}

/// The anchor contract state behind its single-writer lock.
pub struct Anchor {
    allowed_cells: BTreeSet<Address>,
    gas_per_report: u64,
    inner: Mutex<AnchorInner>,
    log_path: Option<PathBuf>,
}

impl Anchor {
    pub fn in_memory(allowed_cells: impl IntoIterator<Item = Address>) -> Self {
        Self {
            allowed_cells: allowed_cells.into_iter().collect(),
            gas_per_report: GAS_PER_REPORT,
            inner: Mutex::new(AnchorInner {
                reports: BTreeMap::new(),
                contingency: Vec::new(),
                fee_log: Vec::new(),
                file: None,
            }),
            log_path: None,
        }
    }

    /// Opens (or creates) a persisted anchor, replaying its append-only log.
    pub fn open(
        path: &Path,
        allowed_cells: impl IntoIterator<Item = Address>,
    ) -> Result<Self, AnchorError> {
        let mut reports = BTreeMap::new();
        let mut contingency = Vec::new();
        let mut fee_log = Vec::new();
        if path.exists() {
            let text = std::fs::read_to_string(path)?;
            for line in text.lines().filter(|l| !l.trim().is_empty()) {
                let record: LogRecord = crate::protocol::from_canonical_str(line)
                    .map_err(|e| AnchorError::CorruptLog(e.to_string()))?;
                match record {
                    LogRecord::Report(report) => {
                        fee_log.push(FeeEntry {
                            cell: report.cell,
                            cycle: report.cycle,
                            gas: GAS_PER_REPORT,
                        });
                        reports.insert((report.cell, report.cycle), report);
                    }
                    LogRecord::Contingency { position, envelope } => {
                        if position as usize != contingency.len() {
                            return Err(AnchorError::CorruptLog(format!(
                                "contingency position {position} out of order"
                            )));
                        }
                        contingency.push(envelope);
                    }
                }
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            allowed_cells: allowed_cells.into_iter().collect(),
            gas_per_report: GAS_PER_REPORT,
            inner: Mutex::new(AnchorInner {
                reports,
                contingency,
                fee_log,
                file: Some(file),
            }),
            log_path: Some(path.to_path_buf()),
        })
    }

    pub fn allowed_cells(&self) -> &BTreeSet<Address> {
        &self.allowed_cells
    }

    pub fn log_path(&self) -> Option<&Path> {
        self.log_path.as_deref()
    }

    /// Stores one report; rejects non-consortium cells and any repeat for
    /// the same (cell, cycle), digest-identical resubmits included.
    pub fn submit_report(
        &self,
        cell: Address,
        cycle: u64,
        fingerprint: Digest,
        now: u64,
    ) -> Result<(), AnchorError> {
        if !self.allowed_cells.contains(&cell) {
            return Err(AnchorError::NotAllowedCell);
        }
        let mut inner = self.inner.lock().unwrap();
        if inner.reports.contains_key(&(cell, cycle)) {
            return Err(AnchorError::DuplicateReport);
        }
        let record = ReportRecord {
            cell,
            cycle,
            fingerprint,
            submitted_at: now,
        };
        Self::append_log(&mut inner, &LogRecord::Report(record.clone()));
        inner.fee_log.push(FeeEntry {
            cell,
            cycle,
            gas: self.gas_per_report,
        });
        inner.reports.insert((cell, cycle), record);
        Ok(())
    }

    pub fn get_report(&self, cell: &Address, cycle: u64) -> Option<ReportRecord> {
        self.inner
            .lock()
            .unwrap()
            .reports
            .get(&(*cell, cycle))
            .cloned()
    }

    pub fn reports_for_cycle(&self, cycle: u64) -> Vec<ReportRecord> {
        self.inner
            .lock()
            .unwrap()
            .reports
            .values()
            .filter(|r| r.cycle == cycle)
            .cloned()
            .collect()
    }

    /// Appends a censored transaction; anyone with a valid signature may
    /// submit. Returns the queue position.
    pub fn submit_contingency(&self, envelope: Envelope) -> Result<u64, AnchorError> {
        verify_envelope(&envelope)?;
        let mut inner = self.inner.lock().unwrap();
        let position = inner.contingency.len() as u64;
        Self::append_log(
            &mut inner,
            &LogRecord::Contingency {
                position,
                envelope: envelope.clone(),
            },
        );
        inner.contingency.push(envelope);
        Ok(position)
    }

    /// Entries strictly after `since`, in append order, with positions.
    pub fn fetch_contingency(&self, since: u64) -> Vec<(u64, Envelope)> {
        let inner = self.inner.lock().unwrap();
        inner
            .contingency
            .iter()
            .enumerate()
            .skip(since as usize)
            .map(|(i, env)| (i as u64, env.clone()))
            .collect()
    }

    pub fn contingency_len(&self) -> u64 {
        self.inner.lock().unwrap().contingency.len() as u64
    }

    pub fn fee_log(&self) -> Vec<FeeEntry> {
        self.inner.lock().unwrap().fee_log.clone()
    }

    pub fn report_count(&self) -> usize {
        self.inner.lock().unwrap().reports.len()
    }

    fn append_log(inner: &mut AnchorInner, record: &LogRecord) {
        if let Some(file) = inner.file.as_mut() {
            if let Ok(encoded) = crate::protocol::to_canonical_string(record) {
                let _ = writeln!(file, "{encoded}");
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::{fingerprint_bytes, sign_envelope, KeyPair, Opcode, Payload};
    use std::collections::BTreeMap;
    use std::sync::Arc;

    fn key(tag: u8) -> KeyPair {
        KeyPair::from_secret_bytes(&[tag; 32]).unwrap()
    }

    fn anchor() -> (Anchor, KeyPair, KeyPair) {
        let (a, b) = (key(1), key(2));
        let anchor = Anchor::in_memory([a.address(), b.address()]);
        (anchor, a, b)
    }

    fn signed_env(k: &KeyPair) -> Envelope {
        let payload = Payload::new(
            k.address(),
            k.address(),
            Opcode::TxCommit,
            0,
            BTreeMap::new(),
        );
        sign_envelope(payload, k).unwrap()
    }

    #[test]
    fn first_report_stored_and_returned() {
        let (anchor, a, _) = anchor();
        let fp = fingerprint_bytes(b"s7");
        anchor.submit_report(a.address(), 7, fp, 100).unwrap();
        let record = anchor.get_report(&a.address(), 7).unwrap();
        assert_eq!(record.fingerprint, fp);
        assert_eq!(record.submitted_at, 100);
        assert!(anchor.get_report(&a.address(), 8).is_none());
    }

    #[test]
    fn duplicate_report_rejected_even_with_same_digest() {
        let (anchor, a, _) = anchor();
        let fp = fingerprint_bytes(b"s7");
        anchor.submit_report(a.address(), 7, fp, 100).unwrap();
        assert!(matches!(
            anchor.submit_report(a.address(), 7, fingerprint_bytes(b"other"), 101),
            Err(AnchorError::DuplicateReport)
        ));
        assert!(matches!(
            anchor.submit_report(a.address(), 7, fp, 102),
            Err(AnchorError::DuplicateReport)
        ));
        // Original untouched.
        assert_eq!(anchor.get_report(&a.address(), 7).unwrap().submitted_at, 100);
    }

    #[test]
    fn non_consortium_cell_rejected() {
        let (anchor, _, _) = anchor();
        assert!(matches!(
            anchor.submit_report(key(9).address(), 0, fingerprint_bytes(b"x"), 0),
            Err(AnchorError::NotAllowedCell)
        ));
    }

    #[test]
    fn gas_charged_per_report() {
        let (anchor, a, b) = anchor();
        anchor
            .submit_report(a.address(), 0, fingerprint_bytes(b"a"), 0)
            .unwrap();
        anchor
            .submit_report(b.address(), 0, fingerprint_bytes(b"b"), 0)
            .unwrap();
        let fees = anchor.fee_log();
        assert_eq!(fees.len(), 2);
        assert!(fees.iter().all(|f| f.gas == GAS_PER_REPORT));
    }

    #[test]
    fn contingency_order_and_since() {
        let (anchor, a, b) = anchor();
        let e1 = signed_env(&a);
        let e2 = signed_env(&b);
        assert_eq!(anchor.submit_contingency(e1.clone()).unwrap(), 0);
        assert_eq!(anchor.submit_contingency(e2.clone()).unwrap(), 1);
        let all = anchor.fetch_contingency(0);
        assert_eq!(all.len(), 2);
        assert_eq!(all[0].1, e1);
        assert_eq!(all[1].1, e2);
        let tail = anchor.fetch_contingency(1);
        assert_eq!(tail.len(), 1);
        assert_eq!(tail[0].0, 1);
        assert!(anchor.fetch_contingency(2).is_empty());
    }

    #[test]
    fn contingency_rejects_bad_signature() {
        let (anchor, a, _) = anchor();
        let mut env = signed_env(&a);
        env.payload.timestamp += 1;
        assert!(anchor.submit_contingency(env).is_err());
    }

    #[test]
    fn concurrent_contingency_positions_gapless() {
        let (anchor, a, _) = anchor();
        let anchor = Arc::new(anchor);
        let mut handles = Vec::new();
        for _ in 0..8 {
            let anchor = Arc::clone(&anchor);
            let env = signed_env(&a);
            handles.push(std::thread::spawn(move || {
                (0..25)
                    .map(|_| anchor.submit_contingency(env.clone()).unwrap())
                    .collect::<Vec<u64>>()
            }));
        }
        let mut got: Vec<u64> = handles
            .into_iter()
            .flat_map(|h| h.join().unwrap())
            .collect();
        got.sort_unstable();
        assert_eq!(got, (0..200).collect::<Vec<u64>>());
    }

    #[test]
    fn restart_replays_log() {
        let dir = std::env::temp_dir().join(format!("anchor-test-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("anchor.log");
        let _ = std::fs::remove_file(&path);
        let (a, b) = (key(1), key(2));
        let fp = fingerprint_bytes(b"persisted");
        {
            let anchor = Anchor::open(&path, [a.address(), b.address()]).unwrap();
            anchor.submit_report(a.address(), 3, fp, 50).unwrap();
            anchor.submit_contingency(signed_env(&b)).unwrap();
        }
        let anchor = Anchor::open(&path, [a.address(), b.address()]).unwrap();
        assert_eq!(anchor.get_report(&a.address(), 3).unwrap().fingerprint, fp);
        assert_eq!(anchor.contingency_len(), 1);
        // Still immutable after restart.
        assert!(matches!(
            anchor.submit_report(a.address(), 3, fp, 60),
            Err(AnchorError::DuplicateReport)
        ));
        std::fs::remove_file(&path).unwrap();
    }
}
