//! Independent verification over public data: snapshot succession audits,
//! data integrity audits, and the deployment-validity predicate.
//!
//! Every verdict is a pure function of (anchor records, snapshot archives,
//! ledger slices): two auditors over the same inputs emit identical verdicts.
//! A deployment is valid while at least one cell maintains snapshot
//! succession and correct, timely reports across every cycle — the minimum
//! required number of valid cells is one, independent of consortium size.

use std::collections::BTreeMap;
use std::sync::Mutex;

use serde::Serialize;

use crate::anchor::http::AnchorClient;
use crate::cell::http::CellClient;
use crate::config::DeploymentConfig;
use crate::error::AuditError;
use crate::ledger::{LedgerEntry, TxOutcome};
use crate::protocol::{combine_fingerprints, verify_envelope, Address, Digest};
use crate::runtime::{ContractRuntime, ExecOutcome, Store};
use crate::snapshot::SnapshotArchive;
use crate::timing::report_is_timely;

/// Outcome of auditing one (cell, cycle) pair.
#[derive(Debug, Clone, Serialize)]
pub struct AuditVerdict {
    pub cell: Address,
    pub cycle: u64,
    pub succession_ok: bool,
    pub report_timely: bool,
    pub fingerprint_matches: bool,
    pub details: String,
}

impl AuditVerdict {
    pub fn passed(&self) -> bool {
        self.succession_ok && self.report_timely && self.fingerprint_matches
    }
}

/// Result of deterministically replaying one cycle's ledger slice.
pub struct ReplayOutcome {
    pub stores: BTreeMap<Address, Store>,
    pub entries: Vec<(Address, Digest)>,
    pub combined: Digest,
}

/// Replays a ledger slice through a fresh runtime seeded from the previous
/// snapshot's stores: signatures are re-verified on every entry, accepted
/// entries re-execute (and must apply), rejected and reverted entries are
/// no-ops by construction, and the cycle ends with the boundary hooks.
pub fn replay_cycle(
    config: &DeploymentConfig,
    prev_stores: &BTreeMap<Address, Store>,
    slice: &[LedgerEntry],
) -> Result<ReplayOutcome, String> {
    let mut runtime = ContractRuntime::from_stores(config, prev_stores)
        .map_err(|e| format!("seed runtime: {e}"))?;
    let mut last_seq = 0;
    for entry in slice {
        if entry.seq <= last_seq {
            return Err(format!("ledger slice out of order at seq {}", entry.seq));
        }
        last_seq = entry.seq;
        verify_envelope(&entry.envelope)
            .map_err(|e| format!("seq {}: signature verification failed: {e}", entry.seq))?;
        match entry.outcome {
            TxOutcome::Accepted => {
                let record = runtime
                    .execute_transaction(&entry.envelope, entry.cycle)
                    .map_err(|e| format!("seq {}: {e}", entry.seq))?;
                if let ExecOutcome::Rejected(err) = record.outcome {
                    return Err(format!(
                        "seq {}: recorded accepted but replays rejected: {err}",
                        entry.seq
                    ));
                }
            }
            // Rejected transactions left no effects; reverted ones were
            // rolled back. Neither moves the replayed state.
            TxOutcome::Rejected | TxOutcome::Reverted => {}
        }
    }
    runtime.report_boundary();
    let entries = runtime.snapshot_entries();
    let combined = combine_fingerprints(&entries).map_err(|e| e.to_string())?;
    Ok(ReplayOutcome {
        stores: runtime.stores(),
        entries,
        combined,
    })
}

/// Replays the transactions between two snapshots and checks the claimed
/// state transition: true iff the resulting per-contract fingerprints and
/// combined digest equal the next snapshot's.
pub fn audit_succession(
    config: &DeploymentConfig,
    prev_stores: &BTreeMap<Address, Store>,
    txs: &[LedgerEntry],
    next: &SnapshotArchive,
) -> Result<bool, AuditError> {
    next.verify_content_addressing()?;
    let replay = match replay_cycle(config, prev_stores, txs) {
        Ok(outcome) => outcome,
        Err(detail) => {
            tracing::debug!(%detail, "succession replay failed");
            return Ok(false);
        }
    };
    let claimed: Vec<(Address, Digest)> = next
        .entries
        .iter()
        .map(|e| (e.contract_id, e.fingerprint))
        .collect();
    Ok(replay.entries == claimed && replay.combined == next.combined)
}

/// Auditor over one deployment: fetches public data, caches archives across
/// cycles, and emits verdicts.
pub struct Auditor {
    config: DeploymentConfig,
    anchor: AnchorClient,
    cells: BTreeMap<Address, CellClient>,
    archives: Mutex<BTreeMap<(Address, u64), SnapshotArchive>>,
}

impl Auditor {
    pub fn new(config: DeploymentConfig, anchor_url: &str, cell_urls: &[(Address, String)]) -> Self {
        let anchor = AnchorClient::new(anchor_url, config.anchor_address);
        let cells = cell_urls
            .iter()
            .map(|(addr, url)| (*addr, CellClient::new(url.clone())))
            .collect();
        Self {
            config,
            anchor,
            cells,
            archives: Mutex::new(BTreeMap::new()),
        }
    }

    pub fn config(&self) -> &DeploymentConfig {
        &self.config
    }

    pub fn cells(&self) -> Vec<Address> {
        self.cells.keys().copied().collect()
    }

    /// Downloads (or returns the cached) snapshot archive of one cell.
    pub async fn fetch_archive(
        &self,
        cell: Address,
        cycle: u64,
    ) -> Result<SnapshotArchive, AuditError> {
        if let Some(archive) = self.archives.lock().unwrap().get(&(cell, cycle)) {
            return Ok(archive.clone());
        }
        let client = self
            .cells
            .get(&cell)
            .ok_or_else(|| AuditError::ArchiveUnavailable(format!("no url for cell {cell}")))?;
        let (_, archive) = client
            .snapshot(cycle)
            .await
            .map_err(|e| AuditError::ArchiveUnavailable(e.to_string()))?
            .ok_or_else(|| {
                AuditError::ArchiveUnavailable(format!("cell {cell} has no archive for {cycle}"))
            })?;
        archive.verify_content_addressing()?;
        if archive.cell != cell || archive.cycle != cycle {
            return Err(AuditError::MalformedArchive(
                "archive names a different cell or cycle".into(),
            ));
        }
        self.archives
            .lock()
            .unwrap()
            .insert((cell, cycle), archive.clone());
        Ok(archive)
    }

    /// Audits one (cell, cycle): report timeliness, fingerprint match
    /// between the anchored report and the published archive, and snapshot
    /// succession from the previous cycle.
    pub async fn audit_cell_cycle(&self, cell: Address, cycle: u64) -> AuditVerdict {
        let mut details = Vec::new();

        let report = match self.anchor.get_report(&cell, cycle).await {
            Ok(report) => report,
            Err(err) => {
                return AuditVerdict {
                    cell,
                    cycle,
                    succession_ok: false,
                    report_timely: false,
                    fingerprint_matches: false,
                    details: format!("anchor unreachable: {err}"),
                }
            }
        };
        let report_timely = match &report {
            Some(record) => {
                let timely = report_is_timely(cycle, record.submitted_at, &self.config.invariants);
                if !timely {
                    details.push(format!(
                        "report submitted at {} after window",
                        record.submitted_at
                    ));
                }
                timely
            }
            None => {
                details.push("report missing".into());
                false
            }
        };

        let archive = match self.fetch_archive(cell, cycle).await {
            Ok(archive) => archive,
            Err(err) => {
                details.push(err.to_string());
                return AuditVerdict {
                    cell,
                    cycle,
                    succession_ok: false,
                    report_timely,
                    fingerprint_matches: false,
                    details: details.join("; "),
                };
            }
        };

        let fingerprint_matches = match &report {
            Some(record) => {
                let matches = record.fingerprint == archive.combined;
                if !matches {
                    details.push(format!(
                        "anchored {} != archive {}",
                        record.fingerprint, archive.combined
                    ));
                }
                matches
            }
            None => false,
        };

        let prev_stores = if cycle == 0 {
            Ok(ContractRuntime::genesis(&self.config).stores())
        } else {
            self.fetch_archive(cell, cycle - 1)
                .await
                .map(|prev| prev.stores())
        };
        let succession_ok = match prev_stores {
            Ok(stores) => {
                match audit_succession(&self.config, &stores, &archive.ledger, &archive) {
                    Ok(ok) => {
                        if !ok {
                            details.push("replay does not reproduce snapshot".into());
                        }
                        ok
                    }
                    Err(err) => {
                        details.push(err.to_string());
                        false
                    }
                }
            }
            Err(err) => {
                details.push(format!("previous archive: {err}"));
                false
            }
        };

        AuditVerdict {
            cell,
            cycle,
            succession_ok,
            report_timely,
            fingerprint_matches,
            details: details.join("; "),
        }
    }

    /// Audits every cell over cycles `0..=through`; returns all verdicts
    /// plus the deployment-validity bit.
    pub async fn audit_deployment(&self, through: u64) -> (Vec<AuditVerdict>, bool) {
        let mut verdicts = Vec::new();
        for cell in self.cells() {
            for cycle in 0..=through {
                verdicts.push(self.audit_cell_cycle(cell, cycle).await);
            }
        }
        let valid = deployment_valid(&verdicts);
        (verdicts, valid)
    }
}

/// True iff some cell passes every one of its verdicts (and has at least
/// one). Monotone: adding a failed verdict for a cell can only remove it
/// from contention.
pub fn deployment_valid(verdicts: &[AuditVerdict]) -> bool {
    let mut by_cell: BTreeMap<Address, bool> = BTreeMap::new();
    for verdict in verdicts {
        let entry = by_cell.entry(verdict.cell).or_insert(true);
        *entry = *entry && verdict.passed();
    }
    by_cell.values().any(|ok| *ok)
}
