//! The cell service: authenticates and orders transactions, runs the
//! four-step commit workflow, oscillates between main and report stages,
//! reports snapshot fingerprints to the anchor, and enforces the
//! cell-exclusion policy.

pub mod http;

mod exec;

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{Duration, Instant};

use serde::Serialize;
use serde_json::{json, Value};
use tokio::task::JoinHandle;

use crate::anchor::http::{AnchorClient, AnchorClientError};
use crate::clock::Clock;
use crate::config::DeploymentConfig;
use crate::error::{CellError, ProtocolError, RevertReason};
use crate::ledger::{Ledger, TxOutcome};
use crate::protocol::{
    combine_fingerprints, sign_envelope, verify_envelope, verify_envelope_fresh, Address, Digest,
    Envelope, KeyPair, Nonce, Opcode, Payload,
};
use crate::receipt::{ConfirmOutcome, Confirmation, Receipt, ReceiptOutcome};
use crate::runtime::{
    builtin_logic, execute_on_state, genesis_contracts, ContractState, ExecOutcome, ExecRecord,
    RuntimeEffect, Store, TxClass,
};
use crate::snapshot::{ArchiveEntry, SnapshotArchive};
use crate::timing::{cycle_index, next_deadline, report_window_end};

use exec::{ContractEntry, FinalDecision, HeadError, Provisional, Resolution, TicketKind, TxId};

/// Behaviors the fault hooks can activate (enabled by deployment config).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FaultBehavior {
    /// Sleep past the forwarding deadline before handling forwards.
    Delay,
    /// Report a perturbed fingerprint to the anchor.
    TamperReport,
    /// Return perturbed fingerprints in confirmations.
    TamperConfirm,
    /// Drop client commits.
    Censor,
    /// Refuse all HTTP traffic.
    Offline,
    /// Submit reports only after the validity window closed.
    LateReport,
}

impl std::str::FromStr for FaultBehavior {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "delay" => Ok(FaultBehavior::Delay),
            "tamper" | "tamper-report" => Ok(FaultBehavior::TamperReport),
            "tamper-confirm" => Ok(FaultBehavior::TamperConfirm),
            "censor" => Ok(FaultBehavior::Censor),
            "offline" => Ok(FaultBehavior::Offline),
            "late-report" => Ok(FaultBehavior::LateReport),
            other => Err(format!("unknown fault behavior {other}")),
        }
    }
}

impl FaultBehavior {
    pub fn as_str(&self) -> &'static str {
        match self {
            FaultBehavior::Delay => "delay",
            FaultBehavior::TamperReport => "tamper-report",
            FaultBehavior::TamperConfirm => "tamper-confirm",
            FaultBehavior::Censor => "censor",
            FaultBehavior::Offline => "offline",
            FaultBehavior::LateReport => "late-report",
        }
    }
}

/// Peer liveness bookkeeping for the exclusion policy.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct CellStatus {
    pub consecutive_misses: u32,
    pub excluded_until_cycle: Option<u64>,
}

/// What one report stage produced.
#[derive(Debug, Clone, Serialize)]
pub struct CycleReport {
    pub cell: Address,
    pub cycle: u64,
    pub combined: Digest,
    pub entry_count: usize,
    pub tx_range: Option<(u64, u64)>,
}

/// Machine-readable `/status` document.
#[derive(Debug, Clone, Serialize)]
pub struct StatusReport {
    pub cell: Address,
    pub cycle: u64,
    pub mode: &'static str,
    pub ledger_len: u64,
    pub contracts: usize,
    pub excluded_cells: Vec<Address>,
    pub excluded_contracts: Vec<Address>,
    pub latest_snapshot: Option<u64>,
}

struct CachedReplies {
    receipts: HashMap<TxId, Receipt>,
    confirmations: HashMap<TxId, Confirmation>,
}

struct CommitExec {
    record: ExecRecord,
    matched: bool,
}

enum ForwardExec {
    Applied { record: ExecRecord, provisional: bool },
    Rejected { record: ExecRecord },
    CancelledEarly,
}

/// Construction parameters for one cell.
pub struct CellParams {
    pub keypair: KeyPair,
    pub config: DeploymentConfig,
    pub clock: Arc<dyn Clock>,
    pub data_dir: PathBuf,
}

/// One consortium cell.
pub struct CellNode {
    keypair: KeyPair,
    address: Address,
    config: DeploymentConfig,
    clock: Arc<dyn Clock>,
    contracts: RwLock<BTreeMap<Address, Arc<ContractEntry>>>,
    ledger: Ledger,
    replies: Mutex<CachedReplies>,
    peer_status: Mutex<BTreeMap<Address, CellStatus>>,
    /// Report-stage execution barrier: executions hold read, the stage holds
    /// write while cloning.
    gate: tokio::sync::RwLock<()>,
    report_mode: AtomicBool,
    provisional_count: AtomicUsize,
    provisional_notify: tokio::sync::Notify,
    pending_effects: Mutex<Vec<RuntimeEffect>>,
    current_cycle: AtomicU64,
    last_boundary_seq: AtomicU64,
    snapshots: Mutex<BTreeMap<u64, Arc<SnapshotArchive>>>,
    anchor_client: AnchorClient,
    http: reqwest::Client,
    contingency_pos: AtomicU64,
    faults: Mutex<HashMap<FaultBehavior, Instant>>,
    data_dir: PathBuf,
}

impl CellNode {
    pub fn new(params: CellParams) -> std::io::Result<Arc<Self>> {
        let CellParams {
            keypair,
            config,
            clock,
            data_dir,
        } = params;
        std::fs::create_dir_all(&data_dir)?;
        let ledger = Ledger::with_file(&data_dir.join("ledger.log"))?;
        let mut contracts = BTreeMap::new();
        for (descriptor, state) in genesis_contracts(&config) {
            let logic = builtin_logic(&descriptor.code_ref).expect("genesis logic is builtin");
            contracts.insert(
                descriptor.contract_id,
                ContractEntry::new(descriptor, state, logic),
            );
        }
        let now = clock.now();
        let inv = &config.invariants;
        let start_cycle = if now < inv.t0 {
            0
        } else {
            cycle_index(next_deadline(now, inv).expect("now >= t0"), inv).expect("deadline")
        };
        let anchor_client = AnchorClient::new(config.anchor_url.clone(), config.anchor_address);
        let address = keypair.address();
        Ok(Arc::new(Self {
            keypair,
            address,
            config,
            clock,
            contracts: RwLock::new(contracts),
            ledger,
            replies: Mutex::new(CachedReplies {
                receipts: HashMap::new(),
                confirmations: HashMap::new(),
            }),
            peer_status: Mutex::new(BTreeMap::new()),
            gate: tokio::sync::RwLock::new(()),
            report_mode: AtomicBool::new(false),
            provisional_count: AtomicUsize::new(0),
            provisional_notify: tokio::sync::Notify::new(),
            pending_effects: Mutex::new(Vec::new()),
            current_cycle: AtomicU64::new(start_cycle),
            last_boundary_seq: AtomicU64::new(0),
            snapshots: Mutex::new(BTreeMap::new()),
            anchor_client,
            http: reqwest::Client::builder()
                .pool_max_idle_per_host(64)
                .build()
                .expect("reqwest client"),
            contingency_pos: AtomicU64::new(0),
            faults: Mutex::new(HashMap::new()),
            data_dir,
        }))
    }

    pub fn address(&self) -> Address {
        self.address
    }

    pub fn config(&self) -> &DeploymentConfig {
        &self.config
    }

    pub fn current_cycle(&self) -> u64 {
        self.current_cycle.load(Ordering::SeqCst)
    }

    pub fn ledger_len(&self) -> u64 {
        self.ledger.last_seq()
    }

    // ------------------------------------------------------------------
    // Fault hooks
    // ------------------------------------------------------------------

    pub fn inject_fault(
        &self,
        behavior: FaultBehavior,
        duration: Duration,
    ) -> Result<(), CellError> {
        if !self.config.fault_hooks {
            return Err(CellError::Internal("fault hooks disabled".into()));
        }
        self.faults
            .lock()
            .unwrap()
            .insert(behavior, Instant::now() + duration);
        Ok(())
    }

    pub fn clear_faults(&self) {
        self.faults.lock().unwrap().clear();
    }

    pub fn fault_active(&self, behavior: FaultBehavior) -> bool {
        if !self.config.fault_hooks {
            return false;
        }
        self.faults
            .lock()
            .unwrap()
            .get(&behavior)
            .is_some_and(|until| Instant::now() < *until)
    }

    pub fn active_faults(&self) -> Vec<&'static str> {
        let faults = self.faults.lock().unwrap();
        faults
            .iter()
            .filter(|(_, until)| Instant::now() < **until)
            .map(|(b, _)| b.as_str())
            .collect()
    }

    // ------------------------------------------------------------------
    // Exclusion policy
    // ------------------------------------------------------------------

    /// Records one missed forwarding deadline; trips the exclusion once the
    /// consecutive count exceeds the configured threshold.
    pub fn record_miss(&self, cell: Address) {
        let cycle = self.current_cycle();
        let threshold = self.config.invariants.miss_threshold;
        let mut map = self.peer_status.lock().unwrap();
        let status = map.entry(cell).or_default();
        if let Some(until) = status.excluded_until_cycle {
            if cycle >= until {
                status.excluded_until_cycle = None;
                status.consecutive_misses = 0;
            }
        }
        status.consecutive_misses += 1;
        if status.consecutive_misses > threshold && status.excluded_until_cycle.is_none() {
            status.excluded_until_cycle = Some(cycle + 1);
            tracing::warn!(cell = %cell, cycle, "peer excluded until next cycle");
        }
    }

    pub fn record_success(&self, cell: Address) {
        let cycle = self.current_cycle();
        let mut map = self.peer_status.lock().unwrap();
        let status = map.entry(cell).or_default();
        if let Some(until) = status.excluded_until_cycle {
            if cycle >= until {
                status.excluded_until_cycle = None;
            }
        }
        status.consecutive_misses = 0;
    }

    pub fn is_excluded(&self, cell: &Address, cycle: u64) -> bool {
        self.peer_status
            .lock()
            .unwrap()
            .get(cell)
            .and_then(|s| s.excluded_until_cycle)
            .is_some_and(|until| cycle < until)
    }

    pub fn peer_status(&self, cell: &Address) -> CellStatus {
        self.peer_status
            .lock()
            .unwrap()
            .get(cell)
            .copied()
            .unwrap_or_default()
    }

    /// Consortium peers this cell currently forwards to.
    fn active_peers(&self, cycle: u64) -> Vec<Address> {
        self.config
            .invariants
            .cell_addresses
            .iter()
            .copied()
            .filter(|c| *c != self.address && !self.is_excluded(c, cycle))
            .collect()
    }

    // ------------------------------------------------------------------
    // Contract lookup and effects
    // ------------------------------------------------------------------

    fn contract(&self, id: &Address) -> Result<Arc<ContractEntry>, CellError> {
        self.contracts
            .read()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| CellError::UnknownContract(id.to_string()))
    }

    fn queue_effects(&self, effects: Vec<RuntimeEffect>) {
        if !effects.is_empty() {
            self.pending_effects.lock().unwrap().extend(effects);
        }
    }

    fn apply_pending_effects(&self) {
        let effects: Vec<RuntimeEffect> = {
            let mut pending = self.pending_effects.lock().unwrap();
            std::mem::take(&mut *pending)
        };
        if effects.is_empty() {
            return;
        }
        let mut map = self.contracts.write().unwrap();
        for effect in effects {
            match effect {
                RuntimeEffect::RegisterContract {
                    descriptor,
                    initial_store,
                } => {
                    if map.contains_key(&descriptor.contract_id) {
                        continue;
                    }
                    if let Some(logic) = builtin_logic(&descriptor.code_ref) {
                        let state = ContractState::new(descriptor.contract_id, initial_store);
                        map.insert(
                            descriptor.contract_id,
                            ContractEntry::new(descriptor, state, logic),
                        );
                    }
                }
                RuntimeEffect::DestroyContract(id) => {
                    map.remove(&id);
                }
            }
        }
    }

    fn provisional_created(&self) {
        self.provisional_count.fetch_add(1, Ordering::SeqCst);
    }

    fn provisional_released(&self) {
        self.provisional_count.fetch_sub(1, Ordering::SeqCst);
        self.provisional_notify.notify_waiters();
    }

    // ------------------------------------------------------------------
    // Reply cache (duplicate-nonce idempotence)
    // ------------------------------------------------------------------

    fn cached_receipt(&self, tx: &TxId) -> Option<Receipt> {
        self.replies.lock().unwrap().receipts.get(tx).cloned()
    }

    fn cache_receipt(&self, tx: TxId, receipt: Receipt) {
        self.replies.lock().unwrap().receipts.insert(tx, receipt);
    }

    fn cached_confirmation(&self, tx: &TxId) -> Option<Confirmation> {
        self.replies.lock().unwrap().confirmations.get(tx).cloned()
    }

    fn cache_confirmation(&self, tx: TxId, confirmation: Confirmation) {
        self.replies
            .lock()
            .unwrap()
            .confirmations
            .insert(tx, confirmation);
    }

    // ------------------------------------------------------------------
    // Commit workflow (steps ❶–❹)
    // ------------------------------------------------------------------

    /// Serves one client transaction end to end: authenticate, forward to
    /// all non-excluded cells, collect confirmations under the deadline δ,
    /// execute locally, compare fingerprints, and aggregate the receipt.
    pub async fn handle_commit(self: &Arc<Self>, envelope: Envelope) -> Result<Receipt, CellError> {
        if self.fault_active(FaultBehavior::Censor) {
            return Err(CellError::Censored);
        }
        let now = self.clock.now();
        let sender = verify_envelope_fresh(&envelope, now, self.config.skew_secs)?;
        if !self
            .config
            .subscriptions
            .is_subscribed(&self.address, &sender)
        {
            return Err(CellError::NotSubscribed);
        }
        match envelope.payload.opcode {
            Opcode::TxCommit | Opcode::Deploy | Opcode::CasPut | Opcode::CasGet => {}
            other => return Err(CellError::UnsupportedOpcode(other.to_string())),
        }
        let entry = self.contract(&envelope.payload.recipient)?;
        if entry
            .logic
            .classify(&envelope.payload.opcode, &envelope.payload.data)
            == TxClass::Read
        {
            return self.execute_read(&entry, &envelope, now);
        }

        let tx: TxId = (sender, envelope.payload.nonce);
        if let Some(receipt) = self.cached_receipt(&tx) {
            return Ok(receipt);
        }
        let _commit = entry.commit_gate.lock().await;
        if let Some(receipt) = self.cached_receipt(&tx) {
            return Ok(receipt);
        }

        let cycle = self.current_cycle();
        let peers = self.active_peers(cycle);
        let delta = self.config.invariants.delta();

        // ❷ parallel fan-out with a single deadline δ.
        let confirmations = self.collect_confirmations(&envelope, &peers, delta).await;
        let mut confirmed: Vec<Confirmation> = Vec::new();
        let mut missed: Vec<Address> = Vec::new();
        for (peer, result) in confirmations {
            match result {
                Ok(c) => {
                    self.record_success(peer);
                    confirmed.push(c);
                }
                Err(err) => {
                    tracing::debug!(peer = %peer, %err, "confirmation failed");
                    missed.push(peer);
                }
            }
        }
        if !missed.is_empty() {
            for peer in &missed {
                self.record_miss(*peer);
            }
            return self
                .finish_reverted(&envelope, tx, cycle, RevertReason::Deadline, confirmed)
                .await;
        }

        // ❹ execute locally at the queue head and decide in place.
        let exec_deadline = tokio::time::Instant::now() + delta;
        let decision = {
            let ledger = &self.ledger;
            let confirmed_view = confirmed.clone();
            let logic = Arc::clone(&entry.logic);
            let env = envelope.clone();
            entry
                .run_at_head(
                    self.address,
                    tx,
                    TicketKind::Local,
                    &self.gate,
                    exec_deadline,
                    move |cell| {
                        let seq = ledger.append(env.clone(), cycle);
                        let record = execute_on_state(logic.as_ref(), &mut cell.state, &env, cycle);
                        let matched = confirmed_view.iter().all(|c| {
                            c.outcome.as_str() == record.outcome.as_wire()
                                && c.fingerprint == record.post_fingerprint
                        });
                        if matched {
                            match &record.outcome {
                                ExecOutcome::Applied => {
                                    ledger.finalize(seq, TxOutcome::Accepted, None)
                                }
                                ExecOutcome::Rejected(err) => {
                                    ledger.finalize(seq, TxOutcome::Rejected, Some(err.to_string()))
                                }
                            }
                        } else {
                            if record.outcome == ExecOutcome::Applied {
                                cell.state.store = record.undo_store.clone();
                            }
                            ledger.finalize(
                                seq,
                                TxOutcome::Reverted,
                                Some(RevertReason::Mismatch.as_str().into()),
                            );
                            cell.mark_excluded(cycle);
                        }
                        CommitExec { record, matched }
                    },
                )
                .await
        };

        let exec = match decision {
            Ok(exec) => exec,
            Err(HeadError::LostTieBreak { winner }) => {
                tracing::debug!(tx = %tx.1, winner = %winner.1, "yielded to conflicting transaction");
                return self
                    .finish_reverted(&envelope, tx, cycle, RevertReason::Mismatch, confirmed)
                    .await;
            }
            Err(HeadError::TimedOut) => {
                // Contention timeout, no peer at fault: no misses recorded.
                return self
                    .finish_reverted(&envelope, tx, cycle, RevertReason::Deadline, confirmed)
                    .await;
            }
            Err(HeadError::Cancelled) => {
                return Err(CellError::Internal("local ticket cancelled".into()))
            }
        };

        if exec.matched {
            if exec.record.outcome == ExecOutcome::Applied {
                self.queue_effects(exec.record.effects.clone());
                self.apply_pending_effects();
            }
            let (outcome, reason, confirm_outcome) = match &exec.record.outcome {
                ExecOutcome::Applied => (ReceiptOutcome::Accepted, None, ConfirmOutcome::Applied),
                ExecOutcome::Rejected(err) => (
                    ReceiptOutcome::Rejected,
                    Some(err.to_string()),
                    ConfirmOutcome::Rejected,
                ),
            };
            let own = self.build_confirmation(
                &envelope,
                confirm_outcome,
                exec.record.post_fingerprint,
                reason.clone(),
            )?;
            let mut all_confirmations = confirmed;
            all_confirmations.push(own);
            if exec.record.outcome == ExecOutcome::Applied {
                self.broadcast_outcome(
                    &envelope,
                    FinalDecision::Accepted,
                    None,
                    false,
                    all_confirmations.iter().map(|c| c.cell).collect(),
                );
            }
            let receipt = Receipt::build(
                &self.keypair,
                sender,
                sender,
                envelope.payload.nonce,
                outcome,
                reason,
                Some(exec.record.post_fingerprint),
                exec.record.result.clone(),
                all_confirmations,
                self.clock.now(),
            )?;
            self.cache_receipt(tx, receipt.clone());
            Ok(receipt)
        } else {
            // Fingerprints disagreed: peers roll back and the contract sits
            // out the rest of the cycle everywhere.
            let peers_to_notify = confirmed.iter().map(|c| c.cell).collect();
            self.broadcast_outcome(
                &envelope,
                FinalDecision::Reverted,
                Some(RevertReason::Mismatch),
                true,
                peers_to_notify,
            );
            let receipt =
                self.build_reverted_receipt(sender, &envelope, RevertReason::Mismatch, confirmed)?;
            self.cache_receipt(tx, receipt.clone());
            Ok(receipt)
        }
    }

    /// Revert path shared by deadline misses, contention timeouts, and lost
    /// tie-breaks: the transaction stays in the ledger as reverted and every
    /// confirmed peer is told to roll back.
    async fn finish_reverted(
        self: &Arc<Self>,
        envelope: &Envelope,
        tx: TxId,
        cycle: u64,
        reason: RevertReason,
        confirmed: Vec<Confirmation>,
    ) -> Result<Receipt, CellError> {
        {
            let _open = self.gate.read().await;
            let seq = self.ledger.append(envelope.clone(), cycle);
            self.ledger
                .finalize(seq, TxOutcome::Reverted, Some(reason.as_str().into()));
        }
        self.broadcast_outcome(
            envelope,
            FinalDecision::Reverted,
            Some(reason),
            false,
            confirmed.iter().map(|c| c.cell).collect(),
        );
        let receipt =
            self.build_reverted_receipt(envelope.payload.sender, envelope, reason, confirmed)?;
        self.cache_receipt(tx, receipt.clone());
        Ok(receipt)
    }

    fn build_reverted_receipt(
        &self,
        client: Address,
        envelope: &Envelope,
        reason: RevertReason,
        confirmations: Vec<Confirmation>,
    ) -> Result<Receipt, ProtocolError> {
        Receipt::build(
            &self.keypair,
            client,
            envelope.payload.sender,
            envelope.payload.nonce,
            ReceiptOutcome::Reverted,
            Some(reason.as_str().to_string()),
            None,
            BTreeMap::new(),
            confirmations,
            self.clock.now(),
        )
    }

    fn execute_read(
        &self,
        entry: &Arc<ContractEntry>,
        envelope: &Envelope,
        now: u64,
    ) -> Result<Receipt, CellError> {
        let mut scratch = entry.cell.lock().unwrap().state.clone();
        let record =
            execute_on_state(entry.logic.as_ref(), &mut scratch, envelope, self.current_cycle());
        let (outcome, reason, confirm_outcome) = match &record.outcome {
            ExecOutcome::Applied => (ReceiptOutcome::Accepted, None, ConfirmOutcome::Applied),
            ExecOutcome::Rejected(err) => (
                ReceiptOutcome::Rejected,
                Some(err.to_string()),
                ConfirmOutcome::Rejected,
            ),
        };
        let own = self.build_confirmation(
            envelope,
            confirm_outcome,
            record.post_fingerprint,
            reason.clone(),
        )?;
        Ok(Receipt::build(
            &self.keypair,
            envelope.payload.sender,
            envelope.payload.sender,
            envelope.payload.nonce,
            outcome,
            reason,
            Some(record.post_fingerprint),
            record.result,
            vec![own],
            now,
        )?)
    }

    fn build_confirmation(
        &self,
        inner: &Envelope,
        outcome: ConfirmOutcome,
        fingerprint: Digest,
        error: Option<String>,
    ) -> Result<Confirmation, ProtocolError> {
        let fingerprint = if self.fault_active(FaultBehavior::TamperConfirm) {
            perturb_digest(&fingerprint)
        } else {
            fingerprint
        };
        Confirmation::build(
            &self.keypair,
            inner.payload.sender,
            inner.payload.sender,
            inner.payload.nonce,
            outcome,
            fingerprint,
            error,
            self.clock.now(),
        )
    }

    // ------------------------------------------------------------------
    // Peer messaging
    // ------------------------------------------------------------------

    fn peer_url(&self, peer: &Address) -> Option<String> {
        self.config.peers.get(peer).cloned()
    }

    async fn collect_confirmations(
        &self,
        inner: &Envelope,
        peers: &[Address],
        delta: Duration,
    ) -> Vec<(Address, Result<Confirmation, String>)> {
        let futures = peers.iter().map(|peer| {
            let peer = *peer;
            async move {
                let result = match self.peer_url(&peer) {
                    Some(url) => self.send_forward(&url, peer, inner, delta).await,
                    None => Err("no peer url".to_string()),
                };
                (peer, result)
            }
        });
        futures::future::join_all(futures).await
    }

    async fn send_forward(
        &self,
        url: &str,
        peer: Address,
        inner: &Envelope,
        delta: Duration,
    ) -> Result<Confirmation, String> {
        let mut data = BTreeMap::new();
        data.insert(
            "transaction".to_string(),
            json!(inner.encode().map_err(|e| e.to_string())?),
        );
        let payload = Payload::new(self.address, peer, Opcode::TxForward, self.clock.now(), data)
            .with_reply_to(inner.payload.nonce);
        let outer = sign_envelope(payload, &self.keypair).map_err(|e| e.to_string())?;
        let response = self
            .http
            .post(format!("{url}/fwd"))
            .timeout(delta)
            .body(outer.encode().map_err(|e| e.to_string())?)
            .send()
            .await
            .map_err(|e| format!("transport: {e}"))?;
        if !response.status().is_success() {
            return Err(format!("peer status {}", response.status()));
        }
        let text = response.text().await.map_err(|e| e.to_string())?;
        let confirmation =
            Confirmation::from_envelope(Envelope::decode(&text).map_err(|e| e.to_string())?)
                .map_err(|e| e.to_string())?;
        if confirmation.cell != peer
            || confirmation.tx_nonce != inner.payload.nonce
            || confirmation.tx_sender != inner.payload.sender
        {
            return Err("confirmation bound to wrong transaction".to_string());
        }
        Ok(confirmation)
    }

    /// Tells peers the final outcome of a transaction this cell served, so
    /// their provisionals can finalize or roll back.
    fn broadcast_outcome(
        self: &Arc<Self>,
        inner: &Envelope,
        decision: FinalDecision,
        reason: Option<RevertReason>,
        exclude_contract: bool,
        peers: Vec<Address>,
    ) {
        for peer in peers {
            if peer == self.address {
                continue;
            }
            let Some(url) = self.peer_url(&peer) else {
                continue;
            };
            let node = Arc::clone(self);
            let inner = inner.clone();
            tokio::spawn(async move {
                let mut data = BTreeMap::new();
                data.insert(
                    "tx_sender".to_string(),
                    json!(inner.payload.sender.to_string()),
                );
                data.insert(
                    "tx_nonce".to_string(),
                    json!(inner.payload.nonce.to_string()),
                );
                data.insert(
                    "final".to_string(),
                    json!(match decision {
                        FinalDecision::Accepted => "accepted",
                        FinalDecision::Reverted => "reverted",
                    }),
                );
                if let Some(reason) = reason {
                    data.insert("reason".to_string(), json!(reason.as_str()));
                }
                data.insert("exclude_contract".to_string(), json!(exclude_contract));
                data.insert(
                    "contract".to_string(),
                    json!(inner.payload.recipient.to_string()),
                );
                let payload =
                    Payload::new(node.address, peer, Opcode::TxConfirm, node.clock.now(), data)
                        .with_reply_to(inner.payload.nonce);
                let Ok(outer) = sign_envelope(payload, &node.keypair) else {
                    return;
                };
                let Ok(body) = outer.encode() else { return };
                for attempt in 0..3u32 {
                    let sent = node
                        .http
                        .post(format!("{url}/fwd"))
                        .timeout(Duration::from_secs(2))
                        .body(body.clone())
                        .send()
                        .await;
                    match sent {
                        Ok(resp) if resp.status().is_success() => return,
                        _ => {
                            tokio::time::sleep(Duration::from_millis(50 * (attempt as u64 + 1)))
                                .await
                        }
                    }
                }
                tracing::warn!(peer = %peer, "outcome broadcast failed");
            });
        }
    }

    // ------------------------------------------------------------------
    // Forwarded execution (peer side of step ❸)
    // ------------------------------------------------------------------

    /// Executes a transaction forwarded by its service cell and replies with
    /// this cell's signed confirmation carrying the post-state fingerprint.
    pub async fn handle_forward(
        self: &Arc<Self>,
        outer: Envelope,
    ) -> Result<Confirmation, CellError> {
        let now = self.clock.now();
        let service = verify_envelope_fresh(&outer, now, self.config.skew_secs)?;
        if service == self.address || !self.config.invariants.is_member(&service) {
            return Err(CellError::NotConsortiumMember);
        }
        if outer.payload.opcode != Opcode::TxForward {
            return Err(CellError::UnsupportedOpcode(outer.payload.opcode.to_string()));
        }
        if self.fault_active(FaultBehavior::Delay) {
            tokio::time::sleep(self.config.invariants.delta() * 3).await;
        }
        let inner_raw = outer
            .payload
            .data
            .get("transaction")
            .and_then(Value::as_str)
            .ok_or_else(|| CellError::Internal("forward missing transaction".into()))?;
        let inner = Envelope::decode(inner_raw)?;
        let slack = self.config.skew_secs + self.config.invariants.delta_secs.ceil() as u64;
        let sender = verify_envelope_fresh(&inner, now, slack)?;
        let tx: TxId = (sender, inner.payload.nonce);
        if let Some(cached) = self.cached_confirmation(&tx) {
            return Ok(cached);
        }
        let entry = self.contract(&inner.payload.recipient)?;
        if entry
            .logic
            .classify(&inner.payload.opcode, &inner.payload.data)
            == TxClass::Read
        {
            let mut scratch = entry.cell.lock().unwrap().state.clone();
            let record =
                execute_on_state(entry.logic.as_ref(), &mut scratch, &inner, self.current_cycle());
            return self.confirmation_for_record(&inner, &record, tx);
        }

        let cycle = self.current_cycle();
        let exec_deadline = tokio::time::Instant::now() + self.config.invariants.delta() * 2;
        let outcome = {
            let ledger = &self.ledger;
            let logic = Arc::clone(&entry.logic);
            let env = inner.clone();
            entry
                .run_at_head(
                    self.address,
                    tx,
                    TicketKind::Forward { service },
                    &self.gate,
                    exec_deadline,
                    move |cell| {
                        let early = cell.take_early(&tx);
                        if early == Some(FinalDecision::Reverted) {
                            return ForwardExec::CancelledEarly;
                        }
                        let seq = ledger.append(env.clone(), cycle);
                        let record = execute_on_state(logic.as_ref(), &mut cell.state, &env, cycle);
                        match &record.outcome {
                            ExecOutcome::Applied => {
                                if early == Some(FinalDecision::Accepted) {
                                    ledger.finalize(seq, TxOutcome::Accepted, None);
                                    ForwardExec::Applied {
                                        record,
                                        provisional: false,
                                    }
                                } else {
                                    cell.set_provisional(Provisional {
                                        tx,
                                        service,
                                        seq,
                                        undo_store: record.undo_store.clone(),
                                        effects: record.effects.clone(),
                                        held_since: Instant::now(),
                                    });
                                    ForwardExec::Applied {
                                        record,
                                        provisional: true,
                                    }
                                }
                            }
                            ExecOutcome::Rejected(err) => {
                                ledger.finalize(seq, TxOutcome::Rejected, Some(err.to_string()));
                                ForwardExec::Rejected { record }
                            }
                        }
                    },
                )
                .await
        };
        match outcome {
            Ok(ForwardExec::Applied { record, provisional }) => {
                if provisional {
                    self.provisional_created();
                } else {
                    self.queue_effects(record.effects.clone());
                    self.apply_pending_effects();
                }
                self.confirmation_for_record(&inner, &record, tx)
            }
            Ok(ForwardExec::Rejected { record }) => {
                self.confirmation_for_record(&inner, &record, tx)
            }
            Ok(ForwardExec::CancelledEarly) | Err(HeadError::Cancelled) => {
                Err(CellError::Reverted {
                    reason: RevertReason::Deadline,
                })
            }
            Err(HeadError::TimedOut) => Err(CellError::Internal("execution queue timeout".into())),
            Err(HeadError::LostTieBreak { .. }) => {
                unreachable!("forward tickets never tie-break")
            }
        }
    }

    fn confirmation_for_record(
        &self,
        inner: &Envelope,
        record: &ExecRecord,
        tx: TxId,
    ) -> Result<Confirmation, CellError> {
        let (outcome, error) = match &record.outcome {
            ExecOutcome::Applied => (ConfirmOutcome::Applied, None),
            ExecOutcome::Rejected(err) => (ConfirmOutcome::Rejected, Some(err.to_string())),
        };
        let confirmation = self.build_confirmation(inner, outcome, record.post_fingerprint, error)?;
        self.cache_confirmation(tx, confirmation.clone());
        Ok(confirmation)
    }

    /// Applies a service cell's final outcome to a transaction this cell
    /// executed (or still has queued) on its behalf.
    pub async fn handle_outcome(self: &Arc<Self>, outer: Envelope) -> Result<(), CellError> {
        let now = self.clock.now();
        let service = verify_envelope_fresh(&outer, now, self.config.skew_secs)?;
        if !self.config.invariants.is_member(&service) {
            return Err(CellError::NotConsortiumMember);
        }
        if outer.payload.opcode != Opcode::TxConfirm {
            return Err(CellError::UnsupportedOpcode(outer.payload.opcode.to_string()));
        }
        let data = &outer.payload.data;
        let get_str = |key: &str| -> Result<&str, CellError> {
            data.get(key)
                .and_then(Value::as_str)
                .ok_or_else(|| CellError::Internal(format!("outcome missing {key}")))
        };
        let tx_sender: Address = get_str("tx_sender")?.parse().map_err(CellError::Protocol)?;
        let tx_nonce: Nonce = get_str("tx_nonce")?.parse().map_err(CellError::Protocol)?;
        let decision = match get_str("final")? {
            "accepted" => FinalDecision::Accepted,
            "reverted" => FinalDecision::Reverted,
            other => return Err(CellError::Internal(format!("unknown final outcome {other}"))),
        };
        let reason = data
            .get("reason")
            .and_then(Value::as_str)
            .map(str::to_string);
        let exclude_contract = data
            .get("exclude_contract")
            .and_then(Value::as_bool)
            .unwrap_or(false);
        let contract: Address = get_str("contract")?.parse().map_err(CellError::Protocol)?;

        let Ok(entry) = self.contract(&contract) else {
            return Ok(());
        };
        let tx: TxId = (tx_sender, tx_nonce);
        match entry.resolve(tx, decision, &self.ledger, reason) {
            Resolution::RolledBack => self.provisional_released(),
            Resolution::Finalized { effects } => {
                self.provisional_released();
                self.queue_effects(effects);
                self.apply_pending_effects();
            }
            Resolution::QueueDropped | Resolution::StoredEarly => {}
        }
        if exclude_contract && decision == FinalDecision::Reverted {
            entry
                .cell
                .lock()
                .unwrap()
                .mark_excluded(self.current_cycle());
        }
        Ok(())
    }

    // ------------------------------------------------------------------
    // Report stage
    // ------------------------------------------------------------------

    /// Runs one report stage at the given deadline: pauses execution, waits
    /// out provisionals, runs boundary hooks, clones every non-excluded
    /// contract, then resumes execution, fingerprints the clones, archives
    /// the snapshot, and submits the report asynchronously.
    pub async fn run_report_stage(
        self: &Arc<Self>,
        deadline_ts: u64,
    ) -> Result<CycleReport, CellError> {
        let inv = &self.config.invariants;
        let cycle = cycle_index(deadline_ts, inv)?;
        self.report_mode.store(true, Ordering::SeqCst);
        let barrier = self.gate.write().await;

        // Resolve in-flight provisionals before freezing state. Their
        // service cells are bound by the same δ deadlines, so this wait is
        // bounded; stragglers (crashed service cell) are force-reverted.
        let force_after = Instant::now() + inv.delta() * 2 + Duration::from_millis(500);
        loop {
            if self.provisional_count.load(Ordering::SeqCst) == 0 {
                break;
            }
            if Instant::now() > force_after {
                self.force_revert_stale_provisionals(Duration::ZERO);
                break;
            }
            let notified = self.provisional_notify.notified();
            tokio::pin!(notified);
            notified.as_mut().enable();
            if self.provisional_count.load(Ordering::SeqCst) == 0 {
                break;
            }
            tokio::select! {
                _ = notified.as_mut() => {}
                _ = tokio::time::sleep(Duration::from_millis(20)) => {}
            }
        }
        self.apply_pending_effects();

        if self.config.report_stage_hold_ms > 0 {
            tokio::time::sleep(Duration::from_millis(self.config.report_stage_hold_ms)).await;
        }

        // Boundary hooks + clone under the barrier; fingerprinting happens
        // after execution resumes.
        let mut clones: Vec<(Address, Store)> = Vec::new();
        let mut excluded: Vec<Address> = Vec::new();
        {
            let contracts = self.contracts.read().unwrap();
            for (id, entry) in contracts.iter() {
                let mut cell = entry.cell.lock().unwrap();
                entry.logic.report_boundary(&mut cell.state.store);
                if cell.state.excluded_from_snapshot {
                    excluded.push(*id);
                } else {
                    clones.push((*id, cell.state.store.clone()));
                }
                cell.clear_exclusion();
                cell.sweep_early();
            }
        }
        let boundary_seq = self.ledger.last_seq();
        let first_seq = self.last_boundary_seq.swap(boundary_seq, Ordering::SeqCst) + 1;
        self.current_cycle.store(cycle + 1, Ordering::SeqCst);
        drop(barrier);
        self.report_mode.store(false, Ordering::SeqCst);
        self.notify_all_entries();

        // The execution inhibition was only needed for the clone; the
        // fingerprint math and anchor submission run alongside new traffic.
        let entries: Vec<ArchiveEntry> = clones
            .into_iter()
            .map(|(contract_id, store)| ArchiveEntry {
                contract_id,
                fingerprint: crate::runtime::store_fingerprint(&store),
                store,
            })
            .collect();
        let pairs: Vec<(Address, Digest)> = entries
            .iter()
            .map(|e| (e.contract_id, e.fingerprint))
            .collect();
        let combined = combine_fingerprints(&pairs).map_err(CellError::Protocol)?;
        let tx_range = if boundary_seq >= first_seq {
            Some((first_seq, boundary_seq))
        } else {
            None
        };
        let ledger_slice = match tx_range {
            Some((first, last)) => self.ledger.slice(first, last),
            None => Vec::new(),
        };
        let archive = Arc::new(SnapshotArchive {
            cell: self.address,
            cycle,
            entries,
            combined,
            tx_range,
            ledger: ledger_slice,
        });
        self.store_archive(cycle, Arc::clone(&archive));

        if !excluded.is_empty() {
            tracing::info!(cycle, ?excluded, "contracts excluded from this snapshot");
        }

        self.spawn_report_submission(cycle, combined);
        let node = Arc::clone(self);
        tokio::spawn(async move {
            let _ = node.pull_contingency().await;
        });

        Ok(CycleReport {
            cell: self.address,
            cycle,
            combined,
            entry_count: archive.entries.len(),
            tx_range,
        })
    }

    fn notify_all_entries(&self) {
        let contracts = self.contracts.read().unwrap();
        for entry in contracts.values() {
            entry.notify_waiters();
        }
    }

    fn force_revert_stale_provisionals(&self, ttl: Duration) {
        let entries: Vec<Arc<ContractEntry>> =
            self.contracts.read().unwrap().values().cloned().collect();
        for entry in entries {
            if let Some(tx) = entry.expired_provisional(ttl) {
                tracing::warn!(nonce = %tx.1, "force-reverting stale provisional");
                if matches!(
                    entry.resolve(
                        tx,
                        FinalDecision::Reverted,
                        &self.ledger,
                        Some("service cell unresponsive".into()),
                    ),
                    Resolution::RolledBack
                ) {
                    self.provisional_released();
                }
            }
        }
    }

    fn store_archive(&self, cycle: u64, archive: Arc<SnapshotArchive>) {
        self.persist_archive(&archive);
        let retention = self.config.snapshot_retention;
        let mut snapshots = self.snapshots.lock().unwrap();
        snapshots.insert(cycle, archive);
        while snapshots.len() as u64 > retention {
            let Some((&oldest, _)) = snapshots.iter().next() else {
                break;
            };
            snapshots.remove(&oldest);
            let dir = self
                .data_dir
                .join("snapshots")
                .join(format!("cycle-{oldest}"));
            let _ = std::fs::remove_dir_all(dir);
        }
    }

    /// One file per contract per cycle plus the ledger slice and manifest.
    fn persist_archive(&self, archive: &SnapshotArchive) {
        let dir = self
            .data_dir
            .join("snapshots")
            .join(format!("cycle-{}", archive.cycle));
        if std::fs::create_dir_all(&dir).is_err() {
            return;
        }
        for entry in &archive.entries {
            let path = dir.join(format!("contract-{}.json", entry.contract_id));
            let _ = std::fs::write(path, crate::runtime::store_canonical_string(&entry.store));
        }
        if let Ok(ledger) = crate::protocol::to_canonical_string(&archive.ledger) {
            let _ = std::fs::write(dir.join("ledger.json"), ledger);
        }
        let manifest = json!({
            "cell": archive.cell.to_string(),
            "cycle": archive.cycle,
            "combined": archive.combined.to_string(),
            "tx_range": archive.tx_range,
            "entries": archive.entries.iter().map(|e| json!({
                "contract_id": e.contract_id.to_string(),
                "fingerprint": e.fingerprint.to_string(),
            })).collect::<Vec<_>>(),
        });
        if let Ok(text) = crate::protocol::to_canonical_string(&manifest) {
            let _ = std::fs::write(dir.join("manifest.json"), text);
        }
    }

    fn spawn_report_submission(self: &Arc<Self>, cycle: u64, combined: Digest) {
        let node = Arc::clone(self);
        tokio::spawn(async move {
            let reported = if node.fault_active(FaultBehavior::TamperReport) {
                perturb_digest(&combined)
            } else {
                combined
            };
            let window_end = report_window_end(cycle, &node.config.invariants);
            if node.fault_active(FaultBehavior::LateReport) {
                // Sleep until the validity window has provably closed.
                loop {
                    if node.clock.now() > window_end {
                        break;
                    }
                    tokio::time::sleep(Duration::from_millis(200)).await;
                }
                tokio::time::sleep(Duration::from_millis(1100)).await;
            }
            loop {
                match node
                    .anchor_client
                    .submit_report(&node.keypair, cycle, reported, node.clock.now())
                    .await
                {
                    Ok(()) | Err(AnchorClientError::Duplicate) => break,
                    Err(AnchorClientError::Unreachable(err)) => {
                        if node.clock.now() > window_end {
                            tracing::warn!(cycle, %err, "report window closed, giving up");
                            break;
                        }
                        tokio::time::sleep(Duration::from_millis(100)).await;
                    }
                    Err(err) => {
                        tracing::warn!(cycle, %err, "anchor rejected report");
                        break;
                    }
                }
            }
            // Self-heal when our archive disagrees with the anchored majority.
            tokio::time::sleep(Duration::from_millis(400)).await;
            if let Err(err) = node.reconcile_with_majority(cycle).await {
                tracing::debug!(cycle, %err, "reconcile skipped");
            }
        });
    }

    // ------------------------------------------------------------------
    // Contingency pull
    // ------------------------------------------------------------------

    /// Fetches censored transactions from the anchor's contingency queue and
    /// executes the ones not already in the ledger, in anchor-append order.
    pub async fn pull_contingency(self: &Arc<Self>) -> Result<usize, CellError> {
        let since = self.contingency_pos.load(Ordering::SeqCst);
        let entries = self
            .anchor_client
            .fetch_contingency(since)
            .await
            .map_err(|e| CellError::AnchorUnreachable(e.to_string()))?;
        let mut executed = 0;
        for (position, envelope) in entries {
            self.contingency_pos.store(position + 1, Ordering::SeqCst);
            if verify_envelope(&envelope).is_err() {
                continue;
            }
            let sender = envelope.payload.sender;
            let nonce = envelope.payload.nonce;
            let tx: TxId = (sender, nonce);
            if self.ledger.seq_for_nonce(&sender, &nonce).is_some() {
                continue;
            }
            let Ok(entry) = self.contract(&envelope.payload.recipient) else {
                continue;
            };
            if entry
                .logic
                .classify(&envelope.payload.opcode, &envelope.payload.data)
                == TxClass::Read
            {
                continue;
            }
            let cycle = self.current_cycle();
            let deadline = tokio::time::Instant::now() + Duration::from_secs(10);
            let result = {
                let ledger = &self.ledger;
                let logic = Arc::clone(&entry.logic);
                let env = envelope.clone();
                entry
                    .run_at_head(
                        self.address,
                        tx,
                        TicketKind::Direct,
                        &self.gate,
                        deadline,
                        move |cell| {
                            let seq = ledger.append(env.clone(), cycle);
                            let record =
                                execute_on_state(logic.as_ref(), &mut cell.state, &env, cycle);
                            match &record.outcome {
                                ExecOutcome::Applied => {
                                    ledger.finalize(seq, TxOutcome::Accepted, None)
                                }
                                ExecOutcome::Rejected(err) => ledger.finalize(
                                    seq,
                                    TxOutcome::Rejected,
                                    Some(err.to_string()),
                                ),
                            }
                            record
                        },
                    )
                    .await
            };
            if let Ok(record) = result {
                if record.outcome == ExecOutcome::Applied {
                    self.queue_effects(record.effects.clone());
                    self.apply_pending_effects();
                }
                // Cache a single-confirmation receipt so a duplicate direct
                // commit of the same nonce stays idempotent.
                if let Ok(confirmation) = self.confirmation_for_record(&envelope, &record, tx) {
                    let (outcome, reason) = match &record.outcome {
                        ExecOutcome::Applied => (ReceiptOutcome::Accepted, None),
                        ExecOutcome::Rejected(err) => {
                            (ReceiptOutcome::Rejected, Some(err.to_string()))
                        }
                    };
                    if let Ok(receipt) = Receipt::build(
                        &self.keypair,
                        sender,
                        sender,
                        nonce,
                        outcome,
                        reason,
                        Some(record.post_fingerprint),
                        record.result.clone(),
                        vec![confirmation],
                        self.clock.now(),
                    ) {
                        self.cache_receipt(tx, receipt);
                    }
                }
                executed += 1;
            }
        }
        Ok(executed)
    }

    // ------------------------------------------------------------------
    // Majority reconciliation
    // ------------------------------------------------------------------

    /// When this cell's archived snapshot disagrees with the fingerprint a
    /// strict majority of cells anchored for the cycle, adopt the state of a
    /// majority cell. Heals a cell that went stale while offline or after a
    /// contract exclusion left it behind.
    pub async fn reconcile_with_majority(self: &Arc<Self>, cycle: u64) -> Result<bool, CellError> {
        let own_combined = match self.snapshots.lock().unwrap().get(&cycle) {
            Some(archive) => archive.combined,
            None => return Ok(false),
        };
        let reports = self
            .anchor_client
            .reports_for_cycle(cycle)
            .await
            .map_err(|e| CellError::AnchorUnreachable(e.to_string()))?;
        if reports.len() < 2 {
            return Ok(false);
        }
        let mut counts: BTreeMap<Digest, usize> = BTreeMap::new();
        for report in &reports {
            *counts.entry(report.fingerprint).or_default() += 1;
        }
        let Some((majority_fp, majority_count)) =
            counts.into_iter().max_by_key(|(_, count)| *count)
        else {
            return Ok(false);
        };
        if majority_count <= reports.len() / 2 || majority_fp == own_combined {
            return Ok(false);
        }
        for report in reports.iter().filter(|r| r.fingerprint == majority_fp) {
            if report.cell == self.address {
                continue;
            }
            let Some(url) = self.peer_url(&report.cell) else {
                continue;
            };
            let Ok(response) = self
                .http
                .get(format!("{url}/snapshot"))
                .query(&[("cycle", cycle.to_string())])
                .timeout(Duration::from_secs(5))
                .send()
                .await
            else {
                continue;
            };
            if !response.status().is_success() {
                continue;
            }
            let Ok(text) = response.text().await else {
                continue;
            };
            let Ok(archive) = SnapshotArchive::decode(&text) else {
                continue;
            };
            if archive.verify_content_addressing().is_err() || archive.combined != majority_fp {
                continue;
            }
            self.adopt_archive(&archive).await;
            tracing::info!(cycle, from = %report.cell, "adopted majority state");
            return Ok(true);
        }
        Ok(false)
    }

    /// Replaces contract stores wholesale with the archive's.
    async fn adopt_archive(&self, archive: &SnapshotArchive) {
        let _barrier = self.gate.write().await;
        self.force_revert_stale_provisionals(Duration::ZERO);
        let stores = archive.stores();
        let mut map = self.contracts.write().unwrap();
        map.retain(|id, _| stores.contains_key(id));
        for (id, store) in stores {
            if let Some(entry) = map.get(&id) {
                let mut cell = entry.cell.lock().unwrap();
                cell.state.store = store;
                cell.clear_exclusion();
                continue;
            }
            // Community contract we never registered: its descriptor lives
            // in the archived deployer store.
            let registry_key = crate::runtime::deployer::registry_key(&id);
            let Some(descriptor) = archive
                .entries
                .iter()
                .find_map(|e| e.store.get(&registry_key))
                .and_then(|raw| {
                    crate::protocol::from_canonical_str::<crate::runtime::ContractDescriptor>(
                        std::str::from_utf8(raw).ok()?,
                    )
                    .ok()
                })
            else {
                continue;
            };
            let Some(logic) = builtin_logic(&descriptor.code_ref) else {
                continue;
            };
            map.insert(
                id,
                ContractEntry::new(descriptor, ContractState::new(id, store), logic),
            );
        }
        drop(map);
        self.notify_all_entries();
    }

    // ------------------------------------------------------------------
    // Read surfaces
    // ------------------------------------------------------------------

    pub fn snapshot_archive(&self, cycle: u64) -> Option<Arc<SnapshotArchive>> {
        self.snapshots.lock().unwrap().get(&cycle).cloned()
    }

    pub fn latest_snapshot_cycle(&self) -> Option<u64> {
        self.snapshots.lock().unwrap().keys().max().copied()
    }

    pub fn fingerprint_for_cycle(&self, cycle: u64) -> Option<Digest> {
        self.snapshots
            .lock()
            .unwrap()
            .get(&cycle)
            .map(|a| a.combined)
    }

    pub fn status(&self) -> StatusReport {
        let cycle = self.current_cycle();
        let contracts = self.contracts.read().unwrap();
        let excluded_contracts = contracts
            .iter()
            .filter(|(_, e)| e.cell.lock().unwrap().state.excluded_from_snapshot)
            .map(|(id, _)| *id)
            .collect();
        let excluded_cells = self
            .config
            .invariants
            .cell_addresses
            .iter()
            .copied()
            .filter(|c| self.is_excluded(c, cycle))
            .collect();
        StatusReport {
            cell: self.address,
            cycle,
            mode: if self.report_mode.load(Ordering::SeqCst) {
                "report"
            } else {
                "main"
            },
            ledger_len: self.ledger.last_seq(),
            contracts: contracts.len(),
            excluded_cells,
            excluded_contracts,
            latest_snapshot: self.snapshots.lock().unwrap().keys().max().copied(),
        }
    }

    /// Current fingerprint of one contract.
    pub fn contract_fingerprint(&self, id: &Address) -> Option<Digest> {
        let contracts = self.contracts.read().unwrap();
        let entry = contracts.get(id)?;
        let cell = entry.cell.lock().unwrap();
        Some(cell.state.fingerprint())
    }

    /// Copy of one contract's store.
    pub fn contract_store(&self, id: &Address) -> Option<Store> {
        let contracts = self.contracts.read().unwrap();
        let entry = contracts.get(id)?;
        let cell = entry.cell.lock().unwrap();
        Some(cell.state.store.clone())
    }

    pub fn contract_descriptor(&self, id: &Address) -> Option<crate::runtime::ContractDescriptor> {
        let contracts = self.contracts.read().unwrap();
        let entry = contracts.get(id)?;
        let descriptor = entry.descriptor.read().unwrap().clone();
        Some(descriptor)
    }

    // ------------------------------------------------------------------
    // Report scheduler
    // ------------------------------------------------------------------

    /// Background loop firing a report stage at every deadline.
    pub fn spawn_scheduler(self: &Arc<Self>) -> JoinHandle<()> {
        let node = Arc::clone(self);
        tokio::spawn(async move {
            loop {
                let inv = &node.config.invariants;
                let now = node.clock.now();
                let next = if now < inv.t0 {
                    inv.t0
                } else {
                    match next_deadline(now, inv) {
                        Ok(d) => d,
                        Err(_) => break,
                    }
                };
                loop {
                    if node.clock.now() >= next {
                        break;
                    }
                    tokio::time::sleep(Duration::from_millis(200)).await;
                }
                if let Err(err) = node.run_report_stage(next).await {
                    tracing::warn!(%err, "report stage failed");
                    tokio::time::sleep(Duration::from_secs(1)).await;
                }
            }
        })
    }
}

fn perturb_digest(digest: &Digest) -> Digest {
    let mut bytes = *digest.as_bytes();
    bytes[0] ^= 0xFF;
    Digest::from_bytes(bytes)
}
