//! Per-contract execution discipline.
//!
//! Each contract owns a FIFO ticket queue: at most one transaction mutates a
//! contract's store at a time, in arrival order. A forwarded transaction that
//! applied state stays at the head as a *provisional* — the queue stays
//! closed until its service cell's final outcome arrives, so a revert can
//! roll the store back without cascading into later executions.
//!
//! Two service cells committing conflicting transactions through each other
//! produce a symmetric cross-cell wait: each cell's own execution sits behind
//! the other transaction's provisional. The deadlock is broken locally and
//! deterministically: a waiting local commit compares nonces with the
//! blocking foreign provisional, and the larger nonce yields (reverts, the
//! client retries). Both cells order the same two nonces, so exactly one
//! side backs off.

use std::collections::{HashMap, VecDeque};
use std::sync::{Arc, Mutex, RwLock};
use std::time::Instant;

use tokio::sync::Notify;

use crate::ledger::{Ledger, TxOutcome};
use crate::protocol::{Address, Nonce};
use crate::runtime::{ContractDescriptor, ContractLogic, ContractState, RuntimeEffect, Store};

/// (sender, nonce) — the deployment-wide transaction identity.
pub(crate) type TxId = (Address, Nonce);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum TicketKind {
    /// This cell is the service cell; execution ends with its own decision.
    Local,
    /// Forwarded by a peer service cell; outcome arrives later.
    Forward { service: Address },
    /// Contingency injection; final upon execution.
    Direct,
}

#[derive(Debug)]
struct Ticket {
    id: u64,
    tx: TxId,
    kind: TicketKind,
}

/// An applied forwarded transaction awaiting its service cell's outcome.
pub(crate) struct Provisional {
    pub tx: TxId,
    pub service: Address,
    pub seq: u64,
    pub undo_store: Store,
    pub effects: Vec<RuntimeEffect>,
    pub held_since: Instant,
}

/// Final outcome a service cell propagates for a transaction it committed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum FinalDecision {
    Accepted,
    Reverted,
}

/// Everything about one contract that must change atomically.
pub(crate) struct ContractCell {
    pub state: ContractState,
    queue: VecDeque<Ticket>,
    pub provisional: Option<Provisional>,
    early: HashMap<TxId, FinalDecision>,
    /// Set when a fingerprint mismatch excluded this contract for a cycle.
    pub excluded_in_cycle: Option<u64>,
    next_ticket: u64,
}

impl ContractCell {
    pub(crate) fn take_early(&mut self, tx: &TxId) -> Option<FinalDecision> {
        self.early.remove(tx)
    }

    pub(crate) fn set_provisional(&mut self, provisional: Provisional) {
        debug_assert!(self.provisional.is_none());
        self.provisional = Some(provisional);
    }

    pub(crate) fn sweep_early(&mut self) {
        self.early.clear();
    }

    pub(crate) fn mark_excluded(&mut self, cycle: u64) {
        self.state.excluded_from_snapshot = true;
        self.excluded_in_cycle = Some(cycle);
    }

    pub(crate) fn clear_exclusion(&mut self) {
        self.state.excluded_from_snapshot = false;
        self.excluded_in_cycle = None;
    }
}

/// One registered contract on a cell.
pub(crate) struct ContractEntry {
    pub descriptor: RwLock<ContractDescriptor>,
    pub logic: Arc<dyn ContractLogic>,
    /// Serializes this cell's own commits on the contract.
    pub commit_gate: tokio::sync::Mutex<()>,
    pub cell: Mutex<ContractCell>,
    notify: Notify,
}

#[derive(Debug, PartialEq, Eq)]
pub(crate) enum HeadError {
    /// A foreign provisional with a smaller nonce blocks us; we yield.
    LostTieBreak { winner: TxId },
    /// The service cell reverted this forward before it executed.
    Cancelled,
    TimedOut,
}

/// Outcome of applying a final decision to a contract.
pub(crate) enum Resolution {
    /// Provisional rolled back; store restored.
    RolledBack,
    /// Provisional finalized as accepted; effects still need applying.
    Finalized { effects: Vec<RuntimeEffect> },
    /// Un-executed queued forward dropped.
    QueueDropped,
    /// Nothing matched yet; decision parked for the ticket's arrival.
    StoredEarly,
}

impl ContractEntry {
    pub(crate) fn new(
        descriptor: ContractDescriptor,
        state: ContractState,
        logic: Arc<dyn ContractLogic>,
    ) -> Arc<Self> {
        Arc::new(Self {
            descriptor: RwLock::new(descriptor),
            logic,
            commit_gate: tokio::sync::Mutex::new(()),
            cell: Mutex::new(ContractCell {
                state,
                queue: VecDeque::new(),
                provisional: None,
                early: HashMap::new(),
                excluded_in_cycle: None,
                next_ticket: 0,
            }),
            notify: Notify::new(),
        })
    }

    pub(crate) fn notify_waiters(&self) {
        self.notify.notify_waiters();
    }

    /// Queues a ticket and runs `f` under the contract lock once the ticket
    /// reaches the head with no provisional pending and the report-stage
    /// barrier open. The ticket is popped when `f` returns; `f` may leave a
    /// provisional behind to keep the queue closed until an outcome arrives.
    pub(crate) async fn run_at_head<T>(
        &self,
        me: Address,
        tx: TxId,
        kind: TicketKind,
        barrier: &tokio::sync::RwLock<()>,
        deadline: tokio::time::Instant,
        f: impl FnOnce(&mut ContractCell) -> T,
    ) -> Result<T, HeadError> {
        let ticket_id = {
            let mut cell = self.cell.lock().unwrap();
            if matches!(kind, TicketKind::Forward { .. })
                && cell.early.get(&tx) == Some(&FinalDecision::Reverted)
            {
                cell.early.remove(&tx);
                return Err(HeadError::Cancelled);
            }
            let id = cell.next_ticket;
            cell.next_ticket += 1;
            cell.queue.push_back(Ticket { id, tx, kind });
            id
        };
        self.notify.notify_waiters();

        let mut f = Some(f);
        loop {
            let notified = self.notify.notified();
            tokio::pin!(notified);
            notified.as_mut().enable();

            enum Step {
                Wait,
                Lost(TxId),
                Cancelled,
            }
            let step = {
                let mut cell = self.cell.lock().unwrap();
                if !cell.queue.iter().any(|t| t.id == ticket_id) {
                    Step::Cancelled
                } else if cell.queue.front().map(|t| t.id) == Some(ticket_id)
                    && cell.provisional.is_none()
                {
                    // Barrier check must not block while the contract lock is
                    // held; when the report stage is closing executions we
                    // simply wait for it to reopen.
                    match barrier.try_read() {
                        Ok(_open) => {
                            let out = (f.take().expect("f runs once"))(&mut cell);
                            let popped = cell.queue.pop_front();
                            debug_assert_eq!(popped.map(|t| t.id), Some(ticket_id));
                            drop(cell);
                            self.notify.notify_waiters();
                            return Ok(out);
                        }
                        Err(_) => Step::Wait,
                    }
                } else {
                    let mut step = Step::Wait;
                    if kind == TicketKind::Local {
                        if let Some(p) = &cell.provisional {
                            if p.service != me && tx.1 > p.tx.1 {
                                let winner = p.tx;
                                cell.queue.retain(|t| t.id != ticket_id);
                                step = Step::Lost(winner);
                            }
                        }
                    }
                    step
                }
            };
            match step {
                Step::Cancelled => return Err(HeadError::Cancelled),
                Step::Lost(winner) => {
                    self.notify.notify_waiters();
                    return Err(HeadError::LostTieBreak { winner });
                }
                Step::Wait => {
                    tokio::select! {
                        _ = notified.as_mut() => {}
                        // Backstop poll: barrier reopen is signalled by the
                        // node, but a short poll makes missed wakeups harmless.
                        _ = tokio::time::sleep(std::time::Duration::from_millis(25)) => {}
                        _ = tokio::time::sleep_until(deadline) => {
                            let mut cell = self.cell.lock().unwrap();
                            cell.queue.retain(|t| t.id != ticket_id);
                            drop(cell);
                            self.notify.notify_waiters();
                            return Err(HeadError::TimedOut);
                        }
                    }
                }
            }
        }
    }

    /// Applies a service cell's final decision to whatever stage the
    /// transaction is in here: provisional, still queued, or not yet seen.
    pub(crate) fn resolve(
        &self,
        tx: TxId,
        decision: FinalDecision,
        ledger: &Ledger,
        reason: Option<String>,
    ) -> Resolution {
        let mut cell = self.cell.lock().unwrap();
        if cell.provisional.as_ref().map(|p| p.tx) == Some(tx) {
            let p = cell.provisional.take().expect("checked above");
            let resolution = match decision {
                FinalDecision::Accepted => {
                    ledger.finalize(p.seq, TxOutcome::Accepted, None);
                    Resolution::Finalized { effects: p.effects }
                }
                FinalDecision::Reverted => {
                    cell.state.store = p.undo_store;
                    ledger.finalize(p.seq, TxOutcome::Reverted, reason);
                    Resolution::RolledBack
                }
            };
            drop(cell);
            self.notify.notify_waiters();
            return resolution;
        }
        if decision == FinalDecision::Reverted {
            if let Some(pos) = cell
                .queue
                .iter()
                .position(|t| t.tx == tx && matches!(t.kind, TicketKind::Forward { .. }))
            {
                cell.queue.remove(pos);
                drop(cell);
                self.notify.notify_waiters();
                return Resolution::QueueDropped;
            }
        }
        cell.early.insert(tx, decision);
        Resolution::StoredEarly
    }

    /// The provisional's transaction id when it has been held longer than
    /// `ttl` (service cell presumed gone).
    pub(crate) fn expired_provisional(&self, ttl: std::time::Duration) -> Option<TxId> {
        let cell = self.cell.lock().unwrap();
        cell.provisional
            .as_ref()
            .filter(|p| p.held_since.elapsed() > ttl)
            .map(|p| p.tx)
    }
}
