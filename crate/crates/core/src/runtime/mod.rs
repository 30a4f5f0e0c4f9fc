//! The bContract execution environment.
//!
//! Contracts are compiled-in implementations behind one uniform interface:
//! execute (via signed transactions), clone (freeze state for fingerprinting),
//! and fingerprint (hash the canonical store image). The same execution entry
//! point drives the live cells and the auditors' replay, so a transaction has
//! exactly one meaning everywhere.

pub mod cas;
pub mod deployer;
pub mod fastmoney;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::DeploymentConfig;
use crate::error::ContractError;
use crate::protocol::{fingerprint_bytes, to_canonical_string, Address, Digest, Envelope, Opcode};

/// A contract's data model: string keys to raw byte values.
pub type Store = BTreeMap<String, Vec<u8>>;

/// Hex-encoded store values for archive serialization.
pub mod hex_store {
    use super::Store;
    use serde::{Deserialize, Deserializer, Serializer};
    use std::collections::BTreeMap;

    pub fn serialize<S: Serializer>(store: &Store, serializer: S) -> Result<S::Ok, S::Error> {
        let encoded: BTreeMap<&String, String> =
            store.iter().map(|(k, v)| (k, hex::encode(v))).collect();
        serde::Serialize::serialize(&encoded, serializer)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(deserializer: D) -> Result<Store, D::Error> {
        let encoded: BTreeMap<String, String> = Deserialize::deserialize(deserializer)?;
        encoded
            .into_iter()
            .map(|(k, v)| Ok((k, hex::decode(&v).map_err(serde::de::Error::custom)?)))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContractKind {
    System,
    Community,
}

/// Registration record for one deployed bContract.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractDescriptor {
    pub contract_id: Address,
    pub kind: ContractKind,
    pub owner: Address,
    pub destroyable: bool,
    /// Hash of the contract logic identifier/version, e.g. keccak("fastmoney/1").
    pub code_ref: Digest,
}

impl ContractDescriptor {
    pub fn canonical_bytes(&self) -> Vec<u8> {
        to_canonical_string(self)
            .expect("descriptor always encodes")
            .into_bytes()
    }
}

/// Live state of one contract on one cell.
#[derive(Debug, Clone, PartialEq)]
pub struct ContractState {
    pub contract_id: Address,
    pub store: Store,
    pub excluded_from_snapshot: bool,
}

impl ContractState {
    pub fn new(contract_id: Address, store: Store) -> Self {
        Self {
            contract_id,
            store,
            excluded_from_snapshot: false,
        }
    }

    pub fn fingerprint(&self) -> Digest {
        store_fingerprint(&self.store)
    }
}

/// Immutable frozen copy of a contract's store, taken for fingerprinting.
#[derive(Debug, Clone, PartialEq)]
pub struct StateClone {
    pub clone_id: u64,
    pub contract_id: Address,
    pub frozen_store: Store,
}

impl StateClone {
    pub fn fingerprint(&self) -> Digest {
        store_fingerprint(&self.frozen_store)
    }
}

/// Canonical text image of a store: sorted keys, hex values.
pub fn store_canonical_string(store: &Store) -> String {
    let map: BTreeMap<&String, String> = store.iter().map(|(k, v)| (k, hex::encode(v))).collect();
    to_canonical_string(&map).expect("string map always encodes")
}

/// Fingerprint over the canonical store image.
pub fn store_fingerprint(store: &Store) -> Digest {
    fingerprint_bytes(store_canonical_string(store).as_bytes())
}

/// Whether an operation can mutate contract state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TxClass {
    Read,
    Write,
}

/// Deterministic inputs available to contract code.
#[derive(Debug, Clone)]
pub struct ExecContext {
    pub sender: Address,
    pub contract_id: Address,
    pub cycle: u64,
}

/// Cross-contract side effects a transaction may request; applied by the
/// host only once the transaction's outcome is final.
#[derive(Debug, Clone, PartialEq)]
pub enum RuntimeEffect {
    RegisterContract {
        descriptor: ContractDescriptor,
        initial_store: Store,
    },
    DestroyContract(Address),
}

/// What a successful execution produced.
#[derive(Debug, Clone, Default)]
pub struct ExecOutput {
    pub result: BTreeMap<String, Value>,
    pub effects: Vec<RuntimeEffect>,
}

/// The uniform bContract interface.
pub trait ContractLogic: Send + Sync {
    /// Stable logic identifier, e.g. "fastmoney/1"; hashes to the code_ref.
    fn code_name(&self) -> &'static str;

    /// Read/write classification so read-only queries skip consensus.
    fn classify(&self, opcode: &Opcode, data: &BTreeMap<String, Value>) -> TxClass;

    fn execute(
        &self,
        ctx: &ExecContext,
        store: &mut Store,
        opcode: &Opcode,
        data: &BTreeMap<String, Value>,
    ) -> Result<ExecOutput, ContractError>;

    /// Deterministic housekeeping at every report-stage boundary.
    fn report_boundary(&self, _store: &mut Store) {}
}

pub fn code_ref_of(name: &str) -> Digest {
    fingerprint_bytes(name.as_bytes())
}

/// Resolves a code_ref to its compiled-in logic.
pub fn builtin_logic(code_ref: &Digest) -> Option<Arc<dyn ContractLogic>> {
    let candidates: [Arc<dyn ContractLogic>; 3] = [
        Arc::new(fastmoney::FastMoney),
        Arc::new(cas::ContentStore),
        Arc::new(deployer::Deployer),
    ];
    candidates
        .into_iter()
        .find(|logic| code_ref_of(logic.code_name()) == *code_ref)
}

/// Code refs that community deployments may instantiate.
pub fn deployable_code_refs() -> Vec<Digest> {
    vec![code_ref_of("fastmoney/1"), code_ref_of("cas/1")]
}

#[derive(Debug, Clone, PartialEq)]
pub enum ExecOutcome {
    Applied,
    Rejected(ContractError),
}

impl ExecOutcome {
    pub fn as_wire(&self) -> &'static str {
        match self {
            ExecOutcome::Applied => "applied",
            ExecOutcome::Rejected(_) => "rejected",
        }
    }
}

/// Result of executing one transaction against one contract.
#[derive(Debug, Clone)]
pub struct ExecRecord {
    pub outcome: ExecOutcome,
    pub result: BTreeMap<String, Value>,
    pub effects: Vec<RuntimeEffect>,
    /// Fingerprint of the contract's store after execution (unchanged when
    /// the transaction was rejected).
    pub post_fingerprint: Digest,
    /// Store image from before execution, kept for rollback.
    pub undo_store: Store,
}

/// The single execution entry point shared by cells and replay: identical
/// (state, tx) inputs yield identical outputs everywhere.
pub fn execute_on_state(
    logic: &dyn ContractLogic,
    state: &mut ContractState,
    env: &Envelope,
    cycle: u64,
) -> ExecRecord {
    let pre_store = state.store.clone();
    let ctx = ExecContext {
        sender: env.payload.sender,
        contract_id: state.contract_id,
        cycle,
    };
    match logic.execute(&ctx, &mut state.store, &env.payload.opcode, &env.payload.data) {
        Ok(output) => ExecRecord {
            outcome: ExecOutcome::Applied,
            result: output.result,
            effects: output.effects,
            post_fingerprint: state.fingerprint(),
            undo_store: pre_store,
        },
        Err(err) => {
            state.store = pre_store.clone();
            ExecRecord {
                outcome: ExecOutcome::Rejected(err),
                result: BTreeMap::new(),
                effects: Vec::new(),
                post_fingerprint: state.fingerprint(),
                undo_store: pre_store,
            }
        }
    }
}

/// Errors from the sequential runtime host.
#[derive(Debug, thiserror::Error)]
pub enum RuntimeError {
    #[error("unknown contract {0}")]
    UnknownContract(Address),
    #[error("effect references unknown code_ref")]
    UnknownCodeRef,
    #[error("effect registers an existing contract {0}")]
    AlreadyRegistered(Address),
}

/// One registered contract in the sequential runtime.
pub struct RuntimeSlot {
    pub descriptor: ContractDescriptor,
    pub state: ContractState,
    pub logic: Arc<dyn ContractLogic>,
}

/// Sequential contract host used for genesis construction, audits, and
/// deterministic replay.
pub struct ContractRuntime {
    contracts: BTreeMap<Address, RuntimeSlot>,
    clone_counter: u64,
}

impl ContractRuntime {
    /// Builds the genesis contract set: the deployer and CAS system
    /// bContracts plus the FastMoney instance with its minted allocations.
    pub fn genesis(config: &DeploymentConfig) -> Self {
        let mut contracts = BTreeMap::new();
        for (descriptor, state) in genesis_contracts(config) {
            let logic = builtin_logic(&descriptor.code_ref).expect("genesis logic is builtin");
            contracts.insert(
                descriptor.contract_id,
                RuntimeSlot {
                    descriptor,
                    state,
                    logic,
                },
            );
        }
        Self {
            contracts,
            clone_counter: 0,
        }
    }

    /// Rebuilds a runtime from archived stores (auditor replay seed).
    pub fn from_stores(
        config: &DeploymentConfig,
        stores: &BTreeMap<Address, Store>,
    ) -> Result<Self, RuntimeError> {
        let mut runtime = Self::genesis(config);
        runtime.contracts.retain(|id, _| stores.contains_key(id));
        for (id, store) in stores {
            match runtime.contracts.get_mut(id) {
                Some(slot) => slot.state.store = store.clone(),
                None => {
                    // Community contract deployed after genesis: its
                    // descriptor lives in the deployer's archived store.
                    let descriptor = descriptor_from_registry(stores, id)
                        .ok_or(RuntimeError::UnknownContract(*id))?;
                    let logic =
                        builtin_logic(&descriptor.code_ref).ok_or(RuntimeError::UnknownCodeRef)?;
                    runtime.contracts.insert(
                        *id,
                        RuntimeSlot {
                            descriptor,
                            state: ContractState::new(*id, store.clone()),
                            logic,
                        },
                    );
                }
            }
        }
        Ok(runtime)
    }

    pub fn contract_ids(&self) -> Vec<Address> {
        self.contracts.keys().copied().collect()
    }

    pub fn get(&self, id: &Address) -> Option<&RuntimeSlot> {
        self.contracts.get(id)
    }

    pub fn get_mut(&mut self, id: &Address) -> Option<&mut RuntimeSlot> {
        self.contracts.get_mut(id)
    }

    /// Executes one transaction; effects apply immediately when the
    /// transaction lands as applied.
    pub fn execute_transaction(
        &mut self,
        env: &Envelope,
        cycle: u64,
    ) -> Result<ExecRecord, RuntimeError> {
        let recipient = env.payload.recipient;
        let slot = self
            .contracts
            .get_mut(&recipient)
            .ok_or(RuntimeError::UnknownContract(recipient))?;
        let record = execute_on_state(slot.logic.as_ref(), &mut slot.state, env, cycle);
        if record.outcome == ExecOutcome::Applied {
            self.apply_effects(&record.effects)?;
        }
        Ok(record)
    }

    pub fn apply_effects(&mut self, effects: &[RuntimeEffect]) -> Result<(), RuntimeError> {
        for effect in effects {
            match effect {
                RuntimeEffect::RegisterContract {
                    descriptor,
                    initial_store,
                } => {
                    if self.contracts.contains_key(&descriptor.contract_id) {
                        return Err(RuntimeError::AlreadyRegistered(descriptor.contract_id));
                    }
                    let logic =
                        builtin_logic(&descriptor.code_ref).ok_or(RuntimeError::UnknownCodeRef)?;
                    self.contracts.insert(
                        descriptor.contract_id,
                        RuntimeSlot {
                            descriptor: descriptor.clone(),
                            state: ContractState::new(descriptor.contract_id, initial_store.clone()),
                            logic,
                        },
                    );
                }
                RuntimeEffect::DestroyContract(id) => {
                    self.contracts.remove(id);
                }
            }
        }
        Ok(())
    }

    pub fn contract_clone(&mut self, id: &Address) -> Option<StateClone> {
        let slot = self.contracts.get(id)?;
        self.clone_counter += 1;
        Some(StateClone {
            clone_id: self.clone_counter,
            contract_id: *id,
            frozen_store: slot.state.store.clone(),
        })
    }

    pub fn contract_fingerprint(&self, id: &Address) -> Option<Digest> {
        self.contracts.get(id).map(|slot| slot.state.fingerprint())
    }

    /// Sorted (contract_id, fingerprint) pairs for non-excluded contracts.
    pub fn snapshot_entries(&self) -> Vec<(Address, Digest)> {
        self.contracts
            .iter()
            .filter(|(_, slot)| !slot.state.excluded_from_snapshot)
            .map(|(id, slot)| (*id, slot.state.fingerprint()))
            .collect()
    }

    pub fn stores(&self) -> BTreeMap<Address, Store> {
        self.contracts
            .iter()
            .map(|(id, slot)| (*id, slot.state.store.clone()))
            .collect()
    }

    /// Runs the deterministic per-contract boundary hooks (CAS purge).
    pub fn report_boundary(&mut self) {
        for slot in self.contracts.values_mut() {
            slot.logic.report_boundary(&mut slot.state.store);
        }
    }
}

/// Genesis descriptor/state pairs shared by every host.
pub fn genesis_contracts(config: &DeploymentConfig) -> Vec<(ContractDescriptor, ContractState)> {
    let deployer_descriptor = ContractDescriptor {
        contract_id: config.deployer_address,
        kind: ContractKind::System,
        owner: config.deployer_address,
        destroyable: false,
        code_ref: code_ref_of("deployer/1"),
    };
    let cas_descriptor = ContractDescriptor {
        contract_id: config.cas_address,
        kind: ContractKind::System,
        owner: config.deployer_address,
        destroyable: false,
        code_ref: code_ref_of("cas/1"),
    };
    let fastmoney_descriptor = ContractDescriptor {
        contract_id: config.fastmoney.contract_id,
        kind: ContractKind::Community,
        owner: config.fastmoney.contract_id,
        destroyable: false,
        code_ref: code_ref_of("fastmoney/1"),
    };

    let mut deployer_store = Store::new();
    for descriptor in [&deployer_descriptor, &cas_descriptor, &fastmoney_descriptor] {
        deployer_store.insert(
            deployer::registry_key(&descriptor.contract_id),
            descriptor.canonical_bytes(),
        );
    }

    let mut fastmoney_store = Store::new();
    for (account, amount) in &config.fastmoney.allocations {
        if *amount > 0 {
            fastmoney_store.insert(
                fastmoney::balance_key(account),
                amount.to_string().into_bytes(),
            );
        }
    }

    vec![
        (
            deployer_descriptor.clone(),
            ContractState::new(deployer_descriptor.contract_id, deployer_store),
        ),
        (
            cas_descriptor.clone(),
            ContractState::new(cas_descriptor.contract_id, Store::new()),
        ),
        (
            fastmoney_descriptor.clone(),
            ContractState::new(fastmoney_descriptor.contract_id, fastmoney_store),
        ),
    ]
}

fn descriptor_from_registry(
    stores: &BTreeMap<Address, Store>,
    id: &Address,
) -> Option<ContractDescriptor> {
    for store in stores.values() {
        if let Some(raw) = store.get(&deployer::registry_key(id)) {
            if let Ok(descriptor) =
                crate::protocol::from_canonical_str::<ContractDescriptor>(
                    std::str::from_utf8(raw).ok()?,
                )
            {
                return Some(descriptor);
            }
        }
    }
    None
}

/// Typed accessors for opcode-specific data maps.
pub(crate) mod args {
    use super::*;

    pub fn str_field<'a>(
        data: &'a BTreeMap<String, Value>,
        key: &str,
    ) -> Result<&'a str, ContractError> {
        data.get(key)
            .and_then(Value::as_str)
            .ok_or_else(|| ContractError::BadData(format!("missing string field '{key}'")))
    }

    pub fn u64_field(data: &BTreeMap<String, Value>, key: &str) -> Result<u64, ContractError> {
        data.get(key)
            .and_then(Value::as_u64)
            .ok_or_else(|| ContractError::BadData(format!("missing integer field '{key}'")))
    }

    pub fn address_field(
        data: &BTreeMap<String, Value>,
        key: &str,
    ) -> Result<Address, ContractError> {
        str_field(data, key)?
            .parse()
            .map_err(|_| ContractError::BadData(format!("field '{key}' is not an address")))
    }

    pub fn hex_field(data: &BTreeMap<String, Value>, key: &str) -> Result<Vec<u8>, ContractError> {
        hex::decode(str_field(data, key)?)
            .map_err(|_| ContractError::BadData(format!("field '{key}' is not hex")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::derived_address;
    use crate::protocol::{sign_envelope, KeyPair, Payload};
    use serde_json::json;

    pub(crate) fn test_config(allocs: &[(Address, u64)]) -> DeploymentConfig {
        let cells: Vec<Address> = (1u8..=2)
            .map(|i| KeyPair::from_secret_bytes(&[i; 32]).unwrap().address())
            .collect();
        let id = "00112233445566778899aabbccddeeff".to_string();
        DeploymentConfig {
            invariants: crate::timing::DeploymentInvariants {
                deployment_id: id.clone(),
                cell_addresses: cells,
                lambda: 60,
                t0: 0,
                delta_secs: 2.0,
                miss_threshold: 3,
            },
            anchor_address: derived_address(&id, "anchor"),
            deployer_address: derived_address(&id, "deployer"),
            cas_address: derived_address(&id, "cas"),
            fastmoney: crate::config::FastMoneyGenesis {
                contract_id: derived_address(&id, "fastmoney"),
                allocations: allocs.iter().copied().collect(),
            },
            skew_secs: 300,
            snapshot_retention: 3,
            subscriptions: Default::default(),
            peers: BTreeMap::new(),
            anchor_url: "http://127.0.0.1:0".into(),
            fault_hooks: false,
            report_stage_hold_ms: 0,
        }
    }

    fn key(tag: u8) -> KeyPair {
        KeyPair::from_secret_bytes(&[tag; 32]).unwrap()
    }

    fn transfer_env(config: &DeploymentConfig, from: &KeyPair, to: Address, amount: u64) -> Envelope {
        let mut data = BTreeMap::new();
        data.insert("action".to_string(), json!("transfer"));
        data.insert("to".to_string(), json!(to.to_string()));
        data.insert("amount".to_string(), json!(amount));
        let payload = Payload::new(
            from.address(),
            config.fastmoney.contract_id,
            Opcode::TxCommit,
            0,
            data,
        );
        sign_envelope(payload, from).unwrap()
    }

    #[test]
    fn empty_store_fingerprint_is_empty_map_hash() {
        // Pinned via the independent oracle: keccak("{}").
        assert_eq!(
            store_fingerprint(&Store::new()).to_string(),
            "b48d38f93eaa084033fc5970bf96e559c33c4cdc07d889ab00b4d63f9590739d"
        );
    }

    #[test]
    fn store_fingerprint_value_sensitivity() {
        let mut a = Store::new();
        a.insert("k".into(), b"1".to_vec());
        let mut b = a.clone();
        assert_eq!(store_fingerprint(&a), store_fingerprint(&b));
        b.insert("k".into(), b"2".to_vec());
        assert_ne!(store_fingerprint(&a), store_fingerprint(&b));
    }

    #[test]
    fn clone_is_frozen() {
        let alice = key(3);
        let config = test_config(&[(alice.address(), 10)]);
        let mut runtime = ContractRuntime::genesis(&config);
        let fm = config.fastmoney.contract_id;
        let before = runtime.contract_fingerprint(&fm).unwrap();
        let clone1 = runtime.contract_clone(&fm).unwrap();
        let clone2 = runtime.contract_clone(&fm).unwrap();
        assert!(clone2.clone_id > clone1.clone_id);
        assert_eq!(clone1.frozen_store, clone2.frozen_store);
        assert_eq!(clone1.fingerprint(), before);

        let env = transfer_env(&config, &alice, key(4).address(), 5);
        runtime.execute_transaction(&env, 0).unwrap();
        assert_eq!(clone1.fingerprint(), before);
        assert_ne!(runtime.contract_fingerprint(&fm).unwrap(), before);
    }

    #[test]
    fn identical_histories_identical_stores() {
        let alice = key(3);
        let bob = key(4);
        let config = test_config(&[(alice.address(), 100)]);
        let envs: Vec<Envelope> = (1..=5u64)
            .map(|i| transfer_env(&config, &alice, bob.address(), i))
            .collect();

        let mut left = ContractRuntime::genesis(&config);
        let mut right = ContractRuntime::genesis(&config);
        for env in &envs {
            left.execute_transaction(env, 0).unwrap();
            right.execute_transaction(env, 0).unwrap();
        }
        assert_eq!(left.stores(), right.stores());
        assert_eq!(left.snapshot_entries(), right.snapshot_entries());
        let fm = config.fastmoney.contract_id;
        assert_eq!(
            store_canonical_string(&left.get(&fm).unwrap().state.store),
            store_canonical_string(&right.get(&fm).unwrap().state.store),
        );
    }

    #[test]
    fn unknown_contract_rejected() {
        let alice = key(3);
        let config = test_config(&[(alice.address(), 10)]);
        let mut runtime = ContractRuntime::genesis(&config);
        let mut env = transfer_env(&config, &alice, key(4).address(), 1);
        env.payload.recipient = key(9).address();
        let env = sign_envelope(env.payload, &alice).unwrap();
        assert!(matches!(
            runtime.execute_transaction(&env, 0),
            Err(RuntimeError::UnknownContract(_))
        ));
    }

    #[test]
    fn snapshot_entries_sorted_and_filter_excluded() {
        let config = test_config(&[]);
        let mut runtime = ContractRuntime::genesis(&config);
        let entries = runtime.snapshot_entries();
        assert_eq!(entries.len(), 3);
        assert!(entries.windows(2).all(|w| w[0].0 < w[1].0));

        runtime
            .get_mut(&config.cas_address)
            .unwrap()
            .state
            .excluded_from_snapshot = true;
        assert_eq!(runtime.snapshot_entries().len(), 2);
    }
}
