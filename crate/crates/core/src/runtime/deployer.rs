//! The community-bContract deployer system contract. Its store is the
//! registry of record: one canonical descriptor per deployed contract, so the
//! registry itself is fingerprinted and audited like any other data model.

use std::collections::BTreeMap;

use serde_json::{json, Value};

use crate::error::ContractError;
use crate::protocol::{from_canonical_str, Address, Opcode};

use super::{
    args, deployable_code_refs, ContractDescriptor, ContractKind, ContractLogic, ExecContext,
    ExecOutput, RuntimeEffect, Store, TxClass,
};

pub struct Deployer;

pub fn registry_key(contract_id: &Address) -> String {
    format!("contract:{contract_id}")
}

fn read_descriptor(store: &Store, contract_id: &Address) -> Option<ContractDescriptor> {
    let raw = store.get(&registry_key(contract_id))?;
    from_canonical_str(std::str::from_utf8(raw).ok()?).ok()
}

impl ContractLogic for Deployer {
    fn code_name(&self) -> &'static str {
        "deployer/1"
    }

    fn classify(&self, opcode: &Opcode, data: &BTreeMap<String, Value>) -> TxClass {
        match (opcode, data.get("action").and_then(Value::as_str)) {
            (Opcode::TxCommit, Some("describe")) => TxClass::Read,
            _ => TxClass::Write,
        }
    }

    fn execute(
        &self,
        ctx: &ExecContext,
        store: &mut Store,
        opcode: &Opcode,
        data: &BTreeMap<String, Value>,
    ) -> Result<ExecOutput, ContractError> {
        match opcode {
            Opcode::Deploy => {
                let descriptor_value = data
                    .get("descriptor")
                    .ok_or_else(|| ContractError::BadData("missing descriptor".into()))?;
                let descriptor: ContractDescriptor =
                    serde_json::from_value(descriptor_value.clone())
                        .map_err(|e| ContractError::BadData(format!("bad descriptor: {e}")))?;
                if descriptor.kind != ContractKind::Community {
                    return Err(ContractError::RuleViolation(
                        "only community contracts can be deployed".into(),
                    ));
                }
                if !deployable_code_refs().contains(&descriptor.code_ref) {
                    return Err(ContractError::UnknownCodeRef);
                }
                if store.contains_key(&registry_key(&descriptor.contract_id)) {
                    return Err(ContractError::DuplicateContract);
                }
                let initial_store = match data.get("initial_store") {
                    Some(value) => {
                        let encoded: BTreeMap<String, String> =
                            serde_json::from_value(value.clone()).map_err(|e| {
                                ContractError::BadData(format!("bad initial_store: {e}"))
                            })?;
                        encoded
                            .into_iter()
                            .map(|(k, v)| {
                                Ok((
                                    k,
                                    hex::decode(&v).map_err(|_| {
                                        ContractError::BadData(
                                            "initial_store values must be hex".into(),
                                        )
                                    })?,
                                ))
                            })
                            .collect::<Result<Store, ContractError>>()?
                    }
                    None => Store::new(),
                };
                store.insert(
                    registry_key(&descriptor.contract_id),
                    descriptor.canonical_bytes(),
                );
                let mut result = BTreeMap::new();
                result.insert(
                    "contract_id".into(),
                    json!(descriptor.contract_id.to_string()),
                );
                Ok(ExecOutput {
                    result,
                    effects: vec![RuntimeEffect::RegisterContract {
                        descriptor,
                        initial_store,
                    }],
                })
            }
            Opcode::TxCommit => match args::str_field(data, "action")? {
                "destroy" => {
                    let contract_id = args::address_field(data, "contract_id")?;
                    let descriptor = read_descriptor(store, &contract_id)
                        .ok_or(ContractError::NotFound)?;
                    if !descriptor.destroyable {
                        return Err(ContractError::RuleViolation(
                            "contract is not destroyable".into(),
                        ));
                    }
                    if descriptor.owner != ctx.sender {
                        return Err(ContractError::RuleViolation(
                            "only the owner may destroy a contract".into(),
                        ));
                    }
                    store.remove(&registry_key(&contract_id));
                    let mut result = BTreeMap::new();
                    result.insert("contract_id".into(), json!(contract_id.to_string()));
                    Ok(ExecOutput {
                        result,
                        effects: vec![RuntimeEffect::DestroyContract(contract_id)],
                    })
                }
                "describe" => {
                    let contract_id = args::address_field(data, "contract_id")?;
                    let descriptor = read_descriptor(store, &contract_id)
                        .ok_or(ContractError::NotFound)?;
                    let mut result = BTreeMap::new();
                    result.insert(
                        "descriptor".into(),
                        serde_json::to_value(&descriptor)
                            .map_err(|e| ContractError::BadData(e.to_string()))?,
                    );
                    Ok(ExecOutput {
                        result,
                        effects: Vec::new(),
                    })
                }
                _ => Err(ContractError::UnknownOpcode),
            },
            _ => Err(ContractError::UnknownOpcode),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::{code_ref_of, ContractRuntime, ExecOutcome};
    use super::*;
    use crate::protocol::{sign_envelope, Envelope, KeyPair, Payload};
    use crate::runtime::tests::test_config;

    fn key(tag: u8) -> KeyPair {
        KeyPair::from_secret_bytes(&[tag; 32]).unwrap()
    }

    fn deploy_env(
        config: &crate::DeploymentConfig,
        owner: &KeyPair,
        contract_id: Address,
        destroyable: bool,
    ) -> Envelope {
        let descriptor = ContractDescriptor {
            contract_id,
            kind: ContractKind::Community,
            owner: owner.address(),
            destroyable,
            code_ref: code_ref_of("fastmoney/1"),
        };
        let mut data = BTreeMap::new();
        data.insert("descriptor".into(), serde_json::to_value(&descriptor).unwrap());
        let payload = Payload::new(
            owner.address(),
            config.deployer_address,
            Opcode::Deploy,
            0,
            data,
        );
        sign_envelope(payload, owner).unwrap()
    }

    #[test]
    fn deploy_registers_contract_for_next_snapshot() {
        let owner = key(7);
        let config = test_config(&[]);
        let mut runtime = ContractRuntime::genesis(&config);
        let new_id = key(8).address();

        let record = runtime
            .execute_transaction(&deploy_env(&config, &owner, new_id, true), 0)
            .unwrap();
        assert_eq!(record.outcome, ExecOutcome::Applied);
        assert!(runtime.get(&new_id).is_some());
        assert!(runtime.snapshot_entries().iter().any(|(id, _)| *id == new_id));
    }

    #[test]
    fn duplicate_deploy_rejected() {
        let owner = key(7);
        let config = test_config(&[]);
        let mut runtime = ContractRuntime::genesis(&config);
        let new_id = key(8).address();

        runtime
            .execute_transaction(&deploy_env(&config, &owner, new_id, true), 0)
            .unwrap();
        let record = runtime
            .execute_transaction(&deploy_env(&config, &owner, new_id, true), 0)
            .unwrap();
        assert_eq!(
            record.outcome,
            ExecOutcome::Rejected(ContractError::DuplicateContract)
        );
    }

    #[test]
    fn redeploying_genesis_id_rejected() {
        let owner = key(7);
        let config = test_config(&[]);
        let mut runtime = ContractRuntime::genesis(&config);
        let record = runtime
            .execute_transaction(
                &deploy_env(&config, &owner, config.fastmoney.contract_id, true),
                0,
            )
            .unwrap();
        assert_eq!(
            record.outcome,
            ExecOutcome::Rejected(ContractError::DuplicateContract)
        );
    }

    #[test]
    fn destroy_by_owner_removes_from_snapshots() {
        let owner = key(7);
        let config = test_config(&[]);
        let mut runtime = ContractRuntime::genesis(&config);
        let new_id = key(8).address();
        runtime
            .execute_transaction(&deploy_env(&config, &owner, new_id, true), 0)
            .unwrap();

        let mut data = BTreeMap::new();
        data.insert("action".into(), json!("destroy"));
        data.insert("contract_id".into(), json!(new_id.to_string()));
        let env = sign_envelope(
            Payload::new(owner.address(), config.deployer_address, Opcode::TxCommit, 0, data),
            &owner,
        )
        .unwrap();
        let record = runtime.execute_transaction(&env, 0).unwrap();
        assert_eq!(record.outcome, ExecOutcome::Applied);
        assert!(runtime.get(&new_id).is_none());
        assert!(!runtime.snapshot_entries().iter().any(|(id, _)| *id == new_id));
    }

    #[test]
    fn destroy_rules_enforced() {
        let owner = key(7);
        let stranger = key(9);
        let config = test_config(&[]);
        let mut runtime = ContractRuntime::genesis(&config);
        let sturdy = key(8).address();
        runtime
            .execute_transaction(&deploy_env(&config, &owner, sturdy, false), 0)
            .unwrap();

        let mut data = BTreeMap::new();
        data.insert("action".into(), json!("destroy"));
        data.insert("contract_id".into(), json!(sturdy.to_string()));

        // Not destroyable.
        let env = sign_envelope(
            Payload::new(owner.address(), config.deployer_address, Opcode::TxCommit, 0, data.clone()),
            &owner,
        )
        .unwrap();
        let record = runtime.execute_transaction(&env, 0).unwrap();
        assert!(matches!(record.outcome, ExecOutcome::Rejected(ContractError::RuleViolation(_))));

        // Destroyable but wrong sender.
        let fragile = key(10).address();
        runtime
            .execute_transaction(&deploy_env(&config, &owner, fragile, true), 0)
            .unwrap();
        data.insert("contract_id".into(), json!(fragile.to_string()));
        let env = sign_envelope(
            Payload::new(stranger.address(), config.deployer_address, Opcode::TxCommit, 0, data),
            &stranger,
        )
        .unwrap();
        let record = runtime.execute_transaction(&env, 0).unwrap();
        assert!(matches!(record.outcome, ExecOutcome::Rejected(ContractError::RuleViolation(_))));
        assert!(runtime.get(&fragile).is_some());
    }
}
