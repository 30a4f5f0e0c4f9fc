//! FastMoney: the sample payment bContract delivering a decentralized
//! digital currency. Balances live in the store as decimal strings keyed by
//! account address; zero balances are pruned so the canonical image is unique.

use std::collections::BTreeMap;

use serde_json::{json, Value};

use crate::error::ContractError;
use crate::protocol::{Address, Opcode};

use super::{args, ContractLogic, ExecContext, ExecOutput, Store, TxClass};

pub struct FastMoney;

pub fn balance_key(account: &Address) -> String {
    format!("bal:{account}")
}

fn read_balance(store: &Store, account: &Address) -> u64 {
    store
        .get(&balance_key(account))
        .and_then(|raw| std::str::from_utf8(raw).ok())
        .and_then(|s| s.parse().ok())
        .unwrap_or(0)
}

fn write_balance(store: &mut Store, account: &Address, amount: u64) {
    let key = balance_key(account);
    if amount == 0 {
        store.remove(&key);
    } else {
        store.insert(key, amount.to_string().into_bytes());
    }
}

/// Sum of all balances; transfers must conserve this.
pub fn total_supply(store: &Store) -> u64 {
    store
        .iter()
        .filter(|(k, _)| k.starts_with("bal:"))
        .filter_map(|(_, v)| std::str::from_utf8(v).ok()?.parse::<u64>().ok())
        .sum()
}

impl ContractLogic for FastMoney {
    fn code_name(&self) -> &'static str {
        "fastmoney/1"
    }

    fn classify(&self, opcode: &Opcode, data: &BTreeMap<String, Value>) -> TxClass {
        match (opcode, data.get("action").and_then(Value::as_str)) {
            (Opcode::TxCommit, Some("balance")) => TxClass::Read,
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
        if *opcode != Opcode::TxCommit {
            return Err(ContractError::UnknownOpcode);
        }
        match args::str_field(data, "action")? {
            "transfer" => {
                let to = args::address_field(data, "to")?;
                let amount = args::u64_field(data, "amount")?;
                let from = ctx.sender;
                if amount > 0 {
                    let from_balance = read_balance(store, &from);
                    if from_balance < amount {
                        return Err(ContractError::RuleViolation(format!(
                            "insufficient balance: {from_balance} < {amount}"
                        )));
                    }
                    if from == to {
                        // Self-transfer moves nothing but is still a success.
                    } else {
                        let to_balance = read_balance(store, &to);
                        let to_new = to_balance.checked_add(amount).ok_or_else(|| {
                            ContractError::RuleViolation("recipient balance overflow".into())
                        })?;
                        write_balance(store, &from, from_balance - amount);
                        write_balance(store, &to, to_new);
                    }
                }
                let mut result = BTreeMap::new();
                result.insert("from".into(), json!(from.to_string()));
                result.insert("to".into(), json!(to.to_string()));
                result.insert("amount".into(), json!(amount));
                Ok(ExecOutput {
                    result,
                    effects: Vec::new(),
                })
            }
            "balance" => {
                let account = args::address_field(data, "account")?;
                let mut result = BTreeMap::new();
                result.insert("account".into(), json!(account.to_string()));
                result.insert("amount".into(), json!(read_balance(store, &account)));
                Ok(ExecOutput {
                    result,
                    effects: Vec::new(),
                })
            }
            _ => Err(ContractError::UnknownOpcode),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::KeyPair;
    use proptest::prelude::*;

    fn addr(tag: u8) -> Address {
        KeyPair::from_secret_bytes(&[tag; 32]).unwrap().address()
    }

    fn ctx(sender: Address) -> ExecContext {
        ExecContext {
            sender,
            contract_id: addr(99),
            cycle: 0,
        }
    }

    fn transfer_data(to: Address, amount: u64) -> BTreeMap<String, Value> {
        let mut data = BTreeMap::new();
        data.insert("action".into(), json!("transfer"));
        data.insert("to".into(), json!(to.to_string()));
        data.insert("amount".into(), json!(amount));
        data
    }

    #[test]
    fn ten_coin_transfer_moves_whole_balance() {
        let (alice, bob) = (addr(1), addr(2));
        let mut store = Store::new();
        write_balance(&mut store, &alice, 10);

        FastMoney
            .execute(&ctx(alice), &mut store, &Opcode::TxCommit, &transfer_data(bob, 10))
            .unwrap();
        assert_eq!(read_balance(&store, &alice), 0);
        assert_eq!(read_balance(&store, &bob), 10);
        // Emptied balance leaves no key behind.
        assert!(!store.contains_key(&balance_key(&alice)));
    }

    #[test]
    fn second_conflicting_transfer_rejected() {
        let (alice, bob, charlie) = (addr(1), addr(2), addr(3));
        let mut store = Store::new();
        write_balance(&mut store, &alice, 10);

        FastMoney
            .execute(&ctx(alice), &mut store, &Opcode::TxCommit, &transfer_data(bob, 10))
            .unwrap();
        let before = store.clone();
        let err = FastMoney
            .execute(
                &ctx(alice),
                &mut store,
                &Opcode::TxCommit,
                &transfer_data(charlie, 10),
            )
            .unwrap_err();
        assert!(matches!(err, ContractError::RuleViolation(_)));
        // The caller restores the store on rejection; the logic itself must
        // not have touched it before failing.
        assert_eq!(store, before);
    }

    #[test]
    fn zero_transfer_succeeds_unchanged() {
        let (alice, bob) = (addr(1), addr(2));
        let mut store = Store::new();
        write_balance(&mut store, &alice, 10);
        let before = store.clone();
        FastMoney
            .execute(&ctx(alice), &mut store, &Opcode::TxCommit, &transfer_data(bob, 0))
            .unwrap();
        assert_eq!(store, before);
    }

    #[test]
    fn balance_query_is_read_only() {
        let alice = addr(1);
        let mut data = BTreeMap::new();
        data.insert("action".into(), json!("balance"));
        data.insert("account".into(), json!(alice.to_string()));
        assert_eq!(FastMoney.classify(&Opcode::TxCommit, &data), TxClass::Read);
        assert_eq!(
            FastMoney.classify(&Opcode::TxCommit, &transfer_data(alice, 1)),
            TxClass::Write
        );
    }

    proptest! {
        #[test]
        fn conservation_under_random_transfers(
            transfers in proptest::collection::vec((0u8..4, 0u8..4, 0u64..40), 1..40)
        ) {
            let accounts: Vec<Address> = (1u8..=4).map(addr).collect();
            let mut store = Store::new();
            for account in &accounts {
                write_balance(&mut store, account, 25);
            }
            let initial = total_supply(&store);

            for (from_i, to_i, amount) in transfers {
                let from = accounts[from_i as usize];
                let to = accounts[to_i as usize];
                let pre = store.clone();
                let result = FastMoney.execute(
                    &ctx(from),
                    &mut store,
                    &Opcode::TxCommit,
                    &transfer_data(to, amount),
                );
                if result.is_err() {
                    store = pre;
                }
                prop_assert_eq!(total_supply(&store), initial);
                for account in &accounts {
                    // u64 balances cannot go negative by construction; the
                    // stored decimal must always parse back.
                    let _ = read_balance(&store, account);
                }
            }
        }
    }
}
