//! Content-addressable storage system bContract: blobs keyed by their
//! Keccak-256 digest with reference counting. Entries whose refcount has
//! dropped to zero stay readable until the next report-stage boundary, where
//! the purge hook removes them on every cell in the same instant.

use std::collections::BTreeMap;

use serde_json::{json, Value};

use crate::error::ContractError;
use crate::protocol::{fingerprint_bytes, Digest, Opcode};

use super::{args, ContractLogic, ExecContext, ExecOutput, Store, TxClass};

pub struct ContentStore;

pub fn blob_key(hash: &Digest) -> String {
    format!("blob:{hash}")
}

pub fn ref_key(hash: &Digest) -> String {
    format!("ref:{hash}")
}

fn read_refcount(store: &Store, hash: &Digest) -> Option<u64> {
    store
        .get(&ref_key(hash))
        .and_then(|raw| std::str::from_utf8(raw).ok())
        .and_then(|s| s.parse().ok())
}

fn write_refcount(store: &mut Store, hash: &Digest, count: u64) {
    store.insert(ref_key(hash), count.to_string().into_bytes());
}

impl ContractLogic for ContentStore {
    fn code_name(&self) -> &'static str {
        "cas/1"
    }

    fn classify(&self, opcode: &Opcode, _data: &BTreeMap<String, Value>) -> TxClass {
        match opcode {
            Opcode::CasGet => TxClass::Read,
            _ => TxClass::Write,
        }
    }

    fn execute(
        &self,
        _ctx: &ExecContext,
        store: &mut Store,
        opcode: &Opcode,
        data: &BTreeMap<String, Value>,
    ) -> Result<ExecOutput, ContractError> {
        match opcode {
            Opcode::CasPut => {
                let blob = args::hex_field(data, "blob")?;
                let hash = fingerprint_bytes(&blob);
                let refcount = match read_refcount(store, &hash) {
                    Some(count) => count + 1,
                    None => {
                        store.insert(blob_key(&hash), blob);
                        1
                    }
                };
                write_refcount(store, &hash, refcount);
                let mut result = BTreeMap::new();
                result.insert("hash".into(), json!(hash.to_string()));
                result.insert("refcount".into(), json!(refcount));
                Ok(ExecOutput {
                    result,
                    effects: Vec::new(),
                })
            }
            Opcode::CasGet => {
                let hash: Digest = args::str_field(data, "hash")?
                    .parse()
                    .map_err(|_| ContractError::BadData("hash is not a digest".into()))?;
                let blob = store.get(&blob_key(&hash)).ok_or(ContractError::NotFound)?;
                let mut result = BTreeMap::new();
                result.insert("blob".into(), json!(hex::encode(blob)));
                result.insert(
                    "refcount".into(),
                    json!(read_refcount(store, &hash).unwrap_or(0)),
                );
                Ok(ExecOutput {
                    result,
                    effects: Vec::new(),
                })
            }
            Opcode::TxCommit => {
                let action = args::str_field(data, "action")?;
                let hash: Digest = args::str_field(data, "hash")?
                    .parse()
                    .map_err(|_| ContractError::BadData("hash is not a digest".into()))?;
                let refcount = read_refcount(store, &hash).ok_or(ContractError::NotFound)?;
                let new_count = match action {
                    "addref" => refcount + 1,
                    "release" => refcount
                        .checked_sub(1)
                        .ok_or(ContractError::RefcountUnderflow)?,
                    _ => return Err(ContractError::UnknownOpcode),
                };
                write_refcount(store, &hash, new_count);
                let mut result = BTreeMap::new();
                result.insert("hash".into(), json!(hash.to_string()));
                result.insert("refcount".into(), json!(new_count));
                Ok(ExecOutput {
                    result,
                    effects: Vec::new(),
                })
            }
            _ => Err(ContractError::UnknownOpcode),
        }
    }

    fn report_boundary(&self, store: &mut Store) {
        let doomed: Vec<Digest> = store
            .iter()
            .filter(|(k, v)| k.starts_with("ref:") && v.as_slice() == b"0")
            .filter_map(|(k, _)| k.trim_start_matches("ref:").parse().ok())
            .collect();
        for hash in doomed {
            store.remove(&blob_key(&hash));
            store.remove(&ref_key(&hash));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::KeyPair;

    fn ctx() -> ExecContext {
        ExecContext {
            sender: KeyPair::from_secret_bytes(&[1; 32]).unwrap().address(),
            contract_id: KeyPair::from_secret_bytes(&[2; 32]).unwrap().address(),
            cycle: 0,
        }
    }

    fn put(store: &mut Store, blob: &[u8]) -> Digest {
        let mut data = BTreeMap::new();
        data.insert("blob".into(), json!(hex::encode(blob)));
        let out = ContentStore
            .execute(&ctx(), store, &Opcode::CasPut, &data)
            .unwrap();
        out.result["hash"].as_str().unwrap().parse().unwrap()
    }

    fn get(store: &mut Store, hash: &Digest) -> Result<Vec<u8>, ContractError> {
        let mut data = BTreeMap::new();
        data.insert("hash".into(), json!(hash.to_string()));
        let out = ContentStore.execute(&ctx(), store, &Opcode::CasGet, &data)?;
        Ok(hex::decode(out.result["blob"].as_str().unwrap()).unwrap())
    }

    fn refop(store: &mut Store, action: &str, hash: &Digest) -> Result<u64, ContractError> {
        let mut data = BTreeMap::new();
        data.insert("action".into(), json!(action));
        data.insert("hash".into(), json!(hash.to_string()));
        let out = ContentStore.execute(&ctx(), store, &Opcode::TxCommit, &data)?;
        Ok(out.result["refcount"].as_u64().unwrap())
    }

    #[test]
    fn put_get_round_trip() {
        let mut store = Store::new();
        let hash = put(&mut store, b"payload bytes");
        assert_eq!(hash, fingerprint_bytes(b"payload bytes"));
        assert_eq!(get(&mut store, &hash).unwrap(), b"payload bytes");
    }

    #[test]
    fn duplicate_put_bumps_refcount() {
        let mut store = Store::new();
        let first = put(&mut store, b"same blob");
        let second = put(&mut store, b"same blob");
        assert_eq!(first, second);
        assert_eq!(read_refcount(&store, &first), Some(2));
        // Only one blob copy stored.
        assert_eq!(store.keys().filter(|k| k.starts_with("blob:")).count(), 1);
    }

    #[test]
    fn release_then_boundary_purges() {
        let mut store = Store::new();
        let hash = put(&mut store, b"short lived");
        assert_eq!(refop(&mut store, "release", &hash).unwrap(), 0);
        // Still readable within the grace cycle.
        assert!(get(&mut store, &hash).is_ok());
        ContentStore.report_boundary(&mut store);
        assert!(matches!(get(&mut store, &hash), Err(ContractError::NotFound)));
        assert!(store.is_empty());
    }

    #[test]
    fn addref_keeps_entry_across_boundary() {
        let mut store = Store::new();
        let hash = put(&mut store, b"pinned");
        assert_eq!(refop(&mut store, "addref", &hash).unwrap(), 2);
        assert_eq!(refop(&mut store, "release", &hash).unwrap(), 1);
        ContentStore.report_boundary(&mut store);
        assert!(get(&mut store, &hash).is_ok());
    }

    #[test]
    fn underflow_and_missing_entry_errors() {
        let mut store = Store::new();
        let hash = put(&mut store, b"x");
        assert_eq!(refop(&mut store, "release", &hash).unwrap(), 0);
        assert!(matches!(
            refop(&mut store, "release", &hash),
            Err(ContractError::RefcountUnderflow)
        ));
        let missing = fingerprint_bytes(b"never stored");
        assert!(matches!(
            refop(&mut store, "addref", &missing),
            Err(ContractError::NotFound)
        ));
        assert!(matches!(get(&mut store, &missing), Err(ContractError::NotFound)));
    }
}
