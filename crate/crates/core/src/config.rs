//! Deployment configuration: the invariants every party shares plus the
//! mutable operational settings (peer URLs, subscription policy, genesis).
//!
//! One file is distributed to every cell, the anchor, and auditors.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::ConfigError;
use crate::protocol::{fingerprint_bytes, Address, DEFAULT_SKEW_SECS};
use crate::timing::DeploymentInvariants;

/// Initial FastMoney balances minted at genesis.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FastMoneyGenesis {
    pub contract_id: Address,
    #[serde(default)]
    pub allocations: BTreeMap<Address, u64>,
}

/// Which senders a cell serves on its commit endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubscriptionPolicy {
    /// When true every sender is treated as subscribed to every cell.
    #[serde(default)]
    pub open: bool,
    /// Per-cell allowlist of subscribed client addresses.
    #[serde(default)]
    pub allowlist: BTreeMap<Address, Vec<Address>>,
}

impl Default for SubscriptionPolicy {
    fn default() -> Self {
        Self {
            open: true,
            allowlist: BTreeMap::new(),
        }
    }
}

impl SubscriptionPolicy {
    pub fn is_subscribed(&self, cell: &Address, sender: &Address) -> bool {
        if self.open {
            return true;
        }
        self.allowlist
            .get(cell)
            .map(|list| list.contains(sender))
            .unwrap_or(false)
    }
}

/// The full deployment file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeploymentConfig {
    pub invariants: DeploymentInvariants,
    /// Address of the simulated public-chain contract.
    pub anchor_address: Address,
    /// Address of the community-contract deployer system bContract.
    pub deployer_address: Address,
    /// Address of the content-addressable storage system bContract.
    pub cas_address: Address,
    pub fastmoney: FastMoneyGenesis,
    /// Envelope timestamp freshness window in seconds.
    #[serde(default = "default_skew")]
    pub skew_secs: u64,
    /// Snapshots retained and served: the current plus N-1 previous cycles.
    #[serde(default = "default_retention")]
    pub snapshot_retention: u64,
    #[serde(default)]
    pub subscriptions: SubscriptionPolicy,
    /// Cell address → base URL. Mutable: cells may relocate.
    #[serde(default)]
    pub peers: BTreeMap<Address, String>,
    pub anchor_url: String,
    /// Enables the fault-injection endpoints on cells.
    #[serde(default)]
    pub fault_hooks: bool,
    /// Minimum milliseconds the report-stage execution barrier stays closed;
    /// widens the buffering window for stage-crossing tests.
    #[serde(default)]
    pub report_stage_hold_ms: u64,
}

fn default_skew() -> u64 {
    DEFAULT_SKEW_SECS
}

fn default_retention() -> u64 {
    3
}

impl DeploymentConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.invariants.validate()?;
        if self.snapshot_retention == 0 {
            return Err(ConfigError::Invalid("snapshot_retention must be > 0".into()));
        }
        let system = [self.deployer_address, self.cas_address];
        if system.contains(&self.fastmoney.contract_id) {
            return Err(ConfigError::Invalid(
                "fastmoney contract id collides with a system contract".into(),
            ));
        }
        if self.deployer_address == self.cas_address {
            return Err(ConfigError::Invalid(
                "deployer and cas addresses collide".into(),
            ));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        let config: Self = toml::from_str(&text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn save(&self, path: &Path) -> Result<(), ConfigError> {
        let text =
            toml::to_string_pretty(self).map_err(|e| ConfigError::Parse(e.to_string()))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn peer_url(&self, addr: &Address) -> Option<&String> {
        self.peers.get(addr)
    }
}

/// Deterministic well-known address derived from the deployment id, used for
/// the anchor contract and the system bContracts.
pub fn derived_address(deployment_id: &str, role: &str) -> Address {
    let digest = fingerprint_bytes(format!("{role}:{deployment_id}").as_bytes());
    Address::from_slice(&digest.as_bytes()[12..]).expect("20-byte slice")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::KeyPair;

    fn sample() -> DeploymentConfig {
        let cells: Vec<Address> = (1u8..=2)
            .map(|i| KeyPair::from_secret_bytes(&[i; 32]).unwrap().address())
            .collect();
        let id = "00112233445566778899aabbccddeeff".to_string();
        DeploymentConfig {
            invariants: DeploymentInvariants {
                deployment_id: id.clone(),
                cell_addresses: cells.clone(),
                lambda: 60,
                t0: 0,
                delta_secs: 2.0,
                miss_threshold: 3,
            },
            anchor_address: derived_address(&id, "anchor"),
            deployer_address: derived_address(&id, "deployer"),
            cas_address: derived_address(&id, "cas"),
            fastmoney: FastMoneyGenesis {
                contract_id: derived_address(&id, "fastmoney"),
                allocations: BTreeMap::new(),
            },
            skew_secs: 300,
            snapshot_retention: 3,
            subscriptions: SubscriptionPolicy::default(),
            peers: BTreeMap::new(),
            anchor_url: "http://127.0.0.1:0".into(),
            fault_hooks: false,
            report_stage_hold_ms: 0,
        }
    }

    #[test]
    fn toml_round_trip() {
        let config = sample();
        let text = toml::to_string_pretty(&config).unwrap();
        let back: DeploymentConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, config);
    }

    #[test]
    fn derived_addresses_are_distinct_and_stable() {
        let id = "00112233445566778899aabbccddeeff";
        assert_eq!(derived_address(id, "anchor"), derived_address(id, "anchor"));
        assert_ne!(derived_address(id, "anchor"), derived_address(id, "cas"));
        assert_ne!(derived_address(id, "cas"), derived_address(id, "deployer"));
    }

    #[test]
    fn allowlist_subscription() {
        let config = sample();
        let cell = config.invariants.cell_addresses[0];
        let client = KeyPair::from_secret_bytes(&[9; 32]).unwrap().address();
        let mut policy = SubscriptionPolicy {
            open: false,
            allowlist: BTreeMap::new(),
        };
        assert!(!policy.is_subscribed(&cell, &client));
        policy.allowlist.insert(cell, vec![client]);
        assert!(policy.is_subscribed(&cell, &client));
        let other = config.invariants.cell_addresses[1];
        assert!(!policy.is_subscribed(&other, &client));
    }

    #[test]
    fn validation_rejects_colliding_system_addresses() {
        let mut config = sample();
        config.cas_address = config.deployer_address;
        assert!(config.validate().is_err());
    }
}
