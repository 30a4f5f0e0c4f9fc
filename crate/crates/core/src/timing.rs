//! Report-cycle arithmetic: deadlines, cycle indices, and the
//! report-validity window.
//!
//! Report deadlines are the timestamps divisible by the report period λ.
//! Snapshot S_i is taken at the deadline with cycle index i and must reach
//! the anchor by the end of cycle i+1 to keep the cell valid during i+2.

use serde::{Deserialize, Serialize};

use crate::error::TimingError;
use crate::protocol::Address;

/// Parameters fixed for the lifetime of a deployment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeploymentInvariants {
    /// 128-bit deployment identifier, hex encoded.
    pub deployment_id: String,
    /// Ordered consortium cell addresses (size M).
    pub cell_addresses: Vec<Address>,
    /// Report period λ in seconds.
    pub lambda: u64,
    /// First report deadline t_0.
    pub t0: u64,
    /// Maximum transaction forwarding delay δ in seconds.
    pub delta_secs: f64,
    /// Consecutive deadline misses beyond which a cell is excluded.
    pub miss_threshold: u32,
}

impl DeploymentInvariants {
    pub fn validate(&self) -> Result<(), TimingError> {
        if self.lambda == 0 {
            return Err(TimingError::InvalidInvariants("lambda must be > 0".into()));
        }
        if self.t0 % self.lambda != 0 {
            return Err(TimingError::InvalidInvariants(format!(
                "t0 {} not divisible by lambda {}",
                self.t0, self.lambda
            )));
        }
        let m = self.cell_addresses.len();
        if !(2..=10).contains(&m) {
            return Err(TimingError::InvalidInvariants(format!(
                "consortium size {m} outside 2..=10"
            )));
        }
        let mut sorted = self.cell_addresses.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != m {
            return Err(TimingError::InvalidInvariants(
                "duplicate cell addresses".into(),
            ));
        }
        if self.deployment_id.len() != 32 || hex::decode(&self.deployment_id).is_err() {
            return Err(TimingError::InvalidInvariants(
                "deployment_id must be 32 hex chars (128 bits)".into(),
            ));
        }
        if !self.delta_secs.is_finite() || self.delta_secs <= 0.0 {
            return Err(TimingError::InvalidInvariants(
                "delta_secs must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn delta(&self) -> std::time::Duration {
        std::time::Duration::from_secs_f64(self.delta_secs)
    }

    pub fn is_member(&self, addr: &Address) -> bool {
        self.cell_addresses.contains(addr)
    }
}

/// Largest report deadline ≤ `t_c` (the most recent multiple of λ).
pub fn last_deadline(t_c: u64, inv: &DeploymentInvariants) -> Result<u64, TimingError> {
    if t_c < inv.t0 {
        return Err(TimingError::BeforeGenesis {
            timestamp: t_c,
            t0: inv.t0,
        });
    }
    Ok(t_c - t_c % inv.lambda)
}

/// Next report deadline strictly after `t_c`.
pub fn next_deadline(t_c: u64, inv: &DeploymentInvariants) -> Result<u64, TimingError> {
    Ok(last_deadline(t_c, inv)? + inv.lambda)
}

/// Serial number of the snapshot taken at deadline `t_d`.
pub fn cycle_index(t_d: u64, inv: &DeploymentInvariants) -> Result<u64, TimingError> {
    if t_d < inv.t0 {
        return Err(TimingError::BeforeGenesis {
            timestamp: t_d,
            t0: inv.t0,
        });
    }
    if t_d % inv.lambda != 0 {
        return Err(TimingError::NotADeadline(t_d));
    }
    Ok((t_d - inv.t0) / inv.lambda)
}

/// Wall-clock timestamp of the deadline with the given cycle index.
pub fn deadline_of_cycle(cycle: u64, inv: &DeploymentInvariants) -> u64 {
    inv.t0 + cycle * inv.lambda
}

/// End of the report-validity window for snapshot `snapshot_cycle`: the end
/// of cycle i+1, boundary inclusive.
pub fn report_window_end(snapshot_cycle: u64, inv: &DeploymentInvariants) -> u64 {
    inv.t0 + (snapshot_cycle + 2) * inv.lambda
}

/// True when a report submitted at `submitted_at` keeps the cell valid
/// during cycle i+2.
pub fn report_is_timely(
    snapshot_cycle: u64,
    submitted_at: u64,
    inv: &DeploymentInvariants,
) -> bool {
    submitted_at <= report_window_end(snapshot_cycle, inv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::KeyPair;

    fn inv(lambda: u64, t0: u64) -> DeploymentInvariants {
        let cells = (1u8..=2)
            .map(|i| {
                let mut secret = [i; 32];
                secret[0] = i;
                KeyPair::from_secret_bytes(&secret).unwrap().address()
            })
            .collect();
        DeploymentInvariants {
            deployment_id: "00112233445566778899aabbccddeeff".into(),
            cell_addresses: cells,
            lambda,
            t0,
            delta_secs: 2.0,
            miss_threshold: 3,
        }
    }

    #[test]
    fn last_deadline_examples() {
        assert_eq!(last_deadline(125, &inv(60, 0)).unwrap(), 120);
        assert_eq!(last_deadline(120, &inv(60, 0)).unwrap(), 120);
        assert_eq!(last_deadline(3601, &inv(600, 0)).unwrap(), 3600);
    }

    #[test]
    fn next_deadline_examples() {
        assert_eq!(next_deadline(125, &inv(60, 0)).unwrap(), 180);
        assert_eq!(next_deadline(120, &inv(60, 0)).unwrap(), 180);
        assert_eq!(next_deadline(0, &inv(600, 0)).unwrap(), 600);
    }

    #[test]
    fn before_genesis_rejected() {
        assert!(matches!(
            last_deadline(50, &inv(60, 120)),
            Err(TimingError::BeforeGenesis { .. })
        ));
    }

    #[test]
    fn cycle_index_examples() {
        assert_eq!(cycle_index(0, &inv(60, 0)).unwrap(), 0);
        assert_eq!(cycle_index(120, &inv(60, 0)).unwrap(), 2);
        assert_eq!(cycle_index(3600, &inv(600, 600)).unwrap(), 5);
        assert!(matches!(
            cycle_index(121, &inv(60, 0)),
            Err(TimingError::NotADeadline(121))
        ));
    }

    #[test]
    fn report_window_boundary_inclusive() {
        let inv = inv(60, 0);
        assert!(report_is_timely(3, 299, &inv));
        assert!(report_is_timely(3, 300, &inv));
        assert!(!report_is_timely(3, 301, &inv));
    }

    #[test]
    fn invariant_validation() {
        assert!(inv(60, 0).validate().is_ok());
        let mut bad = inv(60, 90);
        assert!(bad.validate().is_err());
        bad = inv(0, 0);
        assert!(bad.validate().is_err());
        bad = inv(60, 0);
        bad.cell_addresses.truncate(1);
        assert!(bad.validate().is_err());
    }

    #[test]
    fn deadline_bracketing_property() {
        let inv = inv(60, 0);
        for t in [0u64, 1, 59, 60, 61, 119, 120, 3599, 98765] {
            let last = last_deadline(t, &inv).unwrap();
            let next = next_deadline(t, &inv).unwrap();
            assert!(last <= t && t < next);
            assert_eq!(next - last, inv.lambda);
            assert_eq!(
                cycle_index(next, &inv).unwrap(),
                cycle_index(last, &inv).unwrap() + 1
            );
        }
    }
}
