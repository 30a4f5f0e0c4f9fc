//! Analytical scalability estimators and the anchor fee schedule.
//!
//! Five closed-form estimators over a deployment profile: cumulative
//! transaction delay, communication overhead, replicated storage footprint,
//! compute load, and the per-day anchor gas cost as a function of the report
//! period. Everything is exactly linear in its stated variables; fees are
//! independent of load.

use serde::{Deserialize, Serialize};

use crate::error::CostError;

/// Inputs to the estimators. Per-transaction quantities are uniform; per-cell
/// quantities are lists indexed by cell (index 0 is the service cell).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CostParams {
    /// Number of successful transactions N.
    pub n_tx: u64,
    /// Consortium size M.
    pub n_cells: usize,
    /// Number of clients K.
    pub n_users: u64,
    /// Delay of sending a transaction to the service cell (seconds).
    pub d1: f64,
    /// Delay of sending the response back to the client (seconds).
    pub dc: f64,
    /// (forward delay D_i, response delay D_i*) for cells 2..=M.
    pub per_cell_delays: Vec<(f64, f64)>,
    /// Header bytes sent by a client.
    pub header_client: u64,
    /// Payload bytes sent by a client.
    pub payload_client: u64,
    /// (header, payload) bytes sent by cell i, indexed 1..=M.
    pub per_cell_sizes: Vec<(u64, u64)>,
    /// Storage footprint per transaction (bytes).
    pub footprint_per_tx: u64,
    /// Abstract compute units per transaction.
    pub compute_per_tx: u64,
    /// Gas charged per anchor report.
    pub gas_per_report: u64,
    /// Report period in seconds.
    pub report_period_secs: u64,
    /// Gas price in GWei.
    pub gas_price_gwei: f64,
    /// Token price in USD.
    pub token_price_usd: f64,
}

impl Default for CostParams {
    fn default() -> Self {
        Self {
            n_tx: 1000,
            n_cells: 2,
            n_users: 100,
            d1: 0.05,
            dc: 0.05,
            per_cell_delays: vec![(0.05, 0.05)],
            header_client: 400,
            payload_client: 700,
            per_cell_sizes: vec![(400, 700), (400, 700)],
            footprint_per_tx: 600,
            compute_per_tx: 1,
            gas_per_report: GAS_PER_REPORT,
            report_period_secs: 600,
            gas_price_gwei: 22.0,
            token_price_usd: 733.0,
        }
    }
}

pub use crate::anchor::GAS_PER_REPORT;

const SECONDS_PER_DAY: u64 = 86_400;

/// Outputs of the five estimators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostResult {
    pub l_delay_secs: f64,
    pub l_data_bytes: u64,
    pub l_storage_bytes: u64,
    pub l_compute_units: u64,
    pub l_fee_gas_per_day: u64,
    pub l_fee_usd_per_day: f64,
}

/// Cumulative transaction delay: N · (D_1 + max_i(D_i + D_i*) + D_c).
pub fn estimate_delay(p: &CostParams) -> Result<f64, CostError> {
    if p.n_tx == 0 {
        return Ok(0.0);
    }
    let worst_round_trip = if p.n_cells <= 1 {
        0.0
    } else {
        if p.per_cell_delays.is_empty() {
            return Err(CostError::EmptyDelays(p.n_cells));
        }
        p.per_cell_delays
            .iter()
            .map(|(d, d_star)| d + d_star)
            .fold(f64::MIN, f64::max)
    };
    Ok(p.n_tx as f64 * (p.d1 + worst_round_trip + p.dc))
}

/// Communication overhead in bytes:
/// N · [H_c + P_c + (M−1)·(H_1 + H_c + P_c) + Σ_{i=2..M}(H_i + P_i) + Σ_{i=1..M}(H_i + P_i)].
pub fn estimate_comm(p: &CostParams) -> Result<u64, CostError> {
    if p.n_tx == 0 {
        return Ok(0);
    }
    let m = p.n_cells;
    if p.per_cell_sizes.len() < m {
        return Err(CostError::SizeListTooShort {
            got: p.per_cell_sizes.len(),
            need: m,
        });
    }
    let (h1, _) = p.per_cell_sizes[0];
    let client_leg = p.header_client + p.payload_client;
    let forward_leg = (m as u64 - 1) * (h1 + p.header_client + p.payload_client);
    let confirm_leg: u64 = p.per_cell_sizes[1..m].iter().map(|(h, pl)| h + pl).sum();
    let reply_leg: u64 = p.per_cell_sizes[..m].iter().map(|(h, pl)| h + pl).sum();
    Ok(p.n_tx * (client_leg + forward_leg + confirm_leg + reply_leg))
}

/// Storage footprint: 3 · M · Σ U_i — every transaction is replicated across
/// all cells and appears in three retained snapshots.
pub fn estimate_storage(p: &CostParams) -> Result<u64, CostError> {
    Ok(3 * p.n_cells as u64 * p.n_tx * p.footprint_per_tx)
}

/// Compute load: K · Σ C_i + M · Σ C_i (auditors scale with users).
pub fn estimate_compute(p: &CostParams) -> Result<u64, CostError> {
    let total = p.n_tx * p.compute_per_tx;
    Ok(p.n_users * total + p.n_cells as u64 * total)
}

/// Per-day anchor fee for one cell at the given report period.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeeEstimate {
    pub reports_per_day: u64,
    pub gas_per_day: u64,
    pub usd_per_day: f64,
}

pub fn estimate_fees(
    report_period_secs: u64,
    gas_per_report: u64,
    gas_price_gwei: f64,
    token_price_usd: f64,
) -> Result<FeeEstimate, CostError> {
    if report_period_secs == 0 {
        return Err(CostError::NonPositivePeriod);
    }
    let reports_per_day = SECONDS_PER_DAY / report_period_secs;
    let gas_per_day = reports_per_day * gas_per_report;
    let usd_per_day = gas_per_day as f64 * gas_price_gwei * 1e-9 * token_price_usd;
    Ok(FeeEstimate {
        reports_per_day,
        gas_per_day,
        usd_per_day,
    })
}

/// Runs all five estimators.
pub fn estimate_all(p: &CostParams) -> Result<CostResult, CostError> {
    let fees = estimate_fees(
        p.report_period_secs,
        p.gas_per_report,
        p.gas_price_gwei,
        p.token_price_usd,
    )?;
    Ok(CostResult {
        l_delay_secs: estimate_delay(p)?,
        l_data_bytes: estimate_comm(p)?,
        l_storage_bytes: estimate_storage(p)?,
        l_compute_units: estimate_compute(p)?,
        l_fee_gas_per_day: fees.gas_per_day,
        l_fee_usd_per_day: fees.usd_per_day,
    })
}

/// The published fee schedule periods: 10 min, 30 min, 1 h, 8 h, 24 h.
pub const FEE_SCHEDULE_PERIODS: [u64; 5] = [600, 1_800, 3_600, 28_800, 86_400];

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn params(n_tx: u64, n_cells: usize) -> CostParams {
        CostParams {
            n_tx,
            n_cells,
            n_users: 10,
            d1: 1.0,
            dc: 1.0,
            per_cell_delays: vec![(1.0, 1.0); n_cells.saturating_sub(1).max(1)],
            header_client: 1,
            payload_client: 1,
            per_cell_sizes: vec![(1, 1); n_cells],
            footprint_per_tx: 100,
            compute_per_tx: 1,
            gas_per_report: GAS_PER_REPORT,
            report_period_secs: 600,
            gas_price_gwei: 22.0,
            token_price_usd: 733.0,
        }
    }

    #[test]
    fn delay_examples() {
        assert_eq!(estimate_delay(&params(0, 2)).unwrap(), 0.0);
        // N=1, D_1=D_c=1, one peer with (1,1): 1 + 2 + 1 = 4.
        assert_eq!(estimate_delay(&params(1, 2)).unwrap(), 4.0);

        // Mixed per-cell delays: the max round trip wins; evaluated
        // independently against a direct expression.
        let mut p = params(100, 4);
        p.per_cell_delays = vec![(0.5, 0.25), (2.0, 0.5), (1.0, 1.0)];
        let single = 1.0 + (2.0f64 + 0.5) + 1.0;
        assert!((estimate_delay(&p).unwrap() - 100.0 * single).abs() < 1e-9);
    }

    #[test]
    fn delay_requires_delays_for_multi_cell() {
        let mut p = params(1, 3);
        p.per_cell_delays.clear();
        assert_eq!(estimate_delay(&p).unwrap_err(), CostError::EmptyDelays(3));
    }

    #[test]
    fn comm_matches_hand_evaluation_at_m2() {
        // All header/payload sizes 1 byte, M=2:
        // (1+1) + 1·(1+1+1) + (1+1) + 2·(1+1) = 11 per transaction.
        let p = params(1, 2);
        assert_eq!(estimate_comm(&p).unwrap(), 11);
        assert_eq!(estimate_comm(&params(0, 2)).unwrap(), 0);
        assert_eq!(estimate_comm(&params(7, 2)).unwrap(), 77);
    }

    #[test]
    fn comm_rejects_short_size_list() {
        let mut p = params(1, 4);
        p.per_cell_sizes.truncate(2);
        assert_eq!(
            estimate_comm(&p).unwrap_err(),
            CostError::SizeListTooShort { got: 2, need: 4 }
        );
    }

    #[test]
    fn storage_examples() {
        assert_eq!(estimate_storage(&params(0, 2)).unwrap(), 0);
        assert_eq!(estimate_storage(&params(1, 2)).unwrap(), 600);
    }

    #[test]
    fn compute_examples() {
        let mut p = params(1, 1);
        p.n_users = 0;
        assert_eq!(estimate_compute(&p).unwrap(), 1);
        let mut p = params(5, 2);
        p.n_users = 10;
        assert_eq!(estimate_compute(&p).unwrap(), 60);
    }

    #[test]
    fn fee_schedule_reproduces_published_gas_values() {
        let expected = [
            (600u64, 7_083_792u64),
            (1_800, 2_361_264),
            (3_600, 1_180_632),
            (28_800, 147_579),
            (86_400, 49_193),
        ];
        for (period, gas) in expected {
            let fee = estimate_fees(period, GAS_PER_REPORT, 22.0, 733.0).unwrap();
            assert_eq!(fee.gas_per_day, gas, "period {period}");
        }
    }

    #[test]
    fn zero_period_rejected() {
        assert_eq!(
            estimate_fees(0, GAS_PER_REPORT, 22.0, 733.0).unwrap_err(),
            CostError::NonPositivePeriod
        );
    }

    proptest! {
        #[test]
        fn estimators_linear_in_n(n in 1u64..10_000, cells in 2usize..9) {
            let p1 = params(n, cells);
            let p2 = params(2 * n, cells);
            prop_assert!((estimate_delay(&p2).unwrap() - 2.0 * estimate_delay(&p1).unwrap()).abs() < 1e-6);
            prop_assert_eq!(estimate_comm(&p2).unwrap(), 2 * estimate_comm(&p1).unwrap());
            prop_assert_eq!(estimate_storage(&p2).unwrap(), 2 * estimate_storage(&p1).unwrap());
        }

        #[test]
        fn compute_linear_in_users_and_tx(n in 1u64..5_000, k in 1u64..500) {
            let mut p = params(n, 2);
            p.n_users = k;
            let base = estimate_compute(&p).unwrap();
            p.n_tx = 2 * n;
            let double_tx = estimate_compute(&p).unwrap();
            prop_assert_eq!(double_tx, 2 * base);

            // Only the auditor term scales with K.
            let mut p_users = params(n, 2);
            p_users.n_users = 2 * k;
            let doubled_users = estimate_compute(&p_users).unwrap();
            let expected = base + k * n * p_users.compute_per_tx;
            prop_assert_eq!(doubled_users, expected);
        }

        #[test]
        fn fees_independent_of_load(n in 0u64..100_000, k in 0u64..100_000) {
            let mut p = params(1, 2);
            p.n_tx = n;
            p.n_users = k;
            let fee = estimate_fees(p.report_period_secs, p.gas_per_report, 22.0, 733.0).unwrap();
            prop_assert_eq!(fee.gas_per_day, 144 * GAS_PER_REPORT);
        }
    }
}
