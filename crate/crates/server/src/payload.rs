//! Request and response bodies of the HTTP API. The CLI prints these same
//! types in `--json` mode, so embedded and remote output match.

use amr_core::billing::Bill;
use amr_core::headend::{AnomalyEvent, MeterSummary, ReadingRecord, SweepReport};
use amr_core::scenario::ScenarioSummary;
use serde::{Deserialize, Serialize};

use crate::sim::Status;

/// `{"error": {...}}`, the body of every non-2xx response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: ErrorDetail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorDetail {
    /// Stable machine code such as `NOT_REGISTERED` or `UNREACHABLE`.
    pub code: String,
    pub message: String,
    pub correlation_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    /// `ok`, or `faulted` once a simulation step has failed.
    pub status: String,
    pub scenario: ScenarioSummary,
    #[serde(flatten)]
    pub state: Status,
    pub last_event_id: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetersResponse {
    pub meters: Vec<MeterSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReadResponse {
    pub record: ReadingRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryResponse {
    pub address: u32,
    pub records: Vec<ReadingRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomaliesResponse {
    pub anomalies: Vec<AnomalyEvent>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepRequest {
    /// Every registered meter when absent.
    #[serde(default)]
    pub addresses: Option<Vec<u32>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResponse {
    pub report: SweepReport,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BillRequest {
    pub t_start: f64,
    pub t_end: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BillResponse {
    pub bill: Bill,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BillsResponse {
    pub bills: Vec<Bill>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdvanceRequest {
    pub seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdvanceResponse {
    pub sim_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultRequest {
    /// `power_cycle`, `open_cover`, `reverse_pulse` or `corrupt_nv`.
    pub action: String,
    /// New non-volatile image, for `corrupt_nv` only.
    #[serde(default)]
    pub value: Option<u32>,
    /// Simulated seconds from now.
    #[serde(default)]
    pub delay: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultResponse {
    pub address: u32,
    pub action: String,
    pub fires_at: f64,
}
