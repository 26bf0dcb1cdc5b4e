use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::energy::Kwh;
use crate::meter::StatusFlags;

/// Register deltas above this are read as the register having gone
/// backwards rather than forward through a wrap.
pub const WRAP_THRESHOLD: u32 = 1 << 31;

/// Signed pulse delta from `prev` to `curr` on a 32-bit wrapping register.
///
/// Forward movement of up to 2^31 pulses (including across the wrap) is
/// positive; anything larger is taken as a decrease.
pub fn wrap_delta(prev: u32, curr: u32) -> i64 {
    let d = curr.wrapping_sub(prev);
    if d > WRAP_THRESHOLD {
        i64::from(d) - (1i64 << 32)
    } else {
        i64::from(d)
    }
}

/// One meter reading as the head-end stored it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReadingRecord {
    pub address: u32,
    pub register: u32,
    pub meter_constant: u32,
    pub energy_kwh: Kwh,
    /// Head-end clock when the reply arrived.
    pub sim_time: f64,
    pub status_flags: StatusFlags,
    pub attempt_count: u32,
    pub seq: u8,
}

impl ReadingRecord {
    pub fn new(
        address: u32,
        register: u32,
        meter_constant: u32,
        sim_time: f64,
        status_flags: StatusFlags,
        attempt_count: u32,
        seq: u8,
    ) -> Self {
        Self {
            address,
            register,
            meter_constant,
            energy_kwh: Kwh::from_pulses(u64::from(register), meter_constant),
            sim_time,
            status_flags,
            attempt_count,
            seq,
        }
    }

    /// Recomputes `energy_kwh` from the register, which is authoritative.
    pub(crate) fn normalized(mut self) -> Result<Self, RecordError> {
        if self.meter_constant == 0 {
            return Err(RecordError::ZeroConstant(self.address));
        }
        if self.attempt_count == 0 {
            return Err(RecordError::ZeroAttempts(self.address));
        }
        self.energy_kwh = Kwh::from_pulses(u64::from(self.register), self.meter_constant);
        Ok(self)
    }

    /// `address,sim_time,register,energy_kwh,flags`
    pub fn csv_header() -> &'static str {
        "address,sim_time,register,energy_kwh,flags"
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RecordError {
    #[error("record for meter {0:#010x} has a zero meter constant")]
    ZeroConstant(u32),
    #[error("record for meter {0:#010x} has attempt_count 0")]
    ZeroAttempts(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AnomalyKind {
    ReadingDecreased,
    TamperFlagged,
    Unreachable,
}

impl fmt::Display for AnomalyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::ReadingDecreased => "READING_DECREASED",
            Self::TamperFlagged => "TAMPER_FLAGGED",
            Self::Unreachable => "UNREACHABLE",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyEvent {
    pub address: u32,
    pub kind: AnomalyKind,
    pub detail: String,
    pub sim_time: f64,
}

/// Compares a new reading with the previous one for the same meter.
pub fn detect_anomalies(prev: Option<&ReadingRecord>, curr: &ReadingRecord) -> Vec<AnomalyEvent> {
    let mut out = Vec::new();
    if let Some(p) = prev {
        let delta = wrap_delta(p.register, curr.register);
        if delta < 0 {
            out.push(AnomalyEvent {
                address: curr.address,
                kind: AnomalyKind::ReadingDecreased,
                detail: format!(
                    "register {:#010x} -> {:#010x} (delta {delta})",
                    p.register, curr.register
                ),
                sim_time: curr.sim_time,
            });
        }
    }
    let before = prev.map(|p| p.status_flags.tamper()).unwrap_or_default();
    let new_bits = curr.status_flags.tamper() - before;
    if !new_bits.is_empty() {
        out.push(AnomalyEvent {
            address: curr.address,
            kind: AnomalyKind::TamperFlagged,
            detail: format!("meter reports {}", new_bits.describe()),
            sim_time: curr.sim_time,
        });
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PollPolicy {
    /// Seconds to wait for a reply before retrying.
    pub timeout: f64,
    pub max_attempts: u32,
}

pub const DEFAULT_TIMEOUT: f64 = 0.050;
pub const DEFAULT_MAX_ATTEMPTS: u32 = 4;

impl Default for PollPolicy {
    fn default() -> Self {
        Self {
            timeout: DEFAULT_TIMEOUT,
            max_attempts: DEFAULT_MAX_ATTEMPTS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PolicyError {
    #[error("max_attempts must be at least 1")]
    NoAttempts,
    #[error("timeout {timeout} s does not exceed the worst-case round trip {round_trip} s")]
    TimeoutTooShort { timeout: f64, round_trip: f64 },
}

impl PollPolicy {
    pub fn new(timeout: f64, max_attempts: u32) -> Self {
        Self { timeout, max_attempts }
    }

    /// The timeout must outlast any reply the link can produce.
    pub fn validate(&self, worst_round_trip: f64) -> Result<(), PolicyError> {
        if self.max_attempts == 0 {
            return Err(PolicyError::NoAttempts);
        }
        if !(self.timeout.is_finite() && self.timeout > worst_round_trip) {
            return Err(PolicyError::TimeoutTooShort {
                timeout: self.timeout,
                round_trip: worst_round_trip,
            });
        }
        Ok(())
    }
}
