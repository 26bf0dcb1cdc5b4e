use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SPEED_OF_LIGHT: f64 = 3.0e8;

/// Link classes from the comparison of candidate backhauls.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinkPreset {
    /// 75 Mbps, 50 km.
    Wimax,
    /// 9.5 Mbps, 10 km.
    Uhf,
    /// 3.0 Mbps; range depends on the deployment and must be given.
    Plc,
}

impl LinkPreset {
    pub fn data_rate(self) -> f64 {
        match self {
            Self::Wimax => 75.0e6,
            Self::Uhf => 9.5e6,
            Self::Plc => 3.0e6,
        }
    }

    pub fn default_range(self) -> Option<f64> {
        match self {
            Self::Wimax => Some(50_000.0),
            Self::Uhf => Some(10_000.0),
            Self::Plc => None,
        }
    }
}

impl fmt::Display for LinkPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Wimax => "wimax",
            Self::Uhf => "uhf",
            Self::Plc => "plc",
        })
    }
}

impl FromStr for LinkPreset {
    type Err = LinkError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "wimax" => Ok(Self::Wimax),
            "uhf" => Ok(Self::Uhf),
            "plc" => Ok(Self::Plc),
            other => Err(LinkError::UnknownPreset(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinkError {
    #[error("unknown link preset `{0}` (expected wimax, uhf or plc)")]
    UnknownPreset(String),
    #[error("the plc preset has no default range; set range explicitly")]
    RangeRequired,
    #[error("data_rate must be positive and finite, got {0}")]
    DataRate(f64),
    #[error("range must be positive and finite, got {0}")]
    Range(f64),
    #[error("loss_prob must lie in [0, 1], got {0}")]
    LossProb(f64),
    #[error("propagation_speed must be positive and finite, got {0}")]
    Speed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkModel {
    /// Bits per second.
    pub data_rate: f64,
    /// Meters; stations farther than this hear nothing.
    pub range: f64,
    pub loss_prob: f64,
    /// Meters per second.
    pub propagation_speed: f64,
}

impl LinkModel {
    pub fn new(data_rate: f64, range: f64, loss_prob: f64) -> Result<Self, LinkError> {
        let m = Self {
            data_rate,
            range,
            loss_prob,
            propagation_speed: SPEED_OF_LIGHT,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn preset(preset: LinkPreset, range: Option<f64>, loss_prob: f64) -> Result<Self, LinkError> {
        let range = range.or(preset.default_range()).ok_or(LinkError::RangeRequired)?;
        Self::new(preset.data_rate(), range, loss_prob)
    }

    pub fn wimax() -> Self {
        Self::preset(LinkPreset::Wimax, None, 0.0).unwrap()
    }

    pub fn uhf() -> Self {
        Self::preset(LinkPreset::Uhf, None, 0.0).unwrap()
    }

    pub fn plc(range: f64) -> Result<Self, LinkError> {
        Self::preset(LinkPreset::Plc, Some(range), 0.0)
    }

    pub fn with_loss(mut self, loss_prob: f64) -> Result<Self, LinkError> {
        self.loss_prob = loss_prob;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), LinkError> {
        if !(self.data_rate.is_finite() && self.data_rate > 0.0) {
            return Err(LinkError::DataRate(self.data_rate));
        }
        if !(self.range.is_finite() && self.range > 0.0) {
            return Err(LinkError::Range(self.range));
        }
        if !(0.0..=1.0).contains(&self.loss_prob) {
            return Err(LinkError::LossProb(self.loss_prob));
        }
        if !(self.propagation_speed.is_finite() && self.propagation_speed > 0.0) {
            return Err(LinkError::Speed(self.propagation_speed));
        }
        Ok(())
    }

    /// Time to clock `len_bytes` onto the air.
    pub fn serialization_delay(&self, len_bytes: usize) -> f64 {
        (8 * len_bytes) as f64 / self.data_rate
    }

    pub fn propagation_delay(&self, distance: f64) -> f64 {
        distance / self.propagation_speed
    }

    /// One-way latency: serialization plus propagation.
    pub fn one_way_delay(&self, len_bytes: usize, distance: f64) -> f64 {
        self.serialization_delay(len_bytes) + self.propagation_delay(distance)
    }

    /// Poll plus reply for the largest frames, at full range.
    pub fn worst_case_round_trip(&self) -> f64 {
        2.0 * self.one_way_delay(crate::protocol::MAX_FRAME_LEN, self.range)
    }
}
