//! One simulated meter: a pulse counter fed by disk rotations, a
//! non-volatile copy of it, and the radio-side request handler.

mod trace;

use std::num::NonZeroU32;

use bitflags::bitflags;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::energy::Kwh;
use crate::protocol::{Frame, FrameType, ReadingPayload, BROADCAST};

pub use trace::{format_trace, parse_trace, TraceError};

pub const DEFAULT_METER_CONSTANT: u32 = 600;
pub const DEFAULT_PERSIST_INTERVAL: u32 = 1;

bitflags! {
    /// Status bits carried in every READING.
    #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
    #[serde(transparent)]
    pub struct StatusFlags: u8 {
        /// Terminal cover opened. Nothing in the simulation senses this;
        /// harnesses can set it with [`MeterNode::open_cover`].
        const TAMPER_COVER = 0x01;
        const TAMPER_REVERSE = 0x02;
        /// The non-volatile image was found ahead of the live register on
        /// restore, which only happens if it was corrupted.
        const NV_MISMATCH = 0x04;
    }
}

impl StatusFlags {
    pub fn tamper(self) -> StatusFlags {
        self & (StatusFlags::TAMPER_COVER | StatusFlags::TAMPER_REVERSE)
    }

    /// Flag names joined with `|`, or `-` when empty.
    pub fn describe(self) -> String {
        if self.is_empty() {
            return "-".to_string();
        }
        self.iter_names().map(|(n, _)| n).collect::<Vec<_>>().join("|")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Direction {
    Forward,
    Reverse,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseEvent {
    pub meter_address: u32,
    pub sim_time: f64,
    pub direction: Direction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Mode {
    Sleep,
    Awake,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MeterConfig {
    /// Pulses per kWh.
    pub meter_constant: NonZeroU32,
    /// Pulses between writes of the register to non-volatile memory.
    pub persist_interval: NonZeroU32,
}

impl Default for MeterConfig {
    fn default() -> Self {
        Self {
            meter_constant: NonZeroU32::new(DEFAULT_METER_CONSTANT).unwrap(),
            persist_interval: NonZeroU32::new(DEFAULT_PERSIST_INTERVAL).unwrap(),
        }
    }
}

impl MeterConfig {
    pub fn new(meter_constant: u32, persist_interval: u32) -> Result<Self, MeterError> {
        Ok(Self {
            meter_constant: NonZeroU32::new(meter_constant)
                .ok_or(MeterError::InvalidConfig("meter_constant must be > 0"))?,
            persist_interval: NonZeroU32::new(persist_interval)
                .ok_or(MeterError::InvalidConfig("persist_interval must be > 0"))?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MeterError {
    #[error("pulse for meter {event:#010x} delivered to meter {node:#010x}")]
    AddressMismatch { node: u32, event: u32 },
    #[error("invalid meter configuration: {0}")]
    InvalidConfig(&'static str),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MeterNode {
    address: u32,
    pulse_register: u32,
    nv_image: u32,
    pulses_since_persist: u32,
    config: MeterConfig,
    status_flags: StatusFlags,
    mode: Mode,
    last_seq_seen: u8,
    malformed_frames: u64,
}

impl MeterNode {
    pub fn new(address: u32, config: MeterConfig) -> Self {
        Self::with_register(address, config, 0)
    }

    /// A meter whose register and non-volatile image both hold `register`.
    pub fn with_register(address: u32, config: MeterConfig, register: u32) -> Self {
        Self {
            address,
            pulse_register: register,
            nv_image: register,
            pulses_since_persist: 0,
            config,
            status_flags: StatusFlags::empty(),
            mode: Mode::Sleep,
            last_seq_seen: 0,
            malformed_frames: 0,
        }
    }

    pub fn address(&self) -> u32 {
        self.address
    }

    pub fn pulse_register(&self) -> u32 {
        self.pulse_register
    }

    pub fn nv_image(&self) -> u32 {
        self.nv_image
    }

    pub fn config(&self) -> MeterConfig {
        self.config
    }

    pub fn status_flags(&self) -> StatusFlags {
        self.status_flags
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn last_seq_seen(&self) -> u8 {
        self.last_seq_seen
    }

    pub fn malformed_frames(&self) -> u64 {
        self.malformed_frames
    }

    /// Counts one disk rotation.
    ///
    /// Forward rotations advance the register modulo 2^32 and persist it
    /// every `persist_interval` pulses. Reverse rotations never move the
    /// register; they latch `TAMPER_REVERSE`.
    pub fn on_disk_pulse(&mut self, ev: &PulseEvent) -> Result<(), MeterError> {
        if ev.meter_address != self.address {
            return Err(MeterError::AddressMismatch {
                node: self.address,
                event: ev.meter_address,
            });
        }
        match ev.direction {
            Direction::Forward => {
                self.pulse_register = self.pulse_register.wrapping_add(1);
                self.pulses_since_persist += 1;
                if self.pulses_since_persist >= self.config.persist_interval.get() {
                    self.nv_image = self.pulse_register;
                    self.pulses_since_persist = 0;
                }
            }
            Direction::Reverse => self.status_flags |= StatusFlags::TAMPER_REVERSE,
        }
        Ok(())
    }

    pub fn register_kwh(&self) -> Kwh {
        Kwh::from_pulses(u64::from(self.pulse_register), self.config.meter_constant.get())
    }

    /// Loses power and restarts from the non-volatile image.
    ///
    /// Pulses counted since the last persist are gone; that loss is expected
    /// and not flagged.
    pub fn power_cycle(&mut self) {
        let ahead = self.nv_image.wrapping_sub(self.pulse_register);
        if ahead != 0 && ahead <= u32::MAX / 2 {
            self.status_flags |= StatusFlags::NV_MISMATCH;
        }
        self.pulse_register = self.nv_image;
        self.pulses_since_persist = 0;
        self.mode = Mode::Sleep;
    }

    /// Overwrites the non-volatile image, as a fault-injection hook.
    pub fn corrupt_nv_image(&mut self, value: u32) {
        self.nv_image = value;
    }

    pub fn open_cover(&mut self) {
        self.status_flags |= StatusFlags::TAMPER_COVER;
    }

    fn addressed_to_me(&self, f: &Frame) -> Result<bool, ()> {
        if f.dst != self.address && f.dst != BROADCAST {
            return Ok(false);
        }
        // Unicast polls need no payload inspection. Broadcast ones do.
        f.poll_target().map(|t| t == self.address).map_err(|_| ())
    }

    /// Answers a POLL meant for this meter with a READING; stays silent
    /// otherwise.
    ///
    /// A matching poll leaves the meter `Awake` until
    /// [`MeterNode::finish_send`] is called once the reply is on the air.
    pub fn handle_frame(&mut self, f: &Frame, sim_time: f64) -> Option<Frame> {
        if f.kind != FrameType::Poll {
            if f.dst == self.address && f.validate().is_err() {
                self.malformed_frames += 1;
            }
            return None;
        }
        match self.addressed_to_me(f) {
            Ok(true) => {}
            Ok(false) => return None,
            Err(()) => {
                self.malformed_frames += 1;
                return None;
            }
        }
        self.mode = Mode::Awake;
        self.last_seq_seen = f.seq;
        let body = ReadingPayload {
            register: self.pulse_register,
            timestamp: sim_time.max(0.0).floor().min(f64::from(u32::MAX)) as u32,
            status_flags: self.status_flags.bits(),
        };
        Some(Frame::reading(self.address, f.src, f.seq, body))
    }

    pub fn finish_send(&mut self) {
        self.mode = Mode::Sleep;
    }
}
