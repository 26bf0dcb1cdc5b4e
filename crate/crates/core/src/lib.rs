//! Automatic meter reading: a deterministic simulation of pulse-counting
//! meters polled over a shared radio link by a head-end that stores
//! readings, flags anomalies and bills consumption against slab tariffs.
//!
//! - [`meter`]: per-meter state machine and non-volatile register.
//! - [`protocol`]: frame layout, CRC-16 and the codec.
//! - [`netsim`]: event queue, seeded generator and radio medium.
//! - [`headend`]: serial poller, reading store, anomaly detection.
//! - [`billing`]: exact consumption and slab-tariff bills.
//! - [`system`]: all of the above wired into one event loop.
//! - [`scenario`]: TOML scenario files.

pub mod billing;
pub mod energy;
pub mod headend;
pub mod meter;
pub mod netsim;
pub mod protocol;
pub mod scenario;
pub mod system;

pub use energy::{Kwh, Money};
