//! Deterministic discrete-event radio medium.
//!
//! Pieces: a seeded generator ([`SplitMix64`]), link parameters
//! ([`LinkModel`]), station layout ([`Placement`]), the broadcast medium
//! itself ([`Medium`]) and a future-event list ([`EventQueue`]). The
//! meter/head-end world built on top lives in [`crate::system`].

mod link;
mod medium;
mod placement;
mod queue;
mod rng;

pub use link::{LinkError, LinkModel, LinkPreset, SPEED_OF_LIGHT};
pub use medium::{Delivery, Medium, StationId};
pub use placement::{Placement, PlacementError, Position};
pub use queue::{EventKind, EventQueue, SimEvent};
pub use rng::{keyed_uniform, mix64, SplitMix64};
