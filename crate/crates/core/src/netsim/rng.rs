//! SplitMix64, the generator behind every random choice in a simulation.
//!
//! Update rule, exactly:
//!
//! ```text
//! state  = state + 0x9E3779B97F4A7C15          (mod 2^64)
//! z      = state
//! z      = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9 (mod 2^64)
//! z      = (z ^ (z >> 27)) * 0x94D049BB133111EB (mod 2^64)
//! output = z ^ (z >> 31)
//! ```
//!
//! Uniform doubles in `[0, 1)` are `(output >> 11) * 2^-53`.

const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[inline]
fn to_unit(x: u64) -> f64 {
    (x >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GAMMA);
        mix64(self.state)
    }

    /// Uniform in `[0, 1)`.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        to_unit(self.next_u64())
    }

    /// Derives an independent generator, e.g. one per subsystem.
    pub fn fork(&mut self) -> SplitMix64 {
        SplitMix64::new(self.next_u64())
    }
}

/// The loss draw for transmission `tx_id` at the receiver with address
/// `receiver`: the first output of `SplitMix64::new(seed ^ (tx_id << 32 | receiver))`
/// as a uniform double.
///
/// Keying each draw by (transmission, receiver) makes the outcome at one
/// receiver independent of how many other receivers were evaluated.
#[inline]
pub fn keyed_uniform(seed: u64, tx_id: u64, receiver: u32) -> f64 {
    SplitMix64::new(seed ^ ((tx_id << 32) | u64::from(receiver))).next_f64()
}
