use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::rng::SplitMix64;
use crate::protocol::{BROADCAST, HEADEND_ADDRESS};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub const ORIGIN: Position = Position { x: 0.0, y: 0.0 };

    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Position) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlacementError {
    #[error("meter {0:#010x} is placed twice")]
    DuplicateAddress(u32),
    #[error("address {0:#010x} is reserved")]
    ReservedAddress(u32),
    #[error("position of {0} is not finite")]
    NonFinite(String),
    #[error("placement needs at least one meter")]
    Empty,
}

/// Where the head-end and every meter stand, in meters.
#[derive(Debug, Clone, PartialEq)]
pub struct Placement {
    pub headend: Position,
    pub meters: Vec<(u32, Position)>,
}

impl Placement {
    pub fn explicit(headend: Position, meters: Vec<(u32, Position)>) -> Result<Self, PlacementError> {
        let p = Self { headend, meters };
        p.validate()?;
        Ok(p)
    }

    /// `count` meters with addresses `first_address..`, on a square grid of
    /// pitch `spacing` centred on the head-end at the origin.
    pub fn grid(count: usize, spacing: f64, first_address: u32) -> Self {
        let side = (count as f64).sqrt().ceil().max(1.0) as usize;
        let offset = (side as f64 - 1.0) / 2.0;
        let meters = (0..count)
            .map(|i| {
                let (row, col) = (i / side, i % side);
                let pos = Position::new((col as f64 - offset) * spacing, (row as f64 - offset) * spacing);
                (first_address + i as u32, pos)
            })
            .collect();
        Self {
            headend: Position::ORIGIN,
            meters,
        }
    }

    /// `count` meters uniformly distributed over a disk of `radius` around
    /// the head-end at the origin.
    pub fn uniform_disk(count: usize, radius: f64, first_address: u32, rng: &mut SplitMix64) -> Self {
        let meters = (0..count)
            .map(|i| {
                let r = radius * rng.next_f64().sqrt();
                let theta = std::f64::consts::TAU * rng.next_f64();
                (
                    first_address + i as u32,
                    Position::new(r * theta.cos(), r * theta.sin()),
                )
            })
            .collect();
        Self {
            headend: Position::ORIGIN,
            meters,
        }
    }

    pub fn validate(&self) -> Result<(), PlacementError> {
        if self.meters.is_empty() {
            return Err(PlacementError::Empty);
        }
        if !self.headend.is_finite() {
            return Err(PlacementError::NonFinite("head-end".into()));
        }
        let mut seen = std::collections::HashSet::with_capacity(self.meters.len());
        for &(addr, pos) in &self.meters {
            if addr == HEADEND_ADDRESS || addr == BROADCAST {
                return Err(PlacementError::ReservedAddress(addr));
            }
            if !seen.insert(addr) {
                return Err(PlacementError::DuplicateAddress(addr));
            }
            if !pos.is_finite() {
                return Err(PlacementError::NonFinite(format!("meter {addr:#010x}")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_is_centred() {
        let p = Placement::grid(9, 10.0, 1);
        assert_eq!(p.meters.len(), 9);
        assert_eq!(p.meters[4], (5, Position::ORIGIN));
        assert_eq!(p.meters[0].1, Position::new(-10.0, -10.0));
        p.validate().unwrap();
    }

    #[test]
    fn disk_respects_radius() {
        let mut rng = SplitMix64::new(3);
        let p = Placement::uniform_disk(1000, 500.0, 1, &mut rng);
        assert!(p.meters.iter().all(|(_, q)| q.distance(&Position::ORIGIN) <= 500.0));
    }

    #[test]
    fn rejects_bad_layouts() {
        let o = Position::ORIGIN;
        assert_eq!(
            Placement::explicit(o, vec![(1, o), (1, o)]),
            Err(PlacementError::DuplicateAddress(1))
        );
        assert_eq!(
            Placement::explicit(o, vec![(0, o)]),
            Err(PlacementError::ReservedAddress(0))
        );
        assert!(Placement::explicit(o, vec![(2, Position::new(f64::NAN, 0.0))]).is_err());
        assert_eq!(Placement::explicit(o, vec![]), Err(PlacementError::Empty));
    }
}
