use std::collections::HashMap;

use super::link::LinkModel;
use super::placement::{Placement, Position};
use super::rng::keyed_uniform;
use crate::protocol::HEADEND_ADDRESS;

/// A radio on the shared medium.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum StationId {
    Headend,
    /// Index into the placement's meter list.
    Meter(usize),
}

/// One scheduled arrival of a transmitted frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Delivery {
    pub tx_id: u64,
    pub from: StationId,
    pub to: StationId,
    /// When the sender started transmitting.
    pub sent: f64,
    /// When the last bit arrives at `to`.
    pub at: f64,
}

/// Broadcast radio medium with hard-disk range, per-receiver Bernoulli
/// loss and serialization plus propagation delay.
///
/// Loss for transmission `k` at a receiver is decided by
/// [`keyed_uniform`]`(seed, k, receiver address) < loss_prob`, so every
/// receiver's fate is fixed by the seed regardless of which other stations
/// are evaluated.
#[derive(Debug, Clone)]
pub struct Medium {
    link: LinkModel,
    seed: u64,
    headend: Position,
    meters: Vec<(u32, Position)>,
    by_address: HashMap<u32, usize>,
    next_tx: u64,
    transmissions: u64,
    drops: u64,
}

impl Medium {
    pub fn new(link: LinkModel, placement: &Placement, seed: u64) -> Self {
        let by_address = placement.meters.iter().enumerate().map(|(i, (a, _))| (*a, i)).collect();
        Self {
            link,
            seed,
            headend: placement.headend,
            meters: placement.meters.clone(),
            by_address,
            next_tx: 0,
            transmissions: 0,
            drops: 0,
        }
    }

    pub fn link(&self) -> &LinkModel {
        &self.link
    }

    pub fn set_loss_prob(&mut self, loss_prob: f64) -> Result<(), super::LinkError> {
        self.link = self.link.with_loss(loss_prob)?;
        Ok(())
    }

    pub fn station_count(&self) -> usize {
        self.meters.len() + 1
    }

    pub fn meter_index(&self, address: u32) -> Option<usize> {
        self.by_address.get(&address).copied()
    }

    pub fn address_of(&self, station: StationId) -> u32 {
        match station {
            StationId::Headend => HEADEND_ADDRESS,
            StationId::Meter(i) => self.meters[i].0,
        }
    }

    pub fn position(&self, station: StationId) -> Position {
        match station {
            StationId::Headend => self.headend,
            StationId::Meter(i) => self.meters[i].1,
        }
    }

    pub fn distance(&self, a: StationId, b: StationId) -> f64 {
        self.position(a).distance(&self.position(b))
    }

    pub fn in_range(&self, a: StationId, b: StationId) -> bool {
        self.distance(a, b) <= self.link.range
    }

    /// One-way latency of a `len_bytes` frame between two stations.
    pub fn delay(&self, from: StationId, to: StationId, len_bytes: usize) -> f64 {
        self.link.one_way_delay(len_bytes, self.distance(from, to))
    }

    /// Total frames put on the air and receptions dropped so far.
    pub fn counters(&self) -> (u64, u64) {
        (self.transmissions, self.drops)
    }

    fn stations(&self) -> impl Iterator<Item = StationId> + '_ {
        std::iter::once(StationId::Headend).chain((0..self.meters.len()).map(StationId::Meter))
    }

    /// Broadcasts a frame: every in-range station except the sender gets a
    /// delivery unless its loss draw drops it. Deliveries come back in
    /// station order (head-end first, then meters by index).
    pub fn transmit(&mut self, from: StationId, len_bytes: usize, at_time: f64) -> Vec<Delivery> {
        let candidates: Vec<StationId> = self.stations().filter(|s| *s != from).collect();
        self.transmit_to(from, len_bytes, at_time, candidates)
    }

    /// Same air semantics as [`Medium::transmit`], but only evaluates the
    /// listed receivers. Stations left out would have discarded the frame
    /// on address filtering, so their outcome does not matter; the
    /// outcomes at listed stations are identical to a full broadcast.
    pub fn transmit_to(
        &mut self,
        from: StationId,
        len_bytes: usize,
        at_time: f64,
        receivers: impl IntoIterator<Item = StationId>,
    ) -> Vec<Delivery> {
        let tx_id = self.next_tx;
        self.next_tx += 1;
        self.transmissions += 1;
        let ser = self.link.serialization_delay(len_bytes);
        let src = self.position(from);
        let mut out = Vec::new();
        for to in receivers {
            if to == from {
                continue;
            }
            let distance = src.distance(&self.position(to));
            if distance > self.link.range {
                continue;
            }
            let draw = keyed_uniform(self.seed, tx_id, self.address_of(to));
            if draw < self.link.loss_prob {
                self.drops += 1;
                continue;
            }
            out.push(Delivery {
                tx_id,
                from,
                to,
                sent: at_time,
                at: at_time + (ser + self.link.propagation_delay(distance)),
            });
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(n: usize, spacing: f64) -> Placement {
        Placement::explicit(
            Position::ORIGIN,
            (0..n)
                .map(|i| (i as u32 + 1, Position::new((i as f64 + 1.0) * spacing, 0.0)))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn poll_serialization_at_zero_distance() {
        let p = Placement::explicit(Position::ORIGIN, vec![(1, Position::ORIGIN)]).unwrap();
        let mut m = Medium::new(LinkModel::wimax(), &p, 1);
        let d = m.transmit(StationId::Headend, 15, 0.0);
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].at, 120.0 / 75e6);
    }

    #[test]
    fn lossless_reaches_everyone_in_range_once() {
        let p = line(10, 1_000.0);
        let link = LinkModel::new(1e6, 5_500.0, 0.0).unwrap();
        let mut m = Medium::new(link, &p, 7);
        let d = m.transmit(StationId::Headend, 20, 1.0);
        let got: Vec<StationId> = d.iter().map(|x| x.to).collect();
        assert_eq!(got, (0..5).map(StationId::Meter).collect::<Vec<_>>());
        // From a meter, the head-end and other meters all hear it.
        let d = m.transmit(StationId::Meter(0), 20, 2.0);
        assert!(d.iter().any(|x| x.to == StationId::Headend));
        assert!(d.iter().all(|x| x.to != StationId::Meter(0)));
        assert!(d.iter().all(|x| x.at > x.sent));
    }

    #[test]
    fn total_loss_delivers_nothing() {
        let p = line(10, 10.0);
        let link = LinkModel::wimax().with_loss(1.0).unwrap();
        let mut m = Medium::new(link, &p, 7);
        assert!(m.transmit(StationId::Headend, 15, 0.0).is_empty());
        assert_eq!(m.counters(), (1, 10));
    }

    #[test]
    fn symmetric_delay() {
        let p = line(3, 1234.5);
        let m = Medium::new(LinkModel::uhf(), &p, 0);
        let (a, b) = (StationId::Headend, StationId::Meter(2));
        assert_eq!(m.delay(a, b, 24), m.delay(b, a, 24));
    }

    #[test]
    fn addressed_matches_broadcast_outcomes() {
        let p = line(50, 10.0);
        let link = LinkModel::wimax().with_loss(0.5).unwrap();
        let mut full = Medium::new(link, &p, 99);
        let mut addressed = Medium::new(link, &p, 99);
        for k in 0..200 {
            let target = StationId::Meter(k % 50);
            let a = full.transmit(StationId::Headend, 19, k as f64);
            let b = addressed.transmit_to(StationId::Headend, 19, k as f64, [target]);
            let a_target: Vec<_> = a.into_iter().filter(|d| d.to == target).collect();
            assert_eq!(a_target, b);
        }
    }
}
