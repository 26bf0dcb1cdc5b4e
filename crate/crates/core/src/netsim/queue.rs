use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Event classes, in tie-break priority order: at equal times timers run
/// first, then pulses, then frame deliveries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EventKind {
    Timer = 0,
    Pulse = 1,
    DeliverFrame = 2,
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Timer => "TIMER",
            Self::Pulse => "PULSE",
            Self::DeliverFrame => "DELIVER",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimEvent<P> {
    pub time: f64,
    pub kind: EventKind,
    /// Position in scheduling order; the final tie-breaker.
    pub insertion: u64,
    pub payload: P,
}

impl<P> SimEvent<P> {
    fn key(&self) -> (f64, EventKind, u64) {
        (self.time, self.kind, self.insertion)
    }
}

struct Entry<P>(SimEvent<P>);

impl<P> PartialEq for Entry<P> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl<P> Eq for Entry<P> {}

impl<P> PartialOrd for Entry<P> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<P> Ord for Entry<P> {
    // Reversed: BinaryHeap is a max-heap and we want the earliest first.
    fn cmp(&self, other: &Self) -> Ordering {
        let (ta, ka, ia) = self.0.key();
        let (tb, kb, ib) = other.0.key();
        tb.total_cmp(&ta).then(kb.cmp(&ka)).then(ib.cmp(&ia))
    }
}

/// Deterministic future-event list with a simulation clock.
pub struct EventQueue<P> {
    heap: BinaryHeap<Entry<P>>,
    next_insertion: u64,
    now: f64,
}

impl<P> Default for EventQueue<P> {
    fn default() -> Self {
        Self::new()
    }
}

impl<P> EventQueue<P> {
    pub fn new() -> Self {
        Self {
            heap: BinaryHeap::new(),
            next_insertion: 0,
            now: 0.0,
        }
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    /// Queues `payload` at `time`, returning its insertion number.
    ///
    /// # Panics
    ///
    /// If `time` is NaN or earlier than the clock: scheduling into the past
    /// is a harness bug.
    pub fn schedule(&mut self, time: f64, kind: EventKind, payload: P) -> u64 {
        assert!(
            time >= self.now,
            "event scheduled at {time} before current time {}",
            self.now
        );
        let insertion = self.next_insertion;
        self.next_insertion += 1;
        self.heap.push(Entry(SimEvent {
            time,
            kind,
            insertion,
            payload,
        }));
        insertion
    }

    pub fn peek_time(&self) -> Option<f64> {
        self.heap.peek().map(|e| e.0.time)
    }

    /// Removes the next event if it is due at or before `t_end`, advancing
    /// the clock to its time.
    pub fn pop_due(&mut self, t_end: f64) -> Option<SimEvent<P>> {
        if self.peek_time()? > t_end {
            return None;
        }
        let ev = self.heap.pop()?.0;
        self.now = ev.time;
        Some(ev)
    }

    /// Moves the clock forward with no events processed. Never moves it back.
    pub fn advance_to(&mut self, t: f64) {
        if t > self.now {
            self.now = t;
        }
    }
}
