//! Ordered fan-out of head-end notifications to event-stream clients.
//!
//! Every notification gets the next id, starting at 1. A bounded backlog
//! lets reconnecting clients resume after the last id they saw. Publishing
//! and subscribing take the same lock, so a new subscriber sees each event
//! exactly once: either in its replay or on its live channel.

use std::collections::VecDeque;
use std::sync::{Arc, Mutex};

use amr_core::headend::Notification;
use serde::{Deserialize, Serialize};
use tokio::sync::broadcast;

/// One event as sent on the stream: its id plus the notification fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamEvent {
    pub id: u64,
    #[serde(flatten)]
    pub notification: Notification,
}

impl StreamEvent {
    /// The notification's `type` tag, used as the SSE event name.
    pub fn kind(&self) -> &'static str {
        match self.notification {
            Notification::Reading { .. } => "reading",
            Notification::Anomaly { .. } => "anomaly",
            Notification::SweepCompleted { .. } => "sweep_completed",
            Notification::Bill { .. } => "bill",
        }
    }
}

/// Backlog handed to a new subscriber.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Replay {
    /// Ids the client asked for that have aged out of the backlog.
    pub gap: Option<(u64, u64)>,
    /// The client's last id is ahead of this server, which means the server
    /// restarted. Replay then starts from the beginning.
    pub reset: bool,
    pub events: Vec<Arc<StreamEvent>>,
}

struct State {
    next: u64,
    backlog: VecDeque<Arc<StreamEvent>>,
}

pub struct Hub {
    state: Mutex<State>,
    tx: broadcast::Sender<Arc<StreamEvent>>,
    retain: usize,
}

pub const DEFAULT_RETAIN: usize = 100_000;

impl Default for Hub {
    fn default() -> Self {
        Self::new(DEFAULT_RETAIN)
    }
}

impl Hub {
    /// Keeps the last `retain` events for replay.
    pub fn new(retain: usize) -> Self {
        let (tx, _) = broadcast::channel(1024);
        Self {
            state: Mutex::new(State {
                next: 1,
                backlog: VecDeque::new(),
            }),
            tx,
            retain: retain.max(1),
        }
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn publish(&self, notification: Notification) -> u64 {
        let mut s = self.lock();
        let ev = Arc::new(StreamEvent {
            id: s.next,
            notification,
        });
        s.next += 1;
        if s.backlog.len() == self.retain {
            s.backlog.pop_front();
        }
        s.backlog.push_back(ev.clone());
        let _ = self.tx.send(ev.clone());
        ev.id
    }

    /// Id of the newest event, zero before the first.
    pub fn last_id(&self) -> u64 {
        self.lock().next - 1
    }

    fn replay_locked(s: &State, after: u64) -> Replay {
        let last = s.next - 1;
        let (after, reset) = if after > last { (0, true) } else { (after, false) };
        let oldest = s.backlog.front().map_or(s.next, |e| e.id);
        let gap = (after + 1 < oldest).then(|| (after + 1, oldest - 1));
        let skip = (after + 1).saturating_sub(oldest) as usize;
        Replay {
            gap,
            reset,
            events: s.backlog.iter().skip(skip).cloned().collect(),
        }
    }

    /// Events with id greater than `after`.
    pub fn replay(&self, after: u64) -> Replay {
        Self::replay_locked(&self.lock(), after)
    }

    /// Backlog after `after` plus a live channel for everything newer.
    pub fn subscribe(&self, after: u64) -> (Replay, broadcast::Receiver<Arc<StreamEvent>>) {
        let s = self.lock();
        let rx = self.tx.subscribe();
        (Self::replay_locked(&s, after), rx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use amr_core::headend::{AnomalyEvent, AnomalyKind};

    fn note(i: u32) -> Notification {
        Notification::Anomaly {
            anomaly: AnomalyEvent {
                address: i,
                kind: AnomalyKind::Unreachable,
                detail: String::new(),
                sim_time: f64::from(i),
            },
        }
    }

    fn ids(r: &Replay) -> Vec<u64> {
        r.events.iter().map(|e| e.id).collect()
    }

    #[test]
    fn ids_are_sequential_and_replay_resumes() {
        let hub = Hub::new(10);
        assert_eq!(hub.last_id(), 0);
        for i in 0..5 {
            assert_eq!(hub.publish(note(i)), u64::from(i) + 1);
        }
        assert_eq!(ids(&hub.replay(0)), [1, 2, 3, 4, 5]);
        assert_eq!(ids(&hub.replay(3)), [4, 5]);
        assert!(hub.replay(5).events.is_empty());
        assert_eq!(hub.replay(3).gap, None);
    }

    #[test]
    fn aged_out_ids_are_reported_as_a_gap() {
        let hub = Hub::new(3);
        for i in 0..6 {
            hub.publish(note(i));
        }
        let r = hub.replay(1);
        assert_eq!(r.gap, Some((2, 3)));
        assert_eq!(ids(&r), [4, 5, 6]);
        assert_eq!(hub.replay(3).gap, None);
    }

    #[test]
    fn ids_from_a_previous_run_reset_the_stream() {
        let hub = Hub::new(10);
        hub.publish(note(0));
        let r = hub.replay(40);
        assert!(r.reset);
        assert_eq!(ids(&r), [1]);
    }

    #[test]
    fn subscriber_sees_every_event_once() {
        let hub = Hub::new(100);
        hub.publish(note(0));
        let (r, mut rx) = hub.subscribe(0);
        hub.publish(note(1));
        assert_eq!(ids(&r), [1]);
        assert_eq!(rx.try_recv().unwrap().id, 2);
        assert!(rx.try_recv().is_err());
    }

    #[test]
    fn stream_event_json_is_flat() {
        let ev = StreamEvent {
            id: 7,
            notification: note(3),
        };
        let v: serde_json::Value = serde_json::to_value(&ev).unwrap();
        assert_eq!(v["id"], 7);
        assert_eq!(v["type"], "anomaly");
        assert_eq!(v["anomaly"]["address"], 3);
        let back: StreamEvent = serde_json::from_value(v).unwrap();
        assert_eq!(back, ev);
        assert_eq!(ev.kind(), "anomaly");
    }
}
