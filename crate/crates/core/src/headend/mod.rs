//! Head-end collection service: serial polling with timeout and retry,
//! the reading store and anomaly detection.
//!
//! [`HeadEnd`] is a passive state machine. The caller feeds it received
//! bytes and timer expiries and carries out the [`PollAction`]s it emits;
//! [`crate::system::System`] does that against the simulated medium.

mod poller;
mod record;
mod store;

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use poller::{JobId, PollAction, PollEvent, PollRequest, Poller, Stray, Transaction};
pub use record::{
    detect_anomalies, wrap_delta, AnomalyEvent, AnomalyKind, PolicyError, PollPolicy, ReadingRecord, RecordError,
    DEFAULT_MAX_ATTEMPTS, DEFAULT_TIMEOUT, WRAP_THRESHOLD,
};
pub use store::{Entry, Recorded, Store, StoreError, LOG_FILE, SNAPSHOT_FILE};

use crate::billing::{bill_period, Bill, BillingError, Tariff};
use crate::meter::StatusFlags;
use crate::protocol::{decode_datagram, DecodeErrorKind};

/// Registry entry for one meter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeterEntry {
    pub address: u32,
    pub meter_constant: u32,
    next_seq: u8,
    /// Outcome of the most recent poll, if any.
    pub reachable: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeterSummary {
    pub address: u32,
    pub meter_constant: u32,
    pub reachable: Option<bool>,
    pub last_reading: Option<ReadingRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub id: u64,
    pub requested: usize,
    pub read_count: usize,
    pub unreachable: Vec<u32>,
    /// Polls put on the air, retries included.
    pub attempts: u64,
    pub started_at: f64,
    pub finished_at: f64,
    /// Simulated seconds from the first poll to the last outcome.
    pub elapsed: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReadError {
    #[error("NOT_REGISTERED: meter {0:#010x} is not registered")]
    NotRegistered(u32),
    #[error("UNREACHABLE: meter {address:#010x} did not answer {attempts} attempts over {elapsed} s")]
    Unreachable { address: u32, attempts: u32, elapsed: f64 },
}

impl ReadError {
    pub fn code(&self) -> &'static str {
        match self {
            Self::NotRegistered(_) => "NOT_REGISTERED",
            Self::Unreachable { .. } => "UNREACHABLE",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SweepError {
    #[error("sweep address list is empty")]
    Empty,
    #[error("meter {0:#010x} appears twice in the sweep list")]
    Duplicate(u32),
    #[error("NOT_REGISTERED: meter {0:#010x} is not registered")]
    NotRegistered(u32),
}

#[derive(Debug, Error)]
pub enum BillRequestError {
    #[error(transparent)]
    Billing(#[from] BillingError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone, PartialEq)]
pub enum JobResult {
    Read(Result<ReadingRecord, ReadError>),
    Sweep(SweepReport),
}

enum JobState {
    Read(Option<Result<ReadingRecord, ReadError>>),
    Sweep { report: SweepReport, remaining: usize },
}

/// Pushed to event-stream subscribers, in the order things happened.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Notification {
    Reading { record: ReadingRecord },
    Anomaly { anomaly: AnomalyEvent },
    SweepCompleted { report: SweepReport },
    Bill { bill: Bill },
}

/// What happened while handling one input; the simulator logs these.
#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Read {
        record: ReadingRecord,
        /// From the first attempt going on the air to the reply arriving.
        round_trip: f64,
        anomalies: Vec<AnomalyEvent>,
    },
    Duplicate {
        address: u32,
        seq: u8,
    },
    Unreachable {
        address: u32,
        attempts: u32,
        elapsed: f64,
    },
    Retry {
        address: u32,
        attempt: u32,
    },
    SweepDone(SweepReport),
    Stray(Stray),
    DecodeFailed(DecodeErrorKind),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct HeadEndStats {
    pub transactions: u64,
    pub reads: u64,
    pub unreachable: u64,
    pub polls_sent: u64,
    pub timeouts: u64,
    pub duplicate_replies: u64,
    pub stray_frames: u64,
    pub decode_errors: BTreeMap<String, u64>,
}

pub struct HeadEnd {
    registry: HashMap<u32, MeterEntry>,
    poller: Poller,
    store: Store,
    jobs: HashMap<u64, JobState>,
    /// Jobs nobody will collect; dropped as soon as they finish.
    detached: std::collections::HashSet<u64>,
    next_job: u64,
    sweeps: Vec<SweepReport>,
    outbox: Option<Vec<Notification>>,
    stats: HeadEndStats,
}

impl HeadEnd {
    pub fn new(policy: PollPolicy, store: Store) -> Self {
        Self {
            registry: HashMap::new(),
            poller: Poller::new(policy),
            store,
            jobs: HashMap::new(),
            detached: Default::default(),
            next_job: 0,
            sweeps: Vec::new(),
            outbox: None,
            stats: HeadEndStats::default(),
        }
    }

    /// Starts collecting [`Notification`]s for [`HeadEnd::drain_notifications`].
    pub fn enable_notifications(&mut self) {
        self.outbox.get_or_insert_with(Vec::new);
    }

    pub fn drain_notifications(&mut self) -> Vec<Notification> {
        self.outbox.as_mut().map(std::mem::take).unwrap_or_default()
    }

    fn notify(&mut self, n: impl FnOnce() -> Notification) {
        if let Some(o) = self.outbox.as_mut() {
            o.push(n());
        }
    }

    /// Adds a meter. Sequence numbers continue after the latest stored
    /// reading so a resumed store never sees a reused `(address, seq)`.
    pub fn register(&mut self, address: u32, meter_constant: u32) {
        let next_seq = self.store.latest(address).map(|r| r.seq.wrapping_add(1)).unwrap_or(0);
        self.registry.insert(
            address,
            MeterEntry {
                address,
                meter_constant,
                next_seq,
                reachable: None,
            },
        );
    }

    pub fn is_registered(&self, address: u32) -> bool {
        self.registry.contains_key(&address)
    }

    pub fn meter(&self, address: u32) -> Option<&MeterEntry> {
        self.registry.get(&address)
    }

    pub fn meter_count(&self) -> usize {
        self.registry.len()
    }

    pub fn addresses(&self) -> Vec<u32> {
        let mut v: Vec<u32> = self.registry.keys().copied().collect();
        v.sort_unstable();
        v
    }

    pub fn meters(&self) -> Vec<MeterSummary> {
        self.addresses()
            .into_iter()
            .map(|a| {
                let e = &self.registry[&a];
                MeterSummary {
                    address: a,
                    meter_constant: e.meter_constant,
                    reachable: e.reachable,
                    last_reading: self.store.latest(a).cloned(),
                }
            })
            .collect()
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut Store {
        &mut self.store
    }

    pub fn policy(&self) -> PollPolicy {
        self.poller.policy()
    }

    pub fn poller(&self) -> &Poller {
        &self.poller
    }

    pub fn is_idle(&self) -> bool {
        self.poller.is_idle()
    }

    pub fn stats(&self) -> HeadEndStats {
        let mut s = self.stats.clone();
        s.polls_sent = self.poller.polls_sent();
        s
    }

    pub fn sweeps(&self) -> &[SweepReport] {
        &self.sweeps
    }

    fn take_seq(&mut self, address: u32) -> u8 {
        let e = self.registry.get_mut(&address).expect("registered");
        let s = e.next_seq;
        e.next_seq = s.wrapping_add(1);
        s
    }

    fn new_job(&mut self) -> JobId {
        self.next_job += 1;
        JobId(self.next_job)
    }

    /// Queues an on-demand read. Call [`HeadEnd::kick`] afterwards.
    pub fn submit_read(&mut self, address: u32) -> Result<JobId, ReadError> {
        if !self.is_registered(address) {
            return Err(ReadError::NotRegistered(address));
        }
        let job = self.new_job();
        let seq = self.take_seq(address);
        self.jobs.insert(job.0, JobState::Read(None));
        self.poller.enqueue(PollRequest { address, seq, job });
        Ok(job)
    }

    /// Queues a sequential sweep over `addresses` (all registered meters,
    /// in address order, when `None`).
    pub fn submit_sweep(&mut self, addresses: Option<&[u32]>, now: f64) -> Result<JobId, SweepError> {
        let list = match addresses {
            Some(a) => {
                let mut seen = std::collections::HashSet::with_capacity(a.len());
                for &addr in a {
                    if !self.is_registered(addr) {
                        return Err(SweepError::NotRegistered(addr));
                    }
                    if !seen.insert(addr) {
                        return Err(SweepError::Duplicate(addr));
                    }
                }
                a.to_vec()
            }
            None => self.addresses(),
        };
        if list.is_empty() {
            return Err(SweepError::Empty);
        }
        let job = self.new_job();
        for &address in &list {
            let seq = self.take_seq(address);
            self.poller.enqueue(PollRequest { address, seq, job });
        }
        self.jobs.insert(
            job.0,
            JobState::Sweep {
                report: SweepReport {
                    id: job.0,
                    requested: list.len(),
                    read_count: 0,
                    unreachable: Vec::new(),
                    attempts: 0,
                    started_at: f64::NAN,
                    finished_at: now,
                    elapsed: 0.0,
                },
                remaining: list.len(),
            },
        );
        Ok(job)
    }

    /// Result of a finished job, removing it. `None` while still running.
    pub fn take_result(&mut self, job: JobId) -> Option<JobResult> {
        let done = match self.jobs.get(&job.0)? {
            JobState::Read(r) => r.is_some(),
            JobState::Sweep { remaining, .. } => *remaining == 0,
        };
        if !done {
            return None;
        }
        Some(match self.jobs.remove(&job.0)? {
            JobState::Read(r) => JobResult::Read(r.expect("finished")),
            JobState::Sweep { report, .. } => JobResult::Sweep(report),
        })
    }

    /// Marks `job` as fire-and-forget: its result is discarded on completion.
    pub fn detach(&mut self, job: JobId) {
        if self.take_result(job).is_none() && self.jobs.contains_key(&job.0) {
            self.detached.insert(job.0);
        }
    }

    /// Starts the next queued poll if the channel is free.
    pub fn kick(&mut self, now: f64, out: &mut Vec<PollAction>) {
        let before = self.poller.current().is_some();
        self.poller.kick(now, out);
        if !before {
            if let Some(t) = self.poller.current() {
                self.stats.transactions += 1;
                let job = t.request.job;
                if let Some(JobState::Sweep { report, .. }) = self.jobs.get_mut(&job.0) {
                    if report.started_at.is_nan() {
                        report.started_at = now;
                    }
                }
            }
        }
    }

    pub fn on_timer(&mut self, token: u64, now: f64, out: &mut Vec<PollAction>) -> Result<Vec<Outcome>, StoreError> {
        let mut outcomes = Vec::new();
        let before = self.poller.current().copied();
        match self.poller.on_timeout(token, now, out) {
            Some(PollEvent::Exhausted { txn, at }) => {
                self.stats.timeouts += 1;
                self.finish(txn, None, at, &mut outcomes)?;
                self.kick(now, out);
            }
            Some(PollEvent::Answered { .. }) => unreachable!("timeouts never answer"),
            None => {
                if let (Some(b), Some(a)) = (before, self.poller.current()) {
                    if a.attempts > b.attempts {
                        self.stats.timeouts += 1;
                        outcomes.push(Outcome::Retry {
                            address: a.request.address,
                            attempt: a.attempts,
                        });
                    }
                }
            }
        }
        Ok(outcomes)
    }

    /// Handles bytes received on the head-end radio.
    pub fn on_bytes(&mut self, bytes: &[u8], now: f64, out: &mut Vec<PollAction>) -> Result<Vec<Outcome>, StoreError> {
        let mut outcomes = Vec::new();
        let frame = match decode_datagram(bytes) {
            Ok(f) => f,
            Err(e) => {
                let kind = e.kind();
                *self.stats.decode_errors.entry(format!("{kind:?}")).or_default() += 1;
                outcomes.push(Outcome::DecodeFailed(kind));
                return Ok(outcomes);
            }
        };
        match self.poller.on_frame(&frame, now) {
            Ok(PollEvent::Answered { txn, reading, at }) => {
                self.finish(txn, Some(reading), at, &mut outcomes)?;
                self.kick(now, out);
            }
            Ok(PollEvent::Exhausted { .. }) => unreachable!("frames never exhaust"),
            Err(Stray::Mismatch | Stray::NoTransaction) if frame.kind == crate::protocol::FrameType::Reading => {
                self.stats.duplicate_replies += 1;
                outcomes.push(Outcome::Duplicate {
                    address: frame.src,
                    seq: frame.seq,
                });
            }
            Err(s) => {
                self.stats.stray_frames += 1;
                outcomes.push(Outcome::Stray(s));
            }
        }
        Ok(outcomes)
    }

    fn finish(
        &mut self,
        txn: Transaction,
        reading: Option<crate::protocol::ReadingPayload>,
        at: f64,
        outcomes: &mut Vec<Outcome>,
    ) -> Result<(), StoreError> {
        let address = txn.request.address;
        let result = match reading {
            Some(body) => {
                self.stats.reads += 1;
                let k = self.registry[&address].meter_constant;
                let record = ReadingRecord::new(
                    address,
                    body.register,
                    k,
                    at,
                    StatusFlags::from_bits_retain(body.status_flags),
                    txn.attempts,
                    txn.request.seq,
                );
                match self.store.record_reading(record.clone())? {
                    Recorded::Stored { anomalies } => {
                        self.notify(|| Notification::Reading { record: record.clone() });
                        for a in &anomalies {
                            self.notify(|| Notification::Anomaly { anomaly: a.clone() });
                        }
                        outcomes.push(Outcome::Read {
                            record: record.clone(),
                            round_trip: at - txn.first_sent,
                            anomalies,
                        });
                    }
                    Recorded::Duplicate => outcomes.push(Outcome::Duplicate {
                        address,
                        seq: txn.request.seq,
                    }),
                }
                Ok(record)
            }
            None => {
                self.stats.unreachable += 1;
                let elapsed = at - txn.first_sent;
                let anomaly = AnomalyEvent {
                    address,
                    kind: AnomalyKind::Unreachable,
                    detail: format!("no reply after {} attempts", txn.attempts),
                    sim_time: at,
                };
                self.store.record_anomaly(anomaly.clone())?;
                self.notify(|| Notification::Anomaly { anomaly });
                outcomes.push(Outcome::Unreachable {
                    address,
                    attempts: txn.attempts,
                    elapsed,
                });
                Err(ReadError::Unreachable {
                    address,
                    attempts: txn.attempts,
                    elapsed,
                })
            }
        };
        if let Some(e) = self.registry.get_mut(&address) {
            e.reachable = Some(result.is_ok());
        }
        let job = txn.request.job.0;
        let (finished, sweep_done) = match self.jobs.get_mut(&job) {
            Some(JobState::Read(slot)) => {
                *slot = Some(result);
                (true, None)
            }
            Some(JobState::Sweep { report, remaining }) => {
                report.attempts += u64::from(txn.attempts);
                match result {
                    Ok(_) => report.read_count += 1,
                    Err(_) => report.unreachable.push(address),
                }
                *remaining -= 1;
                if *remaining == 0 {
                    report.finished_at = at;
                    report.elapsed = at - report.started_at;
                    (true, Some(report.clone()))
                } else {
                    (false, None)
                }
            }
            None => (false, None),
        };
        if let Some(done) = sweep_done {
            self.sweeps.push(done.clone());
            self.notify(|| Notification::SweepCompleted { report: done.clone() });
            outcomes.push(Outcome::SweepDone(done));
        }
        if finished && self.detached.remove(&job) {
            self.jobs.remove(&job);
        }
        Ok(())
    }

    /// Bills `address` from stored history and persists the bill.
    pub fn bill(&mut self, address: u32, t_start: f64, t_end: f64, tariff: &Tariff) -> Result<Bill, BillRequestError> {
        let bill = bill_period(self.store.history(address), tariff, address, t_start, t_end)?;
        self.store.record_bill(bill.clone())?;
        self.notify(|| Notification::Bill { bill: bill.clone() });
        Ok(bill)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::{encode_frame, Frame, ReadingPayload, HEADEND_ADDRESS};

    fn reply(address: u32, seq: u8, register: u32) -> Vec<u8> {
        encode_frame(&Frame::reading(
            address,
            HEADEND_ADDRESS,
            seq,
            ReadingPayload {
                register,
                timestamp: 0,
                status_flags: 0,
            },
        ))
        .unwrap()
    }

    fn polled(out: &[PollAction]) -> Vec<(u32, u8)> {
        out.iter()
            .filter_map(|a| match a {
                PollAction::Transmit(f) => Some((f.poll_target().unwrap(), f.seq)),
                _ => None,
            })
            .collect()
    }

    #[test]
    fn read_your_writes() {
        let mut h = HeadEnd::new(PollPolicy::default(), Store::in_memory());
        h.register(5, 600);
        let job = h.submit_read(5).unwrap();
        let mut out = Vec::new();
        h.kick(0.0, &mut out);
        assert_eq!(polled(&out), [(5, 0)]);
        assert!(h.take_result(job).is_none());
        h.on_bytes(&reply(5, 0, 1200), 1e-3, &mut out).unwrap();
        let Some(JobResult::Read(Ok(r))) = h.take_result(job) else {
            panic!()
        };
        assert_eq!(r.attempt_count, 1);
        assert_eq!(r.energy_kwh.to_string(), "2.000");
        assert_eq!(h.store().query_history(5, 0.0, 1.0), [r]);
    }

    #[test]
    fn not_registered_is_distinct() {
        let mut h = HeadEnd::new(PollPolicy::default(), Store::in_memory());
        assert_eq!(h.submit_read(1), Err(ReadError::NotRegistered(1)));
        assert_eq!(ReadError::NotRegistered(1).code(), "NOT_REGISTERED");
        assert_eq!(h.submit_sweep(Some(&[]), 0.0), Err(SweepError::Empty));
        h.register(1, 600);
        assert_eq!(h.submit_sweep(Some(&[1, 1]), 0.0), Err(SweepError::Duplicate(1)));
        assert_eq!(h.submit_sweep(Some(&[2]), 0.0), Err(SweepError::NotRegistered(2)));
    }

    #[test]
    fn duplicate_reply_after_completion_is_counted_not_stored() {
        let mut h = HeadEnd::new(PollPolicy::default(), Store::in_memory());
        h.register(5, 600);
        h.submit_read(5).unwrap();
        let mut out = Vec::new();
        h.kick(0.0, &mut out);
        h.on_bytes(&reply(5, 0, 10), 1e-3, &mut out).unwrap();
        let o = h.on_bytes(&reply(5, 0, 10), 2e-3, &mut out).unwrap();
        assert!(matches!(o[0], Outcome::Duplicate { .. }));
        assert_eq!(h.store().reading_count(), 1);
        assert_eq!(h.stats().duplicate_replies, 1);
    }

    #[test]
    fn detached_jobs_are_dropped_on_completion() {
        let mut h = HeadEnd::new(PollPolicy::default(), Store::in_memory());
        h.register(5, 600);
        let job = h.submit_sweep(None, 0.0).unwrap();
        h.detach(job);
        let mut out = Vec::new();
        h.kick(0.0, &mut out);
        h.on_bytes(&reply(5, 0, 10), 1e-3, &mut out).unwrap();
        assert!(h.jobs.is_empty() && h.detached.is_empty());
        assert_eq!(h.sweeps().len(), 1);
    }

    #[test]
    fn sweep_accounts_unreachable() {
        let mut h = HeadEnd::new(PollPolicy::new(0.05, 2), Store::in_memory());
        h.enable_notifications();
        h.register(1, 600);
        h.register(2, 600);
        let job = h.submit_sweep(None, 0.0).unwrap();
        let mut out = Vec::new();
        h.kick(0.0, &mut out);
        h.on_bytes(&reply(1, 0, 1), 1e-3, &mut out).unwrap();
        // Meter 2 never answers: two timeouts.
        for _ in 0..2 {
            let Some(PollAction::ArmTimer { token, at }) = out.last().cloned() else {
                panic!()
            };
            h.on_timer(token, at, &mut out).unwrap();
        }
        let Some(JobResult::Sweep(r)) = h.take_result(job) else {
            panic!()
        };
        assert_eq!((r.read_count, r.unreachable.clone(), r.attempts), (1, vec![2], 3));
        assert_eq!(r.started_at, 0.0);
        assert!((r.elapsed - (1e-3 + 0.1)).abs() < 1e-12);
        let kinds: Vec<&str> = h
            .drain_notifications()
            .iter()
            .map(|n| match n {
                Notification::Reading { .. } => "reading",
                Notification::Anomaly { .. } => "anomaly",
                Notification::SweepCompleted { .. } => "sweep",
                Notification::Bill { .. } => "bill",
            })
            .collect();
        assert_eq!(kinds, ["reading", "anomaly", "sweep"]);
        assert_eq!(h.meter(2).unwrap().reachable, Some(false));
        assert_eq!(h.store().anomalies()[0].kind, AnomalyKind::Unreachable);
    }

    #[test]
    fn corrupted_bytes_counted() {
        let mut h = HeadEnd::new(PollPolicy::default(), Store::in_memory());
        let mut b = reply(1, 0, 1);
        b[8] ^= 1;
        let mut out = Vec::new();
        let o = h.on_bytes(&b, 0.0, &mut out).unwrap();
        assert_eq!(o, [Outcome::DecodeFailed(DecodeErrorKind::BadCrc)]);
    }

    #[test]
    fn seq_resumes_after_store() {
        let mut store = Store::in_memory();
        store
            .record_reading(ReadingRecord::new(3, 0, 600, 1.0, StatusFlags::empty(), 1, 41))
            .unwrap();
        let mut h = HeadEnd::new(PollPolicy::default(), store);
        h.register(3, 600);
        h.submit_read(3).unwrap();
        let mut out = Vec::new();
        h.kick(2.0, &mut out);
        assert_eq!(polled(&out), [(3, 42)]);
    }
}
