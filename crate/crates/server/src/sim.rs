//! The simulation thread. It owns the [`System`] and executes commands
//! strictly in arrival order, which keeps every state change serialized
//! no matter how many HTTP handlers are running.
//!
//! Reads and sweeps do not block the thread: the job is queued and the
//! simulation advances in slices of events, answering other commands and
//! publishing notifications between slices. When no job is running the
//! clock follows the wall clock scaled by `time_scale`, or stands still if
//! the scale is zero.

use std::sync::mpsc;
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use amr_core::billing::{Bill, BillingError, Tariff};
use amr_core::headend::{
    AnomalyEvent, HeadEndStats, JobId, JobResult, MeterSummary, ReadError, ReadingRecord, StoreError, SweepError,
    SweepReport,
};
use amr_core::system::{FaultAction, System};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::oneshot;

use crate::hub::Hub;

#[derive(Debug, Clone, Copy)]
pub struct SimOptions {
    /// Simulated seconds per wall second while idle; zero freezes the clock
    /// between requests.
    pub time_scale: f64,
    /// Longest wait for a command before the clock is advanced.
    pub tick: Duration,
    /// Events processed between command checks while a job runs.
    pub slice: usize,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            time_scale: 1.0,
            tick: Duration::from_millis(100),
            slice: 4096,
        }
    }
}

/// Why a command failed. Maps onto API error codes.
#[derive(Debug, Clone, Error)]
pub enum SimFailure {
    #[error(transparent)]
    Read(#[from] ReadError),
    #[error(transparent)]
    Sweep(#[from] SweepError),
    #[error(transparent)]
    Billing(#[from] BillingError),
    #[error("NOT_REGISTERED: meter {0:#010x} is not registered")]
    NotRegistered(u32),
    #[error("{0}")]
    Invalid(String),
    #[error("{0}")]
    Internal(String),
}

impl SimFailure {
    fn stopped() -> Self {
        Self::Internal("simulation thread is not running".into())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Status {
    pub sim_time: f64,
    pub meters: usize,
    pub readings: usize,
    pub anomalies: usize,
    pub bills: usize,
    pub running_jobs: usize,
    /// Set once a simulation step has failed; the service then refuses
    /// further commands.
    pub fault: Option<String>,
    pub stats: HeadEndStats,
}

type Reply<T> = oneshot::Sender<Result<T, SimFailure>>;

enum Command {
    Status(Reply<Status>),
    Meters(Reply<Vec<MeterSummary>>),
    Read {
        address: u32,
        reply: Reply<ReadingRecord>,
    },
    Sweep {
        addresses: Option<Vec<u32>>,
        reply: Reply<SweepReport>,
    },
    History {
        address: u32,
        from: f64,
        to: f64,
        reply: Reply<Vec<ReadingRecord>>,
    },
    Anomalies {
        address: Option<u32>,
        from: f64,
        to: f64,
        reply: Reply<Vec<AnomalyEvent>>,
    },
    Bill {
        address: u32,
        t_start: f64,
        t_end: f64,
        reply: Reply<Bill>,
    },
    Bills {
        address: Option<u32>,
        reply: Reply<Vec<Bill>>,
    },
    ExportCsv {
        address: Option<u32>,
        reply: Reply<Vec<u8>>,
    },
    Advance {
        seconds: f64,
        reply: Reply<f64>,
    },
    Inject {
        address: u32,
        action: FaultAction,
        delay: f64,
        reply: Reply<f64>,
    },
    Shutdown(oneshot::Sender<Result<(), String>>),
}

/// Cheap to clone; every clone talks to the same thread.
#[derive(Clone)]
pub struct SimHandle {
    tx: mpsc::Sender<Command>,
}

impl SimHandle {
    async fn call<T>(&self, make: impl FnOnce(Reply<T>) -> Command) -> Result<T, SimFailure> {
        let (tx, rx) = oneshot::channel();
        self.tx.send(make(tx)).map_err(|_| SimFailure::stopped())?;
        rx.await.map_err(|_| SimFailure::stopped())?
    }

    pub async fn status(&self) -> Result<Status, SimFailure> {
        self.call(Command::Status).await
    }

    pub async fn meters(&self) -> Result<Vec<MeterSummary>, SimFailure> {
        self.call(Command::Meters).await
    }

    pub async fn read(&self, address: u32) -> Result<ReadingRecord, SimFailure> {
        self.call(|reply| Command::Read { address, reply }).await
    }

    pub async fn sweep(&self, addresses: Option<Vec<u32>>) -> Result<SweepReport, SimFailure> {
        self.call(|reply| Command::Sweep { addresses, reply }).await
    }

    pub async fn history(&self, address: u32, from: f64, to: f64) -> Result<Vec<ReadingRecord>, SimFailure> {
        self.call(|reply| Command::History {
            address,
            from,
            to,
            reply,
        })
        .await
    }

    pub async fn anomalies(&self, address: Option<u32>, from: f64, to: f64) -> Result<Vec<AnomalyEvent>, SimFailure> {
        self.call(|reply| Command::Anomalies {
            address,
            from,
            to,
            reply,
        })
        .await
    }

    pub async fn bill(&self, address: u32, t_start: f64, t_end: f64) -> Result<Bill, SimFailure> {
        self.call(|reply| Command::Bill {
            address,
            t_start,
            t_end,
            reply,
        })
        .await
    }

    pub async fn bills(&self, address: Option<u32>) -> Result<Vec<Bill>, SimFailure> {
        self.call(|reply| Command::Bills { address, reply }).await
    }

    pub async fn export_csv(&self, address: Option<u32>) -> Result<Vec<u8>, SimFailure> {
        self.call(|reply| Command::ExportCsv { address, reply }).await
    }

    /// Runs the clock forward; returns the new simulated time.
    pub async fn advance(&self, seconds: f64) -> Result<f64, SimFailure> {
        self.call(|reply| Command::Advance { seconds, reply }).await
    }

    /// Schedules a fault; returns the simulated time it fires.
    pub async fn inject(&self, address: u32, action: FaultAction, delay: f64) -> Result<f64, SimFailure> {
        self.call(|reply| Command::Inject {
            address,
            action,
            delay,
            reply,
        })
        .await
    }

    /// Stops the thread after flushing and compacting the store. Jobs still
    /// running are answered with an internal error.
    pub async fn shutdown(&self) -> Result<(), String> {
        let (tx, rx) = oneshot::channel();
        if self.tx.send(Command::Shutdown(tx)).is_err() {
            return Ok(());
        }
        rx.await.unwrap_or(Ok(()))
    }
}

/// Starts the simulation thread.
pub fn spawn(
    system: System,
    tariff: Tariff,
    hub: Arc<Hub>,
    options: SimOptions,
) -> std::io::Result<(SimHandle, JoinHandle<()>)> {
    let (tx, rx) = mpsc::channel();
    let mut worker = Worker::new(system, tariff, hub, options);
    let join = std::thread::Builder::new()
        .name("amr-sim".into())
        .spawn(move || worker.run(rx))?;
    Ok((SimHandle { tx }, join))
}

enum Waiting {
    Read(JobId, Reply<ReadingRecord>),
    Sweep(JobId, Reply<SweepReport>),
}

impl Waiting {
    fn fail(self, message: &str) {
        let err = || SimFailure::Internal(message.to_string());
        match self {
            Self::Read(_, r) => drop(r.send(Err(err()))),
            Self::Sweep(_, r) => drop(r.send(Err(err()))),
        }
    }
}

struct Worker {
    system: System,
    tariff: Tariff,
    hub: Arc<Hub>,
    options: SimOptions,
    waiting: Vec<Waiting>,
    anchor: (Instant, f64),
    fault: Option<String>,
}

impl Worker {
    fn new(mut system: System, tariff: Tariff, hub: Arc<Hub>, options: SimOptions) -> Self {
        system.headend_mut().enable_notifications();
        let now = system.now();
        Self {
            system,
            tariff,
            hub,
            options,
            waiting: Vec::new(),
            anchor: (Instant::now(), now),
            fault: None,
        }
    }

    fn run(&mut self, rx: mpsc::Receiver<Command>) {
        let shutdown = loop {
            let next = if self.waiting.is_empty() {
                rx.recv_timeout(self.options.tick)
                    .map_err(|e| e == mpsc::RecvTimeoutError::Disconnected)
            } else {
                rx.try_recv().map_err(|e| e == mpsc::TryRecvError::Disconnected)
            };
            match next {
                Ok(Command::Shutdown(reply)) => break Some(reply),
                Ok(cmd) => self.handle(cmd),
                Err(true) => break None,
                Err(false) => {}
            }
            if self.fault.is_none() {
                if let Err(e) = self.advance() {
                    self.set_fault(e);
                }
            }
            self.publish();
        };
        for w in self.waiting.drain(..) {
            w.fail("service is shutting down");
        }
        let result = self.close().map_err(|e| e.to_string());
        if let Err(e) = &result {
            tracing::error!("closing the store failed: {e}");
        }
        if let Some(reply) = shutdown {
            let _ = reply.send(result);
        }
    }

    fn close(&mut self) -> Result<(), StoreError> {
        let store = self.system.headend_mut().store_mut();
        if store.dir().is_some() {
            store.snapshot()?;
        }
        store.flush()
    }

    fn set_fault(&mut self, message: String) {
        tracing::error!("simulation halted: {message}");
        for w in self.waiting.drain(..) {
            w.fail(&message);
        }
        self.fault = Some(message);
    }

    /// One slice of work: finish jobs if any are waiting, else follow the
    /// wall clock.
    fn advance(&mut self) -> Result<(), String> {
        if !self.waiting.is_empty() {
            let n = self.system.step_events(self.options.slice).map_err(|e| e.to_string())?;
            self.collect();
            if n == 0 && !self.waiting.is_empty() {
                return Err("event queue ran dry with a job still running".into());
            }
            self.anchor = (Instant::now(), self.system.now());
            return Ok(());
        }
        if self.options.time_scale > 0.0 {
            let (wall, sim) = self.anchor;
            let target = sim + wall.elapsed().as_secs_f64() * self.options.time_scale;
            if target > self.system.now() {
                self.system.run_until(target).map_err(|e| e.to_string())?;
            } else {
                self.anchor = (Instant::now(), self.system.now());
            }
        }
        Ok(())
    }

    fn collect(&mut self) {
        let mut still = Vec::with_capacity(self.waiting.len());
        for w in self.waiting.drain(..) {
            match w {
                Waiting::Read(job, reply) => match self.system.take_result(job) {
                    Some(JobResult::Read(r)) => drop(reply.send(r.map_err(SimFailure::from))),
                    Some(JobResult::Sweep(_)) => unreachable!("read job"),
                    None => still.push(Waiting::Read(job, reply)),
                },
                Waiting::Sweep(job, reply) => match self.system.take_result(job) {
                    Some(JobResult::Sweep(r)) => drop(reply.send(Ok(r))),
                    Some(JobResult::Read(_)) => unreachable!("sweep job"),
                    None => still.push(Waiting::Sweep(job, reply)),
                },
            }
        }
        self.waiting = still;
    }

    fn publish(&mut self) {
        for n in self.system.headend_mut().drain_notifications() {
            self.hub.publish(n);
        }
    }

    fn refuse<T>(&self, reply: Reply<T>) -> Option<Reply<T>> {
        match &self.fault {
            Some(f) => {
                let _ = reply.send(Err(SimFailure::Internal(format!("simulation halted: {f}"))));
                None
            }
            None => Some(reply),
        }
    }

    fn handle(&mut self, cmd: Command) {
        match cmd {
            Command::Status(reply) => {
                let h = self.system.headend();
                let _ = reply.send(Ok(Status {
                    sim_time: self.system.now(),
                    meters: h.meter_count(),
                    readings: h.store().reading_count(),
                    anomalies: h.store().anomalies().len(),
                    bills: h.store().bills().len(),
                    running_jobs: self.waiting.len(),
                    fault: self.fault.clone(),
                    stats: h.stats(),
                }));
            }
            Command::Meters(reply) => {
                let _ = reply.send(Ok(self.system.headend().meters()));
            }
            Command::Read { address, reply } => {
                let Some(reply) = self.refuse(reply) else { return };
                match self.system.submit_read(address) {
                    Ok(job) => self.waiting.push(Waiting::Read(job, reply)),
                    Err(e) => drop(reply.send(Err(e.into()))),
                }
            }
            Command::Sweep { addresses, reply } => {
                let Some(reply) = self.refuse(reply) else { return };
                match self.system.submit_sweep(addresses.as_deref()) {
                    Ok(job) => self.waiting.push(Waiting::Sweep(job, reply)),
                    Err(e) => drop(reply.send(Err(e.into()))),
                }
            }
            Command::History {
                address,
                from,
                to,
                reply,
            } => {
                let h = self.system.headend();
                let r = if h.is_registered(address) || !h.store().history(address).is_empty() {
                    Ok(h.store().query_history(address, from, to).to_vec())
                } else {
                    Err(SimFailure::NotRegistered(address))
                };
                let _ = reply.send(r);
            }
            Command::Anomalies {
                address,
                from,
                to,
                reply,
            } => {
                let list = self
                    .system
                    .headend()
                    .store()
                    .anomalies()
                    .iter()
                    .filter(|a| address.is_none_or(|x| x == a.address))
                    .filter(|a| a.sim_time >= from && a.sim_time <= to)
                    .cloned()
                    .collect();
                let _ = reply.send(Ok(list));
            }
            Command::Bill {
                address,
                t_start,
                t_end,
                reply,
            } => {
                let Some(reply) = self.refuse(reply) else { return };
                if !self.system.headend().is_registered(address) {
                    let _ = reply.send(Err(SimFailure::NotRegistered(address)));
                    return;
                }
                let tariff = &self.tariff;
                let r = match self.system.headend_mut().bill(address, t_start, t_end, tariff) {
                    Ok(b) => Ok(b),
                    Err(amr_core::headend::BillRequestError::Billing(e)) => Err(e.into()),
                    Err(amr_core::headend::BillRequestError::Store(e)) => Err(SimFailure::Internal(e.to_string())),
                };
                let _ = reply.send(r);
            }
            Command::Bills { address, reply } => {
                let list = self
                    .system
                    .headend()
                    .store()
                    .bills()
                    .iter()
                    .filter(|b| address.is_none_or(|x| x == b.address))
                    .cloned()
                    .collect();
                let _ = reply.send(Ok(list));
            }
            Command::ExportCsv { address, reply } => {
                let store = self.system.headend().store();
                let addresses = match address {
                    Some(a) => vec![a],
                    None => store.addresses(),
                };
                let mut out = Vec::new();
                let r = store
                    .export_csv(&addresses, &mut out)
                    .map(|()| out)
                    .map_err(|e| SimFailure::Internal(e.to_string()));
                let _ = reply.send(r);
            }
            Command::Advance { seconds, reply } => {
                let Some(reply) = self.refuse(reply) else { return };
                if !(seconds.is_finite() && seconds >= 0.0) {
                    let _ = reply.send(Err(SimFailure::Invalid(format!(
                        "seconds must be finite and >= 0, got {seconds}"
                    ))));
                    return;
                }
                let target = self.system.now() + seconds;
                match self.system.run_until(target) {
                    Ok(_) => {
                        self.collect();
                        self.anchor = (Instant::now(), self.system.now());
                        let _ = reply.send(Ok(self.system.now()));
                    }
                    Err(e) => {
                        let msg = e.to_string();
                        let _ = reply.send(Err(SimFailure::Internal(msg.clone())));
                        self.set_fault(msg);
                    }
                }
            }
            Command::Inject {
                address,
                action,
                delay,
                reply,
            } => {
                let Some(reply) = self.refuse(reply) else { return };
                if !(delay.is_finite() && delay >= 0.0) {
                    let _ = reply.send(Err(SimFailure::Invalid(format!(
                        "delay must be finite and >= 0, got {delay}"
                    ))));
                    return;
                }
                let at = self.system.now() + delay;
                let r = if self.system.inject(address, action, delay) {
                    Ok(at)
                } else {
                    Err(SimFailure::NotRegistered(address))
                };
                let _ = reply.send(r);
            }
            Command::Shutdown(_) => unreachable!("handled by the loop"),
        }
    }
}
