use std::collections::VecDeque;

use super::record::PollPolicy;
use crate::protocol::{Frame, FrameType, ReadingPayload, HEADEND_ADDRESS};

/// Who asked for a poll; results are reported back against it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct JobId(pub u64);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PollRequest {
    pub address: u32,
    pub seq: u8,
    pub job: JobId,
}

/// The one outstanding poll.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transaction {
    pub request: PollRequest,
    /// Attempts sent so far, including the current one.
    pub attempts: u32,
    /// When the first attempt went on the air.
    pub first_sent: f64,
    pub last_sent: f64,
    timer: u64,
}

/// What the poller wants done on the medium.
#[derive(Debug, Clone, PartialEq)]
pub enum PollAction {
    Transmit(Frame),
    /// Schedule a timeout that must come back through
    /// [`Poller::on_timeout`] with this token.
    ArmTimer {
        token: u64,
        at: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum PollEvent {
    Answered {
        txn: Transaction,
        reading: ReadingPayload,
        at: f64,
    },
    Exhausted {
        txn: Transaction,
        at: f64,
    },
}

/// Serial poll master: a FIFO of requests with at most one transaction
/// outstanding. Retries reuse the transaction's sequence number.
#[derive(Debug)]
pub struct Poller {
    policy: PollPolicy,
    pending: VecDeque<PollRequest>,
    current: Option<Transaction>,
    next_token: u64,
    polls_sent: u64,
}

impl Poller {
    pub fn new(policy: PollPolicy) -> Self {
        Self {
            policy,
            pending: VecDeque::new(),
            current: None,
            next_token: 0,
            polls_sent: 0,
        }
    }

    pub fn policy(&self) -> PollPolicy {
        self.policy
    }

    pub fn set_policy(&mut self, policy: PollPolicy) {
        self.policy = policy;
    }

    pub fn enqueue(&mut self, req: PollRequest) {
        self.pending.push_back(req);
    }

    pub fn current(&self) -> Option<&Transaction> {
        self.current.as_ref()
    }

    pub fn pending(&self) -> usize {
        self.pending.len()
    }

    pub fn is_idle(&self) -> bool {
        self.current.is_none() && self.pending.is_empty()
    }

    pub fn polls_sent(&self) -> u64 {
        self.polls_sent
    }

    fn send(&mut self, txn: &mut Transaction, now: f64, out: &mut Vec<PollAction>) {
        self.next_token += 1;
        txn.timer = self.next_token;
        txn.last_sent = now;
        self.polls_sent += 1;
        let r = txn.request;
        out.push(PollAction::Transmit(Frame::poll_selective(
            HEADEND_ADDRESS,
            r.address,
            r.seq,
        )));
        out.push(PollAction::ArmTimer {
            token: txn.timer,
            at: now + self.policy.timeout,
        });
    }

    /// Starts the next queued request if nothing is outstanding.
    pub fn kick(&mut self, now: f64, out: &mut Vec<PollAction>) {
        if self.current.is_some() {
            return;
        }
        let Some(request) = self.pending.pop_front() else {
            return;
        };
        let mut txn = Transaction {
            request,
            attempts: 1,
            first_sent: now,
            last_sent: now,
            timer: 0,
        };
        self.send(&mut txn, now, out);
        self.current = Some(txn);
    }

    /// Handles a timer. Tokens of finished transactions or superseded
    /// attempts are ignored.
    pub fn on_timeout(&mut self, token: u64, now: f64, out: &mut Vec<PollAction>) -> Option<PollEvent> {
        let mut txn = match self.current {
            Some(t) if t.timer == token => t,
            _ => return None,
        };
        if txn.attempts >= self.policy.max_attempts {
            self.current = None;
            return Some(PollEvent::Exhausted { txn, at: now });
        }
        txn.attempts += 1;
        self.send(&mut txn, now, out);
        self.current = Some(txn);
        None
    }

    /// Offers a decoded frame. Returns the completed transaction when it is
    /// the READING the outstanding poll is waiting for.
    pub fn on_frame(&mut self, f: &Frame, now: f64) -> Result<PollEvent, Stray> {
        let txn = self.current.ok_or(Stray::NoTransaction)?;
        if f.kind != FrameType::Reading {
            return Err(Stray::NotReading);
        }
        if f.dst != HEADEND_ADDRESS || f.src != txn.request.address || f.seq != txn.request.seq {
            return Err(Stray::Mismatch);
        }
        let reading = f.reading_payload().map_err(|_| Stray::BadPayload)?;
        self.current = None;
        Ok(PollEvent::Answered { txn, reading, at: now })
    }
}

/// Why a received frame was not accepted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stray {
    NoTransaction,
    NotReading,
    Mismatch,
    BadPayload,
}
