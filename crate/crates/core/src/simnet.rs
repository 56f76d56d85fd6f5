//! Deterministic round-based message-passing runtime with fail-stop faults.
//!
//! A [`World`] holds `P` simulated processes. Time advances in exchange
//! rounds; around each round there are two phase boundaries at which
//! scheduled crashes take effect:
//!
//! ```text
//! BeforeExchange(0)  exchange(0)  AfterExchange(0)  BeforeExchange(1) ...
//! ```
//!
//! Failure detection is local, as under ULFM: an exchange reports
//! [`ExchangeOutcome::PeerFailed`] only to processes that address a dead
//! peer. The world keeps each process's current payload so that a
//! respawned process can copy its state from a twin, and so that replicas
//! can answer requests they did not issue themselves.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::densela::Matrix;
use crate::error::{Error, Result};

/// Process rank. Stable for the whole run; a respawned process takes over
/// the rank of the one it replaces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Rank(pub usize);

impl fmt::Display for Rank {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProcStatus {
    Alive,
    Failed,
    /// Exited voluntarily. Peers observe it exactly like a crash.
    Returned,
    Respawned {
        recovering: bool,
    },
}

impl ProcStatus {
    /// Can issue requests and answer them.
    pub fn is_active(self) -> bool {
        matches!(self, Self::Alive | Self::Respawned { recovering: false })
    }

    pub fn label(self) -> &'static str {
        match self {
            Self::Alive => "alive",
            Self::Failed => "failed",
            Self::Returned => "returned",
            Self::Respawned { recovering: false } => "respawned",
            Self::Respawned { recovering: true } => "recovering",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    BeforeExchange,
    AfterExchange,
}

/// A scheduled fail-stop crash.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FailureEvent {
    pub rank: Rank,
    /// 0-based exchange round.
    pub step: usize,
    pub phase: Phase,
}

impl FailureEvent {
    pub fn new(rank: usize, step: usize, phase: Phase) -> Self {
        Self {
            rank: Rank(rank),
            step,
            phase,
        }
    }

    /// Index of the phase boundary the crash lands on. Boundary `b` sits
    /// between exchange rounds `b - 1` and `b`, so `(s, AfterExchange)` and
    /// `(s + 1, BeforeExchange)` share boundary `s + 1`.
    pub fn boundary(&self) -> usize {
        match self.phase {
            Phase::BeforeExchange => self.step,
            Phase::AfterExchange => self.step + 1,
        }
    }

    fn sort_key(&self) -> (usize, Phase, Rank) {
        (self.step, self.phase, self.rank)
    }
}

/// A set of failure events, kept sorted by `(step, phase, rank)`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct FailureSchedule {
    events: Vec<FailureEvent>,
}

impl FailureSchedule {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn new(mut events: Vec<FailureEvent>) -> Result<Self> {
        events.sort_by_key(FailureEvent::sort_key);
        if let Some(w) = events.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::InvalidSchedule(format!(
                "duplicate event for rank {} at step {} ({:?})",
                w[0].rank, w[0].step, w[0].phase
            )));
        }
        Ok(Self { events })
    }

    pub fn events(&self) -> &[FailureEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Checks ranks against `procs` and steps against `log2(procs)` rounds.
    pub fn validate(&self, procs: usize) -> Result<()> {
        let rounds = rounds_for(procs)?;
        for ev in &self.events {
            if ev.rank.0 >= procs {
                return Err(Error::InvalidSchedule(format!(
                    "rank {} out of range for {procs} processes",
                    ev.rank
                )));
            }
            if ev.step >= rounds {
                return Err(Error::InvalidSchedule(format!(
                    "step {} out of range: {procs} processes run {rounds} round(s)",
                    ev.step
                )));
            }
        }
        Ok(())
    }
}

/// `log2(procs)` for a power-of-two process count.
pub fn rounds_for(procs: usize) -> Result<usize> {
    if procs == 0 || !procs.is_power_of_two() {
        return Err(Error::UnsupportedTopology(procs));
    }
    Ok(procs.trailing_zeros() as usize)
}

#[derive(Debug, Clone, PartialEq)]
pub enum ExchangeOutcome {
    Delivered(Matrix),
    /// The peer posted a bare receive; the one-sided send completed.
    Sent,
    PeerFailed,
}

/// One side of a point-to-point operation. `payload: None` is a bare receive.
#[derive(Debug, Clone, PartialEq)]
pub struct Request {
    pub from: Rank,
    pub to: Rank,
    pub payload: Option<Matrix>,
}

impl Request {
    pub fn sendrecv(from: Rank, to: Rank, payload: Matrix) -> Self {
        Self {
            from,
            to,
            payload: Some(payload),
        }
    }

    pub fn recv(from: Rank, to: Rank) -> Self {
        Self {
            from,
            to,
            payload: None,
        }
    }
}

/// How an active peer treats a request it did not reciprocate this round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ServiceMode {
    /// Unreciprocated requests to an active peer are a protocol violation.
    #[default]
    Reciprocal,
    /// The peer answers with its held state, possibly to several requesters
    /// in the same round.
    AnswerFromState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Process {
    pub status: ProcStatus,
    /// Number of exchange rounds the held state has absorbed.
    pub step: usize,
    pub state: Option<Matrix>,
}

/// Copy of all process records at a phase boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub boundary: usize,
    pub procs: Vec<Process>,
}

pub struct World {
    procs: Vec<Process>,
    rounds: usize,
    schedule: FailureSchedule,
    mode: ServiceMode,
    last_phase: Option<(usize, Phase)>,
    respawns: usize,
}

impl World {
    /// Creates `procs` alive processes at step 0 with no state.
    pub fn new(procs: usize, schedule: FailureSchedule) -> Result<Self> {
        let rounds = rounds_for(procs)?;
        schedule.validate(procs)?;
        let proto = Process {
            status: ProcStatus::Alive,
            step: 0,
            state: None,
        };
        Ok(Self {
            procs: vec![proto; procs],
            rounds,
            schedule,
            mode: ServiceMode::default(),
            last_phase: None,
            respawns: 0,
        })
    }

    pub fn with_service_mode(mut self, mode: ServiceMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn size(&self) -> usize {
        self.procs.len()
    }

    pub fn rounds(&self) -> usize {
        self.rounds
    }

    pub fn respawns(&self) -> usize {
        self.respawns
    }

    pub fn schedule(&self) -> &FailureSchedule {
        &self.schedule
    }

    pub fn process(&self, rank: Rank) -> &Process {
        &self.procs[rank.0]
    }

    pub fn status(&self, rank: Rank) -> ProcStatus {
        self.procs[rank.0].status
    }

    pub fn snapshot(&self) -> Snapshot {
        let boundary = match self.last_phase {
            None => 0,
            Some((s, Phase::BeforeExchange)) => s,
            Some((s, Phase::AfterExchange)) => s + 1,
        };
        Snapshot {
            boundary,
            procs: self.procs.clone(),
        }
    }

    /// Ranks that are alive or respawned, ascending.
    pub fn alive_set(&self) -> BTreeSet<Rank> {
        self.ranks_where(|p| matches!(p.status, ProcStatus::Alive | ProcStatus::Respawned { .. }))
    }

    /// Ranks that can communicate right now, ascending.
    pub fn active_set(&self) -> BTreeSet<Rank> {
        self.ranks_where(|p| p.status.is_active())
    }

    fn ranks_where(&self, pred: impl Fn(&Process) -> bool) -> BTreeSet<Rank> {
        self.procs
            .iter()
            .enumerate()
            .filter(|(_, p)| pred(p))
            .map(|(r, _)| Rank(r))
            .collect()
    }

    fn check_rank(&self, rank: Rank) -> Result<()> {
        if rank.0 >= self.procs.len() {
            return Err(Error::InvalidArgument(format!(
                "rank {rank} out of range for {} processes",
                self.procs.len()
            )));
        }
        Ok(())
    }

    /// Stores the local state of an active process.
    pub fn set_state(&mut self, rank: Rank, state: Matrix, step: usize) -> Result<()> {
        self.check_rank(rank)?;
        let p = &mut self.procs[rank.0];
        if !p.status.is_active() {
            return Err(Error::ProtocolViolation(format!(
                "rank {rank} is {} and cannot update its state",
                p.status.label()
            )));
        }
        p.state = Some(state);
        p.step = step;
        Ok(())
    }

    /// Voluntary exit. The process keeps its step counter for reporting.
    pub fn retire(&mut self, rank: Rank) -> Result<()> {
        self.check_rank(rank)?;
        let p = &mut self.procs[rank.0];
        if !p.status.is_active() {
            return Err(Error::ProtocolViolation(format!(
                "rank {rank} is {} and cannot return",
                p.status.label()
            )));
        }
        p.status = ProcStatus::Returned;
        Ok(())
    }

    /// Applies the scheduled crashes for `(step, phase)`.
    ///
    /// Must be called exactly once per phase boundary, in order. Events for
    /// processes that already failed or returned are no-ops.
    pub fn inject_failures(&mut self, step: usize, phase: Phase) -> Result<BTreeSet<Rank>> {
        let expected = match self.last_phase {
            None => (0, Phase::BeforeExchange),
            Some((s, Phase::BeforeExchange)) => (s, Phase::AfterExchange),
            Some((s, Phase::AfterExchange)) => (s + 1, Phase::BeforeExchange),
        };
        if (step, phase) != expected || step >= self.rounds {
            return Err(Error::ProtocolViolation(format!(
                "failure injection at ({step}, {phase:?}) out of order; expected {expected:?} \
                 within {} round(s)",
                self.rounds
            )));
        }
        self.last_phase = Some((step, phase));

        let mut killed = BTreeSet::new();
        for ev in self
            .schedule
            .events
            .iter()
            .filter(|e| e.step == step && e.phase == phase)
        {
            let p = &mut self.procs[ev.rank.0];
            if matches!(p.status, ProcStatus::Alive | ProcStatus::Respawned { .. }) {
                p.status = ProcStatus::Failed;
                killed.insert(ev.rank);
            }
        }
        Ok(killed)
    }

    /// Matches the requests of round `step`.
    ///
    /// Requests are resolved in ascending `from` order. A request to a
    /// failed, returned or recovering peer yields `PeerFailed`. Two
    /// processes that address each other both get the other's payload
    /// (`Sent` if the other side is a bare receive). An unreciprocated
    /// request to an active peer is a protocol violation unless the world
    /// runs in [`ServiceMode::AnswerFromState`], where the peer answers with
    /// its held state provided it is at the same step.
    pub fn exchange(
        &mut self,
        step: usize,
        requests: Vec<Request>,
    ) -> Result<BTreeMap<Rank, ExchangeOutcome>> {
        if self.last_phase != Some((step, Phase::BeforeExchange)) {
            return Err(Error::ProtocolViolation(format!(
                "exchange({step}) outside its round (last boundary {:?})",
                self.last_phase
            )));
        }

        let mut by_from: BTreeMap<Rank, Request> = BTreeMap::new();
        for req in requests {
            self.check_rank(req.from)?;
            self.check_rank(req.to)?;
            let p = &self.procs[req.from.0];
            if !p.status.is_active() {
                return Err(Error::ProtocolViolation(format!(
                    "request from rank {} which is {}",
                    req.from,
                    p.status.label()
                )));
            }
            if p.step != step {
                return Err(Error::ProtocolViolation(format!(
                    "rank {} is at step {} but requested in round {step}",
                    req.from, p.step
                )));
            }
            if req.from == req.to {
                return Err(Error::ProtocolViolation(format!(
                    "rank {} addressed itself",
                    req.from
                )));
            }
            let from = req.from;
            if by_from.insert(from, req).is_some() {
                return Err(Error::ProtocolViolation(format!(
                    "rank {from} issued more than one request"
                )));
            }
        }

        let mut outcomes = BTreeMap::new();
        for (from, req) in &by_from {
            let peer = &self.procs[req.to.0];
            let outcome = if !peer.status.is_active() {
                ExchangeOutcome::PeerFailed
            } else if let Some(recip) = by_from.get(&req.to).filter(|r| r.to == *from) {
                match (&recip.payload, &req.payload) {
                    (Some(m), _) => ExchangeOutcome::Delivered(m.clone()),
                    (None, Some(_)) => ExchangeOutcome::Sent,
                    (None, None) => {
                        return Err(Error::ProtocolViolation(format!(
                            "ranks {from} and {} both posted bare receives",
                            req.to
                        )))
                    }
                }
            } else {
                match self.mode {
                    ServiceMode::Reciprocal => {
                        return Err(Error::ProtocolViolation(format!(
                            "rank {} is active but did not address rank {from}",
                            req.to
                        )))
                    }
                    ServiceMode::AnswerFromState => match &peer.state {
                        Some(m) if peer.step == step => ExchangeOutcome::Delivered(m.clone()),
                        _ => ExchangeOutcome::PeerFailed,
                    },
                }
            };
            outcomes.insert(*from, outcome);
        }
        Ok(outcomes)
    }

    /// Puts a fresh, stateless process on the rank of a failed one.
    pub fn spawn_replacement(&mut self, dead: Rank) -> Result<Rank> {
        self.check_rank(dead)?;
        let p = &mut self.procs[dead.0];
        if p.status != ProcStatus::Failed {
            return Err(Error::InvalidArgument(format!(
                "cannot respawn rank {dead}: it is {}",
                p.status.label()
            )));
        }
        *p = Process {
            status: ProcStatus::Respawned { recovering: true },
            step: 0,
            state: None,
        };
        self.respawns += 1;
        Ok(dead)
    }

    /// Copies the twin's state and step into a recovering newborn.
    ///
    /// Fails with [`Error::PeerFailed`] if the twin cannot answer; the
    /// newborn then stays recovering and the caller may try another twin.
    pub fn recover_from_twin(&mut self, newborn: Rank, twin: Rank) -> Result<(Matrix, usize)> {
        self.check_rank(newborn)?;
        self.check_rank(twin)?;
        if self.procs[newborn.0].status != (ProcStatus::Respawned { recovering: true }) {
            return Err(Error::InvalidArgument(format!(
                "rank {newborn} is not a recovering process"
            )));
        }
        let t = &self.procs[twin.0];
        let state = match (&t.state, t.status.is_active()) {
            (Some(m), true) => m.clone(),
            _ => return Err(Error::PeerFailed(twin.0)),
        };
        let step = t.step;
        self.procs[newborn.0] = Process {
            status: ProcStatus::Respawned { recovering: false },
            step,
            state: Some(state.clone()),
        };
        Ok((state, step))
    }
}
