//! TSQR drivers and the replica arithmetic behind their failure budgets.
//!
//! All four variants start from the same place: the global `m x n` matrix is
//! cut into `P` row blocks, block `i` goes to rank `i`, and every rank
//! factors its block locally. They differ in what happens over the
//! `log2(P)` exchange rounds that follow.
//!
//! * [`AlgorithmKind::Baseline`] is a binary reduction tree. At round `s`
//!   ranks with bit `s` set send their factor to `rank - 2^s` and return.
//!   Only rank 0 ends up with `R`.
//! * [`AlgorithmKind::Redundant`] turns the tree into a butterfly: buddies
//!   `rank ^ 2^s` swap factors and both keep going, so at the start of
//!   round `s` every intermediate factor exists on `2^s` ranks. A process
//!   whose buddy is gone returns.
//! * [`AlgorithmKind::Replace`] does the same, but a process whose buddy is
//!   gone looks for another member of the buddy's replica group and
//!   exchanges with it instead.
//! * [`AlgorithmKind::SelfHealing`] respawns the dead buddy on its rank,
//!   restores its state from a twin and then exchanges with the newborn.
//!
//! Whichever way two factors meet, the one that belongs to the lower block
//! is stacked on top. Both sides of every exchange therefore factor the
//! same bytes and replicas stay bitwise identical.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::densela::{householder_qr_r, rel_residual, stack, Matrix, TriangularFactor};
use crate::error::{Error, Result};
use crate::simnet::{
    rounds_for, ExchangeOutcome, FailureSchedule, Phase, ProcStatus, Rank, Request, ServiceMode,
    Snapshot, World,
};

/// Default bound on the relative gram residual of every holder.
pub const DEFAULT_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AlgorithmKind {
    #[serde(rename = "baseline")]
    Baseline,
    #[serde(rename = "redundant")]
    Redundant,
    #[serde(rename = "replace")]
    Replace,
    #[serde(rename = "selfheal")]
    SelfHealing,
}

impl AlgorithmKind {
    pub const ALL: [AlgorithmKind; 4] = [
        Self::Baseline,
        Self::Redundant,
        Self::Replace,
        Self::SelfHealing,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Baseline => "baseline",
            Self::Redundant => "redundant",
            Self::Replace => "replace",
            Self::SelfHealing => "selfheal",
        }
    }
}

impl fmt::Display for AlgorithmKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AlgorithmKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown algorithm {s:?}")))
    }
}

/// Role of a rank in one round of the reduction tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineRole {
    Sender,
    Receiver,
    Inactive,
}

/// Rank arithmetic for `P = 2^L` processes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Topology {
    procs: usize,
    rounds: usize,
}

impl Topology {
    pub fn new(procs: usize) -> Result<Self> {
        let rounds = rounds_for(procs)?;
        Ok(Self { procs, rounds })
    }

    pub fn procs(&self) -> usize {
        self.procs
    }

    /// Number of exchange rounds, `log2(P)`.
    pub fn rounds(&self) -> usize {
        self.rounds
    }

    fn check_round(&self, step: usize) -> Result<()> {
        if step >= self.rounds {
            return Err(Error::InvalidArgument(format!(
                "round {step} out of range: {} processes run {} round(s)",
                self.procs, self.rounds
            )));
        }
        Ok(())
    }

    /// Exchange partner at round `step`: `rank XOR 2^step`.
    pub fn buddy(&self, rank: Rank, step: usize) -> Result<Rank> {
        self.check_round(step)?;
        Ok(Rank(rank.0 ^ (1 << step)))
    }

    pub fn baseline_role(&self, rank: Rank, step: usize) -> Result<BaselineRole> {
        self.check_round(step)?;
        Ok(if !rank.0.is_multiple_of(1 << step) {
            BaselineRole::Inactive
        } else if rank.0 & (1 << step) != 0 {
            BaselineRole::Sender
        } else {
            BaselineRole::Receiver
        })
    }

    /// Ranks that hold the same intermediate factor as `rank` at the start of
    /// round `step` of a butterfly variant: the aligned block of `2^step`
    /// ranks containing `rank`.
    pub fn replica_group(&self, rank: Rank, step: usize) -> Result<Vec<Rank>> {
        if step > self.rounds || rank.0 >= self.procs {
            return Err(Error::InvalidArgument(format!(
                "replica group of rank {rank} at step {step} out of range for {} processes",
                self.procs
            )));
        }
        let base = (rank.0 >> step) << step;
        Ok((base..base + (1 << step)).map(Rank).collect())
    }

    /// Smallest member of `dead`'s replica group found in `alive`.
    ///
    /// `None` means no copy of that intermediate factor survives.
    pub fn find_replica(&self, dead: Rank, step: usize, alive: &BTreeSet<Rank>) -> Option<Rank> {
        self.replica_group(dead, step)
            .ok()?
            .into_iter()
            .find(|q| *q != dead && alive.contains(q))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub algorithm: AlgorithmKind,
    pub procs: usize,
    /// Global row count `m`.
    pub rows: usize,
    /// Column count `n`.
    pub cols: usize,
    pub seed: u64,
    pub schedule: FailureSchedule,
    pub tol: f64,
}

impl RunConfig {
    pub fn new(
        algorithm: AlgorithmKind,
        procs: usize,
        rows: usize,
        cols: usize,
        seed: u64,
    ) -> Self {
        Self {
            algorithm,
            procs,
            rows,
            cols,
            seed,
            schedule: FailureSchedule::empty(),
            tol: DEFAULT_TOL,
        }
    }

    pub fn with_schedule(mut self, schedule: FailureSchedule) -> Self {
        self.schedule = schedule;
        self
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn validate(&self) -> Result<()> {
        rounds_for(self.procs)?;
        if self.cols == 0 || self.rows == 0 {
            return Err(Error::InvalidArgument(
                "rows and cols must be positive".into(),
            ));
        }
        if !self.rows.is_multiple_of(self.procs) {
            return Err(Error::InvalidArgument(format!(
                "{} rows do not split evenly over {} processes",
                self.rows, self.procs
            )));
        }
        if self.rows / self.procs < self.cols {
            return Err(Error::InvalidArgument(format!(
                "blocks of {} rows are shorter than {} columns",
                self.rows / self.procs,
                self.cols
            )));
        }
        if !(self.tol.is_finite() && self.tol > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "tolerance {} is not positive",
                self.tol
            )));
        }
        self.schedule.validate(self.procs)
    }

    /// The global input, generated from `(seed, rows, cols)` only.
    pub fn generate_matrix(&self) -> Result<Matrix> {
        Matrix::random(self.rows, self.cols, self.seed)
    }
}

/// Final state of one rank.
#[derive(Debug, Clone, PartialEq)]
pub struct ProcState {
    pub rank: Rank,
    pub step: usize,
    pub status: ProcStatus,
    /// Last factor the rank held, if any.
    pub r: Option<TriangularFactor>,
    pub holds_final: bool,
    /// Relative gram residual against the global input; holders only.
    pub residual: Option<f64>,
}

/// How a run ended, mapped one-to-one onto CLI exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    /// At least one holder, every holder within tolerance.
    Success,
    /// No holder and some block lost every copy. An expected outcome.
    DataLoss,
    /// A holder out of tolerance, or no holder without data loss.
    Defect,
}

impl Verdict {
    pub fn exit_code(self) -> i32 {
        match self {
            Self::Success => 0,
            Self::Defect => 1,
            Self::DataLoss => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub algorithm: AlgorithmKind,
    pub tol: f64,
    pub procs: Vec<ProcState>,
    pub holders: Vec<Rank>,
    /// The factor every holder agrees on.
    pub final_r: Option<TriangularFactor>,
    pub budget_ok: bool,
    pub data_loss: bool,
    pub respawns: usize,
    pub rounds: usize,
}

impl RunReport {
    pub fn max_residual(&self) -> Option<f64> {
        self.procs
            .iter()
            .filter_map(|p| p.residual)
            .reduce(f64::max)
    }

    /// Ranks alive or respawned at termination.
    pub fn alive_count(&self) -> usize {
        self.procs
            .iter()
            .filter(|p| matches!(p.status, ProcStatus::Alive | ProcStatus::Respawned { .. }))
            .count()
    }

    pub fn status(&self, rank: Rank) -> ProcStatus {
        self.procs[rank.0].status
    }

    pub fn verdict(&self) -> Verdict {
        let within = self
            .procs
            .iter()
            .filter_map(|p| p.residual)
            .all(|r| r <= self.tol);
        if !within {
            Verdict::Defect
        } else if !self.holders.is_empty() {
            Verdict::Success
        } else if self.data_loss {
            Verdict::DataLoss
        } else {
            Verdict::Defect
        }
    }
}

/// Runs `config` on its seeded input matrix.
pub fn run(config: &RunConfig) -> Result<RunReport> {
    config.validate()?;
    let a = config.generate_matrix()?;
    run_traced(config, &a).map(|(report, _)| report)
}

/// Runs `config` on a caller-supplied global matrix.
pub fn run_with_matrix(config: &RunConfig, a: &Matrix) -> Result<RunReport> {
    run_traced(config, a).map(|(report, _)| report)
}

/// Like [`run_with_matrix`], also returning the world at every phase
/// boundary. Entry `b` is taken once the crashes at boundary `b` have
/// landed, just before round `b` starts (the last entry is the end state).
pub fn run_traced(config: &RunConfig, a: &Matrix) -> Result<(RunReport, Vec<Snapshot>)> {
    config.validate()?;
    if a.rows() != config.rows || a.cols() != config.cols {
        return Err(Error::InvalidShape(format!(
            "input is {}x{} but the configuration says {}x{}",
            a.rows(),
            a.cols(),
            config.rows,
            config.cols
        )));
    }

    let topo = Topology::new(config.procs)?;
    let mode = match config.algorithm {
        AlgorithmKind::Replace | AlgorithmKind::SelfHealing => ServiceMode::AnswerFromState,
        AlgorithmKind::Baseline | AlgorithmKind::Redundant => ServiceMode::Reciprocal,
    };
    let mut world = World::new(config.procs, config.schedule.clone())?.with_service_mode(mode);

    let block = config.rows / config.procs;
    for r in 0..config.procs {
        let local = householder_qr_r(&a.row_block(r * block, block)?)?;
        world.set_state(Rank(r), local.into_matrix(), 0)?;
    }

    let mut snapshots = Vec::with_capacity(topo.rounds() + 1);
    for step in 0..topo.rounds() {
        world.inject_failures(step, Phase::BeforeExchange)?;
        snapshots.push(world.snapshot());

        let received = match config.algorithm {
            AlgorithmKind::Baseline => baseline_round(&mut world, &topo, step)?,
            AlgorithmKind::Redundant => redundant_round(&mut world, &topo, step)?,
            AlgorithmKind::Replace => replace_round(&mut world, &topo, step)?,
            AlgorithmKind::SelfHealing => self_healing_round(&mut world, &topo, step)?,
        };
        // Updates are applied only after every exchange of the round has been
        // matched, so replicas and twins always answer with start-of-round state.
        for (rank, peer) in received {
            let own = held_factor(&world, rank)?;
            let merged = merge(rank, step, own, peer)?;
            world.set_state(rank, merged.into_matrix(), step + 1)?;
        }

        world.inject_failures(step, Phase::AfterExchange)?;
    }
    snapshots.push(world.snapshot());

    let report = build_report(config, &topo, &world, a, &snapshots)?;
    Ok((report, snapshots))
}

fn held_factor(world: &World, rank: Rank) -> Result<TriangularFactor> {
    let state = world
        .process(rank)
        .state
        .clone()
        .ok_or_else(|| Error::Defect(format!("rank {rank} is active but holds no factor")))?;
    TriangularFactor::try_from(state)
}

/// Stacks the lower block's factor on top and refactors.
fn merge(rank: Rank, step: usize, own: TriangularFactor, peer: Matrix) -> Result<TriangularFactor> {
    let peer = TriangularFactor::try_from(peer)?;
    let stacked = if rank.0 & (1 << step) == 0 {
        stack(&own, &peer)?
    } else {
        stack(&peer, &own)?
    };
    householder_qr_r(&stacked)
}

fn payload(world: &World, rank: Rank) -> Result<Matrix> {
    world
        .process(rank)
        .state
        .clone()
        .ok_or_else(|| Error::Defect(format!("rank {rank} has nothing to send")))
}

type Received = BTreeMap<Rank, Matrix>;

fn unexpected(rank: Rank, outcome: &ExchangeOutcome) -> Error {
    Error::Defect(format!("rank {rank} got unexpected outcome {outcome:?}"))
}

fn baseline_round(world: &mut World, topo: &Topology, step: usize) -> Result<Received> {
    let mut roles = BTreeMap::new();
    let mut requests = Vec::new();
    for rank in world.active_set() {
        let role = topo.baseline_role(rank, step)?;
        let b = topo.buddy(rank, step)?;
        match role {
            BaselineRole::Sender => {
                requests.push(Request::sendrecv(rank, b, payload(world, rank)?))
            }
            BaselineRole::Receiver => requests.push(Request::recv(rank, b)),
            BaselineRole::Inactive => {
                return Err(Error::Defect(format!(
                    "rank {rank} is still active in round {step} after sending"
                )))
            }
        }
        roles.insert(rank, role);
    }

    let mut received = Received::new();
    for (rank, outcome) in world.exchange(step, requests)? {
        match (roles[&rank], outcome) {
            (BaselineRole::Receiver, ExchangeOutcome::Delivered(m)) => {
                received.insert(rank, m);
            }
            // Senders are done once their factor is out. A failed partner
            // aborts the receiver: the tree has no second copy to fall back on.
            (BaselineRole::Sender, ExchangeOutcome::Sent) | (_, ExchangeOutcome::PeerFailed) => {
                world.retire(rank)?
            }
            (_, other) => return Err(unexpected(rank, &other)),
        }
    }
    Ok(received)
}

fn butterfly_requests(world: &World, topo: &Topology, step: usize) -> Result<Vec<Request>> {
    world
        .active_set()
        .into_iter()
        .map(|rank| {
            Ok(Request::sendrecv(
                rank,
                topo.buddy(rank, step)?,
                payload(world, rank)?,
            ))
        })
        .collect()
}

fn redundant_round(world: &mut World, topo: &Topology, step: usize) -> Result<Received> {
    let requests = butterfly_requests(world, topo, step)?;
    let mut received = Received::new();
    for (rank, outcome) in world.exchange(step, requests)? {
        match outcome {
            ExchangeOutcome::Delivered(m) => {
                received.insert(rank, m);
            }
            ExchangeOutcome::PeerFailed => world.retire(rank)?,
            other => return Err(unexpected(rank, &other)),
        }
    }
    Ok(received)
}

fn replace_round(world: &mut World, topo: &Topology, step: usize) -> Result<Received> {
    let mut targets: BTreeMap<Rank, Rank> = world
        .active_set()
        .into_iter()
        .map(|rank| Ok((rank, topo.buddy(rank, step)?)))
        .collect::<Result<_>>()?;
    let mut tried: BTreeMap<Rank, BTreeSet<Rank>> = BTreeMap::new();
    let mut received = Received::new();

    while !targets.is_empty() {
        let requests = targets
            .iter()
            .map(|(&rank, &to)| Ok(Request::sendrecv(rank, to, payload(world, rank)?)))
            .collect::<Result<Vec<_>>>()?;
        let mut retry = BTreeMap::new();
        for (rank, outcome) in world.exchange(step, requests)? {
            match outcome {
                ExchangeOutcome::Delivered(m) => {
                    received.insert(rank, m);
                }
                ExchangeOutcome::PeerFailed => {
                    let failed = targets[&rank];
                    let seen = tried.entry(rank).or_default();
                    seen.insert(failed);
                    let candidates: BTreeSet<Rank> =
                        world.active_set().difference(seen).copied().collect();
                    match topo.find_replica(failed, step, &candidates) {
                        Some(replica) => {
                            retry.insert(rank, replica);
                        }
                        None => world.retire(rank)?,
                    }
                }
                other => return Err(unexpected(rank, &other)),
            }
        }
        targets = retry;
    }
    Ok(received)
}

fn self_healing_round(world: &mut World, topo: &Topology, step: usize) -> Result<Received> {
    let requests = butterfly_requests(world, topo, step)?;
    let mut received = Received::new();
    let mut reconnect = Vec::new();
    let mut spawned = BTreeSet::new();

    for (rank, outcome) in world.exchange(step, requests)? {
        match outcome {
            ExchangeOutcome::Delivered(m) => {
                received.insert(rank, m);
            }
            ExchangeOutcome::PeerFailed => {
                let dead = topo.buddy(rank, step)?;
                if spawned.contains(&dead) {
                    reconnect.push((rank, dead));
                    continue;
                }
                if world.status(dead) != ProcStatus::Failed {
                    // A returned peer cannot be replaced.
                    world.retire(rank)?;
                    continue;
                }
                match topo.find_replica(dead, step, &world.active_set()) {
                    Some(twin) => {
                        world.spawn_replacement(dead)?;
                        world.recover_from_twin(dead, twin)?;
                        spawned.insert(dead);
                        reconnect.push((rank, dead));
                    }
                    None => world.retire(rank)?,
                }
            }
            other => return Err(unexpected(rank, &other)),
        }
    }

    if !reconnect.is_empty() {
        let mut requests = Vec::with_capacity(2 * reconnect.len());
        for &(rank, newborn) in &reconnect {
            requests.push(Request::sendrecv(rank, newborn, payload(world, rank)?));
            requests.push(Request::sendrecv(newborn, rank, payload(world, newborn)?));
        }
        for (rank, outcome) in world.exchange(step, requests)? {
            match outcome {
                ExchangeOutcome::Delivered(m) => {
                    received.insert(rank, m);
                }
                other => return Err(unexpected(rank, &other)),
            }
        }
    }
    Ok(received)
}

fn build_report(
    config: &RunConfig,
    topo: &Topology,
    world: &World,
    a: &Matrix,
    snapshots: &[Snapshot],
) -> Result<RunReport> {
    let rounds = topo.rounds();
    let mut procs = Vec::with_capacity(config.procs);
    let mut holders = Vec::new();
    let mut final_r: Option<TriangularFactor> = None;

    for r in 0..config.procs {
        let rank = Rank(r);
        let p = world.process(rank);
        let factor = p
            .state
            .clone()
            .map(TriangularFactor::try_from)
            .transpose()?;
        let holds_final = p.status.is_active() && p.step == rounds && factor.is_some();
        let mut residual = None;
        if holds_final {
            let f = factor.as_ref().expect("holder has a factor");
            residual = Some(rel_residual(a, f)?);
            match &final_r {
                None => final_r = Some(f.clone()),
                Some(first) if first.bit_eq(f) => {}
                Some(_) => {
                    return Err(Error::Defect(format!(
                        "holder {rank} disagrees with holder {}",
                        holders.first().map_or(0, |h: &Rank| h.0)
                    )))
                }
            }
            holders.push(rank);
        }
        procs.push(ProcState {
            rank,
            step: p.step,
            status: p.status,
            r: factor,
            holds_final,
            residual,
        });
    }

    let data_loss = snapshots
        .iter()
        .enumerate()
        .any(|(step, snap)| !data_available(snap, step));

    Ok(RunReport {
        algorithm: config.algorithm,
        tol: config.tol,
        procs,
        holders,
        final_r,
        budget_ok: budget_check(&config.schedule, config.procs, config.algorithm),
        data_loss,
        respawns: world.respawns(),
        rounds,
    })
}

/// Whether every intermediate factor of step `step` still has a live copy.
///
/// Block `b` of step `step` is covered when some active rank in
/// `b·2^step .. (b+1)·2^step` holds a factor at that step.
pub fn data_available(snapshot: &Snapshot, step: usize) -> bool {
    let procs = snapshot.procs.len();
    let width = 1usize << step;
    if width > procs {
        return false;
    }
    (0..procs / width).all(|block| {
        snapshot.procs[block * width..(block + 1) * width]
            .iter()
            .any(|p| p.status.is_active() && p.step == step && p.state.is_some())
    })
}

/// Sufficient condition for a run to finish with at least one holder.
///
/// Crashes are counted per phase boundary; boundary `b` sits just before
/// round `b`, when each intermediate factor has `2^b` copies.
///
/// * Redundant and Replace: the number of crashes up to and including
///   boundary `b` is at most `2^b - 1` for every `b`. In particular nothing
///   may fail before round 0, when each block has a single copy.
/// * SelfHealing: respawns restore the copies, so the bound applies to each
///   boundary separately.
/// * Baseline: a crash is harmless only if the rank already sent its factor.
///
/// Returns `false` for schedules that are invalid for `procs`.
pub fn budget_check(schedule: &FailureSchedule, procs: usize, algorithm: AlgorithmKind) -> bool {
    let Ok(rounds) = rounds_for(procs) else {
        return false;
    };
    if schedule.validate(procs).is_err() {
        return false;
    }
    let mut per_boundary = vec![0usize; rounds + 1];
    for ev in schedule.events() {
        per_boundary[ev.boundary()] += 1;
    }
    let tolerated = |b: usize| (1usize << b) - 1;

    match algorithm {
        AlgorithmKind::Baseline => schedule
            .events()
            .iter()
            .all(|ev| ev.rank.0 != 0 && (ev.rank.0.trailing_zeros() as usize) < ev.boundary()),
        AlgorithmKind::Redundant | AlgorithmKind::Replace => per_boundary
            .iter()
            .enumerate()
            .scan(0usize, |total, (b, &count)| {
                *total += count;
                Some(*total <= tolerated(b))
            })
            .all(|ok| ok),
        AlgorithmKind::SelfHealing => per_boundary
            .iter()
            .enumerate()
            .all(|(b, &count)| count <= tolerated(b)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simnet::FailureEvent;

    fn sched(events: &[(usize, usize, Phase)]) -> FailureSchedule {
        FailureSchedule::new(
            events
                .iter()
                .map(|&(r, s, p)| FailureEvent::new(r, s, p))
                .collect(),
        )
        .unwrap()
    }

    fn ranks(v: &[usize]) -> Vec<Rank> {
        v.iter().copied().map(Rank).collect()
    }

    const AFTER: Phase = Phase::AfterExchange;
    const BEFORE: Phase = Phase::BeforeExchange;

    #[test]
    fn buddy_examples() {
        let t = Topology::new(4).unwrap();
        assert_eq!(t.buddy(Rank(1), 0).unwrap(), Rank(0));
        assert_eq!(t.buddy(Rank(0), 1).unwrap(), Rank(2));
        assert!(matches!(
            t.buddy(Rank(0), 2),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn buddy_is_an_involution() {
        let t = Topology::new(16).unwrap();
        for r in 0..16 {
            for s in 0..4 {
                let b = t.buddy(Rank(r), s).unwrap();
                assert_ne!(b, Rank(r));
                assert_eq!(t.buddy(b, s).unwrap(), Rank(r));
                assert_eq!(b.0.abs_diff(r), 1 << s);
            }
        }
    }

    #[test]
    fn baseline_roles() {
        let t = Topology::new(4).unwrap();
        assert_eq!(t.baseline_role(Rank(1), 0).unwrap(), BaselineRole::Sender);
        assert_eq!(t.baseline_role(Rank(0), 0).unwrap(), BaselineRole::Receiver);
        assert_eq!(t.baseline_role(Rank(2), 1).unwrap(), BaselineRole::Sender);
        assert_eq!(t.baseline_role(Rank(1), 1).unwrap(), BaselineRole::Inactive);

        let t = Topology::new(16).unwrap();
        for s in 0..4 {
            let count = |want| {
                (0..16)
                    .filter(|&r| t.baseline_role(Rank(r), s).unwrap() == want)
                    .count()
            };
            assert_eq!(count(BaselineRole::Receiver), 16 >> (s + 1));
            assert_eq!(count(BaselineRole::Sender), 16 >> (s + 1));
            assert_eq!(count(BaselineRole::Inactive), 16 - (16 >> s));
        }
    }

    #[test]
    fn replica_group_examples() {
        let t = Topology::new(4).unwrap();
        assert_eq!(t.replica_group(Rank(2), 0).unwrap(), ranks(&[2]));
        assert_eq!(t.replica_group(Rank(2), 1).unwrap(), ranks(&[2, 3]));
        assert_eq!(t.replica_group(Rank(2), 2).unwrap(), ranks(&[0, 1, 2, 3]));
        assert!(t.replica_group(Rank(2), 3).is_err());
        let t8 = Topology::new(8).unwrap();
        assert_eq!(t8.replica_group(Rank(5), 2).unwrap(), ranks(&[4, 5, 6, 7]));
    }

    #[test]
    fn find_replica_examples() {
        let t = Topology::new(4).unwrap();
        let alive: BTreeSet<Rank> = ranks(&[0, 1, 3]).into_iter().collect();
        assert_eq!(t.find_replica(Rank(2), 1, &alive), Some(Rank(3)));
        assert_eq!(t.find_replica(Rank(2), 0, &alive), None);

        let t8 = Topology::new(8).unwrap();
        let alive: BTreeSet<Rank> = ranks(&[0, 1, 2, 3, 4, 5, 7]).into_iter().collect();
        assert_eq!(t8.find_replica(Rank(6), 2, &alive), Some(Rank(4)));
    }

    #[test]
    fn config_validation() {
        let ok = RunConfig::new(AlgorithmKind::Redundant, 4, 64, 4, 7);
        assert!(ok.validate().is_ok());
        for bad in [
            RunConfig::new(AlgorithmKind::Redundant, 3, 63, 4, 7),
            RunConfig::new(AlgorithmKind::Redundant, 4, 62, 4, 7),
            RunConfig::new(AlgorithmKind::Redundant, 4, 12, 4, 7),
            RunConfig::new(AlgorithmKind::Redundant, 4, 64, 0, 7),
            RunConfig::new(AlgorithmKind::Redundant, 4, 64, 4, 7).with_tol(-1.0),
        ] {
            assert!(run(&bad).is_err(), "{bad:?}");
        }
    }

    #[test]
    fn algorithm_names_round_trip() {
        for a in AlgorithmKind::ALL {
            assert_eq!(a.name().parse::<AlgorithmKind>().unwrap(), a);
        }
        assert!("tree".parse::<AlgorithmKind>().is_err());
    }

    #[test]
    fn budget_examples() {
        let one_after = sched(&[(2, 0, AFTER)]);
        assert!(budget_check(&one_after, 4, AlgorithmKind::Redundant));
        assert!(budget_check(&one_after, 4, AlgorithmKind::Replace));

        let one_before = sched(&[(2, 0, BEFORE)]);
        assert!(!budget_check(&one_before, 4, AlgorithmKind::Redundant));
        assert!(!budget_check(&one_before, 4, AlgorithmKind::SelfHealing));

        // One crash at the end of the first step, three more at the end of the second.
        let healing = sched(&[(2, 0, AFTER), (4, 1, AFTER), (5, 1, AFTER), (6, 1, AFTER)]);
        assert!(budget_check(&healing, 8, AlgorithmKind::SelfHealing));
        assert!(!budget_check(&healing, 8, AlgorithmKind::Redundant));

        let two_early = sched(&[(2, 0, AFTER), (5, 1, BEFORE)]);
        assert!(!budget_check(&two_early, 8, AlgorithmKind::SelfHealing));
        assert!(!budget_check(&two_early, 8, AlgorithmKind::Replace));

        assert!(budget_check(
            &FailureSchedule::empty(),
            1,
            AlgorithmKind::Baseline
        ));
        assert!(budget_check(
            &sched(&[(1, 0, AFTER)]),
            4,
            AlgorithmKind::Baseline
        ));
        assert!(!budget_check(
            &sched(&[(2, 0, AFTER)]),
            4,
            AlgorithmKind::Baseline
        ));
        assert!(!budget_check(
            &sched(&[(0, 1, AFTER)]),
            4,
            AlgorithmKind::Baseline
        ));

        assert!(!budget_check(
            &FailureSchedule::empty(),
            3,
            AlgorithmKind::Redundant
        ));
        assert!(!budget_check(
            &sched(&[(9, 0, AFTER)]),
            4,
            AlgorithmKind::Redundant
        ));
    }

    #[test]
    fn every_variant_on_one_process_is_a_local_qr() {
        let config = RunConfig::new(AlgorithmKind::Baseline, 1, 16, 3, 5);
        let direct = householder_qr_r(&config.generate_matrix().unwrap()).unwrap();
        for alg in AlgorithmKind::ALL {
            let report = run(&RunConfig {
                algorithm: alg,
                ..config.clone()
            })
            .unwrap();
            assert_eq!(report.holders, ranks(&[0]));
            assert_eq!(report.rounds, 0);
            assert!(report.final_r.unwrap().bit_eq(&direct));
        }
    }

    #[test]
    fn single_crash_scenarios() {
        let base = RunConfig::new(AlgorithmKind::Baseline, 4, 64, 4, 7);
        let report = run(&base).unwrap();
        assert_eq!(report.holders, ranks(&[0]));
        assert!(report.max_residual().unwrap() <= DEFAULT_TOL);

        let fig = base.clone().with_schedule(sched(&[(2, 0, AFTER)]));
        let red = run(&RunConfig {
            algorithm: AlgorithmKind::Redundant,
            ..fig.clone()
        })
        .unwrap();
        assert_eq!(red.holders, ranks(&[1, 3]));
        assert_eq!(red.status(Rank(0)), ProcStatus::Returned);
        assert!(!red.data_loss);

        let rep = run(&RunConfig {
            algorithm: AlgorithmKind::Replace,
            ..fig.clone()
        })
        .unwrap();
        assert_eq!(rep.holders, ranks(&[0, 1, 3]));

        let heal = run(&RunConfig {
            algorithm: AlgorithmKind::SelfHealing,
            ..fig
        })
        .unwrap();
        assert_eq!(heal.holders, ranks(&[0, 1, 2, 3]));
        assert_eq!(heal.respawns, 1);
        assert_eq!(heal.alive_count(), 4);
        assert!(red.final_r.unwrap().bit_eq(heal.final_r.as_ref().unwrap()));
    }

    #[test]
    fn data_available_examples() {
        let config = RunConfig::new(AlgorithmKind::Redundant, 4, 32, 2, 1);
        let a = config.generate_matrix().unwrap();
        let (_, snaps) = run_traced(&config, &a).unwrap();
        assert!(snaps
            .iter()
            .enumerate()
            .all(|(s, snap)| data_available(snap, s)));

        let one = config.clone().with_schedule(sched(&[(2, 0, AFTER)]));
        let (_, snaps) = run_traced(&one, &a).unwrap();
        assert!(data_available(&snaps[1], 1));

        let both = config.with_schedule(sched(&[(2, 0, AFTER), (3, 0, AFTER)]));
        let (report, snaps) = run_traced(&both, &a).unwrap();
        assert!(!data_available(&snaps[1], 1));
        assert!(report.data_loss);
        assert!(report.holders.is_empty());
        assert_eq!(report.verdict(), Verdict::DataLoss);
    }

    #[test]
    fn verdict_flags_out_of_tolerance_holders() {
        let config = RunConfig::new(AlgorithmKind::Redundant, 2, 16, 2, 3);
        let mut report = run(&config).unwrap();
        assert_eq!(report.verdict(), Verdict::Success);
        report.tol = 0.0;
        report.procs[0].residual = Some(1e-3);
        assert_eq!(report.verdict(), Verdict::Defect);
    }

    #[test]
    fn input_shape_must_match_config() {
        let config = RunConfig::new(AlgorithmKind::Redundant, 2, 16, 2, 3);
        let wrong = Matrix::random(16, 3, 3).unwrap();
        assert!(matches!(
            run_with_matrix(&config, &wrong),
            Err(Error::InvalidShape(_))
        ));
    }
}
