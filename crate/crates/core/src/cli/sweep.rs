//! Exhaustive failure-schedule sweeps.

use itertools::Itertools;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::report::{sci17, SCHEMA_VERSION};
use crate::error::Result;
use crate::simnet::{rounds_for, FailureEvent, FailureSchedule, Phase};
use crate::tsqr::{run_with_matrix, AlgorithmKind, RunConfig, Verdict};

/// Largest process count a sweep accepts.
pub const MAX_SWEEP_PROCS: usize = 16;

/// Every single event that is valid for `procs`, in `(step, phase, rank)` order.
pub fn event_universe(procs: usize) -> Result<Vec<FailureEvent>> {
    let rounds = rounds_for(procs)?;
    let mut events = Vec::with_capacity(procs * rounds * 2);
    for step in 0..rounds {
        for phase in [Phase::BeforeExchange, Phase::AfterExchange] {
            events.extend((0..procs).map(|r| FailureEvent::new(r, step, phase)));
        }
    }
    Ok(events)
}

/// All schedules of at most `max_failures` distinct events, smallest first.
pub fn enumerate_schedules(procs: usize, max_failures: usize) -> Result<Vec<FailureSchedule>> {
    let universe = event_universe(procs)?;
    let mut out = Vec::new();
    for k in 0..=max_failures.min(universe.len()) {
        for combo in universe.iter().copied().combinations(k) {
            out.push(FailureSchedule::new(combo)?);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub failures: String,
    pub budget_ok: bool,
    pub holders: Vec<usize>,
    pub data_loss: bool,
    pub verdict: Verdict,
    #[serde(with = "sci17::option")]
    pub max_residual: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub schema_version: String,
    pub algorithm: AlgorithmKind,
    pub procs: usize,
    pub rows: usize,
    pub cols: usize,
    pub seed: u64,
    pub max_failures: usize,
    #[serde(with = "sci17")]
    pub tol: f64,
    pub schedules: usize,
    pub budget_ok: usize,
    pub success: usize,
    pub data_loss: usize,
    pub defects: usize,
    /// Schedules within budget that still ended without a holder.
    pub sufficiency_violations: Vec<String>,
    pub entries: Vec<SweepEntry>,
    pub wall_time_ms: u64,
}

impl SweepReport {
    pub fn exit_code(&self) -> i32 {
        if self.defects == 0 && self.sufficiency_violations.is_empty() {
            0
        } else {
            1
        }
    }
}

/// Runs `base` under every schedule with at most `max_failures` events.
///
/// Simulations run in parallel; entries come back in enumeration order.
pub fn run_sweep(base: &RunConfig, max_failures: usize) -> Result<SweepReport> {
    base.validate()?;
    let a = base.generate_matrix()?;
    let schedules = enumerate_schedules(base.procs, max_failures)?;

    let entries: Vec<SweepEntry> = schedules
        .par_iter()
        .map(|schedule| {
            let config = RunConfig {
                schedule: schedule.clone(),
                ..base.clone()
            };
            let budget_ok = crate::tsqr::budget_check(schedule, config.procs, config.algorithm);
            match run_with_matrix(&config, &a) {
                Ok(report) => SweepEntry {
                    failures: schedule.to_string(),
                    budget_ok,
                    holders: report.holders.iter().map(|r| r.0).collect(),
                    data_loss: report.data_loss,
                    verdict: report.verdict(),
                    max_residual: report.max_residual(),
                    error: None,
                },
                Err(e) => SweepEntry {
                    failures: schedule.to_string(),
                    budget_ok,
                    holders: Vec::new(),
                    data_loss: false,
                    verdict: Verdict::Defect,
                    max_residual: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();

    let count = |v: Verdict| entries.iter().filter(|e| e.verdict == v).count();
    Ok(SweepReport {
        schema_version: SCHEMA_VERSION.to_string(),
        algorithm: base.algorithm,
        procs: base.procs,
        rows: base.rows,
        cols: base.cols,
        seed: base.seed,
        max_failures,
        tol: base.tol,
        schedules: entries.len(),
        budget_ok: entries.iter().filter(|e| e.budget_ok).count(),
        success: count(Verdict::Success),
        data_loss: count(Verdict::DataLoss),
        defects: count(Verdict::Defect),
        sufficiency_violations: entries
            .iter()
            .filter(|e| e.budget_ok && e.holders.is_empty())
            .map(|e| e.failures.clone())
            .collect(),
        entries,
        wall_time_ms: 0,
    })
}
