//! Migration metrics: total migration time, downtime, per-phase time
//! distribution, and aggregation over repetitions.
//!
//! Downtime is the measure of instants inside the migration window
//! `[requested_at, finished_at]` at which no instance is in `serving` mode.
//! It is computed from the instances' mode logs, so every strategy is
//! measured the same way.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::migration::{MigrationRun, MigrationStrategy, RunStatus};
use crate::sim::SimTime;
use crate::workload::Mode;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TimelineError {
    #[error("cannot begin {phase:?} while {open:?} is open")]
    Overlap { phase: Phase, open: Phase },
    #[error("cannot end {phase:?}: open phase is {open:?}")]
    NotOpen { phase: Phase, open: Option<Phase> },
    #[error("{phase:?} would start at {at} before the previous entry ended at {prev_end}")]
    Backwards {
        phase: Phase,
        at: SimTime,
        prev_end: SimTime,
    },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("no reports to aggregate")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Checkpoint,
    Build,
    Push,
    Pull,
    Restore,
    PodDelete,
    PodCreate,
    Replay,
    Handover,
    Wait,
}

impl Phase {
    pub const ALL: [Phase; 10] = [
        Phase::Checkpoint,
        Phase::Build,
        Phase::Push,
        Phase::Pull,
        Phase::Restore,
        Phase::PodDelete,
        Phase::PodCreate,
        Phase::Replay,
        Phase::Handover,
        Phase::Wait,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Phase::Checkpoint => "checkpoint",
            Phase::Build => "build",
            Phase::Push => "push",
            Phase::Pull => "pull",
            Phase::Restore => "restore",
            Phase::PodDelete => "pod_delete",
            Phase::PodCreate => "pod_create",
            Phase::Replay => "replay",
            Phase::Handover => "handover",
            Phase::Wait => "wait",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseEntry {
    pub phase: Phase,
    pub start: SimTime,
    pub end: SimTime,
}

/// Contiguous, non-overlapping phase log of the coordinator pipeline. Gaps
/// between consecutive phases are recorded as `wait`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimeline {
    entries: Vec<PhaseEntry>,
    open: Option<(Phase, SimTime)>,
}

impl PhaseTimeline {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_entries(entries: Vec<PhaseEntry>) -> Self {
        PhaseTimeline { entries, open: None }
    }

    pub fn entries(&self) -> &[PhaseEntry] {
        &self.entries
    }

    pub fn open_phase(&self) -> Option<Phase> {
        self.open.map(|(p, _)| p)
    }

    fn last_end(&self) -> Option<SimTime> {
        self.entries.last().map(|e| e.end)
    }

    pub fn begin(&mut self, phase: Phase, at: SimTime) -> Result<(), TimelineError> {
        if let Some((open, _)) = self.open {
            return Err(TimelineError::Overlap { phase, open });
        }
        if let Some(prev_end) = self.last_end() {
            if at < prev_end {
                return Err(TimelineError::Backwards { phase, at, prev_end });
            }
            if at > prev_end {
                self.entries.push(PhaseEntry {
                    phase: Phase::Wait,
                    start: prev_end,
                    end: at,
                });
            }
        }
        self.open = Some((phase, at));
        Ok(())
    }

    pub fn end(&mut self, phase: Phase, at: SimTime) -> Result<(), TimelineError> {
        match self.open {
            Some((open, start)) if open == phase => {
                self.entries.push(PhaseEntry { phase, start, end: at });
                self.open = None;
                Ok(())
            }
            other => Err(TimelineError::NotOpen {
                phase,
                open: other.map(|(p, _)| p),
            }),
        }
    }

    /// Ends any open phase at `at` and pads with `wait` up to `at`.
    pub fn close(&mut self, at: SimTime) -> Result<(), TimelineError> {
        if let Some((phase, _)) = self.open {
            return self.end(phase, at);
        }
        if let Some(prev_end) = self.last_end() {
            if at > prev_end {
                self.entries.push(PhaseEntry {
                    phase: Phase::Wait,
                    start: prev_end,
                    end: at,
                });
            }
        }
        Ok(())
    }

    pub fn duration_of(&self, phase: Phase) -> f64 {
        self.entries
            .iter()
            .filter(|e| e.phase == phase)
            .map(|e| e.end - e.start)
            .sum()
    }

    /// Duration per phase, with every phase present.
    pub fn durations(&self) -> BTreeMap<Phase, f64> {
        Phase::ALL.iter().map(|&p| (p, self.duration_of(p))).collect()
    }
}

/// Serving intervals `[start, end)` of every instance, unclipped.
fn serving_intervals(run: &MigrationRun) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    for inst in &run.instances {
        let log = &inst.mode_log;
        for (i, &(at, mode)) in log.iter().enumerate() {
            if mode != Mode::Serving {
                continue;
            }
            let end = log.get(i + 1).map_or(f64::INFINITY, |&(t, _)| t.secs());
            if end > at.secs() {
                out.push((at.secs(), end));
            }
        }
    }
    out
}

/// Time inside the migration window during which nobody is serving.
pub fn compute_downtime(run: &MigrationRun) -> f64 {
    let (lo, hi) = (run.requested_at.secs(), run.finished_at.secs());
    let mut clipped: Vec<(f64, f64)> = serving_intervals(run)
        .into_iter()
        .map(|(s, e)| (s.max(lo), e.min(hi)))
        .filter(|(s, e)| e > s)
        .collect();
    clipped.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut downtime = 0.0;
    let mut cursor = lo;
    for (s, e) in clipped {
        if s > cursor {
            downtime += s - cursor;
        }
        cursor = cursor.max(e);
    }
    if hi > cursor {
        downtime += hi - cursor;
    }
    downtime
}

/// Largest number of instances serving at one instant over the whole run.
pub fn max_concurrent_serving(run: &MigrationRun) -> usize {
    let mut edges: Vec<(f64, i32)> = Vec::new();
    for (s, e) in serving_intervals(run) {
        edges.push((s, 1));
        edges.push((e, -1));
    }
    // ends before starts at equal instants: intervals are half-open
    edges.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut live = 0i32;
    let mut max = 0i32;
    for (_, d) in edges {
        live += d;
        max = max.max(live);
    }
    max as usize
}

/// Per-run metrics row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MigrationReport {
    pub strategy: MigrationStrategy,
    pub lambda: f64,
    pub mu: f64,
    pub seed: u64,
    pub status: RunStatus,
    pub total_migration_time: f64,
    pub downtime: f64,
    pub replay_count: u64,
    pub replay_duration: f64,
    pub phase_durations: BTreeMap<Phase, f64>,
    /// Replay budget, for cutoff runs.
    pub t_replay_max: Option<f64>,
    pub t_cutoff: Option<f64>,
    pub t_accum: Option<f64>,
    pub backlog_at_replay_start: Option<u64>,
}

impl MigrationReport {
    pub fn from_run(run: &MigrationRun) -> Self {
        let timeline = &run.timeline;
        MigrationReport {
            strategy: run.strategy,
            lambda: run.lambda,
            mu: run.mu,
            seed: run.seed,
            status: run.status,
            total_migration_time: run.total_migration_time(),
            downtime: compute_downtime(run),
            replay_count: run.replay_count,
            replay_duration: timeline.duration_of(Phase::Replay),
            phase_durations: timeline.durations(),
            t_replay_max: run.cutoff.map(|c| c.t_replay_max),
            t_cutoff: run.cutoff.and_then(|c| c.t_cutoff.finite()),
            t_accum: run.cutoff.and_then(|c| c.t_accum),
            backlog_at_replay_start: run.backlog_at_replay_start,
        }
    }

    pub fn phase(&self, phase: Phase) -> f64 {
        self.phase_durations.get(&phase).copied().unwrap_or(0.0)
    }
}

/// Fraction of the total migration time spent in each phase. A zero-length
/// migration puts its whole share on `handover`.
pub fn phase_shares(report: &MigrationReport) -> BTreeMap<Phase, f64> {
    let total = report.total_migration_time;
    Phase::ALL
        .iter()
        .map(|&p| {
            let share = if total > 0.0 {
                report.phase(p) / total
            } else if p == Phase::Handover {
                1.0
            } else {
                0.0
            };
            (p, share)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub strategy: MigrationStrategy,
    pub lambda: f64,
    pub t_replay_max: Option<f64>,
    pub n_runs: usize,
    pub total_mean: f64,
    pub total_std: f64,
    pub downtime_mean: f64,
    pub downtime_std: f64,
    pub phase_shares: BTreeMap<Phase, f64>,
    pub timed_out: usize,
}

/// Mean and unbiased standard deviation; the deviation of a single value
/// is 0.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn cmp_opt(a: Option<f64>, b: Option<f64>) -> Ordering {
    match (a, b) {
        (Some(x), Some(y)) => x.total_cmp(&y),
        (a, b) => a.is_some().cmp(&b.is_some()),
    }
}

/// Canonical order for reports: strategy, lambda, replay budget, seed, then
/// the measured values so that ties are broken deterministically.
pub fn report_order(a: &MigrationReport, b: &MigrationReport) -> Ordering {
    a.strategy
        .cmp(&b.strategy)
        .then(a.lambda.total_cmp(&b.lambda))
        .then(cmp_opt(a.t_replay_max, b.t_replay_max))
        .then(a.seed.cmp(&b.seed))
        .then(a.total_migration_time.total_cmp(&b.total_migration_time))
        .then(a.downtime.total_cmp(&b.downtime))
}

/// Groups reports by (strategy, lambda, replay budget) and summarises each
/// group. Rows come out in canonical order; the result does not depend on
/// the input order.
pub fn aggregate(reports: &[MigrationReport]) -> Result<Vec<AggregateRow>, MetricsError> {
    if reports.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut sorted: Vec<&MigrationReport> = reports.iter().collect();
    sorted.sort_by(|a, b| report_order(a, b));

    let same_group = |a: &MigrationReport, b: &MigrationReport| {
        a.strategy == b.strategy
            && a.lambda.total_cmp(&b.lambda).is_eq()
            && cmp_opt(a.t_replay_max, b.t_replay_max).is_eq()
    };
    let mut rows = Vec::new();
    for group in sorted.chunk_by(|a, b| same_group(a, b)) {
        let totals: Vec<f64> = group.iter().map(|r| r.total_migration_time).collect();
        let downs: Vec<f64> = group.iter().map(|r| r.downtime).collect();
        let (total_mean, total_std) = mean_std(&totals);
        let (downtime_mean, downtime_std) = mean_std(&downs);
        let n = group.len();
        let mut shares: BTreeMap<Phase, f64> = Phase::ALL.iter().map(|&p| (p, 0.0)).collect();
        for r in group {
            for (p, s) in phase_shares(r) {
                *shares.get_mut(&p).unwrap() += s;
            }
        }
        shares.values_mut().for_each(|s| *s /= n as f64);
        let first = group[0];
        rows.push(AggregateRow {
            strategy: first.strategy,
            lambda: first.lambda,
            t_replay_max: first.t_replay_max,
            n_runs: n,
            total_mean,
            total_std,
            downtime_mean,
            downtime_std,
            phase_shares: shares,
            timed_out: group.iter().filter(|r| r.status == RunStatus::TimedOut).count(),
        });
    }
    Ok(rows)
}
