//! Migration coordinator.
//!
//! Each strategy is a phase machine driven by events on the shared engine.
//! The coordinator owns the broker, the two consumer instances, and the
//! checkpoint registry for one scenario run.
//!
//! | strategy            | pipeline                                                            |
//! |---------------------|---------------------------------------------------------------------|
//! | `stop-and-copy`     | checkpoint, build, push, pod_delete, pod_create, pull, restore      |
//! | `ms2m-individual`   | checkpoint, build, push, pull, restore, replay                      |
//! | `ms2m-cutoff`       | as individual, plus a cutoff timer started when accumulation begins |
//! | `ms2m-statefulset`  | checkpoint, build, push, (stop) pod_delete, pod_create, pull, restore, replay |
//!
//! Every pipeline ends with a zero-length `handover`. The source is captured
//! atomically when the migration is requested, and for the message-based
//! strategies the secondary queue opens at that same instant with
//! `start_seq = snapshot.last_seq + 1`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::broker::{BrokerError, ConsumerId, Seq};
use crate::checkpoint::{self, CheckpointArtifact, CheckpointError, PhaseLatencyModel, RegistryModel};
use crate::metrics::{self, Phase, PhaseTimeline, TimelineError};
use crate::sim::{Engine, EventHandle, Handler, SimError, SimTime};
use crate::workload::{
    Channel, Cluster, ConsumerModel, Mode, ProducerModel, Role, ServiceState, WorkloadError, WorkloadEvent,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MigrationError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("handover criterion unmet: {0}")]
    HandoverCriterionUnmet(String),
    #[error("invariant breach: {0}")]
    InvariantBreach(String),
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Broker(#[from] BrokerError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Timeline(#[from] TimelineError),
}

impl MigrationError {
    /// True for errors that indicate lost, duplicated or reordered state.
    pub fn is_invariant_breach(&self) -> bool {
        matches!(
            self,
            MigrationError::InvariantBreach(_)
                | MigrationError::HandoverCriterionUnmet(_)
                | MigrationError::Workload(WorkloadError::OutOfOrder { .. })
                | MigrationError::Timeline(_)
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MigrationStrategy {
    #[serde(rename = "stop-and-copy")]
    StopAndCopy,
    #[serde(rename = "ms2m-individual")]
    Ms2mIndividual,
    #[serde(rename = "ms2m-cutoff")]
    Ms2mCutoff,
    #[serde(rename = "ms2m-statefulset")]
    Ms2mStatefulSet,
}

impl MigrationStrategy {
    pub const ALL: [MigrationStrategy; 4] = [
        MigrationStrategy::StopAndCopy,
        MigrationStrategy::Ms2mIndividual,
        MigrationStrategy::Ms2mCutoff,
        MigrationStrategy::Ms2mStatefulSet,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MigrationStrategy::StopAndCopy => "stop-and-copy",
            MigrationStrategy::Ms2mIndividual => "ms2m-individual",
            MigrationStrategy::Ms2mCutoff => "ms2m-cutoff",
            MigrationStrategy::Ms2mStatefulSet => "ms2m-statefulset",
        }
    }

    /// Whether target state is rebuilt by replaying a secondary queue.
    pub fn replays(self) -> bool {
        self != MigrationStrategy::StopAndCopy
    }
}

impl fmt::Display for MigrationStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MigrationStrategy {
    type Err = MigrationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MigrationStrategy::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = MigrationStrategy::ALL.iter().map(|s| s.name()).collect();
                MigrationError::InvalidParameter(format!(
                    "unknown strategy {s:?}, expected one of {}",
                    names.join(", ")
                ))
            })
    }
}

/// Accumulation limit derived from the replay budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CutoffThreshold {
    Finite(f64),
    /// No traffic, so accumulation never needs to stop.
    Unbounded,
}

impl CutoffThreshold {
    pub fn finite(self) -> Option<f64> {
        match self {
            CutoffThreshold::Finite(t) => Some(t),
            CutoffThreshold::Unbounded => None,
        }
    }
}

/// `T_cutoff = T_replay_max * mu_target / lambda`: the longest accumulation
/// whose replay still fits in `T_replay_max`.
pub fn cutoff_threshold(t_replay_max: f64, mu_target: f64, lambda: f64) -> Result<CutoffThreshold, MigrationError> {
    if !(t_replay_max.is_finite() && t_replay_max > 0.0) {
        return Err(MigrationError::InvalidParameter(format!(
            "T_replay_max {t_replay_max} must be > 0"
        )));
    }
    if !(mu_target.is_finite() && mu_target > 0.0) {
        return Err(MigrationError::InvalidParameter(format!(
            "mu_target {mu_target} must be > 0"
        )));
    }
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(MigrationError::InvalidParameter(format!(
            "lambda {lambda} must be >= 0"
        )));
    }
    if lambda == 0.0 {
        return Ok(CutoffThreshold::Unbounded);
    }
    Ok(CutoffThreshold::Finite(t_replay_max * mu_target / lambda))
}

/// Messages accumulated at rate `lambda` over `t_accum` seconds.
pub fn expected_accumulated(lambda: f64, t_accum: f64) -> f64 {
    lambda * t_accum
}

/// Time for a target processing `mu_target` msgs/s to replay what
/// accumulated over `t_accum`.
pub fn expected_replay_time(lambda: f64, t_accum: f64, mu_target: f64) -> Result<f64, MigrationError> {
    if !(mu_target.is_finite() && mu_target > 0.0) {
        return Err(MigrationError::InvalidParameter(format!(
            "mu_target {mu_target} must be > 0"
        )));
    }
    Ok(expected_accumulated(lambda, t_accum) / mu_target)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CutoffParams {
    pub t_replay_max: f64,
    pub lambda: f64,
    pub mu_target: f64,
    pub t_cutoff: CutoffThreshold,
    /// Measured accumulation time, set once the cutoff fires.
    pub t_accum: Option<f64>,
}

impl CutoffParams {
    pub fn new(t_replay_max: f64, lambda: f64, mu_target: f64) -> Result<Self, MigrationError> {
        Ok(CutoffParams {
            t_replay_max,
            lambda,
            mu_target,
            t_cutoff: cutoff_threshold(t_replay_max, mu_target, lambda)?,
            t_accum: None,
        })
    }
}

/// Everything needed to run one migration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MigrationScenario {
    pub strategy: MigrationStrategy,
    pub producer: ProducerModel,
    pub consumer: ConsumerModel,
    pub latency: PhaseLatencyModel,
    /// Replay budget for `ms2m-cutoff`.
    pub t_replay_max: f64,
    /// Virtual time at which migration is requested.
    pub warmup: f64,
    /// Horizon, as a multiple of the stop-and-copy total.
    pub timeout_multiplier: f64,
    pub seed: u64,
    /// After handover, stop the producer and let the target drain the
    /// primary queue.
    pub drain_after_handover: bool,
}

pub const QUEUE_NAME: &str = "events";
const IMAGE_KEY: &str = "checkpoint/source";

impl MigrationScenario {
    pub fn new(
        strategy: MigrationStrategy,
        producer: ProducerModel,
        consumer: ConsumerModel,
        latency: PhaseLatencyModel,
    ) -> Self {
        MigrationScenario {
            strategy,
            producer,
            consumer,
            latency,
            t_replay_max: 60.0,
            warmup: 10.0,
            timeout_multiplier: 10.0,
            seed: 0,
            drain_after_handover: true,
        }
    }

    pub fn validate(&self) -> Result<(), MigrationError> {
        self.producer.validate()?;
        self.consumer.service.validate()?;
        self.latency.validate()?;
        if !(self.warmup.is_finite() && self.warmup >= 0.0) {
            return Err(MigrationError::InvalidParameter(format!(
                "warmup {} must be >= 0",
                self.warmup
            )));
        }
        if !(self.timeout_multiplier.is_finite() && self.timeout_multiplier > 0.0) {
            return Err(MigrationError::InvalidParameter(format!(
                "timeout multiplier {} must be > 0",
                self.timeout_multiplier
            )));
        }
        if self.strategy == MigrationStrategy::Ms2mCutoff {
            cutoff_threshold(self.t_replay_max, self.consumer.mu(), self.producer.rate)?;
        }
        Ok(())
    }

    /// Length of the convergence window after the migration request. A
    /// zero-latency profile falls back to one second as the base.
    pub fn horizon(&self) -> f64 {
        let base = self.latency.stop_and_copy_total();
        self.timeout_multiplier * if base > 0.0 { base } else { 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Converged,
    TimedOut,
}

impl RunStatus {
    pub fn name(self) -> &'static str {
        match self {
            RunStatus::Converged => "converged",
            RunStatus::TimedOut => "timed_out",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceTrace {
    pub role: Role,
    pub mode_log: Vec<(SimTime, Mode)>,
    pub final_state: ServiceState,
}

/// Outcome of one migration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MigrationRun {
    pub strategy: MigrationStrategy,
    pub seed: u64,
    pub lambda: f64,
    pub mu: f64,
    pub status: RunStatus,
    pub requested_at: SimTime,
    pub finished_at: SimTime,
    pub timeline: PhaseTimeline,
    pub instances: Vec<InstanceTrace>,
    pub snapshot: ServiceState,
    pub secondary_start_seq: Option<Seq>,
    pub secondary_delivered: Vec<Seq>,
    pub cutoff: Option<CutoffParams>,
    pub cutoff_seq: Option<Seq>,
    pub cutoff_fired: bool,
    pub replay_count: u64,
    pub replay_started_at: Option<SimTime>,
    /// Secondary queue length at the instant replay began.
    pub backlog_at_replay_start: Option<u64>,
    /// Highest seq published during the whole run.
    pub published_total: Seq,
    pub events_executed: u64,
}

impl MigrationRun {
    pub fn total_migration_time(&self) -> f64 {
        self.finished_at - self.requested_at
    }

    pub fn replay_duration(&self) -> f64 {
        self.timeline.duration_of(Phase::Replay)
    }

    pub fn source(&self) -> &InstanceTrace {
        &self.instances[0]
    }

    pub fn target(&self) -> Option<&InstanceTrace> {
        self.instances.get(1)
    }

    /// Checks the run-level invariants. Any failure is a model bug, never an
    /// expected outcome.
    pub fn check_invariants(&self) -> Result<(), MigrationError> {
        let breach = |msg: String| Err(MigrationError::InvariantBreach(msg));
        let total = self.total_migration_time();
        let downtime = metrics::compute_downtime(self);
        if downtime > total {
            return breach(format!("downtime {downtime} exceeds total {total}"));
        }
        if self.strategy == MigrationStrategy::StopAndCopy && downtime != total {
            return breach(format!("stop-and-copy downtime {downtime} != total {total}"));
        }
        let phase_sum: f64 = self.timeline.entries().iter().map(|e| e.end - e.start).sum();
        if (phase_sum - total).abs() > 1e-9 {
            return breach(format!("phases sum to {phase_sum}, total is {total}"));
        }
        if metrics::max_concurrent_serving(self) > 1 {
            return breach("source and target served the primary queue simultaneously".into());
        }
        if let Some(start) = self.secondary_start_seq {
            let contiguous = self
                .secondary_delivered
                .iter()
                .zip(start..)
                .all(|(&got, want)| got == want);
            if !contiguous {
                return breach("secondary replay delivered a gap or a repeat".into());
            }
            if let (Some(c), RunStatus::Converged) = (self.cutoff_seq, self.status) {
                let last = self.secondary_delivered.last().copied().unwrap_or(start - 1);
                if last != c {
                    return breach(format!("replay ended at {last}, cutoff was {c}"));
                }
            }
        }
        if let Some(target) = self.target() {
            let n = target.final_state.last_seq;
            if target.final_state != ServiceState::fold(1..=n) {
                return breach(format!("target state is not the in-order fold of 1..={n}"));
            }
            if self.status == RunStatus::Converged && target.final_state.last_seq != self.published_total {
                return breach(format!(
                    "target stopped at {} but {} messages were published",
                    target.final_state.last_seq, self.published_total
                ));
            }
        } else if self.status == RunStatus::Converged {
            return breach("converged without a target".into());
        }
        Ok(())
    }
}

/// What the target must satisfy before it can take over the primary queue.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HandoverCriterion {
    /// Secondary drained and target state equal to the live source's.
    Converged,
    /// Target replayed exactly up to the cutoff seq.
    Cutoff(Seq),
    /// Cold migration: the restored snapshot is the state.
    Restored,
}

/// Atomically detaches `source` and makes `target` the serving consumer of
/// the primary queue, after checking `criterion`.
pub fn handover<E: From<WorkloadEvent>>(
    cluster: &mut Cluster,
    source: ConsumerId,
    target: ConsumerId,
    criterion: HandoverCriterion,
    engine: &mut Engine<E>,
) -> Result<(), MigrationError> {
    let src = cluster.instance(source)?;
    let tgt = cluster.instance(target)?;
    let unmet = |why: String| Err(MigrationError::HandoverCriterionUnmet(why));
    if !tgt.is_idle() {
        return unmet("target still processing".into());
    }
    match criterion {
        HandoverCriterion::Converged => {
            let secondary_empty = cluster
                .broker()
                .secondary(cluster.queue_name())
                .is_none_or(|s| s.is_empty());
            if !secondary_empty {
                return unmet("secondary queue not drained".into());
            }
            if !src.is_idle() {
                return unmet("source still processing".into());
            }
            if src.state().last_seq != tgt.state().last_seq {
                return unmet(format!(
                    "target at {} but source at {}",
                    tgt.state().last_seq,
                    src.state().last_seq
                ));
            }
        }
        HandoverCriterion::Cutoff(seq) => {
            if tgt.state().last_seq != seq {
                return unmet(format!("target at {} but cutoff is {seq}", tgt.state().last_seq));
            }
        }
        HandoverCriterion::Restored => {
            if src.mode() != Mode::Stopped && src.mode() != Mode::Paused {
                return unmet("source still serving".into());
            }
        }
    }
    cluster.switch_serving(source, target, engine)?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Event {
    Workload(WorkloadEvent),
    Request,
    PhaseDone(Phase),
    CutoffTimer,
    Timeout,
}

impl From<WorkloadEvent> for Event {
    fn from(e: WorkloadEvent) -> Self {
        Event::Workload(e)
    }
}

struct Coordinator<'a> {
    sc: &'a MigrationScenario,
    cluster: Cluster,
    registry: RegistryModel,
    source: ConsumerId,
    target: Option<ConsumerId>,
    timeline: PhaseTimeline,
    requested_at: Option<SimTime>,
    finished_at: Option<SimTime>,
    status: Option<RunStatus>,
    artifact: Option<CheckpointArtifact>,
    accum_started: Option<SimTime>,
    cutoff: Option<CutoffParams>,
    cutoff_seq: Option<Seq>,
    cutoff_fired: bool,
    timers: Vec<EventHandle>,
    replay_started: Option<SimTime>,
    backlog_at_replay_start: Option<u64>,
    replay_count: u64,
    secondary_start: Option<Seq>,
    secondary_delivered: Vec<Seq>,
}

impl Coordinator<'_> {
    fn migrating(&self) -> bool {
        self.requested_at.is_some() && self.finished_at.is_none()
    }

    fn queue(&self) -> String {
        self.cluster.queue_name().to_string()
    }

    fn begin(&mut self, phase: Phase, duration: f64, engine: &mut Engine<Event>) -> Result<(), MigrationError> {
        self.timeline.begin(phase, engine.now())?;
        engine.schedule_in(duration, Event::PhaseDone(phase))?;
        Ok(())
    }

    fn on_request(&mut self, engine: &mut Engine<Event>) -> Result<(), MigrationError> {
        let now = engine.now();
        self.requested_at = Some(now);
        let horizon = now.after(self.sc.horizon())?;
        self.timers.push(engine.schedule(horizon, Event::Timeout)?);

        let lat = self.sc.latency;
        if self.sc.strategy == MigrationStrategy::StopAndCopy || lat.pause_during_checkpoint {
            self.cluster.set_mode(self.source, Mode::Paused, engine)?;
        }
        let (artifact, _) = checkpoint::create_checkpoint(self.cluster.instance(self.source)?, now, &lat)?;
        self.artifact = Some(artifact);

        if self.sc.strategy.replays() {
            let start = artifact.snapshot().last_seq + 1;
            let queue = self.queue();
            self.cluster.broker_mut().open_secondary(&queue, start)?;
            self.secondary_start = Some(start);
            self.accum_started = Some(now);
        }
        if self.sc.strategy == MigrationStrategy::Ms2mCutoff {
            let params = CutoffParams::new(self.sc.t_replay_max, self.sc.producer.rate, self.sc.consumer.mu())?;
            if let CutoffThreshold::Finite(tc) = params.t_cutoff {
                self.timers.push(engine.schedule(now.after(tc)?, Event::CutoffTimer)?);
            }
            self.cutoff = Some(params);
        }
        self.begin(Phase::Checkpoint, lat.t_checkpoint, engine)
    }

    fn on_phase_done(&mut self, phase: Phase, engine: &mut Engine<Event>) -> Result<(), MigrationError> {
        let now = engine.now();
        self.timeline.end(phase, now)?;
        let lat = self.sc.latency;
        match phase {
            Phase::Checkpoint => {
                let resume = self.sc.strategy.replays() && self.cluster.instance(self.source)?.mode() == Mode::Paused;
                if resume {
                    self.cluster.set_mode(self.source, Mode::Serving, engine)?;
                }
                let artifact = self.artifact.expect("checkpoint phase without artifact");
                checkpoint::build_and_push(&mut self.registry, IMAGE_KEY, artifact, now, &lat)?;
                self.begin(Phase::Build, lat.t_build, engine)
            }
            Phase::Build => self.begin(Phase::Push, lat.t_push, engine),
            Phase::Push => match self.sc.strategy {
                MigrationStrategy::StopAndCopy => {
                    self.cluster.set_mode(self.source, Mode::Stopped, engine)?;
                    self.begin(Phase::PodDelete, lat.t_pod_delete, engine)
                }
                MigrationStrategy::Ms2mStatefulSet => {
                    self.stop_source_at_cutoff(engine)?;
                    self.begin(Phase::PodDelete, lat.t_pod_delete, engine)
                }
                MigrationStrategy::Ms2mIndividual | MigrationStrategy::Ms2mCutoff => self.begin_pull(engine),
            },
            Phase::PodDelete => self.begin(Phase::PodCreate, lat.t_pod_create, engine),
            Phase::PodCreate => self.begin_pull(engine),
            Phase::Pull => self.begin(Phase::Restore, lat.t_restore, engine),
            Phase::Restore => self.on_restored(engine),
            Phase::Replay | Phase::Handover | Phase::Wait => {
                unreachable!("{phase:?} is never scheduled as a timed phase")
            }
        }
    }

    fn begin_pull(&mut self, engine: &mut Engine<Event>) -> Result<(), MigrationError> {
        let now = engine.now();
        let plan = checkpoint::pull_and_restore(&self.registry, IMAGE_KEY, now, &self.sc.latency)?;
        debug_assert_eq!(plan.pull_start, now);
        let id = self.cluster.spawn(Role::Target, plan.state, Mode::Restoring, now)?;
        self.target = Some(id);
        self.begin(Phase::Pull, self.sc.latency.t_pull, engine)
    }

    fn on_restored(&mut self, engine: &mut Engine<Event>) -> Result<(), MigrationError> {
        let target = self.target.expect("restore without target");
        if !self.sc.strategy.replays() {
            self.handover(HandoverCriterion::Restored, engine)?;
            return Ok(());
        }
        let now = engine.now();
        self.replay_started = Some(now);
        let queue = self.queue();
        self.backlog_at_replay_start = self.cluster.broker().secondary(&queue).map(|s| s.len() as u64);
        self.timeline.begin(Phase::Replay, now)?;
        self.cluster.set_mode(target, Mode::Replaying, engine)?;
        self.try_handover(engine)
    }

    /// Stops the source and fixes the cutoff seq: the later of what the
    /// source has applied and what the target has already taken from the
    /// secondary. Primary copies at or below the cutoff are dropped since the
    /// target receives them by replay.
    fn stop_source_at_cutoff(&mut self, engine: &mut Engine<Event>) -> Result<(), MigrationError> {
        let source_last = self.cluster.instance(self.source)?.state().last_seq;
        self.cluster.set_mode(self.source, Mode::Stopped, engine)?;
        let target_progress = match self.target {
            Some(t) => {
                let inst = self.cluster.instance(t)?;
                inst.inflight_seq().unwrap_or(inst.state().last_seq)
            }
            None => 0,
        };
        let start = self.secondary_start.expect("cutoff without secondary");
        let cutoff = source_last.max(target_progress).max(start - 1);
        let queue = self.queue();
        self.cluster.broker_mut().discard_through(&queue, cutoff)?;
        self.cluster.broker_mut().set_cutoff(&queue, cutoff)?;
        self.cutoff_seq = Some(cutoff);
        if let (Some(params), Some(since)) = (self.cutoff.as_mut(), self.accum_started) {
            params.t_accum = Some(engine.now() - since);
        }
        Ok(())
    }

    fn on_cutoff_timer(&mut self, engine: &mut Engine<Event>) -> Result<(), MigrationError> {
        if !self.migrating() || self.cutoff_seq.is_some() {
            return Ok(());
        }
        self.cutoff_fired = true;
        self.stop_source_at_cutoff(engine)?;
        self.try_handover(engine)
    }

    fn criterion(&self) -> HandoverCriterion {
        match self.cutoff_seq {
            Some(c) => HandoverCriterion::Cutoff(c),
            None => HandoverCriterion::Converged,
        }
    }

    fn try_handover(&mut self, engine: &mut Engine<Event>) -> Result<(), MigrationError> {
        if !self.migrating() {
            return Ok(());
        }
        let Some(target) = self.target else { return Ok(()) };
        let tgt = self.cluster.instance(target)?;
        if tgt.mode() != Mode::Replaying || !tgt.is_idle() {
            return Ok(());
        }
        let ready = match self.criterion() {
            HandoverCriterion::Cutoff(c) => tgt.state().last_seq == c,
            _ => {
                let src = self.cluster.instance(self.source)?;
                let queue = self.queue();
                let drained = self.cluster.broker().secondary(&queue).is_none_or(|s| s.is_empty());
                drained && src.mode() == Mode::Serving && src.is_idle() && src.state().last_seq == tgt.state().last_seq
            }
        };
        if ready {
            self.timeline.end(Phase::Replay, engine.now())?;
            self.handover(self.criterion(), engine)?;
        }
        Ok(())
    }

    fn handover(&mut self, criterion: HandoverCriterion, engine: &mut Engine<Event>) -> Result<(), MigrationError> {
        let now = engine.now();
        let target = self.target.expect("handover without target");
        self.timeline.begin(Phase::Handover, now)?;
        handover(&mut self.cluster, self.source, target, criterion, engine)?;
        self.timeline.end(Phase::Handover, now)?;
        let queue = self.queue();
        if self.secondary_start.is_some() {
            let sec = self.cluster.broker_mut().close_secondary(&queue)?;
            self.secondary_delivered = sec.delivered().to_vec();
        }
        self.finish(RunStatus::Converged, engine)
    }

    fn finish(&mut self, status: RunStatus, engine: &mut Engine<Event>) -> Result<(), MigrationError> {
        let now = engine.now();
        self.finished_at = Some(now);
        self.status = Some(status);
        self.timeline.close(now)?;
        for h in self.timers.drain(..) {
            engine.cancel(h);
        }
        if status == RunStatus::TimedOut || self.sc.drain_after_handover {
            self.cluster.stop_producer(engine);
        }
        if status == RunStatus::TimedOut {
            let queue = self.queue();
            if let Some(sec) = self.cluster.broker().secondary(&queue) {
                self.secondary_delivered = sec.delivered().to_vec();
            }
        }
        Ok(())
    }
}

impl Handler<Event> for Coordinator<'_> {
    type Error = MigrationError;

    fn handle(&mut self, engine: &mut Engine<Event>, event: Event) -> Result<(), MigrationError> {
        match event {
            Event::Workload(WorkloadEvent::Arrival) => {
                self.cluster.on_arrival(engine)?;
            }
            Event::Workload(WorkloadEvent::ServiceDone(id)) => {
                let applied = self.cluster.on_service_done(id, engine)?;
                if applied.channel == Channel::Secondary {
                    self.replay_count += 1;
                }
                self.try_handover(engine)?;
            }
            Event::Request => self.on_request(engine)?,
            Event::PhaseDone(phase) => self.on_phase_done(phase, engine)?,
            Event::CutoffTimer => self.on_cutoff_timer(engine)?,
            Event::Timeout => {
                if self.migrating() {
                    self.finish(RunStatus::TimedOut, engine)?;
                }
            }
        }
        Ok(())
    }

    fn is_done(&self) -> bool {
        match self.status {
            Some(RunStatus::TimedOut) => true,
            Some(RunStatus::Converged) => !self.sc.drain_after_handover,
            None => false,
        }
    }
}

/// Runs one migration scenario to completion on a fresh engine.
pub fn execute(scenario: &MigrationScenario) -> Result<MigrationRun, MigrationError> {
    scenario.validate()?;
    let mut engine: Engine<Event> = Engine::new();
    let mut cluster = Cluster::new(QUEUE_NAME, scenario.producer, scenario.consumer, scenario.seed)?;
    let source = cluster.spawn(Role::Source, ServiceState::new(), Mode::Serving, SimTime::ZERO)?;
    cluster.start_producer(&mut engine)?;
    engine.schedule(SimTime::new(scenario.warmup)?, Event::Request)?;

    let mut coord = Coordinator {
        sc: scenario,
        cluster,
        registry: RegistryModel::new(),
        source,
        target: None,
        timeline: PhaseTimeline::new(),
        requested_at: None,
        finished_at: None,
        status: None,
        artifact: None,
        accum_started: None,
        cutoff: None,
        cutoff_seq: None,
        cutoff_fired: false,
        timers: Vec::new(),
        replay_started: None,
        backlog_at_replay_start: None,
        replay_count: 0,
        secondary_start: None,
        secondary_delivered: Vec::new(),
    };
    engine.run_until(&mut coord, None)?;

    let (Some(requested_at), Some(finished_at), Some(status)) = (coord.requested_at, coord.finished_at, coord.status)
    else {
        return Err(MigrationError::InvariantBreach(
            "event queue ran dry before the migration finished".into(),
        ));
    };
    let instances = coord
        .cluster
        .instances()
        .iter()
        .map(|i| InstanceTrace {
            role: i.role(),
            mode_log: i.mode_log().to_vec(),
            final_state: *i.state(),
        })
        .collect();
    Ok(MigrationRun {
        strategy: scenario.strategy,
        seed: scenario.seed,
        lambda: scenario.producer.rate,
        mu: scenario.consumer.mu(),
        status,
        requested_at,
        finished_at,
        timeline: coord.timeline,
        instances,
        snapshot: *coord.artifact.expect("migration without checkpoint").snapshot(),
        secondary_start_seq: coord.secondary_start,
        secondary_delivered: coord.secondary_delivered,
        cutoff: coord.cutoff,
        cutoff_seq: coord.cutoff_seq,
        cutoff_fired: coord.cutoff_fired,
        replay_count: coord.replay_count,
        replay_started_at: coord.replay_started,
        backlog_at_replay_start: coord.backlog_at_replay_start,
        published_total: coord.cluster.last_published(),
        events_executed: engine.executed(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::DistributionSpec;
    use crate::workload::ArrivalKind;

    #[test]
    fn cutoff_threshold_examples() {
        assert_eq!(
            cutoff_threshold(10.0, 20.0, 10.0).unwrap(),
            CutoffThreshold::Finite(20.0)
        );
        assert_eq!(cutoff_threshold(5.0, 20.0, 20.0).unwrap(), CutoffThreshold::Finite(5.0));
        assert_eq!(cutoff_threshold(10.0, 20.0, 0.0).unwrap(), CutoffThreshold::Unbounded);
    }

    #[test]
    fn cutoff_threshold_rejects_bad_inputs() {
        assert!(cutoff_threshold(0.0, 20.0, 10.0).is_err());
        assert!(cutoff_threshold(-1.0, 20.0, 10.0).is_err());
        assert!(cutoff_threshold(10.0, 0.0, 10.0).is_err());
        assert!(cutoff_threshold(10.0, 20.0, -1.0).is_err());
    }

    #[test]
    fn accumulation_and_replay_formulas() {
        assert_eq!(expected_accumulated(10.0, 20.0), 200.0);
        assert_eq!(expected_accumulated(0.0, 1234.5), 0.0);
        assert_eq!(expected_replay_time(10.0, 20.0, 20.0).unwrap(), 10.0);
        assert!(expected_replay_time(10.0, 20.0, 0.0).is_err());
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in MigrationStrategy::ALL {
            assert_eq!(s.name().parse::<MigrationStrategy>().unwrap(), s);
            assert_eq!(serde_json::to_string(&s).unwrap(), format!("\"{}\"", s.name()));
        }
        assert!("cold".parse::<MigrationStrategy>().is_err());
    }

    fn scenario(strategy: MigrationStrategy, rate: f64) -> MigrationScenario {
        let producer = ProducerModel::new(rate, ArrivalKind::Deterministic).unwrap();
        let consumer = ConsumerModel::new(DistributionSpec::deterministic(0.05).unwrap()).unwrap();
        MigrationScenario::new(strategy, producer, consumer, PhaseLatencyModel::paper_like())
    }

    #[test]
    fn horizon_is_ten_cold_migrations() {
        let sc = scenario(MigrationStrategy::Ms2mIndividual, 10.0);
        assert!((sc.horizon() - 490.55).abs() < 1e-9);
        let mut zero = sc.clone();
        zero.latency = PhaseLatencyModel::zero();
        assert_eq!(zero.horizon(), 10.0);
    }

    #[test]
    fn invalid_scenarios() {
        let mut sc = scenario(MigrationStrategy::Ms2mCutoff, 10.0);
        sc.t_replay_max = 0.0;
        assert!(matches!(execute(&sc), Err(MigrationError::InvalidParameter(_))));
        let mut sc = scenario(MigrationStrategy::Ms2mIndividual, 10.0);
        sc.warmup = -1.0;
        assert!(execute(&sc).is_err());
    }

    #[test]
    fn handover_rejects_unmet_criterion() {
        let producer = ProducerModel::new(0.0, ArrivalKind::Deterministic).unwrap();
        let consumer = ConsumerModel::new(DistributionSpec::deterministic(0.05).unwrap()).unwrap();
        let mut cluster = Cluster::new("q", producer, consumer, 0).unwrap();
        let mut engine: Engine<WorkloadEvent> = Engine::new();
        let src = cluster
            .spawn(Role::Source, ServiceState::fold(1..=5), Mode::Serving, SimTime::ZERO)
            .unwrap();
        let tgt = cluster
            .spawn(Role::Target, ServiceState::fold(1..=3), Mode::Restoring, SimTime::ZERO)
            .unwrap();
        let err = handover(&mut cluster, src, tgt, HandoverCriterion::Converged, &mut engine).unwrap_err();
        assert!(matches!(err, MigrationError::HandoverCriterionUnmet(_)));
        let err = handover(&mut cluster, src, tgt, HandoverCriterion::Cutoff(4), &mut engine).unwrap_err();
        assert!(err.is_invariant_breach());
        handover(&mut cluster, src, tgt, HandoverCriterion::Cutoff(3), &mut engine).unwrap();
        assert_eq!(cluster.instance(tgt).unwrap().mode(), Mode::Serving);
        assert_eq!(cluster.instance(src).unwrap().mode(), Mode::Stopped);
    }
}
