//! Producer and consumer models.
//!
//! A consumer's state is a deterministic fold over the seqs it has applied,
//! so two instances agree on state exactly when they applied the same seqs in
//! the same order. [`Cluster`] wires a producer, a broker and consumer
//! instances onto an [`Engine`]: arrivals publish to the primary queue and
//! each idle instance pulls its next message from whichever endpoint its mode
//! allows, holds it for a sampled service time, then applies it.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::broker::{Broker, BrokerError, ConsumerId, Endpoint, Message, Seq};
use crate::sim::{DistributionSpec, Engine, EventHandle, RandomSource, SimError, SimTime};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WorkloadError {
    #[error("out-of-order apply: expected seq {expected}, got {got}")]
    OutOfOrder { expected: Seq, got: Seq },
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("unknown instance {0:?}")]
    UnknownInstance(ConsumerId),
    #[error("instance {0:?} cannot be interrupted while replaying a secondary delivery")]
    ReplayInterrupted(ConsumerId),
    #[error(transparent)]
    Broker(#[from] BrokerError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Order-sensitive fingerprint of an applied seq sequence. Two independent
/// 64-bit lanes: an FNV-style xor-multiply chain and a polynomial hash over
/// mixed seqs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StateDigest {
    chain: u64,
    poly: u64,
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
const POLY_BASE: u64 = 0x9e37_79b9_7f4a_7c15;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl StateDigest {
    pub const EMPTY: StateDigest = StateDigest {
        chain: FNV_OFFSET,
        poly: 0,
    };

    fn push(self, seq: Seq) -> StateDigest {
        StateDigest {
            chain: (self.chain ^ seq).wrapping_mul(FNV_PRIME),
            poly: self.poly.wrapping_mul(POLY_BASE).wrapping_add(splitmix(seq)),
        }
    }
}

impl Default for StateDigest {
    fn default() -> Self {
        Self::EMPTY
    }
}

impl fmt::Display for StateDigest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}{:016x}", self.chain, self.poly)
    }
}

/// The migrated in-memory state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ServiceState {
    pub applied_count: u64,
    pub last_seq: Seq,
    pub digest: StateDigest,
}

impl ServiceState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Strict application: `msg.seq` must directly follow `last_seq`.
    pub fn apply(self, msg: &Message) -> Result<ServiceState, WorkloadError> {
        let expected = self.last_seq + 1;
        if msg.seq != expected {
            return Err(WorkloadError::OutOfOrder { expected, got: msg.seq });
        }
        Ok(self.apply_unchecked(msg.seq))
    }

    /// Folds `seq` in without the contiguity check.
    pub fn apply_unchecked(self, seq: Seq) -> ServiceState {
        ServiceState {
            applied_count: self.applied_count + 1,
            last_seq: seq,
            digest: self.digest.push(seq),
        }
    }

    /// Folds an ordered seq list from the empty state.
    pub fn fold<I: IntoIterator<Item = Seq>>(seqs: I) -> ServiceState {
        seqs.into_iter()
            .fold(ServiceState::new(), ServiceState::apply_unchecked)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArrivalKind {
    Deterministic,
    Exponential,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProducerModel {
    /// Messages per second; zero disables the producer.
    pub rate: f64,
    pub arrivals: ArrivalKind,
    /// Time of the first deterministic arrival. `None` draws it uniformly
    /// from `(0, 1/rate]`.
    pub phase: Option<f64>,
}

impl ProducerModel {
    pub fn new(rate: f64, arrivals: ArrivalKind) -> Result<Self, WorkloadError> {
        let p = ProducerModel {
            rate,
            arrivals,
            phase: None,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_phase(mut self, phase: f64) -> Self {
        self.phase = Some(phase);
        self
    }

    pub fn validate(&self) -> Result<(), WorkloadError> {
        if !(self.rate.is_finite() && self.rate >= 0.0) {
            return Err(WorkloadError::InvalidModel(format!(
                "producer rate {} must be >= 0",
                self.rate
            )));
        }
        if let Some(p) = self.phase {
            if !(p.is_finite() && p >= 0.0) {
                return Err(WorkloadError::InvalidModel(format!("arrival phase {p} must be >= 0")));
            }
        }
        Ok(())
    }

    pub fn enabled(&self) -> bool {
        self.rate > 0.0
    }

    /// Interarrival distribution; `None` when disabled.
    pub fn interarrival(&self) -> Option<DistributionSpec> {
        if !self.enabled() {
            return None;
        }
        Some(match self.arrivals {
            ArrivalKind::Deterministic => DistributionSpec::Deterministic {
                interval: 1.0 / self.rate,
            },
            ArrivalKind::Exponential => DistributionSpec::Exponential { rate: self.rate },
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsumerModel {
    pub service: DistributionSpec,
}

impl ConsumerModel {
    pub fn new(service: DistributionSpec) -> Result<Self, WorkloadError> {
        service.validate()?;
        if service.mean() <= 0.0 {
            return Err(WorkloadError::InvalidModel("mean service time must be > 0".into()));
        }
        Ok(ConsumerModel { service })
    }

    /// Processing rate, `1 / mean service time`.
    pub fn mu(&self) -> f64 {
        1.0 / self.service.mean()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Source,
    Target,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Serving,
    Paused,
    Restoring,
    Replaying,
    Stopped,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    Primary,
    Secondary,
}

#[derive(Debug, Clone)]
struct InFlight {
    msg: Message,
    channel: Channel,
    handle: EventHandle,
}

#[derive(Debug, Clone)]
pub struct ConsumerInstance {
    id: ConsumerId,
    role: Role,
    state: ServiceState,
    mode: Mode,
    inflight: Option<InFlight>,
    mode_log: Vec<(SimTime, Mode)>,
}

impl ConsumerInstance {
    pub fn id(&self) -> ConsumerId {
        self.id
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn state(&self) -> &ServiceState {
        &self.state
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn is_idle(&self) -> bool {
        self.inflight.is_none()
    }

    /// Seq currently being processed, if any.
    pub fn inflight_seq(&self) -> Option<Seq> {
        self.inflight.as_ref().map(|f| f.msg.seq)
    }

    /// Every mode change with its instant, starting with creation.
    pub fn mode_log(&self) -> &[(SimTime, Mode)] {
        &self.mode_log
    }
}

/// Events owned by the workload layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WorkloadEvent {
    Arrival,
    ServiceDone(ConsumerId),
}

/// A completed message application.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Applied {
    pub instance: ConsumerId,
    pub seq: Seq,
    pub channel: Channel,
}

pub struct Cluster {
    broker: Broker,
    queue: String,
    producer: ProducerModel,
    consumer: ConsumerModel,
    instances: Vec<ConsumerInstance>,
    arrival_rng: RandomSource,
    service_rng: RandomSource,
    next_arrival: Option<EventHandle>,
    arrivals_scheduled: u64,
    phase: f64,
}

const ARRIVAL_STREAM: u64 = 1;
const SERVICE_STREAM: u64 = 2;

impl Cluster {
    pub fn new(
        queue: &str,
        producer: ProducerModel,
        consumer: ConsumerModel,
        seed: u64,
    ) -> Result<Self, WorkloadError> {
        producer.validate()?;
        let mut broker = Broker::new();
        broker.declare(queue)?;
        let mut arrival_rng = RandomSource::with_stream(seed, ARRIVAL_STREAM);
        let phase = match (producer.phase, producer.interarrival()) {
            (Some(p), _) => p,
            (None, Some(DistributionSpec::Deterministic { interval })) => interval * arrival_rng.uniform_open_closed(),
            _ => 0.0,
        };
        Ok(Cluster {
            broker,
            queue: queue.to_string(),
            producer,
            consumer,
            instances: Vec::new(),
            arrival_rng,
            service_rng: RandomSource::with_stream(seed, SERVICE_STREAM),
            next_arrival: None,
            arrivals_scheduled: 0,
            phase,
        })
    }

    pub fn broker(&self) -> &Broker {
        &self.broker
    }

    pub fn broker_mut(&mut self) -> &mut Broker {
        &mut self.broker
    }

    pub fn queue_name(&self) -> &str {
        &self.queue
    }

    pub fn producer(&self) -> &ProducerModel {
        &self.producer
    }

    pub fn consumer_model(&self) -> &ConsumerModel {
        &self.consumer
    }

    pub fn last_published(&self) -> Seq {
        self.broker.queue(&self.queue).map(|q| q.last_published()).unwrap_or(0)
    }

    pub fn instance(&self, id: ConsumerId) -> Result<&ConsumerInstance, WorkloadError> {
        self.instances
            .get(id.0 as usize)
            .ok_or(WorkloadError::UnknownInstance(id))
    }

    fn instance_mut(&mut self, id: ConsumerId) -> Result<&mut ConsumerInstance, WorkloadError> {
        self.instances
            .get_mut(id.0 as usize)
            .ok_or(WorkloadError::UnknownInstance(id))
    }

    pub fn instances(&self) -> &[ConsumerInstance] {
        &self.instances
    }

    /// Creates an instance holding `state` in `mode`. Serving instances are
    /// attached to the primary queue, replaying ones to the secondary.
    pub fn spawn(
        &mut self,
        role: Role,
        state: ServiceState,
        mode: Mode,
        now: SimTime,
    ) -> Result<ConsumerId, WorkloadError> {
        let id = ConsumerId(self.instances.len() as u32);
        self.instances.push(ConsumerInstance {
            id,
            role,
            state,
            mode: Mode::Stopped,
            inflight: None,
            mode_log: Vec::new(),
        });
        self.enter_mode(id, mode, now)?;
        Ok(id)
    }

    /// Schedules the first arrival. No-op when the producer is disabled.
    pub fn start_producer<E: From<WorkloadEvent>>(&mut self, engine: &mut Engine<E>) -> Result<(), WorkloadError> {
        if let Some(at) = self.next_arrival_time(engine.now())? {
            self.next_arrival = Some(engine.schedule(at, WorkloadEvent::Arrival.into())?);
        }
        Ok(())
    }

    pub fn stop_producer<E>(&mut self, engine: &mut Engine<E>) {
        if let Some(h) = self.next_arrival.take() {
            engine.cancel(h);
        }
    }

    pub fn producing(&self) -> bool {
        self.next_arrival.is_some()
    }

    fn next_arrival_time(&mut self, now: SimTime) -> Result<Option<SimTime>, WorkloadError> {
        let Some(gap) = self.producer.interarrival() else {
            return Ok(None);
        };
        let at = match gap {
            // absolute grid, so rounding does not accumulate
            DistributionSpec::Deterministic { interval } => {
                SimTime::new(self.phase + self.arrivals_scheduled as f64 * interval)?
            }
            DistributionSpec::Exponential { .. } => {
                let offset = if self.arrivals_scheduled == 0 { self.phase } else { 0.0 };
                now.after(offset + gap.sample(&mut self.arrival_rng))?
            }
        };
        self.arrivals_scheduled += 1;
        Ok(Some(at.max(now)))
    }

    /// Publishes one message, schedules the next arrival and wakes idle
    /// consumers.
    pub fn on_arrival<E: From<WorkloadEvent>>(&mut self, engine: &mut Engine<E>) -> Result<Message, WorkloadError> {
        let now = engine.now();
        let msg = self.broker.publish(&self.queue, now)?;
        self.next_arrival = None;
        if let Some(at) = self.next_arrival_time(now)? {
            self.next_arrival = Some(engine.schedule(at, WorkloadEvent::Arrival.into())?);
        }
        self.kick_all(engine)?;
        Ok(msg)
    }

    pub fn kick_all<E: From<WorkloadEvent>>(&mut self, engine: &mut Engine<E>) -> Result<(), WorkloadError> {
        for i in 0..self.instances.len() {
            self.kick(ConsumerId(i as u32), engine)?;
        }
        Ok(())
    }

    /// If the instance is idle and its mode allows consuming, takes the next
    /// message and schedules its completion.
    pub fn kick<E: From<WorkloadEvent>>(
        &mut self,
        id: ConsumerId,
        engine: &mut Engine<E>,
    ) -> Result<(), WorkloadError> {
        let inst = self.instance(id)?;
        if !inst.is_idle() {
            return Ok(());
        }
        let (endpoint, channel) = match inst.mode {
            Mode::Serving => (Endpoint::Primary(&self.queue), Channel::Primary),
            Mode::Replaying => (Endpoint::Secondary(&self.queue), Channel::Secondary),
            _ => return Ok(()),
        };
        let Some(msg) = self.broker.consume_next(endpoint, id)? else {
            return Ok(());
        };
        let hold = self.consumer.service.sample(&mut self.service_rng);
        let handle = engine.schedule_in(hold, WorkloadEvent::ServiceDone(id).into())?;
        self.instance_mut(id)?.inflight = Some(InFlight { msg, channel, handle });
        Ok(())
    }

    /// Completes the in-flight message of `id`: applies it, acks primary
    /// deliveries, and pulls the next one.
    pub fn on_service_done<E: From<WorkloadEvent>>(
        &mut self,
        id: ConsumerId,
        engine: &mut Engine<E>,
    ) -> Result<Applied, WorkloadError> {
        let inst = self.instance_mut(id)?;
        let flight = inst
            .inflight
            .take()
            .expect("service completion without an in-flight message");
        inst.state = inst.state.apply(&flight.msg)?;
        if flight.channel == Channel::Primary {
            let queue = self.queue.clone();
            self.broker.ack(&queue, flight.msg.seq)?;
        }
        self.kick(id, engine)?;
        Ok(Applied {
            instance: id,
            seq: flight.msg.seq,
            channel: flight.channel,
        })
    }

    /// Changes mode without touching broker attachments.
    fn enter_mode(&mut self, id: ConsumerId, mode: Mode, now: SimTime) -> Result<(), WorkloadError> {
        let queue = self.queue.clone();
        let old = self.instance(id)?.mode;
        let endpoint = |m: Mode| match m {
            Mode::Serving => Some(Endpoint::Primary(&queue)),
            Mode::Replaying => Some(Endpoint::Secondary(&queue)),
            _ => None,
        };
        if old != mode {
            if let Some(ep) = endpoint(old) {
                self.broker.detach(ep, id)?;
            }
            if let Some(ep) = endpoint(mode) {
                if let Err(e) = self.broker.attach(ep, id) {
                    if let Some(back) = endpoint(old) {
                        self.broker.attach(back, id)?;
                    }
                    return Err(e.into());
                }
            }
        }
        let inst = self.instance_mut(id)?;
        inst.mode = mode;
        inst.mode_log.push((now, mode));
        Ok(())
    }

    /// Moves an instance to `mode`. An interrupted primary delivery is
    /// requeued at the head of the primary queue. Leaving `Replaying` with a
    /// delivery still in flight is an error.
    pub fn set_mode<E: From<WorkloadEvent>>(
        &mut self,
        id: ConsumerId,
        mode: Mode,
        engine: &mut Engine<E>,
    ) -> Result<(), WorkloadError> {
        let inst = self.instance_mut(id)?;
        if inst.mode == mode {
            return Ok(());
        }
        if let Some(flight) = inst.inflight.take() {
            match flight.channel {
                Channel::Primary => {
                    engine.cancel(flight.handle);
                    let queue = self.queue.clone();
                    self.broker.requeue(&queue, flight.msg.seq)?;
                }
                Channel::Secondary => {
                    self.instance_mut(id)?.inflight = Some(flight);
                    return Err(WorkloadError::ReplayInterrupted(id));
                }
            }
        }
        self.enter_mode(id, mode, engine.now())?;
        self.kick(id, engine)
    }

    /// Atomically stops `from` and puts `to` in serving mode at the current
    /// instant. `from` must be idle or serving from the primary.
    pub fn switch_serving<E: From<WorkloadEvent>>(
        &mut self,
        from: ConsumerId,
        to: ConsumerId,
        engine: &mut Engine<E>,
    ) -> Result<(), WorkloadError> {
        self.set_mode(from, Mode::Stopped, engine)?;
        self.set_mode(to, Mode::Serving, engine)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::Handler;

    fn det(interval: f64) -> DistributionSpec {
        DistributionSpec::deterministic(interval).unwrap()
    }

    struct Bench {
        cluster: Cluster,
        applied: Vec<(f64, Seq)>,
        published: u64,
    }

    impl Handler<WorkloadEvent> for Bench {
        type Error = WorkloadError;

        fn handle(&mut self, engine: &mut Engine<WorkloadEvent>, event: WorkloadEvent) -> Result<(), WorkloadError> {
            match event {
                WorkloadEvent::Arrival => {
                    self.cluster.on_arrival(engine)?;
                    self.published += 1;
                }
                WorkloadEvent::ServiceDone(id) => {
                    let a = self.cluster.on_service_done(id, engine)?;
                    self.applied.push((engine.now().secs(), a.seq));
                }
            }
            Ok(())
        }
    }

    fn bench(rate: f64, arrivals: ArrivalKind, service: DistributionSpec, seed: u64) -> Bench {
        let producer = ProducerModel {
            rate,
            arrivals,
            phase: None,
        };
        let cluster = Cluster::new("q", producer, ConsumerModel::new(service).unwrap(), seed).unwrap();
        Bench {
            cluster,
            applied: Vec::new(),
            published: 0,
        }
    }

    #[test]
    fn apply_on_empty_state() {
        let msg = Message {
            seq: 1,
            publish_time: SimTime::ZERO,
        };
        let s = ServiceState::new().apply(&msg).unwrap();
        assert_eq!((s.applied_count, s.last_seq), (1, 1));
        assert_ne!(s.digest, StateDigest::EMPTY);
    }

    #[test]
    fn fold_is_deterministic() {
        assert_eq!(ServiceState::fold(1..=100), ServiceState::fold(1..=100));
    }

    #[test]
    fn fold_extends_by_apply() {
        let msg = Message {
            seq: 10,
            publish_time: SimTime::ZERO,
        };
        assert_eq!(
            ServiceState::fold(1..=10),
            ServiceState::fold(1..=9).apply(&msg).unwrap()
        );
    }

    #[test]
    fn digest_is_order_sensitive() {
        assert_ne!(
            ServiceState::fold([1, 2, 3]).digest,
            ServiceState::fold([2, 1, 3]).digest
        );
        assert_ne!(ServiceState::fold([1, 2]).digest, ServiceState::fold([1, 2, 2]).digest);
    }

    #[test]
    fn out_of_order_apply_is_an_error() {
        let s = ServiceState::fold(1..=3);
        let gap = Message {
            seq: 5,
            publish_time: SimTime::ZERO,
        };
        let dup = Message {
            seq: 3,
            publish_time: SimTime::ZERO,
        };
        assert_eq!(s.apply(&gap), Err(WorkloadError::OutOfOrder { expected: 4, got: 5 }));
        assert_eq!(s.apply(&dup), Err(WorkloadError::OutOfOrder { expected: 4, got: 3 }));
    }

    #[test]
    fn mu_from_deterministic_service() {
        assert_eq!(ConsumerModel::new(det(0.05)).unwrap().mu(), 20.0);
        assert!(ConsumerModel::new(det(0.0)).is_err());
    }

    #[test]
    fn drains_ten_buffered_messages_in_half_a_second() {
        let mut b = bench(0.0, ArrivalKind::Deterministic, det(0.05), 1);
        let mut engine: Engine<WorkloadEvent> = Engine::new();
        for _ in 0..10 {
            b.cluster.broker_mut().publish("q", SimTime::ZERO).unwrap();
        }
        b.cluster
            .spawn(Role::Source, ServiceState::new(), Mode::Serving, SimTime::ZERO)
            .unwrap();
        b.cluster.kick_all(&mut engine).unwrap();
        engine.run_until(&mut b, None).unwrap();
        assert_eq!(b.applied.len(), 10);
        let (last_t, last_seq) = *b.applied.last().unwrap();
        assert_eq!(last_seq, 10);
        assert!((last_t - 0.5).abs() < 1e-9, "drained at {last_t}");
    }

    #[test]
    fn paused_instance_freezes_state_while_queue_grows() {
        let mut b = bench(10.0, ArrivalKind::Deterministic, det(0.05), 3);
        let mut engine: Engine<WorkloadEvent> = Engine::new();
        let id = b
            .cluster
            .spawn(Role::Source, ServiceState::new(), Mode::Serving, SimTime::ZERO)
            .unwrap();
        b.cluster.start_producer(&mut engine).unwrap();
        engine.run_until(&mut b, Some(SimTime::new(2.0).unwrap())).unwrap();
        b.cluster.set_mode(id, Mode::Paused, &mut engine).unwrap();
        let frozen = *b.cluster.instance(id).unwrap().state();
        let backlog = b.cluster.broker().queue("q").unwrap().len();
        engine.run_until(&mut b, Some(SimTime::new(7.0).unwrap())).unwrap();
        assert_eq!(*b.cluster.instance(id).unwrap().state(), frozen);
        let grown = b.cluster.broker().queue("q").unwrap().len() - backlog;
        assert_eq!(grown, 50);
        // resuming drains everything in order
        b.cluster.set_mode(id, Mode::Serving, &mut engine).unwrap();
        b.cluster.stop_producer(&mut engine);
        engine.run_until(&mut b, None).unwrap();
        assert_eq!(
            *b.cluster.instance(id).unwrap().state(),
            ServiceState::fold(1..=b.published)
        );
    }

    #[test]
    fn pause_requeues_in_flight_message() {
        let mut b = bench(0.0, ArrivalKind::Deterministic, det(1.0), 3);
        let mut engine: Engine<WorkloadEvent> = Engine::new();
        b.cluster.broker_mut().publish("q", SimTime::ZERO).unwrap();
        let id = b
            .cluster
            .spawn(Role::Source, ServiceState::new(), Mode::Serving, SimTime::ZERO)
            .unwrap();
        b.cluster.kick(id, &mut engine).unwrap();
        assert_eq!(b.cluster.instance(id).unwrap().inflight_seq(), Some(1));
        b.cluster.set_mode(id, Mode::Paused, &mut engine).unwrap();
        assert_eq!(b.cluster.instance(id).unwrap().inflight_seq(), None);
        assert_eq!(engine.pending(), 0);
        assert_eq!(b.cluster.broker().queue("q").unwrap().len(), 1);
    }

    #[test]
    fn deterministic_producer_count() {
        let mut b = bench(10.0, ArrivalKind::Deterministic, det(0.05), 11);
        let mut engine: Engine<WorkloadEvent> = Engine::new();
        b.cluster.start_producer(&mut engine).unwrap();
        engine.run_until(&mut b, Some(SimTime::new(10.0).unwrap())).unwrap();
        assert_eq!(b.published, 100);
    }

    #[test]
    fn exponential_producer_count_within_three_sigma() {
        let mut b = bench(10.0, ArrivalKind::Exponential, det(0.05), 5);
        let mut engine: Engine<WorkloadEvent> = Engine::new();
        b.cluster.start_producer(&mut engine).unwrap();
        engine.run_until(&mut b, Some(SimTime::new(1000.0).unwrap())).unwrap();
        let n = b.published as f64;
        assert!((n - 10_000.0).abs() <= 300.0, "published {n}");
    }

    #[test]
    fn disabled_producer_publishes_nothing() {
        let mut b = bench(0.0, ArrivalKind::Exponential, det(0.05), 5);
        let mut engine: Engine<WorkloadEvent> = Engine::new();
        b.cluster.start_producer(&mut engine).unwrap();
        engine.run_until(&mut b, Some(SimTime::new(100.0).unwrap())).unwrap();
        assert_eq!(b.published, 0);
        assert!(!b.cluster.producing());
    }

    #[test]
    fn switch_serving_hands_primary_over() {
        let mut b = bench(0.0, ArrivalKind::Deterministic, det(0.05), 1);
        let mut engine: Engine<WorkloadEvent> = Engine::new();
        let a = b
            .cluster
            .spawn(Role::Source, ServiceState::new(), Mode::Serving, SimTime::ZERO)
            .unwrap();
        let t = b
            .cluster
            .spawn(Role::Target, ServiceState::new(), Mode::Restoring, SimTime::ZERO)
            .unwrap();
        assert!(b.cluster.set_mode(t, Mode::Serving, &mut engine).is_err());
        b.cluster.switch_serving(a, t, &mut engine).unwrap();
        assert_eq!(b.cluster.broker().queue("q").unwrap().consumer(), Some(t));
        assert_eq!(b.cluster.instance(a).unwrap().mode(), Mode::Stopped);
    }
}
