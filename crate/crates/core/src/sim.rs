//! Virtual-time event engine.
//!
//! The engine owns a clock and a priority queue of pending events. Events are
//! popped in lexicographic `(time, insertion counter)` order, so two events
//! scheduled for the same instant fire in the order they were scheduled.
//! There is no wall-clock coupling anywhere: a run that spans hours of
//! virtual time completes as fast as its handlers execute.
//!
//! Randomness comes from [`RandomSource`], a ChaCha8 stream cipher keyed by a
//! 64-bit seed. ChaCha8 output is fully specified and platform independent, so
//! a given `(seed, stream)` pair yields the same draws everywhere.

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, HashMap};
use std::fmt;
use std::ops::{Add, Sub};

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("past event: cannot schedule at {at} when clock is {now}")]
    PastEvent { at: SimTime, now: SimTime },
    #[error("invalid virtual time {0}: must be finite and non-negative")]
    InvalidTime(f64),
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
}

/// A point on the virtual time axis, in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct SimTime(f64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0.0);

    pub fn new(secs: f64) -> Result<Self, SimError> {
        if secs.is_finite() && secs >= 0.0 {
            // normalise -0.0
            Ok(SimTime(secs + 0.0))
        } else {
            Err(SimError::InvalidTime(secs))
        }
    }

    pub fn secs(self) -> f64 {
        self.0
    }

    /// The instant `delay` seconds after `self`.
    pub fn after(self, delay: f64) -> Result<Self, SimError> {
        SimTime::new(self.0 + delay)
    }
}

impl Eq for SimTime {}

impl PartialOrd for SimTime {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for SimTime {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

impl Add<f64> for SimTime {
    type Output = SimTime;

    /// Panics if the result is not a valid time; use [`SimTime::after`] for
    /// untrusted offsets.
    fn add(self, rhs: f64) -> SimTime {
        SimTime::new(self.0 + rhs).expect("virtual time overflowed or went negative")
    }
}

impl Sub for SimTime {
    type Output = f64;

    fn sub(self, rhs: SimTime) -> f64 {
        self.0 - rhs.0
    }
}

impl TryFrom<f64> for SimTime {
    type Error = SimError;

    fn try_from(value: f64) -> Result<Self, Self::Error> {
        SimTime::new(value)
    }
}

impl From<SimTime> for f64 {
    fn from(t: SimTime) -> f64 {
        t.0
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}s", self.0)
    }
}

/// Handle returned by [`Engine::schedule`]; pass it to [`Engine::cancel`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EventHandle(u64);

/// Receives events popped by [`Engine::run_until`].
pub trait Handler<E> {
    type Error;

    fn handle(&mut self, engine: &mut Engine<E>, event: E) -> Result<(), Self::Error>;

    /// Stop predicate, checked before each event is popped.
    fn is_done(&self) -> bool {
        false
    }
}

pub struct Engine<E> {
    now: SimTime,
    next_id: u64,
    queue: BinaryHeap<Reverse<(SimTime, u64)>>,
    payloads: HashMap<u64, E>,
    executed: u64,
}

impl<E> Default for Engine<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E> Engine<E> {
    pub fn new() -> Self {
        Engine {
            now: SimTime::ZERO,
            next_id: 0,
            queue: BinaryHeap::new(),
            payloads: HashMap::new(),
            executed: 0,
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    /// Number of live (not cancelled) pending events.
    pub fn pending(&self) -> usize {
        self.payloads.len()
    }

    /// Total number of events executed so far.
    pub fn executed(&self) -> u64 {
        self.executed
    }

    pub fn schedule(&mut self, at: SimTime, event: E) -> Result<EventHandle, SimError> {
        if at < self.now {
            return Err(SimError::PastEvent { at, now: self.now });
        }
        let id = self.next_id;
        self.next_id += 1;
        self.queue.push(Reverse((at, id)));
        self.payloads.insert(id, event);
        Ok(EventHandle(id))
    }

    pub fn schedule_in(&mut self, delay: f64, event: E) -> Result<EventHandle, SimError> {
        let at = self.now.after(delay)?;
        self.schedule(at, event)
    }

    /// Cancels a pending event. Returns false if it already fired or was
    /// cancelled before.
    pub fn cancel(&mut self, handle: EventHandle) -> bool {
        self.payloads.remove(&handle.0).is_some()
    }

    /// Time of the next live event, discarding cancelled heap entries.
    pub fn peek_time(&mut self) -> Option<SimTime> {
        while let Some(Reverse((at, id))) = self.queue.peek().copied() {
            if self.payloads.contains_key(&id) {
                return Some(at);
            }
            self.queue.pop();
        }
        None
    }

    /// Pops the next live event and advances the clock to its time.
    pub fn pop(&mut self) -> Option<(SimTime, E)> {
        while let Some(Reverse((at, id))) = self.queue.pop() {
            if let Some(event) = self.payloads.remove(&id) {
                debug_assert!(at >= self.now);
                self.now = at;
                self.executed += 1;
                return Some((at, event));
            }
        }
        None
    }

    /// Executes events in order until the handler reports done, the queue
    /// runs dry, or the next event lies beyond `horizon`. Events beyond the
    /// horizon stay pending and the clock stays at the last executed event.
    pub fn run_until<H>(&mut self, handler: &mut H, horizon: Option<SimTime>) -> Result<SimTime, H::Error>
    where
        H: Handler<E>,
    {
        while !handler.is_done() {
            let Some(next) = self.peek_time() else { break };
            if horizon.is_some_and(|h| next > h) {
                break;
            }
            let (_, event) = self.pop().expect("peeked event vanished");
            handler.handle(self, event)?;
        }
        Ok(self.now)
    }
}

/// Seeded ChaCha8 generator. Uniform doubles use the top 53 bits of each
/// 64-bit output.
#[derive(Debug, Clone)]
pub struct RandomSource {
    seed: u64,
    stream: u64,
    rng: ChaCha8Rng,
}

impl RandomSource {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    /// Independent stream `stream` under the same seed.
    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        RandomSource { seed, stream, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `(0, 1]`, safe to feed to `ln`.
    pub fn uniform_open_closed(&mut self) -> f64 {
        1.0 - self.uniform()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DistributionSpec {
    /// Always `interval` seconds.
    Deterministic { interval: f64 },
    /// Exponential with the given rate (per second).
    Exponential { rate: f64 },
}

impl DistributionSpec {
    pub fn deterministic(interval: f64) -> Result<Self, SimError> {
        let d = DistributionSpec::Deterministic { interval };
        d.validate()?;
        Ok(d)
    }

    pub fn exponential(rate: f64) -> Result<Self, SimError> {
        let d = DistributionSpec::Exponential { rate };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        match *self {
            DistributionSpec::Deterministic { interval } if !(interval.is_finite() && interval >= 0.0) => Err(
                SimError::InvalidDistribution(format!("deterministic interval {interval} must be >= 0")),
            ),
            DistributionSpec::Exponential { rate } if !(rate.is_finite() && rate > 0.0) => Err(
                SimError::InvalidDistribution(format!("exponential rate {rate} must be > 0")),
            ),
            _ => Ok(()),
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            DistributionSpec::Deterministic { interval } => interval,
            DistributionSpec::Exponential { rate } => 1.0 / rate,
        }
    }

    /// Draws one value in seconds. Deterministic specs consume no randomness.
    pub fn sample(&self, rng: &mut RandomSource) -> f64 {
        match *self {
            DistributionSpec::Deterministic { interval } => interval,
            DistributionSpec::Exponential { rate } => -rng.uniform_open_closed().ln() / rate,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Default)]
    struct Recorder {
        fired: Vec<(f64, &'static str)>,
        stop_after: Option<usize>,
    }

    impl Handler<&'static str> for Recorder {
        type Error = SimError;

        fn handle(&mut self, engine: &mut Engine<&'static str>, event: &'static str) -> Result<(), SimError> {
            self.fired.push((engine.now().secs(), event));
            Ok(())
        }

        fn is_done(&self) -> bool {
            self.stop_after.is_some_and(|n| self.fired.len() >= n)
        }
    }

    fn t(s: f64) -> SimTime {
        SimTime::new(s).unwrap()
    }

    #[test]
    fn fires_at_scheduled_time() {
        let mut engine = Engine::new();
        engine.schedule(t(5.0), "a").unwrap();
        let mut rec = Recorder::default();
        let end = engine.run_until(&mut rec, None).unwrap();
        assert_eq!(rec.fired, vec![(5.0, "a")]);
        assert_eq!(end, t(5.0));
    }

    #[test]
    fn equal_times_fire_in_insertion_order() {
        let mut engine = Engine::new();
        engine.schedule(t(3.0), "A").unwrap();
        engine.schedule(t(3.0), "B").unwrap();
        let mut rec = Recorder::default();
        engine.run_until(&mut rec, None).unwrap();
        assert_eq!(rec.fired, vec![(3.0, "A"), (3.0, "B")]);
    }

    #[test]
    fn scheduling_in_the_past_is_rejected() {
        let mut engine = Engine::new();
        engine.schedule(t(2.0), "x").unwrap();
        engine.run_until(&mut Recorder::default(), None).unwrap();
        let err = engine.schedule(t(1.0), "late").unwrap_err();
        assert!(matches!(err, SimError::PastEvent { .. }));
        assert!(err.to_string().contains("past event"));
    }

    #[test]
    fn empty_queue_returns_current_clock() {
        let mut engine: Engine<&'static str> = Engine::new();
        let end = engine.run_until(&mut Recorder::default(), Some(t(10.0))).unwrap();
        assert_eq!(end, SimTime::ZERO);
    }

    #[test]
    fn horizon_leaves_later_events_pending() {
        let mut engine = Engine::new();
        for (s, name) in [(1.0, "1"), (2.0, "2"), (3.0, "3")] {
            engine.schedule(t(s), name).unwrap();
        }
        let mut rec = Recorder::default();
        let end = engine.run_until(&mut rec, Some(t(2.5))).unwrap();
        assert_eq!(end, t(2.0));
        assert_eq!(engine.pending(), 1);
        assert_eq!(engine.peek_time(), Some(t(3.0)));
    }

    #[test]
    fn predicate_stops_the_run() {
        let mut engine = Engine::new();
        for (s, name) in [(1.0, "a"), (2.0, "b"), (3.0, "c")] {
            engine.schedule(t(s), name).unwrap();
        }
        let mut rec = Recorder {
            stop_after: Some(2),
            ..Default::default()
        };
        let end = engine.run_until(&mut rec, None).unwrap();
        assert_eq!(end, t(2.0));
        assert_eq!(engine.pending(), 1);
    }

    #[test]
    fn cancelled_events_never_fire() {
        let mut engine = Engine::new();
        let h = engine.schedule(t(1.0), "gone").unwrap();
        engine.schedule(t(2.0), "kept").unwrap();
        assert!(engine.cancel(h));
        assert!(!engine.cancel(h));
        let mut rec = Recorder::default();
        engine.run_until(&mut rec, None).unwrap();
        assert_eq!(rec.fired, vec![(2.0, "kept")]);
    }

    #[test]
    fn invalid_times_are_rejected() {
        assert!(SimTime::new(-1.0).is_err());
        assert!(SimTime::new(f64::NAN).is_err());
        assert!(SimTime::new(f64::INFINITY).is_err());
        assert_eq!(SimTime::new(-0.0).unwrap().secs().to_bits(), 0.0f64.to_bits());
    }

    #[test]
    fn deterministic_sample_is_fixed() {
        let d = DistributionSpec::deterministic(0.05).unwrap();
        let mut rng = RandomSource::new(7);
        for _ in 0..10 {
            assert_eq!(d.sample(&mut rng), 0.05);
        }
    }

    #[test]
    fn exponential_means_match_rate() {
        for rate in [1.0, 10.0, 20.0] {
            let d = DistributionSpec::exponential(rate).unwrap();
            let mut rng = RandomSource::new(rate as u64);
            let n = 100_000;
            let mean = (0..n).map(|_| d.sample(&mut rng)).sum::<f64>() / n as f64;
            let rel = (mean - 1.0 / rate).abs() * rate;
            assert!(rel < 0.01, "rate {rate}: mean {mean} off by {rel}");
        }
    }

    #[test]
    fn same_seed_same_sequence() {
        let d = DistributionSpec::exponential(10.0).unwrap();
        let mut a = RandomSource::new(42);
        let mut b = RandomSource::new(42);
        let xs: Vec<f64> = (0..100).map(|_| d.sample(&mut a)).collect();
        let ys: Vec<f64> = (0..100).map(|_| d.sample(&mut b)).collect();
        assert_eq!(xs, ys);
        let mut other = RandomSource::with_stream(42, 1);
        let zs: Vec<f64> = (0..100).map(|_| d.sample(&mut other)).collect();
        assert_ne!(xs, zs);
    }

    #[test]
    fn chacha_stream_is_frozen() {
        // Pins the generator: a changed algorithm or seeding scheme breaks
        // reproducibility of every recorded run.
        let mut rng = RandomSource::new(0);
        let first = rng.next_u64();
        let mut again = RandomSource::new(0);
        assert_eq!(first, again.next_u64());
        assert_eq!(first, FROZEN_FIRST_DRAW_SEED0);
    }

    const FROZEN_FIRST_DRAW_SEED0: u64 = 13_080_132_717_333_068_652;

    #[test]
    fn invalid_distributions() {
        assert!(DistributionSpec::exponential(0.0).is_err());
        assert!(DistributionSpec::exponential(-3.0).is_err());
        assert!(DistributionSpec::deterministic(-0.1).is_err());
        assert!(DistributionSpec::deterministic(0.0).is_ok());
    }
}
