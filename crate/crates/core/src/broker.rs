//! In-memory broker model: named primary queues with per-queue sequence ids,
//! plus at most one secondary (replay) queue mirroring each primary.
//!
//! Primary delivery is acknowledgement based. `consume_next` hands the head
//! message to the attached consumer and parks it as unacknowledged; the
//! consumer either `ack`s it after processing or `requeue`s it when it is
//! interrupted, which puts it back at the head. Unacknowledged messages still
//! count as retained when a secondary queue is opened.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim::SimTime;

pub type Seq = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ConsumerId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub seq: Seq,
    pub publish_time: SimTime,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BrokerError {
    #[error("unknown queue {0:?}")]
    UnknownQueue(String),
    #[error("queue {0:?} already declared")]
    DuplicateQueue(String),
    #[error("secondary start seq {start} is beyond the stream (next seq {next})")]
    StartBeyondStream { start: Seq, next: Seq },
    #[error("secondary start seq {start} is no longer retained (oldest retained {oldest})")]
    StartNotRetained { start: Seq, oldest: Seq },
    #[error("queue {0:?} already has an open secondary")]
    SecondaryAlreadyOpen(String),
    #[error("queue {0:?} has no open secondary")]
    NoSecondary(String),
    #[error("cutoff already set to {0}")]
    CutoffAlreadySet(Seq),
    #[error("cutoff {cutoff} precedes secondary start {start} by more than one")]
    CutoffBeforeStart { cutoff: Seq, start: Seq },
    #[error("consumer {0:?} is not attached to {1:?}")]
    NotAttached(ConsumerId, String),
    #[error("queue {queue:?} already consumed by {holder:?}")]
    AlreadyAttached { queue: String, holder: ConsumerId },
    #[error("seq {0} is not an unacknowledged delivery")]
    NotUnacked(Seq),
}

#[derive(Debug, Clone)]
pub struct PrimaryQueue {
    name: String,
    buffer: VecDeque<Message>,
    unacked: BTreeMap<Seq, Message>,
    next_seq: Seq,
    consumer: Option<ConsumerId>,
}

impl PrimaryQueue {
    fn new(name: &str) -> Self {
        PrimaryQueue {
            name: name.to_string(),
            buffer: VecDeque::new(),
            unacked: BTreeMap::new(),
            next_seq: 1,
            consumer: None,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn next_seq(&self) -> Seq {
        self.next_seq
    }

    /// Highest seq published so far (0 before the first publish).
    pub fn last_published(&self) -> Seq {
        self.next_seq - 1
    }

    /// Ready (deliverable) messages.
    pub fn len(&self) -> usize {
        self.buffer.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buffer.is_empty()
    }

    pub fn unacked_len(&self) -> usize {
        self.unacked.len()
    }

    pub fn consumer(&self) -> Option<ConsumerId> {
        self.consumer
    }

    pub fn buffered_seqs(&self) -> impl Iterator<Item = Seq> + '_ {
        self.buffer.iter().map(|m| m.seq)
    }
}

#[derive(Debug, Clone)]
pub struct SecondaryQueue {
    source: String,
    start_seq: Seq,
    buffer: VecDeque<Message>,
    cutoff_seq: Option<Seq>,
    consumer: Option<ConsumerId>,
    delivered: Vec<Seq>,
}

impl SecondaryQueue {
    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn start_seq(&self) -> Seq {
        self.start_seq
    }

    pub fn cutoff_seq(&self) -> Option<Seq> {
        self.cutoff_seq
    }

    /// Messages still deliverable (respects the cutoff).
    pub fn len(&self) -> usize {
        self.buffer.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buffer.is_empty()
    }

    /// Every seq handed out so far, in delivery order.
    pub fn delivered(&self) -> &[Seq] {
        &self.delivered
    }

    pub fn buffered_seqs(&self) -> impl Iterator<Item = Seq> + '_ {
        self.buffer.iter().map(|m| m.seq)
    }

    fn mirror(&mut self, msg: Message) {
        if msg.seq >= self.start_seq && self.cutoff_seq.is_none_or(|c| msg.seq <= c) {
            self.buffer.push_back(msg);
        }
    }
}

/// Where a consumer pulls from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Endpoint<'a> {
    Primary(&'a str),
    /// The secondary queue attached to the named primary.
    Secondary(&'a str),
}

#[derive(Debug, Clone, Default)]
pub struct Broker {
    queues: BTreeMap<String, PrimaryQueue>,
    secondaries: BTreeMap<String, SecondaryQueue>,
}

impl Broker {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn declare(&mut self, name: &str) -> Result<(), BrokerError> {
        if self.queues.contains_key(name) {
            return Err(BrokerError::DuplicateQueue(name.to_string()));
        }
        self.queues.insert(name.to_string(), PrimaryQueue::new(name));
        Ok(())
    }

    pub fn queue(&self, name: &str) -> Result<&PrimaryQueue, BrokerError> {
        self.queues
            .get(name)
            .ok_or_else(|| BrokerError::UnknownQueue(name.to_string()))
    }

    fn queue_mut(&mut self, name: &str) -> Result<&mut PrimaryQueue, BrokerError> {
        self.queues
            .get_mut(name)
            .ok_or_else(|| BrokerError::UnknownQueue(name.to_string()))
    }

    pub fn secondary(&self, queue: &str) -> Option<&SecondaryQueue> {
        self.secondaries.get(queue)
    }

    fn secondary_mut(&mut self, queue: &str) -> Result<&mut SecondaryQueue, BrokerError> {
        self.secondaries
            .get_mut(queue)
            .ok_or_else(|| BrokerError::NoSecondary(queue.to_string()))
    }

    /// Appends a message with the next seq and mirrors it into an open
    /// secondary.
    pub fn publish(&mut self, queue: &str, time: SimTime) -> Result<Message, BrokerError> {
        let q = self.queue_mut(queue)?;
        let msg = Message {
            seq: q.next_seq,
            publish_time: time,
        };
        q.next_seq += 1;
        q.buffer.push_back(msg);
        if let Some(sec) = self.secondaries.get_mut(queue) {
            sec.mirror(msg);
        }
        Ok(msg)
    }

    /// Opens a secondary queue mirroring every message with
    /// `seq >= start_seq`, pre-filled from what the primary still retains
    /// (ready or unacknowledged).
    pub fn open_secondary(&mut self, queue: &str, start_seq: Seq) -> Result<&SecondaryQueue, BrokerError> {
        if self.secondaries.contains_key(queue) {
            return Err(BrokerError::SecondaryAlreadyOpen(queue.to_string()));
        }
        let q = self.queue(queue)?;
        if start_seq > q.next_seq {
            return Err(BrokerError::StartBeyondStream {
                start: start_seq,
                next: q.next_seq,
            });
        }
        let mut retained: Vec<Message> = q
            .unacked
            .values()
            .chain(q.buffer.iter())
            .filter(|m| m.seq >= start_seq)
            .copied()
            .collect();
        retained.sort_by_key(|m| m.seq);
        let expected = (q.next_seq - start_seq) as usize;
        if retained.len() != expected {
            let oldest = retained.first().map_or(q.next_seq, |m| m.seq);
            return Err(BrokerError::StartNotRetained {
                start: start_seq,
                oldest,
            });
        }
        let sec = SecondaryQueue {
            source: queue.to_string(),
            start_seq,
            buffer: retained.into(),
            cutoff_seq: None,
            consumer: None,
            delivered: Vec::new(),
        };
        Ok(self.secondaries.entry(queue.to_string()).or_insert(sec))
    }

    /// Fixes the last seq the secondary will ever deliver. Buffered copies
    /// past the cutoff are dropped; they stay available in the primary.
    pub fn set_cutoff(&mut self, queue: &str, cutoff_seq: Seq) -> Result<(), BrokerError> {
        let sec = self.secondary_mut(queue)?;
        if let Some(existing) = sec.cutoff_seq {
            return Err(BrokerError::CutoffAlreadySet(existing));
        }
        if cutoff_seq + 1 < sec.start_seq {
            return Err(BrokerError::CutoffBeforeStart {
                cutoff: cutoff_seq,
                start: sec.start_seq,
            });
        }
        sec.cutoff_seq = Some(cutoff_seq);
        sec.buffer.retain(|m| m.seq <= cutoff_seq);
        Ok(())
    }

    /// Drops ready primary messages with `seq <= through`. Used when those
    /// messages are already covered by a secondary replay window.
    pub fn discard_through(&mut self, queue: &str, through: Seq) -> Result<usize, BrokerError> {
        let q = self.queue_mut(queue)?;
        let before = q.buffer.len();
        q.buffer.retain(|m| m.seq > through);
        Ok(before - q.buffer.len())
    }

    pub fn close_secondary(&mut self, queue: &str) -> Result<SecondaryQueue, BrokerError> {
        self.secondaries
            .remove(queue)
            .ok_or_else(|| BrokerError::NoSecondary(queue.to_string()))
    }

    /// Registers `consumer` as the single consumer of an endpoint.
    pub fn attach(&mut self, endpoint: Endpoint<'_>, consumer: ConsumerId) -> Result<(), BrokerError> {
        let (slot, name) = match endpoint {
            Endpoint::Primary(q) => (&mut self.queue_mut(q)?.consumer, q),
            Endpoint::Secondary(q) => (&mut self.secondary_mut(q)?.consumer, q),
        };
        match *slot {
            Some(holder) if holder != consumer => Err(BrokerError::AlreadyAttached {
                queue: name.to_string(),
                holder,
            }),
            _ => {
                *slot = Some(consumer);
                Ok(())
            }
        }
    }

    pub fn detach(&mut self, endpoint: Endpoint<'_>, consumer: ConsumerId) -> Result<(), BrokerError> {
        let (slot, name) = match endpoint {
            Endpoint::Primary(q) => (&mut self.queue_mut(q)?.consumer, q),
            Endpoint::Secondary(q) => (&mut self.secondary_mut(q)?.consumer, q),
        };
        if *slot != Some(consumer) {
            return Err(BrokerError::NotAttached(consumer, name.to_string()));
        }
        *slot = None;
        Ok(())
    }

    /// Removes and returns the head message, or `None` when nothing is
    /// deliverable. Primary deliveries stay unacknowledged until
    /// [`Broker::ack`] or [`Broker::requeue`].
    pub fn consume_next(
        &mut self,
        endpoint: Endpoint<'_>,
        consumer: ConsumerId,
    ) -> Result<Option<Message>, BrokerError> {
        match endpoint {
            Endpoint::Primary(name) => {
                let q = self.queue_mut(name)?;
                if q.consumer != Some(consumer) {
                    return Err(BrokerError::NotAttached(consumer, name.to_string()));
                }
                let msg = q.buffer.pop_front();
                if let Some(m) = msg {
                    q.unacked.insert(m.seq, m);
                }
                Ok(msg)
            }
            Endpoint::Secondary(name) => {
                let sec = self.secondary_mut(name)?;
                if sec.consumer != Some(consumer) {
                    return Err(BrokerError::NotAttached(consumer, format!("{name} (secondary)")));
                }
                let msg = sec.buffer.pop_front();
                if let Some(m) = msg {
                    sec.delivered.push(m.seq);
                }
                Ok(msg)
            }
        }
    }

    pub fn ack(&mut self, queue: &str, seq: Seq) -> Result<(), BrokerError> {
        let q = self.queue_mut(queue)?;
        q.unacked.remove(&seq).map(|_| ()).ok_or(BrokerError::NotUnacked(seq))
    }

    /// Returns an unacknowledged delivery to the head of the queue.
    pub fn requeue(&mut self, queue: &str, seq: Seq) -> Result<(), BrokerError> {
        let q = self.queue_mut(queue)?;
        let msg = q.unacked.remove(&seq).ok_or(BrokerError::NotUnacked(seq))?;
        debug_assert!(q.buffer.front().is_none_or(|head| head.seq > seq));
        q.buffer.push_front(msg);
        Ok(())
    }
}
