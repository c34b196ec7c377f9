//! Checkpoint capture, image registry and restore, reduced to state copies
//! plus configured phase latencies.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim::{SimError, SimTime};
use crate::workload::{ConsumerInstance, ServiceState};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CheckpointError {
    #[error("latency {field} = {value} must be finite and >= 0")]
    InvalidLatency { field: &'static str, value: f64 },
    #[error("no checkpoint image {0:?} in registry")]
    MissingImage(String),
    #[error("unknown latency profile {0:?}")]
    UnknownProfile(String),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Durations, in seconds, of each infrastructure phase.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseLatencyModel {
    pub t_checkpoint: f64,
    pub t_build: f64,
    pub t_push: f64,
    pub t_pull: f64,
    pub t_restore: f64,
    pub t_pod_delete: f64,
    pub t_pod_create: f64,
    /// Whether the source stops consuming for the checkpoint phase.
    pub pause_during_checkpoint: bool,
}

/// Built-in profile names, in listing order.
pub const PROFILE_NAMES: [&str; 3] = ["paper-like", "fast", "zero"];

impl PhaseLatencyModel {
    /// Calibrated so that a stop-and-copy migration takes 49.055 s and a
    /// checkpoint pause takes 1.5 s. The per-phase split is a free choice.
    pub fn paper_like() -> Self {
        PhaseLatencyModel {
            t_checkpoint: 1.5,
            t_build: 10.0,
            t_push: 12.0,
            t_pull: 12.0,
            t_restore: 11.0,
            t_pod_delete: 1.5,
            t_pod_create: 1.055,
            pause_during_checkpoint: true,
        }
    }

    /// Short latencies for quick experiments.
    pub fn fast() -> Self {
        PhaseLatencyModel {
            t_checkpoint: 0.5,
            t_build: 1.0,
            t_push: 1.0,
            t_pull: 1.0,
            t_restore: 1.0,
            t_pod_delete: 0.25,
            t_pod_create: 0.25,
            pause_during_checkpoint: true,
        }
    }

    pub fn zero() -> Self {
        PhaseLatencyModel {
            t_checkpoint: 0.0,
            t_build: 0.0,
            t_push: 0.0,
            t_pull: 0.0,
            t_restore: 0.0,
            t_pod_delete: 0.0,
            t_pod_create: 0.0,
            pause_during_checkpoint: true,
        }
    }

    pub fn named(name: &str) -> Result<Self, CheckpointError> {
        match name {
            "paper-like" => Ok(Self::paper_like()),
            "fast" => Ok(Self::fast()),
            "zero" => Ok(Self::zero()),
            other => Err(CheckpointError::UnknownProfile(other.to_string())),
        }
    }

    pub fn fields(&self) -> [(&'static str, f64); 7] {
        [
            ("t_checkpoint", self.t_checkpoint),
            ("t_build", self.t_build),
            ("t_push", self.t_push),
            ("t_pull", self.t_pull),
            ("t_restore", self.t_restore),
            ("t_pod_delete", self.t_pod_delete),
            ("t_pod_create", self.t_pod_create),
        ]
    }

    pub fn validate(&self) -> Result<(), CheckpointError> {
        for (field, value) in self.fields() {
            if !(value.is_finite() && value >= 0.0) {
                return Err(CheckpointError::InvalidLatency { field, value });
            }
        }
        Ok(())
    }

    /// Length of a cold migration: every phase back to back.
    pub fn stop_and_copy_total(&self) -> f64 {
        self.fields().iter().map(|(_, v)| v).sum()
    }
}

/// Immutable snapshot of a consumer's state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CheckpointArtifact {
    snapshot: ServiceState,
    created_at: SimTime,
}

impl CheckpointArtifact {
    pub fn snapshot(&self) -> &ServiceState {
        &self.snapshot
    }

    pub fn created_at(&self) -> SimTime {
        self.created_at
    }
}

/// Captures `source` atomically at `now`. Returns the artifact and the
/// instant the checkpoint phase completes.
pub fn create_checkpoint(
    source: &ConsumerInstance,
    now: SimTime,
    latency: &PhaseLatencyModel,
) -> Result<(CheckpointArtifact, SimTime), CheckpointError> {
    let artifact = CheckpointArtifact {
        snapshot: *source.state(),
        created_at: now,
    };
    Ok((artifact, now.after(latency.t_checkpoint)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointImage {
    pub key: String,
    pub artifact: CheckpointArtifact,
    /// When the push completes; pulls wait until then.
    pub available_at: SimTime,
}

impl CheckpointImage {
    pub fn pushed_by(&self, now: SimTime) -> bool {
        now >= self.available_at
    }
}

/// Registry holding checkpoint images by key.
#[derive(Debug, Clone, Default)]
pub struct RegistryModel {
    images: BTreeMap<String, CheckpointImage>,
}

impl RegistryModel {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, key: &str) -> Option<&CheckpointImage> {
        self.images.get(key)
    }

    /// Pull of `key` requested at `requested_at`. The pull starts once the
    /// push has completed.
    pub fn pull(&self, key: &str, requested_at: SimTime) -> Result<(CheckpointArtifact, SimTime), CheckpointError> {
        let image = self
            .get(key)
            .ok_or_else(|| CheckpointError::MissingImage(key.to_string()))?;
        Ok((image.artifact, requested_at.max(image.available_at)))
    }
}

/// Builds an image from `artifact` starting at `start` and pushes it.
/// The image becomes pullable after `t_build + t_push`.
pub fn build_and_push(
    registry: &mut RegistryModel,
    key: &str,
    artifact: CheckpointArtifact,
    start: SimTime,
    latency: &PhaseLatencyModel,
) -> Result<CheckpointImage, CheckpointError> {
    let built = start.after(latency.t_build)?;
    let image = CheckpointImage {
        key: key.to_string(),
        artifact,
        available_at: built.after(latency.t_push)?,
    };
    registry.images.insert(key.to_string(), image.clone());
    Ok(image)
}

/// Timing and state of a restore on the target node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RestorePlan {
    pub state: ServiceState,
    pub pull_start: SimTime,
    pub pull_done: SimTime,
    pub restore_done: SimTime,
}

pub fn pull_and_restore(
    registry: &RegistryModel,
    key: &str,
    requested_at: SimTime,
    latency: &PhaseLatencyModel,
) -> Result<RestorePlan, CheckpointError> {
    let (artifact, pull_start) = registry.pull(key, requested_at)?;
    let pull_done = pull_start.after(latency.t_pull)?;
    Ok(RestorePlan {
        state: artifact.snapshot,
        pull_start,
        pull_done,
        restore_done: pull_done.after(latency.t_restore)?,
    })
}
