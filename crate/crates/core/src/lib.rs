//! Discrete-event simulator for message-based stateful microservice
//! migration.
//!
//! A producer publishes to a broker queue consumed by a stateful service. A
//! migration moves that service to a new node using one of four strategies:
//! cold stop-and-copy, or one of three variants that checkpoint the source,
//! restore it on the target and replay the messages that arrived in between
//! from a secondary queue. All time is virtual and all randomness is seeded,
//! so a scenario and a seed fully determine the outcome.

pub mod broker;
pub mod checkpoint;
pub mod config;
pub mod metrics;
pub mod migration;
pub mod output;
pub mod runner;
pub mod sim;
pub mod workload;

pub use broker::{Broker, Message, Seq};
pub use checkpoint::PhaseLatencyModel;
pub use config::{ScenarioConfig, ScenarioOverrides, SweepConfig, SweepOverrides, SweepParam};
pub use metrics::{aggregate, compute_downtime, phase_shares, AggregateRow, MigrationReport, Phase};
pub use migration::{execute, MigrationRun, MigrationScenario, MigrationStrategy, RunStatus};
pub use runner::{run_all, RunRecord};
pub use sim::{DistributionSpec, Engine, RandomSource, SimTime};
pub use workload::{ArrivalKind, ConsumerModel, ProducerModel, ServiceState};
