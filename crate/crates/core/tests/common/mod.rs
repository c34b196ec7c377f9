#![allow(dead_code)]

use ms2m_core::checkpoint::PhaseLatencyModel;
use ms2m_core::migration::{execute, MigrationRun, MigrationScenario, MigrationStrategy};
use ms2m_core::sim::DistributionSpec;
use ms2m_core::workload::{ArrivalKind, ConsumerModel, ProducerModel};

pub const MU: f64 = 20.0;

pub fn scenario(strategy: MigrationStrategy, rate: f64, seed: u64) -> MigrationScenario {
    scenario_with(
        strategy,
        rate,
        ArrivalKind::Deterministic,
        PhaseLatencyModel::paper_like(),
        seed,
    )
}

pub fn scenario_with(
    strategy: MigrationStrategy,
    rate: f64,
    arrivals: ArrivalKind,
    latency: PhaseLatencyModel,
    seed: u64,
) -> MigrationScenario {
    let producer = ProducerModel::new(rate, arrivals).unwrap();
    let consumer = ConsumerModel::new(DistributionSpec::deterministic(1.0 / MU).unwrap()).unwrap();
    let mut sc = MigrationScenario::new(strategy, producer, consumer, latency);
    sc.seed = seed;
    sc
}

/// Executes and checks run invariants; panics with context on failure.
pub fn run(sc: &MigrationScenario) -> MigrationRun {
    let run =
        execute(sc).unwrap_or_else(|e| panic!("{} at rate {} seed {}: {e}", sc.strategy, sc.producer.rate, sc.seed));
    run.check_invariants()
        .unwrap_or_else(|e| panic!("{} at rate {} seed {}: {e}", sc.strategy, sc.producer.rate, sc.seed));
    run
}

pub fn approx_eq(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}
