//! Executes resolved scenarios, one run per (config, seed).
//!
//! Runs are independent and execute on the rayon pool. Results are sorted
//! into canonical report order before they are returned, so the output does
//! not depend on scheduling.

use rayon::prelude::*;
use thiserror::Error;

use crate::config::ScenarioConfig;
use crate::metrics::{report_order, MigrationReport};
use crate::migration::{execute, MigrationError, MigrationStrategy};

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub report: MigrationReport,
    pub config_hash: String,
}

#[derive(Debug, Error)]
#[error("{strategy} at rate {rate} with seed {seed}: {source}")]
pub struct RunFailure {
    pub strategy: MigrationStrategy,
    pub rate: f64,
    pub seed: u64,
    #[source]
    pub source: MigrationError,
}

impl RunFailure {
    pub fn is_invariant_breach(&self) -> bool {
        self.source.is_invariant_breach()
    }
}

/// Runs one configuration for a single seed and checks the run's
/// invariants. The report's `t_replay_max` is the configured budget for
/// every strategy, so that sweeps over it group correctly.
pub fn run_one(cfg: &ScenarioConfig, seed: u64) -> Result<MigrationReport, MigrationError> {
    let run = execute(&cfg.scenario(seed))?;
    run.check_invariants()?;
    let mut report = MigrationReport::from_run(&run);
    report.t_replay_max = Some(cfg.t_replay_max);
    Ok(report)
}

/// Runs every repetition of every config. On failure, the error reported is
/// the first one in job order.
pub fn run_all(cfgs: &[ScenarioConfig]) -> Result<Vec<RunRecord>, RunFailure> {
    let jobs: Vec<(&ScenarioConfig, String, u64)> = cfgs
        .iter()
        .flat_map(|cfg| {
            let hash = cfg.hash();
            cfg.seeds().map(move |seed| (cfg, hash.clone(), seed))
        })
        .collect();
    let results: Vec<Result<RunRecord, RunFailure>> = jobs
        .into_par_iter()
        .map(|(cfg, config_hash, seed)| {
            run_one(cfg, seed)
                .map(|report| RunRecord { report, config_hash })
                .map_err(|source| RunFailure {
                    strategy: cfg.strategy,
                    rate: cfg.rate,
                    seed,
                    source,
                })
        })
        .collect();
    let mut records = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    records.sort_by(|a, b| report_order(&a.report, &b.report).then_with(|| a.config_hash.cmp(&b.config_hash)));
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ScenarioOverrides;

    fn cfg(text: &str) -> ScenarioConfig {
        ScenarioOverrides::from_toml(text, "t").unwrap().resolve().unwrap()
    }

    #[test]
    fn records_come_out_sorted() {
        let a = cfg("strategy = \"ms2m-individual\"\nrate = 8.0\nprofile = \"fast\"\nrepetitions = 3\nseed = 5");
        let b = cfg("strategy = \"stop-and-copy\"\nrate = 8.0\nprofile = \"fast\"\nrepetitions = 2");
        let recs = run_all(&[a, b]).unwrap();
        let keys: Vec<(MigrationStrategy, u64)> = recs.iter().map(|r| (r.report.strategy, r.report.seed)).collect();
        assert_eq!(
            keys,
            vec![
                (MigrationStrategy::StopAndCopy, 0),
                (MigrationStrategy::StopAndCopy, 1),
                (MigrationStrategy::Ms2mIndividual, 5),
                (MigrationStrategy::Ms2mIndividual, 6),
                (MigrationStrategy::Ms2mIndividual, 7),
            ]
        );
    }

    #[test]
    fn repeated_batches_are_identical() {
        let c = cfg("strategy = \"ms2m-cutoff\"\nrate = 12.0\narrivals = \"exponential\"\nprofile = \"fast\"\nt_replay_max = 2.0\nrepetitions = 8");
        assert_eq!(run_all(std::slice::from_ref(&c)).unwrap(), run_all(&[c]).unwrap());
    }
}
