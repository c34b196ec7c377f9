//! CSV and JSON writers for run and aggregate reports.
//!
//! Column order is fixed. Floats are written with Rust's shortest
//! round-trip formatting, so identical inputs give identical bytes.

use std::io::Write;

use serde::Serialize;

use crate::metrics::{AggregateRow, MigrationReport, Phase};
use crate::runner::RunRecord;

/// Per-run CSV header.
pub const RUN_COLUMNS: [&str; 19] = [
    "strategy",
    "lambda",
    "mu",
    "seed",
    "status",
    "total_s",
    "downtime_s",
    "replay_count",
    "replay_s",
    "checkpoint_s",
    "build_s",
    "push_s",
    "pull_s",
    "restore_s",
    "pod_delete_s",
    "pod_create_s",
    "handover_s",
    "wait_s",
    "config_hash",
];

// Phases in per-run column order; replay has its own column earlier.
const RUN_PHASES: [Phase; 9] = [
    Phase::Checkpoint,
    Phase::Build,
    Phase::Push,
    Phase::Pull,
    Phase::Restore,
    Phase::PodDelete,
    Phase::PodCreate,
    Phase::Handover,
    Phase::Wait,
];

/// Aggregate CSV header: fixed leading columns, one `<phase>_share` column
/// per phase, then the replay budget and the timed-out count.
pub fn aggregate_columns() -> Vec<String> {
    let mut cols: Vec<String> = [
        "strategy",
        "lambda",
        "n",
        "total_mean_s",
        "total_std_s",
        "downtime_mean_s",
        "downtime_std_s",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    cols.extend(Phase::ALL.iter().map(|p| format!("{}_share", p.name())));
    cols.push("t_replay_max_s".into());
    cols.push("timed_out".into());
    cols
}

fn num(x: f64) -> String {
    // -0.0 would otherwise print as "-0"
    format!("{}", x + 0.0)
}

fn run_record(rec: &RunRecord) -> Vec<String> {
    let r: &MigrationReport = &rec.report;
    let mut row = vec![
        r.strategy.name().to_string(),
        num(r.lambda),
        num(r.mu),
        r.seed.to_string(),
        r.status.name().to_string(),
        num(r.total_migration_time),
        num(r.downtime),
        r.replay_count.to_string(),
        num(r.replay_duration),
    ];
    row.extend(RUN_PHASES.iter().map(|&p| num(r.phase(p))));
    row.push(rec.config_hash.clone());
    row
}

fn aggregate_record(a: &AggregateRow) -> Vec<String> {
    let mut row = vec![
        a.strategy.name().to_string(),
        num(a.lambda),
        a.n_runs.to_string(),
        num(a.total_mean),
        num(a.total_std),
        num(a.downtime_mean),
        num(a.downtime_std),
    ];
    row.extend(
        Phase::ALL
            .iter()
            .map(|p| num(a.phase_shares.get(p).copied().unwrap_or(0.0))),
    );
    row.push(a.t_replay_max.map(num).unwrap_or_default());
    row.push(a.timed_out.to_string());
    row
}

pub fn write_runs_csv<W: Write>(out: W, records: &[RunRecord]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RUN_COLUMNS)?;
    for rec in records {
        w.write_record(run_record(rec))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_aggregate_csv<W: Write>(out: W, rows: &[AggregateRow]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(aggregate_columns())?;
    for row in rows {
        w.write_record(aggregate_record(row))?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct JsonRun<'a> {
    #[serde(flatten)]
    report: &'a MigrationReport,
    config_hash: &'a str,
}

/// Pretty-printed JSON array of run reports, each with its config hash.
pub fn write_runs_json<W: Write>(mut out: W, records: &[RunRecord]) -> serde_json::Result<()> {
    let rows: Vec<JsonRun> = records
        .iter()
        .map(|r| JsonRun {
            report: &r.report,
            config_hash: &r.config_hash,
        })
        .collect();
    serde_json::to_writer_pretty(&mut out, &rows)?;
    out.write_all(b"\n").map_err(serde_json::Error::io)
}

pub fn write_aggregate_json<W: Write>(mut out: W, rows: &[AggregateRow]) -> serde_json::Result<()> {
    serde_json::to_writer_pretty(&mut out, rows)?;
    out.write_all(b"\n").map_err(serde_json::Error::io)
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::metrics::aggregate;
    use crate::migration::{MigrationStrategy, RunStatus};

    fn record(seed: u64, total: f64) -> RunRecord {
        let mut phase_durations: BTreeMap<Phase, f64> = Phase::ALL.iter().map(|&p| (p, 0.0)).collect();
        phase_durations.insert(Phase::Checkpoint, 1.5);
        phase_durations.insert(Phase::Replay, total - 1.5);
        RunRecord {
            report: MigrationReport {
                strategy: MigrationStrategy::Ms2mIndividual,
                lambda: 4.0,
                mu: 20.0,
                seed,
                status: RunStatus::Converged,
                total_migration_time: total,
                downtime: 1.5,
                replay_count: 12,
                replay_duration: total - 1.5,
                phase_durations,
                t_replay_max: Some(60.0),
                t_cutoff: None,
                t_accum: None,
                backlog_at_replay_start: Some(12),
            },
            config_hash: "ab".repeat(32),
        }
    }

    #[test]
    fn run_csv_has_fixed_columns() {
        let mut buf = Vec::new();
        write_runs_csv(&mut buf, &[record(3, 2.0)]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "strategy,lambda,mu,seed,status,total_s,downtime_s,replay_count,replay_s,checkpoint_s,build_s,push_s,\
             pull_s,restore_s,pod_delete_s,pod_create_s,handover_s,wait_s,config_hash"
        );
        let row = lines.next().unwrap();
        assert!(
            row.starts_with("ms2m-individual,4,20,3,converged,2,1.5,12,0.5,1.5,0,0,0,0,0,0,0,0,abab"),
            "{row}"
        );
    }

    #[test]
    fn aggregate_csv_has_share_columns() {
        let rows = aggregate(&[record(0, 2.0).report, record(1, 4.0).report]).unwrap();
        let mut buf = Vec::new();
        write_aggregate_csv(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        let header = lines.next().unwrap();
        assert!(header.starts_with(
            "strategy,lambda,n,total_mean_s,total_std_s,downtime_mean_s,downtime_std_s,checkpoint_share,"
        ));
        assert!(header.ends_with("handover_share,wait_share,t_replay_max_s,timed_out"));
        let row: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(&row[..4], &["ms2m-individual", "4", "2", "3"]);
        assert_eq!(row.len(), header.split(',').count());
    }

    #[test]
    fn json_round_trips_fields() {
        let mut buf = Vec::new();
        write_runs_json(&mut buf, &[record(1, 3.0)]).unwrap();
        let v: serde_json::Value = serde_json::from_slice(&buf).unwrap();
        assert_eq!(v[0]["strategy"], "ms2m-individual");
        assert_eq!(v[0]["status"], "converged");
        assert_eq!(v[0]["phase_durations"]["replay"], 1.5);
        assert_eq!(v[0]["config_hash"].as_str().unwrap().len(), 64);
    }
}
