use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};

use ms2m_core::checkpoint::{PhaseLatencyModel, PROFILE_NAMES};
use ms2m_core::config::{ConfigError, ScenarioConfig, ScenarioOverrides, SweepOverrides, SweepParam};
use ms2m_core::metrics::aggregate;
use ms2m_core::migration::MigrationStrategy;
use ms2m_core::output;
use ms2m_core::runner::{run_all, RunFailure, RunRecord};
use ms2m_core::workload::ArrivalKind;

const EXIT_USAGE: u8 = 1;
const EXIT_BREACH: u8 = 2;

#[derive(Parser)]
#[command(
    name = "ms2m",
    version,
    about = "Simulate stateful microservice migration strategies"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario for a number of repetitions.
    Run(RunArgs),
    /// Run a parameter sweep across strategies.
    Sweep(SweepArgs),
    /// Latency profiles.
    Profiles {
        #[command(subcommand)]
        command: ProfilesCommand,
    },
}

#[derive(Subcommand)]
enum ProfilesCommand {
    /// List built-in latency profiles.
    List,
}

#[derive(Args)]
struct OutputArgs {
    /// Output directory.
    #[arg(long, env = "MS2M_OUT_DIR", default_value = "results")]
    out: PathBuf,
    /// Also write JSON next to each CSV.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct RunArgs {
    /// TOML scenario file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct SweepArgs {
    /// TOML sweep file with a `[base]` scenario table; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Swept parameter: lambda or t_replay_max.
    #[arg(long)]
    param: Option<SweepParam>,
    /// Comma-separated, strictly increasing values.
    #[arg(long, value_delimiter = ',')]
    values: Option<Vec<f64>>,
    /// Comma-separated strategies; defaults to all.
    #[arg(long, value_delimiter = ',')]
    strategies: Option<Vec<MigrationStrategy>>,
    /// Aggregate CSV path, relative to the output directory.
    #[arg(long)]
    output_file: Option<String>,
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Deterministic,
    Exponential,
}

impl From<Kind> for ArrivalKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::Deterministic => ArrivalKind::Deterministic,
            Kind::Exponential => ArrivalKind::Exponential,
        }
    }
}

#[derive(Args)]
struct ScenarioArgs {
    #[arg(long)]
    strategy: Option<MigrationStrategy>,
    /// Producer rate, messages per second.
    #[arg(long)]
    rate: Option<f64>,
    #[arg(long, value_enum)]
    arrivals: Option<Kind>,
    /// First deterministic arrival time; random from the seed if unset.
    #[arg(long)]
    arrival_phase: Option<f64>,
    /// Mean service time, seconds.
    #[arg(long)]
    service_time: Option<f64>,
    #[arg(long, value_enum)]
    service: Option<Kind>,
    #[arg(long)]
    t_replay_max: Option<f64>,
    /// Base latency profile (see `profiles list`).
    #[arg(long)]
    profile: Option<String>,
    #[arg(long)]
    t_checkpoint: Option<f64>,
    #[arg(long)]
    t_build: Option<f64>,
    #[arg(long)]
    t_push: Option<f64>,
    #[arg(long)]
    t_pull: Option<f64>,
    #[arg(long)]
    t_restore: Option<f64>,
    #[arg(long)]
    t_pod_delete: Option<f64>,
    #[arg(long)]
    t_pod_create: Option<f64>,
    #[arg(long)]
    pause_during_checkpoint: Option<bool>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    reps: Option<u32>,
    #[arg(long)]
    timeout_multiplier: Option<f64>,
    /// Virtual seconds before the migration request.
    #[arg(long)]
    warmup: Option<f64>,
    #[arg(long)]
    drain_after_handover: Option<bool>,
}

impl From<ScenarioArgs> for ScenarioOverrides {
    fn from(a: ScenarioArgs) -> Self {
        ScenarioOverrides {
            strategy: a.strategy,
            rate: a.rate,
            arrivals: a.arrivals.map(Into::into),
            arrival_phase: a.arrival_phase,
            service_time: a.service_time,
            service: a.service.map(Into::into),
            t_replay_max: a.t_replay_max,
            profile: a.profile,
            t_checkpoint: a.t_checkpoint,
            t_build: a.t_build,
            t_push: a.t_push,
            t_pull: a.t_pull,
            t_restore: a.t_restore,
            t_pod_delete: a.t_pod_delete,
            t_pod_create: a.t_pod_create,
            pause_during_checkpoint: a.pause_during_checkpoint,
            seed: a.seed,
            repetitions: a.reps,
            timeout_multiplier: a.timeout_multiplier,
            warmup: a.warmup,
            drain_after_handover: a.drain_after_handover,
        }
    }
}

enum Failure {
    Usage(ConfigError),
    Run(RunFailure),
    Other(anyhow::Error),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Usage(e)
    }
}

impl From<RunFailure> for Failure {
    fn from(e: RunFailure) -> Self {
        Failure::Run(e)
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Other(e)
    }
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn write_reports(records: &[RunRecord], runs_csv: &Path, agg_csv: &Path, json: bool) -> anyhow::Result<()> {
    let rows = aggregate(&records.iter().map(|r| r.report.clone()).collect::<Vec<_>>())?;
    output::write_runs_csv(create(runs_csv)?, records)?;
    output::write_aggregate_csv(create(agg_csv)?, &rows)?;
    if json {
        output::write_runs_json(create(&runs_csv.with_extension("json"))?, records)?;
        output::write_aggregate_json(create(&agg_csv.with_extension("json"))?, &rows)?;
    }
    println!("wrote {} run rows to {}", records.len(), runs_csv.display());
    println!("wrote {} aggregate rows to {}", rows.len(), agg_csv.display());
    Ok(())
}

fn cmd_run(args: RunArgs) -> Result<(), Failure> {
    let file = match &args.config {
        Some(p) => ScenarioOverrides::load(p)?,
        None => ScenarioOverrides::default(),
    };
    let cfg: ScenarioConfig = file.merge(args.scenario.into()).resolve()?;
    let records = run_all(std::slice::from_ref(&cfg))?;
    let out = &args.output.out;
    write_reports(
        &records,
        &out.join("runs.csv"),
        &out.join("aggregate.csv"),
        args.output.json,
    )?;
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> Result<(), Failure> {
    let file = match &args.config {
        Some(p) => SweepOverrides::load(p)?,
        None => SweepOverrides::default(),
    };
    let flags = SweepOverrides {
        param: args.param,
        values: args.values,
        strategies: args.strategies,
        output: args.output_file,
        base: args.scenario.into(),
    };
    let sweep = file.merge(flags).resolve()?;
    let cfgs = sweep.expand()?;
    let records = run_all(&cfgs)?;
    let out = &args.output.out;
    let agg = out.join(sweep.output.as_deref().unwrap_or("sweep.csv"));
    let runs = agg.with_file_name(format!(
        "{}_runs.csv",
        agg.file_stem().and_then(|s| s.to_str()).unwrap_or("sweep")
    ));
    write_reports(&records, &runs, &agg, args.output.json)?;
    Ok(())
}

fn cmd_profiles_list() {
    for name in PROFILE_NAMES {
        let p = PhaseLatencyModel::named(name).expect("built-in profile");
        let fields: Vec<String> = p.fields().iter().map(|(k, v)| format!("{k}={v}")).collect();
        println!(
            "{name}: {} pause_during_checkpoint={} stop_and_copy_total={}",
            fields.join(" "),
            p.pause_during_checkpoint,
            p.stop_and_copy_total()
        );
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Profiles {
            command: ProfilesCommand::List,
        } => {
            cmd_profiles_list();
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Run(e)) if e.is_invariant_breach() => {
            eprintln!("invariant breach: {e}");
            ExitCode::from(EXIT_BREACH)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Other(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_USAGE)
        }
    }
}
