//! Scenario and sweep configuration.
//!
//! Configuration comes from a TOML file, command-line flags, or both. Both
//! sources parse into [`ScenarioOverrides`], a bag of optional fields; flags
//! are merged over the file and the result is resolved against defaults into
//! a validated [`ScenarioConfig`].

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::checkpoint::PhaseLatencyModel;
use crate::migration::{MigrationScenario, MigrationStrategy};
use crate::sim::DistributionSpec;
use crate::workload::{ArrivalKind, ConsumerModel, ProducerModel};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("missing required field `{0}`")]
    Missing(&'static str),
    #[error("invalid `{field}`: {reason}")]
    Invalid { field: &'static str, reason: String },
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: toml::de::Error,
    },
}

fn invalid(field: &'static str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field,
        reason: reason.into(),
    }
}

pub const DEFAULT_RATE: f64 = 10.0;
pub const DEFAULT_SERVICE_TIME: f64 = 0.05;
pub const DEFAULT_PROFILE: &str = "paper-like";

/// Every scenario option, each optional. Field names double as TOML keys.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioOverrides {
    pub strategy: Option<MigrationStrategy>,
    /// Producer rate in messages per second.
    pub rate: Option<f64>,
    pub arrivals: Option<ArrivalKind>,
    /// Time of the first deterministic arrival, in seconds.
    pub arrival_phase: Option<f64>,
    /// Mean service time in seconds.
    pub service_time: Option<f64>,
    pub service: Option<ArrivalKind>,
    pub t_replay_max: Option<f64>,
    pub profile: Option<String>,
    pub t_checkpoint: Option<f64>,
    pub t_build: Option<f64>,
    pub t_push: Option<f64>,
    pub t_pull: Option<f64>,
    pub t_restore: Option<f64>,
    pub t_pod_delete: Option<f64>,
    pub t_pod_create: Option<f64>,
    pub pause_during_checkpoint: Option<bool>,
    pub seed: Option<u64>,
    pub repetitions: Option<u32>,
    pub timeout_multiplier: Option<f64>,
    /// Virtual time before the migration is requested.
    pub warmup: Option<f64>,
    pub drain_after_handover: Option<bool>,
}

macro_rules! merge_fields {
    ($base:expr, $top:expr, $($f:ident),*) => {
        ScenarioOverrides { $($f: $top.$f.or($base.$f)),* }
    };
}

impl ScenarioOverrides {
    /// Field-wise merge; values set in `top` win.
    pub fn merge(self, top: ScenarioOverrides) -> ScenarioOverrides {
        merge_fields!(
            self,
            top,
            strategy,
            rate,
            arrivals,
            arrival_phase,
            service_time,
            service,
            t_replay_max,
            profile,
            t_checkpoint,
            t_build,
            t_push,
            t_pull,
            t_restore,
            t_pod_delete,
            t_pod_create,
            pause_during_checkpoint,
            seed,
            repetitions,
            timeout_multiplier,
            warmup,
            drain_after_handover
        )
    }

    pub fn from_toml(text: &str, path: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|source| ConfigError::Parse {
            path: path.to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let shown = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: shown.clone(),
            source,
        })?;
        Self::from_toml(&text, &shown)
    }

    /// Applies defaults and validates. `strategy` has no default.
    pub fn resolve(&self) -> Result<ScenarioConfig, ConfigError> {
        let strategy = self.strategy.ok_or(ConfigError::Missing("strategy"))?;
        self.resolve_with(strategy)
    }

    pub(crate) fn resolve_with(&self, strategy: MigrationStrategy) -> Result<ScenarioConfig, ConfigError> {
        let profile = self.profile.clone().unwrap_or_else(|| DEFAULT_PROFILE.to_string());
        let mut latency = PhaseLatencyModel::named(&profile).map_err(|e| invalid("profile", e.to_string()))?;
        let slots: [(&'static str, Option<f64>, &mut f64); 7] = [
            ("t_checkpoint", self.t_checkpoint, &mut latency.t_checkpoint),
            ("t_build", self.t_build, &mut latency.t_build),
            ("t_push", self.t_push, &mut latency.t_push),
            ("t_pull", self.t_pull, &mut latency.t_pull),
            ("t_restore", self.t_restore, &mut latency.t_restore),
            ("t_pod_delete", self.t_pod_delete, &mut latency.t_pod_delete),
            ("t_pod_create", self.t_pod_create, &mut latency.t_pod_create),
        ];
        for (field, value, slot) in slots {
            if let Some(v) = value {
                non_negative(field, v)?;
                *slot = v;
            }
        }
        if let Some(p) = self.pause_during_checkpoint {
            latency.pause_during_checkpoint = p;
        }

        let cfg = ScenarioConfig {
            strategy,
            rate: self.rate.unwrap_or(DEFAULT_RATE),
            arrivals: self.arrivals.unwrap_or(ArrivalKind::Deterministic),
            arrival_phase: self.arrival_phase,
            service_time: self.service_time.unwrap_or(DEFAULT_SERVICE_TIME),
            service: self.service.unwrap_or(ArrivalKind::Deterministic),
            t_replay_max: self.t_replay_max.unwrap_or(60.0),
            profile,
            latency,
            seed: self.seed.unwrap_or(0),
            repetitions: self.repetitions.unwrap_or(1),
            timeout_multiplier: self.timeout_multiplier.unwrap_or(10.0),
            warmup: self.warmup.unwrap_or(10.0),
            drain_after_handover: self.drain_after_handover.unwrap_or(true),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn non_negative(field: &'static str, v: f64) -> Result<(), ConfigError> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(invalid(field, format!("{v} must be finite and >= 0")))
    }
}

fn positive(field: &'static str, v: f64) -> Result<(), ConfigError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(invalid(field, format!("{v} must be finite and > 0")))
    }
}

/// A fully resolved scenario. `profile` names the base latency profile;
/// `latency` holds the effective values after per-phase overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub strategy: MigrationStrategy,
    pub rate: f64,
    pub arrivals: ArrivalKind,
    pub arrival_phase: Option<f64>,
    pub service_time: f64,
    pub service: ArrivalKind,
    pub t_replay_max: f64,
    pub profile: String,
    pub latency: PhaseLatencyModel,
    pub seed: u64,
    pub repetitions: u32,
    pub timeout_multiplier: f64,
    pub warmup: f64,
    pub drain_after_handover: bool,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        non_negative("rate", self.rate)?;
        if let Some(p) = self.arrival_phase {
            non_negative("arrival_phase", p)?;
        }
        positive("service_time", self.service_time)?;
        positive("t_replay_max", self.t_replay_max)?;
        if self.repetitions < 1 {
            return Err(invalid("repetitions", "must be >= 1"));
        }
        positive("timeout_multiplier", self.timeout_multiplier)?;
        non_negative("warmup", self.warmup)?;
        self.latency.validate().map_err(|e| invalid("profile", e.to_string()))?;
        Ok(())
    }

    /// Engine scenario for one repetition.
    pub fn scenario(&self, seed: u64) -> MigrationScenario {
        let mut producer = ProducerModel {
            rate: self.rate,
            arrivals: self.arrivals,
            phase: None,
        };
        if let Some(p) = self.arrival_phase {
            producer = producer.with_phase(p);
        }
        let service = match self.service {
            ArrivalKind::Deterministic => DistributionSpec::Deterministic {
                interval: self.service_time,
            },
            ArrivalKind::Exponential => DistributionSpec::Exponential {
                rate: 1.0 / self.service_time,
            },
        };
        let mut sc = MigrationScenario::new(self.strategy, producer, ConsumerModel { service }, self.latency);
        sc.t_replay_max = self.t_replay_max;
        sc.warmup = self.warmup;
        sc.timeout_multiplier = self.timeout_multiplier;
        sc.seed = seed;
        sc.drain_after_handover = self.drain_after_handover;
        sc
    }

    /// Seeds for each repetition: `seed, seed + 1, ...`.
    pub fn seeds(&self) -> impl Iterator<Item = u64> + '_ {
        (0..self.repetitions as u64).map(move |i| self.seed.wrapping_add(i))
    }

    /// SHA-256 over the canonical JSON encoding, hex encoded.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serialises");
        hex::encode(Sha256::digest(&json))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    Lambda,
    TReplayMax,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Lambda => "lambda",
            SweepParam::TReplayMax => "t_replay_max",
        }
    }
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepParam {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "lambda" | "rate" => Ok(SweepParam::Lambda),
            "t_replay_max" | "t-replay-max" => Ok(SweepParam::TReplayMax),
            other => Err(invalid(
                "param",
                format!("unknown parameter {other:?}, expected lambda or t_replay_max"),
            )),
        }
    }
}

/// Sweep file layout: top-level sweep keys plus a `[base]` scenario table.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepOverrides {
    pub param: Option<SweepParam>,
    pub values: Option<Vec<f64>>,
    pub strategies: Option<Vec<MigrationStrategy>>,
    pub output: Option<String>,
    #[serde(default)]
    pub base: ScenarioOverrides,
}

impl SweepOverrides {
    pub fn merge(self, top: SweepOverrides) -> SweepOverrides {
        SweepOverrides {
            param: top.param.or(self.param),
            values: top.values.or(self.values),
            strategies: top.strategies.or(self.strategies),
            output: top.output.or(self.output),
            base: self.base.merge(top.base),
        }
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let shown = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: shown.clone(),
            source,
        })?;
        toml::from_str(&text).map_err(|source| ConfigError::Parse { path: shown, source })
    }

    pub fn resolve(&self) -> Result<SweepConfig, ConfigError> {
        let param = self.param.ok_or(ConfigError::Missing("param"))?;
        let values = self.values.clone().ok_or(ConfigError::Missing("values"))?;
        if values.is_empty() {
            return Err(invalid("values", "list is empty"));
        }
        for &v in &values {
            positive("values", v)?;
        }
        if values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("values", "must be strictly increasing"));
        }
        let strategies = match &self.strategies {
            Some(s) if s.is_empty() => return Err(invalid("strategies", "list is empty")),
            Some(s) => s.clone(),
            None => MigrationStrategy::ALL.to_vec(),
        };
        let mut seen = strategies.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != strategies.len() {
            return Err(invalid("strategies", "duplicate entries"));
        }
        // Validate the base once with a placeholder strategy so that errors
        // name the offending base field.
        self.base.resolve_with(strategies[0])?;
        Ok(SweepConfig {
            base: self.base.clone(),
            param,
            values,
            strategies,
            output: self.output.clone(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub base: ScenarioOverrides,
    pub param: SweepParam,
    pub values: Vec<f64>,
    pub strategies: Vec<MigrationStrategy>,
    /// Aggregate CSV file name or path, relative to the output directory.
    pub output: Option<String>,
}

impl SweepConfig {
    /// One resolved scenario per (strategy, value), strategies outermost.
    pub fn expand(&self) -> Result<Vec<ScenarioConfig>, ConfigError> {
        let mut out = Vec::with_capacity(self.strategies.len() * self.values.len());
        for &strategy in &self.strategies {
            for &v in &self.values {
                let mut o = self.base.clone();
                match self.param {
                    SweepParam::Lambda => o.rate = Some(v),
                    SweepParam::TReplayMax => o.t_replay_max = Some(v),
                }
                out.push(o.resolve_with(strategy)?);
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> ScenarioOverrides {
        ScenarioOverrides::from_toml(text, "test.toml").unwrap()
    }

    #[test]
    fn defaults_match_baseline() {
        let cfg = parse("strategy = \"stop-and-copy\"").resolve().unwrap();
        assert_eq!(cfg.rate, 10.0);
        assert_eq!(cfg.service_time, 0.05);
        assert_eq!(cfg.latency, PhaseLatencyModel::paper_like());
        assert_eq!(cfg.repetitions, 1);
        assert_eq!(cfg.arrivals, ArrivalKind::Deterministic);
    }

    #[test]
    fn flags_override_file() {
        let file = parse("strategy = \"ms2m-cutoff\"\nrate = 4.0\nt_replay_max = 5.0\nseed = 9");
        let flags = ScenarioOverrides {
            rate: Some(12.0),
            ..Default::default()
        };
        let cfg = file.merge(flags).resolve().unwrap();
        assert_eq!(cfg.strategy, MigrationStrategy::Ms2mCutoff);
        assert_eq!(cfg.rate, 12.0);
        assert_eq!(cfg.t_replay_max, 5.0);
        assert_eq!(cfg.seed, 9);
    }

    #[test]
    fn inline_latency_overrides_profile() {
        let cfg =
            parse("strategy = \"stop-and-copy\"\nprofile = \"zero\"\nt_pull = 3.5\npause_during_checkpoint = true")
                .resolve()
                .unwrap();
        assert_eq!(cfg.latency.t_pull, 3.5);
        assert_eq!(cfg.latency.stop_and_copy_total(), 3.5);
        assert!(cfg.latency.pause_during_checkpoint);
    }

    #[test]
    fn errors_name_the_field() {
        let cases = [
            ("rate = 1.0", "strategy"),
            ("strategy = \"stop-and-copy\"\nrepetitions = 0", "repetitions"),
            ("strategy = \"stop-and-copy\"\nprofile = \"slow\"", "profile"),
            ("strategy = \"stop-and-copy\"\nrate = -1.0", "rate"),
            ("strategy = \"ms2m-cutoff\"\nt_replay_max = 0.0", "t_replay_max"),
            ("strategy = \"stop-and-copy\"\nt_build = -2.0", "t_build"),
            ("strategy = \"stop-and-copy\"\nservice_time = 0.0", "service_time"),
        ];
        for (text, field) in cases {
            let err = parse(text).resolve().unwrap_err().to_string();
            assert!(err.contains(field), "{text:?} gave {err:?}");
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ScenarioOverrides::from_toml("strategy = \"stop-and-copy\"\nlambda = 3.0", "x").is_err());
        assert!(ScenarioOverrides::from_toml("strategy = \"cold\"", "x").is_err());
    }

    #[test]
    fn hash_tracks_every_field() {
        let a = parse("strategy = \"ms2m-individual\"").resolve().unwrap();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
        b.latency.t_push += 0.001;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn seeds_are_consecutive() {
        let cfg = parse("strategy = \"stop-and-copy\"\nseed = 7\nrepetitions = 3")
            .resolve()
            .unwrap();
        assert_eq!(cfg.seeds().collect::<Vec<_>>(), vec![7, 8, 9]);
    }

    #[test]
    fn scenario_carries_the_config() {
        let cfg = parse("strategy = \"ms2m-cutoff\"\nrate = 8.0\nservice = \"exponential\"\nt_replay_max = 2.0\narrival_phase = 0.0")
            .resolve()
            .unwrap();
        let sc = cfg.scenario(42);
        assert_eq!(sc.seed, 42);
        assert_eq!(sc.producer.rate, 8.0);
        assert_eq!(sc.producer.phase, Some(0.0));
        assert_eq!(sc.consumer.mu(), 20.0);
        assert_eq!(sc.t_replay_max, 2.0);
        sc.validate().unwrap();
    }

    #[test]
    fn sweep_file_parses_and_expands() {
        let text = "param = \"lambda\"\nvalues = [4.0, 10.0, 16.0]\n[base]\nrepetitions = 2\n";
        let sweep: SweepOverrides = toml::from_str(text).unwrap();
        let sweep = sweep.resolve().unwrap();
        let cfgs = sweep.expand().unwrap();
        assert_eq!(cfgs.len(), 12);
        assert_eq!(cfgs[0].strategy, MigrationStrategy::StopAndCopy);
        assert_eq!(cfgs[2].rate, 16.0);
        assert!(cfgs.iter().all(|c| c.repetitions == 2));
    }

    #[test]
    fn sweep_values_must_increase() {
        for values in [vec![], vec![4.0, 4.0], vec![10.0, 4.0], vec![0.0, 4.0]] {
            let s = SweepOverrides {
                param: Some(SweepParam::Lambda),
                values: Some(values),
                ..Default::default()
            };
            let err = s.resolve().unwrap_err().to_string();
            assert!(err.contains("values"), "{err}");
        }
        let s = SweepOverrides {
            param: Some(SweepParam::Lambda),
            ..Default::default()
        };
        assert!(s.resolve().unwrap_err().to_string().contains("values"));
    }
}
