//! Experiment config files (TOML).
//!
//! ```toml
//! [dataset]            # synthetic spec, or `path = "dir"` for saved data
//! classes = 6
//! ...
//! [strategy.lltc]      # one table per arm; `kind` defaults to the name
//! threshold = 0.9
//! [strategy.ceiling]
//! kind = "offload_all"
//! [schedule]
//! k0 = 100
//! n_iters = 10
//! growth = 50
//! [channel]
//! [seeds]
//! values = [1, 2, 3]
//! [train]              # optional
//! [edge]               # optional
//! noise_detect_rate = 0.9
//! ```

use std::path::{Path, PathBuf};

use lltc_core::datagen::DataError;
use lltc_core::{ChannelConfig, LltcParams, Schedule, SimConfig, Strategy, StrategyKind, SynthSpec, TrainConfig};
use serde::Deserialize;
use toml::Table;

use crate::CliError;

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSource {
    /// Generated per run, with the run seed.
    Synthetic(SynthSpec),
    /// Loaded from a saved dataset directory, resolved against the config's
    /// directory.
    Saved(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Arm {
    pub name: String,
    pub strategy: Strategy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    pub arms: Vec<Arm>,
    pub schedule: Schedule,
    pub channel: ChannelConfig,
    pub seeds: Vec<u64>,
    pub train: TrainConfig,
    pub noise_detect_rate: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    dataset: Table,
    #[serde(default)]
    strategy: Table,
    schedule: Option<Schedule>,
    #[serde(default)]
    channel: ChannelConfig,
    seeds: Option<Seeds>,
    #[serde(default)]
    train: TrainConfig,
    #[serde(default)]
    edge: Edge,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Seeds {
    values: Vec<u64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields, default)]
struct Edge {
    noise_detect_rate: f64,
}

impl Default for Edge {
    fn default() -> Self {
        Self { noise_detect_rate: 1.0 }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SavedDataset {
    path: PathBuf,
}

fn invalid(field: impl Into<String>, message: impl ToString) -> CliError {
    CliError::Config {
        field: field.into(),
        message: message.to_string(),
    }
}

fn section<T: for<'de> Deserialize<'de>>(name: &str, table: Table) -> Result<T, CliError> {
    toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| invalid(name, e.message()))
}

fn parse_arm(name: &str, value: toml::Value) -> Result<Arm, CliError> {
    let field = format!("strategy.{name}");
    let valid_name = !name.is_empty()
        && name
            .chars()
            .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_' || c == '-');
    if !valid_name {
        return Err(invalid(field, "names may only use a-z, 0-9, '_' and '-'"));
    }
    let toml::Value::Table(mut table) = value else {
        return Err(invalid(field, "expected a table"));
    };
    let kind_name = match table.remove("kind") {
        Some(toml::Value::String(s)) => s,
        Some(_) => return Err(invalid(format!("{field}.kind"), "expected a string")),
        None => name.to_string(),
    };
    let kind: StrategyKind = kind_name
        .parse()
        .map_err(|e: String| invalid(format!("{field}.kind"), e))?;
    let strategy = match kind {
        StrategyKind::Lltc => {
            let params: LltcParams = section(&field, table)?;
            params.validate().map_err(|e| invalid(format!("{field}.threshold"), e))?;
            Strategy::Lltc(params)
        }
        other => {
            if let Some(key) = table.keys().next() {
                return Err(invalid(field, format!("`{other}` takes no parameters, found `{key}`")));
            }
            Strategy::default_for(other)
        }
    };
    Ok(Arm {
        name: name.to_string(),
        strategy,
    })
}

fn spec_error(e: DataError) -> CliError {
    match e {
        DataError::SpecInvalid { field, message } => invalid(format!("dataset.{field}"), message),
        other => CliError::Runtime {
            context: "dataset".into(),
            message: other.to_string(),
        },
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, CliError> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| invalid("config", e.message()))?;

        let dataset = if raw.dataset.contains_key("path") {
            let saved: SavedDataset = section("dataset", raw.dataset)?;
            DatasetSource::Saved(base_dir.join(saved.path))
        } else {
            let spec: SynthSpec = section("dataset", raw.dataset)?;
            spec.validate().map_err(spec_error)?;
            DatasetSource::Synthetic(spec)
        };

        let arms = raw
            .strategy
            .into_iter()
            .map(|(name, value)| parse_arm(&name, value))
            .collect::<Result<Vec<_>, _>>()?;

        let schedule = raw
            .schedule
            .ok_or_else(|| invalid("schedule", "missing section"))?;
        if schedule.n_iters == 0 {
            return Err(invalid("schedule.n_iters", "must be at least 1"));
        }
        if schedule.arrivals_per_round == Some(0) {
            return Err(invalid("schedule.arrivals_per_round", "must be positive"));
        }
        if raw.channel.header_bytes > 1024 {
            return Err(invalid(
                "channel.header_bytes",
                format!("must be at most 1024, got {}", raw.channel.header_bytes),
            ));
        }
        let seeds = raw.seeds.map(|s| s.values).unwrap_or_default();
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = seeds.iter().find(|s| !seen.insert(**s)) {
            return Err(invalid("seeds.values", format!("seed {dup} listed twice")));
        }
        raw.train.validate().map_err(|e| invalid("train", e))?;
        let rate = raw.edge.noise_detect_rate;
        if !(0.0..=1.0).contains(&rate) {
            return Err(invalid("edge.noise_detect_rate", format!("must be in [0, 1], got {rate}")));
        }
        Ok(Self {
            dataset,
            arms,
            schedule,
            channel: raw.channel,
            seeds,
            train: raw.train,
            noise_detect_rate: rate,
        })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| invalid("config", format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::parse(&text, base)
    }

    /// Replaces the seed list (the `--seed` override).
    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        if let Some(s) = seed {
            self.seeds = vec![s];
        }
        self
    }

    /// Simulator settings for one (arm, seed) pair.
    pub fn sim_config(&self, arm: &Arm, seed: u64) -> SimConfig {
        SimConfig {
            name: arm.name.clone(),
            strategy: arm.strategy,
            schedule: self.schedule,
            channel: self.channel,
            noise_detect_rate: self.noise_detect_rate,
            train: self.train,
            seed,
        }
    }
}
