//! Command implementations behind the `lltc` binary.

pub mod config;
pub mod curves;

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use lltc_core::datagen::{self, DataError};
use lltc_core::edgesim::reports_to_csv;
use lltc_core::{generate, run_experiment, Dataset, RunOutput, RunSummary};
use thiserror::Error;

use crate::config::{DatasetSource, ExperimentConfig};

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

pub const RUNS_DIR: &str = "runs";
pub const COMPARISON_FILE: &str = "comparison.csv";
pub const ROUNDS_FILE: &str = "rounds.csv";
pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Error, Debug)]
pub enum CliError {
    #[error("config error: {field}: {message}")]
    Config { field: String, message: String },
    #[error("{0}")]
    Usage(String),
    #[error("{file}:{line}: {field}: {message}")]
    Input {
        file: String,
        line: usize,
        field: String,
        message: String,
    },
    #[error("{context}: {message}")]
    Runtime { context: String, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } | CliError::Usage(_) | CliError::Input { .. } => EXIT_CONFIG,
            CliError::Runtime { .. } | CliError::Io { .. } => EXIT_RUNTIME,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `contents` to a sibling temp file, then renames it over `path`.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{name}.{}.tmp", std::process::id()));
    fs::write(&tmp, contents).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

fn is_occupied(path: &Path) -> bool {
    match fs::read_dir(path) {
        Ok(mut entries) => entries.next().is_some(),
        Err(_) => path.exists(),
    }
}

fn refuse_overwrite(out: &Path, force: bool) -> Result<(), CliError> {
    if !force && is_occupied(out) {
        return Err(CliError::Usage(format!(
            "{} already exists; pass --force to overwrite",
            out.display()
        )));
    }
    Ok(())
}

/// Row counts written by [`cmd_generate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GenerateSummary {
    pub labeled: usize,
    pub unlabeled: usize,
    pub noise: usize,
    pub test: usize,
}

fn data_error(e: DataError) -> CliError {
    match e {
        DataError::SpecInvalid { field, message } => CliError::Config {
            field: format!("dataset.{field}"),
            message,
        },
        DataError::SchemaViolation {
            file,
            line,
            field,
            message,
        } => CliError::Input {
            file,
            line,
            field,
            message,
        },
        DataError::IoFailure { path, source } => CliError::Io { path, source },
    }
}

/// Generates the configured synthetic dataset into `out`.
///
/// The seed is `seed` if given, else `dataset.seed`.
pub fn cmd_generate(config: &Path, out: &Path, force: bool, seed: Option<u64>) -> Result<GenerateSummary, CliError> {
    let cfg = ExperimentConfig::load(config)?;
    let DatasetSource::Synthetic(mut spec) = cfg.dataset else {
        return Err(CliError::Config {
            field: "dataset.path".into(),
            message: "generate needs a synthetic dataset spec".into(),
        });
    };
    if let Some(s) = seed {
        spec.seed = s;
    }
    refuse_overwrite(out, force)?;
    let data = generate(&spec).map_err(data_error)?;

    // build next to the target, then swap it in
    let staging = out.with_extension(format!("staging-{}", std::process::id()));
    if staging.exists() {
        fs::remove_dir_all(&staging).map_err(io_err(&staging))?;
    }
    datagen::save(&data, &staging).map_err(data_error)?;
    if out.exists() {
        fs::remove_dir_all(out).map_err(io_err(out))?;
    }
    fs::rename(&staging, out).map_err(io_err(out))?;

    Ok(GenerateSummary {
        labeled: data.labeled.len(),
        unlabeled: data.unlabeled.len(),
        noise: data.unlabeled.samples().iter().filter(|s| s.is_noise()).count(),
        test: data.test.len(),
    })
}

/// Directory holding one run's files.
pub fn run_dir(out: &Path, arm: &str, seed: u64) -> PathBuf {
    out.join(RUNS_DIR).join(format!("{arm}-seed{seed}"))
}

fn dataset_for(cfg: &ExperimentConfig, seed: u64) -> Result<Dataset, CliError> {
    match &cfg.dataset {
        DatasetSource::Synthetic(spec) => {
            let spec = lltc_core::SynthSpec { seed, ..*spec };
            generate(&spec).map_err(data_error)
        }
        DatasetSource::Saved(path) => datagen::load(path).map_err(data_error),
    }
}

/// Runs every (arm, seed) pair of the config and writes reports under `out`.
///
/// Each run gets `runs/<arm>-seed<seed>/{rounds.csv,summary.json}`; all rounds
/// are also collected into `comparison.csv`. With `seed`, only that seed runs.
pub fn cmd_run(
    config: &Path,
    out: &Path,
    force: bool,
    seed: Option<u64>,
    jobs: usize,
) -> Result<Vec<RunSummary>, CliError> {
    let cfg = ExperimentConfig::load(config)?.with_seed(seed);
    if cfg.arms.is_empty() {
        return Err(CliError::Config {
            field: "strategy".into(),
            message: "no strategies configured".into(),
        });
    }
    if cfg.seeds.is_empty() {
        return Err(CliError::Config {
            field: "seeds.values".into(),
            message: "no seeds configured".into(),
        });
    }
    refuse_overwrite(out, force)?;
    for stale in [out.join(RUNS_DIR), out.join(COMPARISON_FILE)] {
        if stale.is_dir() {
            fs::remove_dir_all(&stale).map_err(io_err(&stale))?;
        } else if stale.exists() {
            fs::remove_file(&stale).map_err(io_err(&stale))?;
        }
    }

    let datasets = match cfg.dataset {
        DatasetSource::Saved(_) => vec![dataset_for(&cfg, 0)?],
        DatasetSource::Synthetic(_) => cfg
            .seeds
            .iter()
            .map(|&s| dataset_for(&cfg, s))
            .collect::<Result<Vec<_>, _>>()?,
    };
    let tasks: Vec<(usize, usize)> = (0..cfg.arms.len())
        .flat_map(|a| (0..cfg.seeds.len()).map(move |s| (a, s)))
        .collect();

    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<RunOutput, CliError>>>> = Mutex::new(tasks.iter().map(|_| None).collect());
    let worker = || loop {
        let i = next.fetch_add(1, Ordering::Relaxed);
        let Some(&(a, s)) = tasks.get(i) else { break };
        let arm = &cfg.arms[a];
        let seed = cfg.seeds[s];
        let data = &datasets[s.min(datasets.len() - 1)];
        let result = run_experiment(&cfg.sim_config(arm, seed), data)
            .map_err(|e| CliError::Runtime {
                context: format!("strategy {}, seed {seed}", arm.name),
                message: e.to_string(),
            })
            .and_then(|output| {
                write_run(&run_dir(out, &arm.name, seed), &output)?;
                Ok(output)
            });
        results.lock().expect("worker panicked")[i] = Some(result);
    };
    std::thread::scope(|scope| {
        for _ in 0..jobs.max(1).min(tasks.len()) {
            scope.spawn(worker);
        }
    });

    let mut outputs = Vec::with_capacity(tasks.len());
    for r in results.into_inner().expect("worker panicked") {
        outputs.push(r.expect("every task ran")?);
    }
    let mut comparison = lltc_core::edgesim::report_csv_header();
    comparison.push('\n');
    for o in &outputs {
        for r in &o.reports {
            comparison.push_str(&lltc_core::edgesim::report_csv_row(r));
            comparison.push('\n');
        }
    }
    write_atomic(&out.join(COMPARISON_FILE), comparison.as_bytes())?;
    Ok(outputs.into_iter().map(|o| o.summary).collect())
}

fn write_run(dir: &Path, output: &RunOutput) -> Result<(), CliError> {
    write_atomic(&dir.join(ROUNDS_FILE), reports_to_csv(&output.reports).as_bytes())?;
    let mut json = serde_json::to_string_pretty(&output.summary).expect("summary serializes");
    json.push('\n');
    write_atomic(&dir.join(SUMMARY_FILE), json.as_bytes())
}

/// Reads a comparison file and writes the aggregated curve table to `out`.
pub fn cmd_curves(comparison: &Path, out: &Path) -> Result<usize, CliError> {
    let text = fs::read_to_string(comparison).map_err(io_err(comparison))?;
    let file = comparison.display().to_string();
    let rows = curves::parse_comparison(&text, &file)?;
    let table = curves::aggregate(&rows);
    write_atomic(out, curves::to_csv(&table).as_bytes())?;
    Ok(table.len())
}
