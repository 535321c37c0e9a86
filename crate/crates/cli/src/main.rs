use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lltc_cli::{cmd_curves, cmd_generate, cmd_run, CliError};

#[derive(Parser)]
#[command(name = "lltc", version, about = "Label-less learning traffic control experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset (meta.json plus labeled/unlabeled/test CSVs).
    Generate {
        #[arg(long)]
        config: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
        /// Dataset seed; overrides `dataset.seed`.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run every configured strategy for every seed.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
        /// Run only this seed instead of `seeds.values`.
        #[arg(long)]
        seed: Option<u64>,
        /// Parallel runs.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Aggregate a comparison file into plot-ready curves.
    Curves {
        /// A `comparison.csv` written by `run`.
        #[arg(long)]
        comparison: PathBuf,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
    },
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Generate {
            config,
            out,
            force,
            seed,
        } => {
            let s = cmd_generate(&config, &out, force, seed)?;
            println!(
                "wrote {}: {} labeled, {} unlabeled ({} noise), {} test",
                out.display(),
                s.labeled,
                s.unlabeled,
                s.noise,
                s.test
            );
        }
        Command::Run {
            config,
            out,
            force,
            seed,
            jobs,
        } => {
            let summaries = cmd_run(&config, &out, force, seed, jobs)?;
            println!("strategy,seed,rounds,final_accuracy,auto_label_accuracy,bytes_up,shortfall");
            for s in &summaries {
                let auto = s.auto_label_accuracy.map(|a| format!("{a:.4}")).unwrap_or_default();
                println!(
                    "{},{},{},{:.4},{},{},{}",
                    s.strategy, s.seed, s.rounds, s.final_accuracy, auto, s.total_bytes_up, s.total_shortfall
                );
            }
        }
        Command::Curves { comparison, out } => {
            let n = cmd_curves(&comparison, &out)?;
            println!("wrote {} curve points to {}", n, out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
