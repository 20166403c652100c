use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use spoil_cli::commands::{self, Session};
use spoil_cli::config::ExperimentConfig;
use spoil_cli::exit_code;
use spoil_cli::files::Workdir;

/// Offline imitation learning on finite linear MDPs.
///
/// Commands share a working directory (`--out`) holding env.txt, features.txt,
/// expert.txt, data.txt, policy.txt, run.csv and run_meta.txt.
#[derive(Parser)]
#[command(name = "spoil", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Configuration file of `key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed override: environment (gen-env), perturbation (gen-expert), dataset
    /// (sample-data), output draw (train) or base seed (experiment).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Working / output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a random linear MDP and certify linear realizability.
    GenEnv,
    /// Build the expert policy for the stored environment.
    GenExpert,
    /// Draw an expert dataset from the expert's occupancy measure.
    SampleData,
    /// Train `train.algo` on the stored dataset.
    Train,
    /// Exact suboptimality of the trained policy.
    Evaluate,
    /// Sweep algorithms, dataset sizes and seeds; writes results.csv and summary.csv.
    Experiment,
    /// Audit the stored run: decomposition report and regret bound.
    Diagnose,
    /// Single-state quadratic-expert table (five actions).
    AppendixC,
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let cfg = match &cli.config {
        Some(p) => ExperimentConfig::from_file(p)?,
        None => ExperimentConfig::default(),
    };
    let session = Session { cfg, seed: cli.seed, dir: Workdir(cli.out) };
    match cli.command {
        Command::GenEnv => commands::gen_env(&session),
        Command::GenExpert => commands::gen_expert(&session),
        Command::SampleData => commands::sample_data(&session),
        Command::Train => commands::train_cmd(&session),
        Command::Evaluate => commands::evaluate(&session),
        Command::Experiment => commands::experiment(&session).map(|_| ()),
        Command::Diagnose => commands::diagnose(&session),
        Command::AppendixC => commands::appendix_c(&session),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
