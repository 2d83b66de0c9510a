use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use esmaml::cli::{cmd_eval, cmd_train, CliError, EvalArgs, TrainArgs};

#[derive(Parser)]
#[command(name = "esmaml", version, about = "ES-MAML meta-training and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Meta-train a policy from a TOML config.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Override a config entry, e.g. `--set meta.beta=0.02`. Repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Adapt a checkpointed meta-policy to held-out tasks.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        family: String,
        /// Adaptation query budget.
        #[arg(long = "K")]
        k: usize,
        #[arg(long)]
        trials: usize,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train { config, set, seed, workers, out, resume } => {
            let outcome = cmd_train(&TrainArgs { config, set, seed, workers, out, resume })?;
            if let Some(last) = outcome.reports.last() {
                println!(
                    "iteration {}: meta score {} (unadapted {}, gap {}), {} rollouts",
                    last.iteration, last.meta_score_mean, last.unadapted_mean, last.adaptation_gap, last.rollouts_cumulative
                );
            } else {
                println!("completed {} iterations", outcome.state.iteration);
            }
        }
        Command::Eval { checkpoint, family, k, trials, out, seed } => {
            let rows = cmd_eval(&EvalArgs { checkpoint, family, k, trials, out, seed })?;
            let n = rows.len().max(1) as f64;
            let adapted = rows.iter().map(|r| r.adapted_reward).sum::<f64>() / n;
            let unadapted = rows.iter().map(|r| r.unadapted_reward).sum::<f64>() / n;
            println!("{} tasks: adapted {adapted}, unadapted {unadapted}, gap {}", rows.len(), adapted - unadapted);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
