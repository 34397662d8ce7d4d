use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use masha::experiment::{self, CompareOptions, ExperimentConfig};
use masha::Error;

/// Simulated compressed distributed solvers for variational inequalities.
#[derive(Parser)]
#[command(name = "masha", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every configured algorithm over the configured seeds.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Override `run.repeat_seeds`.
        #[arg(long)]
        seeds: Option<u64>,
    },
    /// Grid search over γ; ranks by the seed-mean final metric.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        seeds: Option<u64>,
        /// Comma-separated grid; falls back to `sweep.gammas` in the config.
        #[arg(long, value_delimiter = ',')]
        gammas: Option<Vec<f64>>,
    },
    /// Five-method comparison on the bilinear game at equal bit budget.
    Compare {
        #[arg(long, default_value = "figure1")]
        preset: String,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        seeds: Option<u64>,
    },
    /// Print the step-size bounds and predicted iteration counts.
    CheckStepsize {
        #[arg(long)]
        config: PathBuf,
    },
}

fn load(config: &PathBuf, seeds: Option<u64>) -> masha::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(config)?;
    if let Some(n) = seeds {
        if n == 0 {
            return Err(Error::Config("--seeds must be >= 1".into()));
        }
        cfg.run.repeat_seeds = n;
    }
    Ok(cfg)
}

fn execute(cli: Cli) -> masha::Result<()> {
    match cli.command {
        Command::Run { config, out, seeds } => {
            let cfg = load(&config, seeds)?;
            let outcome = experiment::cmd_run(&cfg, &out)?;
            for (label, reports) in &outcome.reports {
                let diverged = reports.iter().filter(|r| r.status.is_diverged()).count();
                println!("{label}: {} runs, {diverged} diverged", reports.len());
            }
            println!("wrote {} files to {}", outcome.files.len(), out.display());
        }
        Command::Sweep {
            config,
            out,
            seeds,
            gammas,
        } => {
            let cfg = load(&config, seeds)?;
            let grid = gammas.unwrap_or_else(|| cfg.sweep_gammas.clone());
            let rows = experiment::cmd_sweep(&cfg, &grid)?;
            std::fs::create_dir_all(&out)?;
            std::fs::write(out.join("sweep.csv"), experiment::sweep_csv(&rows))?;
            for best in experiment::sweep_best(&rows) {
                println!("{}: best gamma {} (mean final {:e})", best.label, best.gamma, best.mean_final);
            }
        }
        Command::Compare { preset, out, seeds } => {
            if preset != "figure1" {
                return Err(Error::Config(format!("unknown preset `{preset}` (available: figure1)")));
            }
            let mut opts = CompareOptions::figure1();
            if let Some(n) = seeds {
                if n == 0 {
                    return Err(Error::Config("--seeds must be >= 1".into()));
                }
                opts.seeds = (0..n).collect();
            }
            let outcome = experiment::cmd_compare(&opts)?;
            let files = experiment::write_compare(&outcome, &out)?;
            for s in &outcome.series {
                println!(
                    "{:10} gamma {:.4e}  median final dist_sq {:e}",
                    s.label,
                    s.gamma,
                    s.median_final_dist_sq()
                );
            }
            println!("wrote {} files to {}", files.len(), out.display());
        }
        Command::CheckStepsize { config } => {
            let cfg = load(&config, None)?;
            print!("{}", experiment::cmd_check_stepsize(&cfg)?);
        }
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::InvalidParameter(_) | Error::Precondition(_) => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
