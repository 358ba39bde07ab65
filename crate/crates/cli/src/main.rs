use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use rnc_lab::{cmd_compare, cmd_gradcheck, cmd_synth, cmd_train, exit, CliError, ExperimentConfig, Regime};

#[derive(Debug, Parser)]
#[command(name = "rnc-lab", version, about = "Rank-and-contrast regression experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic dataset as CSV.
    Synth {
        #[arg(long, default_value_t = 512)]
        n: usize,
        #[arg(long, default_value_t = 16)]
        dim: usize,
        #[arg(long, default_value_t = 0.05)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output file; defaults to a file under $RNC_LAB_OUT or ./runs.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train one regime with one seed.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Regime to run; the first in the config by default.
        #[arg(long)]
        regime: Option<Regime>,
        /// Seed to run; the first in the config by default.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run every regime with every seed and summarize.
    Compare {
        #[arg(long)]
        config: PathBuf,
        /// Runs trained at the same time; all cores by default.
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Check the loss gradients against finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = rnc_core::training::GRADCHECK_DEFAULT_TOL)]
        tol: f64,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth { n, dim, noise, seed, out } => {
            let out = out.unwrap_or_else(|| rnc_lab::default_synth_path(n, dim, noise, seed));
            let rows = cmd_synth(n, dim, noise, seed, &out)?;
            println!("wrote {rows} rows to {}", out.display());
        }
        Command::Train { config, regime, seed } => {
            let cfg = ExperimentConfig::load(&config)?;
            let out = cmd_train(&cfg, regime, seed)?;
            for (k, v) in &out.metrics {
                println!("{k} = {v}");
            }
            println!("run directory: {}", out.dir.display());
        }
        Command::Compare { config, jobs } => {
            let cfg = ExperimentConfig::load(&config)?;
            let jobs = jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
            match cmd_compare(&cfg, jobs) {
                Ok(out) => {
                    print!("{}", out.summary.table());
                    println!("summary: {}", out.dir.join(rnc_lab::compare::SUMMARY_JSON).display());
                }
                Err(e @ CliError::RunsFailed { .. }) => {
                    let dir = cfg.out_root().join(&cfg.name);
                    if let Ok(table) = std::fs::read_to_string(dir.join(rnc_lab::compare::SUMMARY_TXT)) {
                        print!("{table}");
                    }
                    return Err(e);
                }
                Err(e) => return Err(e),
            }
        }
        Command::Gradcheck { seed, tol } => {
            let checks = cmd_gradcheck(seed, tol)?;
            let mut failed = Vec::new();
            for c in &checks {
                let r = &c.report;
                println!(
                    "{:<7} max_rel_err {:.3e}  checked {}  resolved {}  within_roundoff {}  skipped_kinks {}  {}",
                    c.loss,
                    r.max_rel_err,
                    r.checked,
                    r.resolved,
                    r.within_roundoff,
                    r.skipped_kinks,
                    match (r.passed, r.resolved) {
                        (true, _) => "ok",
                        (false, 0) => "FAIL (tolerance below finite-difference resolution)",
                        (false, _) => "FAIL",
                    }
                );
                if !r.passed {
                    failed.push(c.loss.to_string());
                }
            }
            if !failed.is_empty() {
                return Err(CliError::GradCheckFailed(failed.join(", ")));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // Help and version requests are not errors.
            return ExitCode::from(if e.use_stderr() { exit::USAGE as u8 } else { exit::SUCCESS as u8 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
