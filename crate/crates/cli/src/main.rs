use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::anyhow;
use capstop_cli::{load_config, run, solve, ten_digits, Failure};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "capstop",
    version,
    about = "American calls with two-level caps"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the boundaries and write boundary, time, price and diagnostic files.
    Solve {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides `output.dir`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Seed for the Monte Carlo check (overrides `oracle.seed`).
        #[arg(long)]
        seed: Option<u64>,
        /// Compare against the lattice and Monte Carlo oracles.
        #[arg(long)]
        oracle: bool,
    },
    /// Print the price at one point with 10 significant digits.
    Price {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        s: f64,
        #[arg(long)]
        t: f64,
    },
}

fn execute(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Solve {
            config,
            out,
            seed,
            oracle,
        } => {
            let mut cfg = load_config(&config)?;
            if let Some(o) = out {
                cfg.out = o;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            for path in run(&cfg, oracle)? {
                println!("{}", path.display());
            }
        }
        Command::Price { config, s, t } => {
            let cfg = load_config(&config)?;
            if s.is_nan() || s <= 0.0 || !(0.0..=cfg.cap.t2).contains(&t) {
                return Err(Failure::Config(anyhow!("need S > 0 and 0 <= t <= T2")));
            }
            let sol = solve(&cfg)?;
            println!("{}", ten_digits(sol.price(s, t)));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error());
            ExitCode::from(f.exit_code() as u8)
        }
    }
}
