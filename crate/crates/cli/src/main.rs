mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use qtraj::NumericalError;

/// Environment variable holding the default worker-thread count.
const THREADS_ENV: &str = "QTRAJ_THREADS";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(#[from] NumericalError),
    #[error("acceptance check failed")]
    Acceptance,
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(NumericalError::Config(_)) => 2,
            CliError::Numerical(_) => 3,
            CliError::Acceptance => 4,
        }
    }
}

#[derive(Parser)]
#[command(
    name = "qtraj",
    version,
    about = "Two-qubit fluorescence trajectory simulator"
)]
struct Cli {
    /// Worker threads (default: $QTRAJ_THREADS, else all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// TOML configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Master seed (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Steps between ensemble samples (overrides the config).
    #[arg(long)]
    snapshot_stride: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run an ensemble and write mean curves.
    Simulate(RunArgs),
    /// Tabulate an analytic concurrence bound.
    Bound {
        /// pure_hom, pd_eta or hom_eta.
        #[arg(long)]
        kind: String,
        /// Decay rate in MHz.
        #[arg(long, default_value_t = 1.0)]
        gamma: f64,
        /// Detector efficiency.
        #[arg(long, default_value_t = 1.0)]
        eta: f64,
        /// Final time in µs.
        #[arg(long, default_value_t = 5.0)]
        tmax: f64,
        /// Number of intervals.
        #[arg(long, default_value_t = 1000)]
        points: usize,
    },
    /// Which-path densities of the homodyne readouts.
    Whichpath {
        /// Port-3 phase in degrees.
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        theta: f64,
        /// Port-4 phase in degrees.
        #[arg(long, default_value_t = 90.0, allow_hyphen_values = true)]
        vartheta: f64,
        #[arg(long, default_value_t = 5.0)]
        half_width: f64,
        /// Points per axis.
        #[arg(long, default_value_t = 401)]
        points: usize,
    },
    /// Bell-amplitude statistics of the first high-concurrence states.
    Maxstats(RunArgs),
    /// Kraus against stochastic-master-equation order test.
    Smecheck {
        /// homodyne or heterodyne.
        #[arg(long, default_value = "homodyne")]
        scheme: String,
        #[arg(long, default_value_t = 5)]
        states: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Corrupt the Kraus readout scaling (negative control).
        #[arg(long)]
        corrupt: bool,
    },
}

fn threads(flag: Option<usize>) -> Result<Option<usize>, CliError> {
    if let Some(n) = flag {
        return Ok(Some(n));
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) => {
            v.trim().parse().map(Some).map_err(|_| {
                CliError::Config(format!("{THREADS_ENV}: `{v}` is not a thread count"))
            })
        }
        Err(_) => Ok(None),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let out = cli.out_dir;
    let work = move || -> Result<(), CliError> {
        match cli.command {
            Command::Simulate(a) => commands::simulate(
                &a.config,
                &out,
                &commands::Overrides {
                    seed: a.seed,
                    snapshot_stride: a.snapshot_stride,
                },
            ),
            Command::Maxstats(a) => commands::maxstats(
                &a.config,
                &out,
                &commands::Overrides {
                    seed: a.seed,
                    snapshot_stride: a.snapshot_stride,
                },
            ),
            Command::Bound {
                kind,
                gamma,
                eta,
                tmax,
                points,
            } => commands::bound(&kind, gamma, eta, tmax, points, &out),
            Command::Whichpath {
                theta,
                vartheta,
                half_width,
                points,
            } => commands::whichpath(theta, vartheta, half_width, points, &out),
            Command::Smecheck {
                scheme,
                states,
                seed,
                corrupt,
            } => {
                if commands::smecheck(&scheme, states, seed, corrupt, &out)? {
                    Ok(())
                } else {
                    Err(CliError::Acceptance)
                }
            }
        }
    };
    match threads(cli.threads)? {
        Some(0) => Err(CliError::Config("threads: must be >= 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Config(format!("threads: {e}")))?
            .install(work),
        None => work(),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("qtraj: {e}");
            ExitCode::from(e.code())
        }
    }
}
