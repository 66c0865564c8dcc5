//! Command-line front end: config ingestion, data loading, subcommand
//! dispatch, and deterministic report emission.
//!
//! Exit codes: 0 on success, 1 on validation errors (flags, files,
//! configuration), 2 on numerical failures discovered mid-computation.
//! Identical command lines with identical seeds produce byte-identical
//! output files.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

pub mod commands;
pub mod config;
pub mod data;
pub mod emit;
pub mod errors;
pub mod fdsuite;

/// The two failure classes the process distinguishes.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags, unreadable files, malformed configs or data. Exit 1.
    Validation(String),
    /// The computation itself failed: divergence, asymmetry, quadrature
    /// breakdown. Exit 2.
    Numerical(String),
}

#[derive(Parser)]
#[command(
    name = "ntk",
    version,
    about = "Exact and empirical neural tangent kernels at the command line"
)]
struct Cli {
    /// Cap on worker threads (fallback: the NTK_THREADS variable).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Exact kernel stack through a given depth, written as JSON.
    Kernel {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        depth: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Monte Carlo sweep of the empirical kernel over widths, written as CSV.
    Empirical {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated hidden widths, one sweep row each.
        #[arg(long, value_delimiter = ',')]
        widths: Vec<usize>,
        #[arg(long)]
        samples: usize,
        /// Overrides the seed from the config file.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Positivity verdicts for every kernel in the stack, written as JSON.
    Spectrum {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        depth: usize,
        /// Relative eigenvalue tolerance; defaults to the config value.
        #[arg(long)]
        tol: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Full-batch gradient descent at one width, loss per step as CSV.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        width: usize,
        #[arg(long)]
        steps: usize,
        /// "auto" for 1/(2 lambda_max) of the empirical kernel, or a real.
        #[arg(long, default_value = "auto")]
        lr: String,
        /// Overrides the seed from the config file.
        #[arg(long)]
        seed: Option<u64>,
        /// One target per line; defaults to seeded uniform draws in [-1, 1].
        #[arg(long)]
        targets: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Closed-form linearized flow under a stored tangent kernel, as CSV.
    Flow {
        /// Kernel stack JSON; the deepest tangent kernel is used.
        #[arg(long)]
        theta: PathBuf,
        #[arg(long, allow_negative_numbers = true)]
        t0: f64,
        #[arg(long, allow_negative_numbers = true)]
        t1: f64,
        #[arg(long)]
        points: usize,
        /// Initial outputs, one per line; defaults to zeros.
        #[arg(long)]
        f0: Option<PathBuf>,
        /// Targets, one per line; defaults to ones.
        #[arg(long)]
        targets: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference diagnostics, reported as JSON on stdout.
    Findiff {
        #[command(subcommand)]
        command: FindiffCommand,
    },
}

#[derive(Subcommand)]
enum FindiffCommand {
    /// Polynomial-degree scan of a named function.
    Degree {
        /// Function name: relu, tanh, erf, gelu, identity, or poly:c0,c1,...
        #[arg(long = "fn")]
        function: String,
        /// Scan window, written lo:hi.
        #[arg(long, allow_hyphen_values = true)]
        domain: String,
        #[arg(long = "max-order")]
        max_order: usize,
        /// Annihilation threshold relative to the largest sampled value.
        #[arg(long, default_value_t = 1e-7)]
        tol: f64,
    },
    /// Randomized residual suite for the difference identities.
    Identities {
        #[arg(long)]
        trials: usize,
        #[arg(long)]
        seed: u64,
    },
}

/// Applies the thread cap before any parallel work starts. Repeated
/// initialization (library callers invoking run twice) is harmless: the
/// first pool wins and later calls keep it.
fn init_threads(flag: Option<usize>) -> Result<(), CliError> {
    let cap = match flag {
        Some(n) => Some(n),
        None => match std::env::var("NTK_THREADS") {
            Ok(text) => Some(text.trim().parse::<usize>().map_err(|_| {
                CliError::Validation(format!(
                    "NTK_THREADS must be a positive integer, got {text:?}"
                ))
            })?),
            Err(_) => None,
        },
    };
    if let Some(n) = cap {
        if n == 0 {
            return Err(CliError::Validation("thread cap must be at least 1".into()));
        }
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Kernel { config, data, depth, out } => {
            let cfg = config::load_config(&config)?;
            commands::cmd_kernel(&cfg, &data, depth, &out)
        }
        Command::Empirical { config, data, widths, samples, seed, out } => {
            let cfg = config::load_config(&config)?;
            commands::cmd_empirical(&cfg, &data, &widths, samples, seed, &out)
        }
        Command::Spectrum { config, data, depth, tol, out } => {
            let cfg = config::load_config(&config)?;
            commands::cmd_spectrum(&cfg, &data, depth, tol, &out)
        }
        Command::Train { config, data, width, steps, lr, seed, targets, out } => {
            let cfg = config::load_config(&config)?;
            commands::cmd_train(
                &cfg,
                &data,
                width,
                steps,
                &lr,
                seed,
                targets.as_deref(),
                &out,
            )
        }
        Command::Flow { theta, t0, t1, points, f0, targets, out } => {
            commands::cmd_flow(&theta, t0, t1, points, f0.as_deref(), targets.as_deref(), &out)
        }
        Command::Findiff { command } => match command {
            FindiffCommand::Degree { function, domain, max_order, tol } => {
                commands::cmd_findiff_degree(&function, &domain, max_order, tol)
            }
            FindiffCommand::Identities { trials, seed } => {
                commands::cmd_findiff_identities(trials, seed)
            }
        },
    }
}

/// Parses the argument list and runs the selected subcommand, returning the
/// process exit code. Help and version requests exit 0; argument problems
/// exit 1 with usage on stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{e}");
                    0
                }
                _ => {
                    eprint!("{e}");
                    1
                }
            };
        }
    };
    let outcome = init_threads(cli.threads).and_then(|()| dispatch(cli.command));
    match outcome {
        Ok(()) => 0,
        Err(CliError::Validation(message)) => {
            eprintln!("error: {message}");
            1
        }
        Err(CliError::Numerical(message)) => {
            eprintln!("numerical failure: {message}");
            2
        }
    }
}
