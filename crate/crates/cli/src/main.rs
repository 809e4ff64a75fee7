//! `spinrecon`: design controls, synthesize readings, reconstruct distributions
//! and run the comparison benchmark.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use spinrecon::greedy::Method;
use spinrecon::Error;

use commands::Failure;
use config::RunConfig;

#[derive(Parser)]
#[command(
    name = "spinrecon",
    version,
    about = "Greedy control design for identifying inhomogeneity distributions"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Shared {
    /// JSON run configuration; flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory [default: out].
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// gra, grat, ogra, ograt, rcc or rcct.
    #[arg(long, global = true)]
    method: Option<Method>,
    /// double-peak, step, uniform or a distribution CSV.
    #[arg(long, global = true)]
    target: Option<String>,
    /// Number of grid points.
    #[arg(long, global = true)]
    k: Option<usize>,
    /// Number of reconstruction starts.
    #[arg(long, global = true)]
    n_multistart: Option<usize>,
    /// Standard deviation of synthetic measurement noise.
    #[arg(long, global = true)]
    noise_sigma: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Design a control set and write it with its provenance.
    Design {
        #[command(flatten)]
        shared: Shared,
    },
    /// Synthesize ensemble readings for a control set and a distribution.
    Measure {
        #[command(flatten)]
        shared: Shared,
        #[arg(long)]
        controls: PathBuf,
        /// Distribution CSV; defaults to the configured target.
        #[arg(long)]
        distribution: Option<PathBuf>,
    },
    /// Recover the distribution from readings.
    Reconstruct {
        #[command(flatten)]
        shared: Shared,
        #[arg(long)]
        controls: PathBuf,
        #[arg(long)]
        measurements: PathBuf,
        /// True distribution (name or CSV) for error reporting.
        #[arg(long)]
        truth: Option<String>,
    },
    /// Eigenvalues and condition number of the Gram matrix.
    Spectrum {
        #[command(flatten)]
        shared: Shared,
        #[arg(long)]
        controls: Option<PathBuf>,
        /// Square matrix CSV without header, analysed directly.
        #[arg(long)]
        matrix: Option<PathBuf>,
    },
    /// Design, measure and reconstruct with every method (or `--method` only).
    Benchmark {
        #[command(flatten)]
        shared: Shared,
    },
    /// Run the oracle checks.
    Validate {
        #[command(flatten)]
        shared: Shared,
    },
}

impl Shared {
    fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("out"))
    }
}

fn resolve(shared: &Shared) -> Result<RunConfig, Error> {
    let mut cfg = RunConfig::load(shared.config.as_deref())?;
    if let Some(s) = shared.seed {
        cfg.seed = s;
    }
    if let Some(m) = shared.method {
        cfg.method = m;
    }
    if let Some(t) = &shared.target {
        cfg.target = t.clone();
    }
    if let Some(k) = shared.k {
        cfg.k = k;
    }
    if let Some(n) = shared.n_multistart {
        cfg.n_multistart = n;
    }
    if let Some(s) = shared.noise_sigma {
        cfg.noise_sigma = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> commands::CmdResult {
    match cli.command {
        Command::Design { shared } => commands::design(&resolve(&shared)?, &shared.out_dir()),
        Command::Measure {
            shared,
            controls,
            distribution,
        } => commands::measure(
            &resolve(&shared)?,
            &controls,
            distribution.as_deref(),
            &shared.out_dir(),
        ),
        Command::Reconstruct {
            shared,
            controls,
            measurements,
            truth,
        } => commands::reconstruct(
            &resolve(&shared)?,
            &controls,
            &measurements,
            truth.as_deref(),
            &shared.out_dir(),
        ),
        Command::Spectrum {
            shared,
            controls,
            matrix,
        } => commands::spectrum(
            &resolve(&shared)?,
            controls.as_deref(),
            matrix.as_deref(),
            &shared.out_dir(),
        ),
        Command::Benchmark { shared } => {
            let cfg = resolve(&shared)?;
            let methods = shared
                .method
                .map_or_else(|| Method::ALL.to_vec(), |m| vec![m]);
            commands::benchmark(&cfg, methods, &shared.out_dir())
        }
        Command::Validate { shared } => commands::validate(shared.out.as_ref()),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Error(e @ (Error::DegenerateBlock { .. } | Error::DependentCandidate(_)))) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(Failure::Error(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(Failure::Numerical(msg)) => {
            eprintln!("failed: {msg}");
            ExitCode::from(2)
        }
    }
}
