use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use super::{default_falsify_grid, run_job, JobOptions};
use crate::certify::{plot_grid, SynthesisOptions};
use crate::data::Configuration;
use crate::tuner::TuneMethod;
use crate::Result;

pub const EXIT_CERTIFIED: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_NOT_CERTIFIED: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "spectral-cert", version, about = "Synthesize spectral barrier certificates from transition data")]
#[command(args_conflicts_with_subcommands = true, subcommand_negates_reqs = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Option<Command>,

    /// YAML or JSON configuration file.
    #[arg(required = true)]
    pub config: Option<PathBuf>,

    /// Write barrier values on a dense grid to a CSV file.
    #[arg(long, num_args = 0..=1, default_missing_value = "barrier.csv", value_name = "PATH")]
    pub plot: Option<PathBuf>,

    /// Tune kernel hyperparameters before fitting: median, lbfgs or grid.
    #[arg(long, value_name = "METHOD")]
    pub tune: Option<TuneMethod>,

    /// Override the configuration seed.
    #[arg(long)]
    pub seed: Option<u64>,

    /// Write the assembled LP in CPLEX LP format.
    #[arg(long, value_name = "PATH")]
    pub export_lp: Option<PathBuf>,

    /// Check the certificate numerically on a grid.
    #[arg(long)]
    pub falsify: bool,

    /// Grid points per dimension for --falsify.
    #[arg(long, value_name = "N")]
    pub falsify_grid: Option<usize>,

    /// Include per-stage wall-clock timings in the result.
    #[arg(long)]
    pub timings: bool,

    /// Write the result JSON here instead of stdout.
    #[arg(short, long, value_name = "PATH")]
    pub output: Option<PathBuf>,

    /// Log more detail (repeat for debug output).
    #[arg(short, long, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the HTTP service.
    Serve {
        #[arg(long, env = "SPECTRAL_CERT_PORT", default_value_t = 8080)]
        port: u16,
    },
}

pub const PLOT_CSV_POINTS_1D: usize = 1001;
pub const PLOT_CSV_POINTS_2D: usize = 201;

/// Parses arguments, runs, and returns the process exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_ERROR } else { EXIT_CERTIFIED };
        }
    };
    let level = match cli.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    if let Some(Command::Serve { port }) = cli.command {
        return match super::server::serve_blocking(port) {
            Ok(()) => EXIT_CERTIFIED,
            Err(e) => {
                eprintln!("error: {e}");
                EXIT_ERROR
            }
        };
    }
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_ERROR
        }
    }
}

fn run(cli: &Cli) -> Result<i32> {
    let path = cli.config.as_ref().expect("clap enforces a config path");
    let mut config = Configuration::from_path(path)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    let opts = JobOptions {
        synthesis: SynthesisOptions { tune: cli.tune, export_lp: cli.export_lp.clone(), pso: None },
        falsify: cli.falsify.then(|| cli.falsify_grid.unwrap_or_else(|| default_falsify_grid(config.dim()))),
        timings: cli.timings,
    };
    let result = run_job(&config, &opts, &|_| {})?;
    let json = result.to_json();
    match &cli.output {
        Some(p) => std::fs::write(p, json + "\n")?,
        None => println!("{json}"),
    }
    if let Some(plot) = &cli.plot {
        // Rebuild the certificate view from the result for the dense export.
        match result.certificate()? {
            Some(cert) if config.dim() <= 2 => {
                let per_dim = if config.dim() == 1 { PLOT_CSV_POINTS_1D } else { PLOT_CSV_POINTS_2D };
                let grid = plot_grid(&cert, &config.spec.domain, per_dim);
                std::fs::write(plot, grid.to_csv()?)?;
                log::info!("wrote plot data to {}", plot.display());
            }
            Some(_) => log::warn!("plot export supports one- and two-dimensional systems only"),
            None => log::warn!("no certificate to plot"),
        }
    }
    Ok(if result.is_certified() { EXIT_CERTIFIED } else { EXIT_NOT_CERTIFIED })
}
