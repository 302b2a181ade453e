use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pnrcal::cli::{self, GlobalOptions};

/// Absolute efficiency calibration of photon-number-resolving detectors.
#[derive(Parser)]
#[command(version)]
struct Args {
    /// Override the simulation seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Photon-number truncation N (default 9).
    #[arg(long, global = true)]
    truncation: Option<usize>,
    /// Coarse grid points per axis for `estimate` (default 21).
    #[arg(long, global = true)]
    grid: Option<usize>,
    /// Simplex tolerance for `estimate` (default 1e-9).
    #[arg(long, global = true)]
    tolerance: Option<f64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a click histogram from an experiment config.
    Simulate {
        config: PathBuf,
        out: PathBuf,
        /// Write exact probabilities instead of sampled counts.
        #[arg(long)]
        exact: bool,
    },
    /// Estimate both detector efficiencies from a histogram.
    Estimate {
        histogram: PathBuf,
        detectors: PathBuf,
        out: PathBuf,
        /// Record the wall-clock time in the result (makes output nondeterministic).
        #[arg(long)]
        timing: bool,
    },
    /// Print the Klyshko estimates (eta_s, eta_i).
    Klyshko { histogram: PathBuf },
    /// Subtract an independently measured background histogram.
    Subtract {
        measured: PathBuf,
        background: PathBuf,
        out: PathBuf,
        /// Detector file; defaults to the measured histogram's metadata.
        #[arg(long)]
        detectors: Option<PathBuf>,
    },
    /// Scan the residual over an efficiency grid (`n` or `lo:hi:n`) to CSV.
    Scan {
        histogram: PathBuf,
        detectors: PathBuf,
        grid_spec: String,
        out: PathBuf,
    },
    /// Loss/background equivalence curve for photon range M over `lo:hi:n` backgrounds.
    Equivalence {
        max_photons: usize,
        alpha_range: String,
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(args) => args,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let global = GlobalOptions {
        seed: args.seed,
        truncation: args.truncation,
        grid: args.grid,
        tolerance: args.tolerance,
    };
    let outcome = match &args.command {
        Command::Simulate { config, out, exact } => {
            cli::cmd_simulate(config, out, *exact, &global).map(|_| ())
        }
        Command::Estimate {
            histogram,
            detectors,
            out,
            timing,
        } => cli::cmd_estimate(histogram, detectors, out, *timing, &global).map(|r| {
            println!(
                "eta1 = {:.6}\neta2 = {:.6}\nresidual = {:.3e}",
                r.eta1, r.eta2, r.residual
            )
        }),
        Command::Klyshko { histogram } => {
            cli::cmd_klyshko(histogram).map(|(s, i)| println!("eta_s = {s:.6}\neta_i = {i:.6}"))
        }
        Command::Subtract {
            measured,
            background,
            out,
            detectors,
        } => cli::cmd_subtract(measured, background, out, detectors.as_deref())
            .map(|(_, clipped)| println!("clipped mass = {clipped:.3e}")),
        Command::Scan {
            histogram,
            detectors,
            grid_spec,
            out,
        } => cli::cmd_scan(histogram, detectors, grid_spec, out, &global)
            .map(|basins| println!("basins = {basins}")),
        Command::Equivalence {
            max_photons,
            alpha_range,
            out,
        } => cli::cmd_equivalence(*max_photons, alpha_range, out)
            .map(|solved| println!("solved points = {solved}")),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(cli::exit_code(&e) as u8)
        }
    }
}
