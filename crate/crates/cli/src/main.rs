use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use fret_cli::commands::{self, fig2_defaults, fig3_defaults, Outcome};
use fret_cli::config::{Overrides, RunConfig};

/// Förster resonance spectra of a few Rydberg atoms.
#[derive(Parser)]
#[command(name = "rydfret", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Ideal spectra rho_i(Δ) for each requested atom count.
    Spectrum(Overrides),
    /// Post-selected signals S_N(Δ), amplitude and width tables, histogram.
    Detect(Overrides),
    /// Distribution of interacting-atom counts for each detected count.
    Histogram(Overrides),
    /// Mean atom number and detection efficiency from measured ratios.
    Calibrate {
        /// Ratio S_2/S_1 of resonance amplitudes.
        #[arg(long)]
        alpha: f64,
        /// Mean number of detected atoms.
        #[arg(long = "nbar-t")]
        nbar_t: f64,
    },
    /// S_N(F) on the electric-field axis.
    Fieldscan(Overrides),
    /// FWHM, amplitude, and Lorentz comparison of the ideal spectra.
    Lineshape(Overrides),
    /// Ideal spectra for 2..5 atoms and the Lorentz comparison for 2.
    ReproduceFig2(Overrides),
    /// Detection chain outputs for 1..5 detected atoms.
    ReproduceFig3(Overrides),
}

fn run(cli: Cli) -> Result<Outcome> {
    let resolve = |o: &Overrides| RunConfig::resolve(RunConfig::default(), o);
    Ok(match cli.command {
        Command::Spectrum(o) => commands::cmd_spectrum(&resolve(&o)?)?.1,
        Command::Detect(o) => commands::cmd_detect(&resolve(&o)?)?.1,
        Command::Histogram(o) => commands::cmd_histogram(&resolve(&o)?)?.1,
        Command::Calibrate { alpha, nbar_t } => commands::cmd_calibrate(alpha, nbar_t)?.1,
        Command::Fieldscan(o) => commands::cmd_fieldscan(&resolve(&o)?)?.1,
        Command::Lineshape(o) => commands::cmd_lineshape(&resolve(&o)?)?.1,
        Command::ReproduceFig2(o) => {
            commands::cmd_reproduce_fig2(&RunConfig::resolve(fig2_defaults(), &o)?)?.1
        }
        Command::ReproduceFig3(o) => {
            commands::cmd_reproduce_fig3(&RunConfig::resolve(fig3_defaults(), &o)?)?.1
        }
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(out) => {
            for line in &out.lines {
                println!("{line}");
            }
            for f in &out.files {
                println!("wrote {}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
