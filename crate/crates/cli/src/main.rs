use std::path::PathBuf;
use std::process::ExitCode;

use beamloop_cli::{run, Mode, Overrides};
use clap::{Parser, ValueEnum};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Certify,
    Simulate,
    Spectrum,
    Skew,
    Convergence,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Certify => Mode::Certify,
            ModeArg::Simulate => Mode::Simulate,
            ModeArg::Spectrum => Mode::Spectrum,
            ModeArg::Skew => Mode::Skew,
            ModeArg::Convergence => Mode::Convergence,
        }
    }
}

/// Clamped beam with tip payload under nonlinear boundary feedback.
///
/// Exit codes: 0 success, 1 configuration error, 2 certification failure,
/// 3 numerical failure.
#[derive(Debug, Parser)]
#[command(name = "beamloop", version)]
struct Args {
    mode: ModeArg,
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides `output_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Sampling seed (overrides `seed`).
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let outcome = run(args.mode.into(), &args.config, &Overrides { out: args.out, seed: args.seed });
    if outcome.exit_code == 0 {
        println!("{}", outcome.message);
    } else {
        eprintln!("{}", outcome.message);
    }
    if let Some(dir) = outcome.output_dir {
        println!("artifacts in {}", dir.display());
    }
    ExitCode::from(outcome.exit_code)
}
