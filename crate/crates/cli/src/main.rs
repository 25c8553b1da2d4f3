//! `pathbell`: CHSH surfaces, purity scans, detector simulation and tag analysis.

mod args;
mod commands;
mod files;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use pathbell::counting::{Mode, DEFAULT_WINDOW_PS};
use pathbell::noise::NoiseKind;

use args::{parse_angle, PurityGrid, StateSpec};
use commands::{CliError, CliResult};

#[derive(Parser)]
#[command(name = "pathbell", version, about = "Bell/CHSH tests on path-entangled single photons")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sweep S(θ′, δ′) over [0, π)² with θ and δ held fixed.
    Sweep(SweepArgs),
    /// Largest S against purity for a noise model.
    Purity(PurityArgs),
    /// Simulate detector time tags from a run configuration.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Estimate probabilities and CHSH values from tag files.
    Analyze(AnalyzeArgs),
    /// Global maximum of S for a state, as JSON.
    MaxS {
        #[arg(long, default_value = "ideal")]
        state: StateSpec,
    },
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long, value_parser = parse_angle, default_value = "3pi/4", allow_hyphen_values = true)]
    fixed_theta: f64,
    #[arg(long, value_parser = parse_angle, default_value = "7pi/8", allow_hyphen_values = true)]
    fixed_delta: f64,
    /// Points per axis.
    #[arg(long, default_value_t = 256)]
    grid: usize,
    #[arg(long, default_value = "ideal")]
    state: StateSpec,
    #[arg(long)]
    out: PathBuf,
    /// Read the fixed angles in degrees.
    #[arg(long)]
    degrees: bool,
    /// Read the fixed angles as half-wave plate settings κ, with θ = 2κ.
    #[arg(long)]
    hwp: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    Depolarizing,
    Multiphoton,
}

#[derive(Args)]
struct PurityArgs {
    #[arg(long, value_enum)]
    model: ModelArg,
    #[arg(long, default_value = "0:1:0.01")]
    grid: PurityGrid,
    #[arg(long)]
    out: PathBuf,
    /// Use the multi-photon mixture with its unnormalized first noise term.
    #[arg(long)]
    unnormalized: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Heralded,
    TwoDetector,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Glob matching the `.tags` files to analyze.
    #[arg(long)]
    tags: String,
    #[arg(long, value_enum)]
    mode: ModeArg,
    /// Coincidence window, ps.
    #[arg(long, default_value_t = DEFAULT_WINDOW_PS)]
    window: u64,
    /// Per-setting probability CSV.
    #[arg(long)]
    out: PathBuf,
    /// Summary JSON; defaults to the CSV path with a `.summary.json` extension.
    #[arg(long)]
    summary: Option<PathBuf>,
}

fn configure_threads() -> CliResult<()> {
    let Ok(value) = std::env::var("PATHBELL_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Usage(format!("PATHBELL_THREADS must be a positive integer, got {value:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Runtime(e.to_string()))
}

fn to_radians(x: f64, a: &SweepArgs) -> f64 {
    let x = if a.degrees { x.to_radians() } else { x };
    if a.hwp {
        2.0 * x
    } else {
        x
    }
}

fn run(cli: Cli) -> CliResult<()> {
    configure_threads()?;
    match cli.command {
        Command::Sweep(a) => {
            let fixed = (to_radians(a.fixed_theta, &a), to_radians(a.fixed_delta, &a));
            commands::sweep(fixed, a.grid, a.state, &a.out)
        }
        Command::Purity(a) => {
            let kind = match (a.model, a.unnormalized) {
                (ModelArg::Depolarizing, false) => NoiseKind::Depolarizing,
                (ModelArg::Depolarizing, true) => {
                    return Err(CliError::Usage("--unnormalized applies to --model multiphoton only".into()))
                }
                (ModelArg::Multiphoton, false) => NoiseKind::Multiphoton,
                (ModelArg::Multiphoton, true) => NoiseKind::MultiphotonLiteral,
            };
            commands::purity(kind, a.grid, &a.out)
        }
        Command::Simulate { config, out_dir } => commands::simulate(&config, &out_dir),
        Command::Analyze(a) => {
            let mode = match a.mode {
                ModeArg::Heralded => Mode::Heralded,
                ModeArg::TwoDetector => Mode::TwoDetector,
            };
            let summary = a.summary.unwrap_or_else(|| a.out.with_extension("summary.json"));
            commands::analyze(&a.tags, mode, a.window, &a.out, &summary)
        }
        Command::MaxS { state } => commands::max_s_report(state),
    }
}

fn main() -> ExitCode {
    // clap exits with 2 on usage errors and 0 for --help/--version
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
