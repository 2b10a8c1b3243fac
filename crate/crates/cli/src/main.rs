use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use unmix_cli::commands::{self, Method, UnmixArgs};
use unmix_cli::csvio::CsvOptions;
use unmix_cli::{bench, CliError};

#[derive(Parser)]
#[command(name = "unmix", version, about = "Hyperspectral unmixing on synthetic and stored cubes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Fcls,
    Nmf,
    Khype,
    Pnp,
    Unroll,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Fcls => Method::Fcls,
            MethodArg::Nmf => Method::Nmf,
            MethodArg::Khype => Method::Khype,
            MethodArg::Pnp => Method::Pnp,
            MethodArg::Unroll => Method::Unroll,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene and its ground truth.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Output cube file.
        #[arg(long)]
        out: PathBuf,
        /// Directory for the true endmembers and abundances.
        #[arg(long)]
        truth: PathBuf,
    },
    /// Estimate abundances (and endmembers for nmf) from a cube.
    Unmix {
        #[arg(long)]
        cube: PathBuf,
        #[arg(long, value_enum)]
        method: MethodArg,
        /// Endmember CSV; required for every method but nmf.
        #[arg(long)]
        endmembers: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// The endmember CSV starts with a header row.
        #[arg(long)]
        header: bool,
        /// Load endmembers that fail validation, with a warning.
        #[arg(long)]
        allow_invalid: bool,
    },
    /// Train unrolled-network parameters on labelled pixels.
    TrainUnroll {
        #[arg(long)]
        train_cube: PathBuf,
        #[arg(long)]
        train_abund: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Output parameter file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Score estimates against ground truth.
    Eval {
        #[arg(long)]
        est: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        /// Text report; the JSON report is written to the same path plus `.json`.
        #[arg(long)]
        report: PathBuf,
    },
    /// Run a frozen benchmark suite (smoke or acceptance).
    Bench {
        #[arg(long)]
        suite: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        report: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate { config, out, truth } => commands::simulate(&config, &out, &truth),
        Command::Unmix { cube, method, endmembers, config, out, header, allow_invalid } => {
            commands::unmix(&UnmixArgs {
                cube: &cube,
                method: method.into(),
                endmembers: endmembers.as_deref(),
                config: config.as_deref(),
                out: &out,
                csv: CsvOptions { header, allow_invalid },
            })
        }
        Command::TrainUnroll { train_cube, train_abund, config, out } => {
            commands::train(&train_cube, &train_abund, &config, &out)
        }
        Command::Eval { est, truth, report } => commands::eval(&est, &truth, &report),
        Command::Bench { suite, seed, report } => bench::bench(&suite, seed, &report),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
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
