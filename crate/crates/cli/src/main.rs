mod commands;
mod input;
mod manifest;

use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use input::CliError;

#[derive(Parser)]
#[command(name = "siplab", version, about = "Spectral laboratory for the symmetric inclusion process")]
struct Cli {
    /// Worker threads (default: logical cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Write the primary output here instead of stdout.
    #[arg(long, short, global = true)]
    output: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    All,
    Sip,
    Lookdown,
    Bep,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SimTest {
    Law,
    Projection,
    Bottom,
    Relaxation,
}

#[derive(Args, Clone)]
pub struct GraphArgs {
    /// Graph JSON file or preset: complete(n), path(n), cycle(n).
    #[arg(long)]
    pub graph: String,
    /// Comma-separated site weights (default: file value, or all ones for presets).
    #[arg(long, value_delimiter = ',')]
    pub alpha: Option<Vec<f64>>,
}

#[derive(Subcommand)]
enum Command {
    /// Spectra of the random walk and of SIP_k.
    Spectrum {
        #[command(flatten)]
        graph: GraphArgs,
        #[arg(long)]
        k: usize,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
    /// Run identity and inequality suites; exit 0 iff every check passes.
    Verify {
        #[command(flatten)]
        graph: GraphArgs,
        #[arg(long = "K", default_value_t = 4)]
        max_k: usize,
        #[arg(long, value_enum, default_value_t = Suite::All)]
        suite: Suite,
        /// Seed for the randomized test functions.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Gap ratios over a grid of graphs, weights and particle numbers.
    Sweep {
        /// JSON sweep specification.
        spec: PathBuf,
    },
    /// Monte-Carlo paths of SIP or the lookdown process.
    Simulate {
        #[command(flatten)]
        graph: GraphArgs,
        #[arg(long, default_value = "sip")]
        mode: String,
        #[arg(long)]
        k: usize,
        #[arg(long)]
        horizon: Option<f64>,
        #[arg(long, default_value_t = 10_000)]
        paths: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Comma-separated sampling times (default: the horizon).
        #[arg(long, value_delimiter = ',')]
        times: Option<Vec<f64>>,
        /// `stationary` or an occupation array such as [2,0,1].
        #[arg(long, default_value = "stationary")]
        initial: String,
        /// Run a statistical check instead of emitting histograms.
        #[arg(long, value_enum)]
        test: Option<SimTest>,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
    /// Exact worst-case total variation against its spectral envelope.
    TvCurve {
        #[command(flatten)]
        graph: GraphArgs,
        #[arg(long)]
        k: usize,
        #[arg(long, value_delimiter = ',', default_value = "0.1,0.5,1,2")]
        times: Vec<f64>,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
    /// Plain-text summary of every suite for one graph.
    Report {
        #[command(flatten)]
        graph: GraphArgs,
        #[arg(long = "K", default_value_t = 4)]
        max_k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn run(cli: Cli) -> Result<(String, u8), CliError> {
    if let Some(j) = cli.jobs {
        if j == 0 {
            return Err(CliError::input("--jobs must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build_global()
            .map_err(|e| CliError::input(e.to_string()))?;
    }
    siplab::state_cap()?;
    match cli.command {
        Command::Spectrum { graph, k, format } => commands::spectrum(&graph, k, format),
        Command::Verify {
            graph,
            max_k,
            suite,
            seed,
        } => commands::verify(&graph, max_k, suite, seed),
        Command::Sweep { spec } => commands::sweep(&spec),
        Command::Simulate {
            graph,
            mode,
            k,
            horizon,
            paths,
            seed,
            times,
            initial,
            test,
            format,
        } => commands::simulate(commands::SimulateRequest {
            graph,
            mode,
            k,
            horizon,
            paths,
            seed,
            times,
            initial,
            test,
            format,
        }),
        Command::TvCurve {
            graph,
            k,
            times,
            format,
        } => commands::tv_curve(&graph, k, &times, format),
        Command::Report { graph, max_k, seed } => commands::report(&graph, max_k, seed),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let output = cli.output.clone();
    match run(cli) {
        Ok((text, code)) => {
            let written = match &output {
                Some(path) => fs::write(path, &text),
                None => std::io::stdout().write_all(text.as_bytes()),
            };
            if let Err(e) = written {
                eprintln!("error: {e}");
                return ExitCode::from(2);
            }
            ExitCode::from(code)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
