//! `pathlab`: batch front end for the signature path-synthesis library.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use pathlab_core::{Error, Mode};

#[derive(Debug, Parser)]
#[command(name = "pathlab", version, about = "Signature-based path synthesis and diagnostics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Forecast,
    Reconstruction,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Mode {
        match m {
            ModeArg::Forecast => Mode::Forecast,
            ModeArg::Reconstruction => Mode::Reconstruction,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Model {
    Merton,
    Regime,
}

/// Flags shared by the commands that build a whitened geometry.
#[derive(Debug, Args)]
struct GeometryArgs {
    /// Truncation depth
    #[arg(long, default_value_t = 3)]
    depth: usize,
    /// Nyström rank
    #[arg(long, default_value_t = 32)]
    m: usize,
    #[arg(long, default_value_t = 1e-2)]
    ridge: f64,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a reference ensemble
    Gen {
        #[arg(long, value_enum, default_value = "merton")]
        model: Model,
        /// JSON parameters for the chosen model
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long, default_value_t = 100)]
        steps: usize,
        #[arg(long, default_value_t = 1.0)]
        horizon: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Signature (mean signature for ensembles) of a CSV path file
    Sig {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = 3)]
        depth: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Moving expected-signature proxy from a reference ensemble
    Proxy {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = 3)]
        depth: usize,
        /// Grid intervals
        #[arg(long, default_value_t = 100)]
        steps: usize,
        /// Grid length; defaults to the reference support
        #[arg(long)]
        horizon: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Herd a subset of candidate paths toward a target mean signature
    Herd {
        #[arg(long = "in")]
        input: PathBuf,
        /// Paths whose mean signature is the target; defaults to the candidates
        #[arg(long)]
        target: Option<PathBuf>,
        /// Number of selections
        #[arg(long, default_value_t = 50)]
        n: usize,
        #[command(flatten)]
        geometry: GeometryArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Gibbs tilt of a prior ensemble onto a target mean signature
    Bridge {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        target: PathBuf,
        #[command(flatten)]
        geometry: GeometryArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the anticipatory jump-diffusion sampler
    Flow {
        /// FlowConfig JSON
        #[arg(long)]
        config: PathBuf,
        /// Initial path CSV; defaults to a constant path at the proxy start
        #[arg(long = "in")]
        input: Option<PathBuf>,
        /// Proxy JSON as written by `proxy`
        #[arg(long)]
        proxy: Option<PathBuf>,
        /// Reference ensemble used for the proxy and the anchors
        #[arg(long)]
        reference: Option<PathBuf>,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        #[arg(long)]
        seed: Option<u64>,
        /// Particle count
        #[arg(long)]
        n: Option<usize>,
        /// Depth of a proxy built from --reference
        #[arg(long, default_value_t = 3)]
        depth: usize,
        #[arg(long, default_value_t = 32)]
        m: usize,
        #[arg(long, default_value_t = 1e-2)]
        ridge: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Statistical diagnostics
    Bounds {
        #[command(subcommand)]
        which: BoundsCommand,
    },
    /// Run the acceptance battery and print a pass/fail table
    Suite {
        #[arg(long, default_value_t = 2026)]
        seed: u64,
        /// Comma-separated criterion numbers
        #[arg(long, value_delimiter = ',')]
        only: Option<Vec<usize>>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
enum BoundsCommand {
    /// Generalisation bound for the sample mean in the whitened norm
    Gen {
        #[arg(long = "in")]
        input: PathBuf,
        /// Independent paths whose mean is compared with the sample mean
        #[arg(long)]
        target: Option<PathBuf>,
        #[arg(long, default_value_t = 0.05)]
        delta: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        geometry: GeometryArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rademacher complexity: closed form and Monte Carlo
    Rad {
        #[arg(long = "in")]
        input: PathBuf,
        /// Radius of the functional ball
        #[arg(long, default_value_t = 1.0)]
        radius: f64,
        #[arg(long, default_value_t = 256)]
        draws: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        geometry: GeometryArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Projection error against the spectral tail in the full tensor space
    Proj {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        target: Option<PathBuf>,
        #[command(flatten)]
        geometry: GeometryArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn fail(kind: &str, msg: &str) -> ExitCode {
    let msg = msg.split_whitespace().collect::<Vec<_>>().join(" ");
    eprintln!("error: kind={kind} msg={msg}");
    ExitCode::from(2)
}

fn init_threads() -> Result<(), Error> {
    let Ok(raw) = std::env::var("PATHLAB_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| Error::InvalidConfig(format!("PATHLAB_THREADS must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::InvalidConfig(e.to_string()))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("bad arguments").trim_start_matches("error: ");
            return fail("usage", first);
        }
    };
    if let Err(e) = init_threads() {
        return fail(e.kind(), &e.to_string());
    }
    match commands::dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e.kind(), &e.to_string()),
    }
}
