//! `lharvest`: command-line front end for the bifurcation library.

mod commands;
mod config;
mod error;
mod svg;
mod table;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use logistic_harvest::verify::Level;

use commands::{AChoice, Session};
use config::Config;
use error::{CliError, CliResult};
use svg::Axes;

#[derive(Parser)]
#[command(
    name = "lharvest",
    version,
    about = "Bifurcation curves of the harvested logistic equation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON configuration; absent keys take defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Interior grid nodes (overrides the config).
    #[arg(long, global = true)]
    n: Option<usize>,
    /// Seed for sampled checks (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(clap::Args, Clone, Copy)]
#[group(multiple = false)]
struct AArgs {
    /// Absolute parameter a.
    #[arg(long)]
    a: Option<f64>,
    /// a = lambda1 + a_rel (lambda2 - lambda1).
    #[arg(long = "a-rel")]
    a_rel: Option<f64>,
}

impl AArgs {
    fn choice(self, default_rel: Option<f64>) -> CliResult<AChoice> {
        match (self.a, self.a_rel.or(default_rel)) {
            (Some(a), _) => Ok(AChoice::Absolute(a)),
            (None, Some(r)) => Ok(AChoice::Relative(r)),
            (None, None) => Err(CliError::Config(anyhow::anyhow!("one of --a or --a-rel is required"))),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Discrete eigenvalues and beta.
    Eig,
    /// The solution set at a = lambda1.
    #[command(name = "lambda1-geometry")]
    Lambda1Geometry,
    /// Newton solves at fixed (a, c) from several starts.
    Solve {
        #[command(flatten)]
        a: AArgs,
        #[arg(long, allow_hyphen_values = true)]
        c: f64,
    },
    /// Trace the closed branch at fixed a.
    Branch {
        #[command(flatten)]
        a: AArgs,
        /// c_vs_tpsi, c_vs_tphi or a_c_t.
        #[arg(long)]
        axes: Option<Axes>,
    },
    /// Track both folds in a.
    #[command(name = "fold-track")]
    FoldTrack {
        /// Halvings of a - lambda1 below the uniform grid.
        #[arg(long, default_value_t = 16)]
        halvings: usize,
    },
    /// Branches at evenly spaced a between the first two eigenvalues.
    Sweep {
        #[arg(long, default_value_t = 9)]
        steps: usize,
    },
    /// Run the verification suite.
    Verify {
        #[arg(long)]
        level: Option<Level>,
    },
    /// Render a branch CSV as SVG.
    Plot {
        input: PathBuf,
        #[arg(long)]
        axes: Option<Axes>,
    },
}

fn run(cli: Cli) -> CliResult<bool> {
    let mut config = match &cli.config {
        Some(path) => Config::load(path).map_err(CliError::Config)?,
        None => Config::default(),
    };
    if let Some(n) = cli.n {
        config.grid.n = n;
    }
    if let Some(seed) = cli.seed {
        config.verify.seed = seed;
    }
    let session = Session::new(config, cli.out)?;
    match cli.command {
        Command::Eig => commands::eig(&session),
        Command::Lambda1Geometry => commands::lambda1_geometry(&session),
        Command::Solve { a, c } => {
            let a = a.choice(None)?.resolve(&session.problem);
            commands::solve(&session, a, c)
        }
        Command::Branch { a, axes } => {
            let a = a.choice(Some(0.5))?.resolve(&session.problem);
            commands::branch(&session, a, axes)
        }
        Command::FoldTrack { halvings } => commands::fold_track(&session, halvings),
        Command::Sweep { steps } => commands::sweep(&session, steps),
        Command::Verify { level } => commands::verify(&session, level, cli.seed),
        Command::Plot { input, axes } => commands::plot(&session, &input, axes),
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
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("checks failed");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
