use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use equidesign::workbench::commands::{CommandOutcome, EXIT_CONFIG};
use equidesign::workbench::{self, Overrides, RunConfig};

/// Equilibrium plasma densities on the unit disk and design of the external
/// control potential.
#[derive(Debug, Parser)]
#[command(name = "equidesign", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve the equilibrium for a given control.
    Forward(Common),
    /// Minimize the ensemble objective over the control.
    Optimize(Common),
    /// Compare the adjoint derivative with central finite differences.
    Gradcheck(Common),
    /// Run the discretization and solver oracles.
    Validate(Common),
}

#[derive(Debug, Args)]
struct Common {
    /// JSON configuration, or a report emitted by an earlier run.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Angular and radial node counts.
    #[arg(long, num_args = 2, value_names = ["N", "M"])]
    grid: Option<Vec<usize>>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            output_dir: self.output_dir.clone(),
            grid: self.grid.as_ref().map(|g| (g[0], g[1])),
            alpha: self.alpha,
            tol: self.tol,
            max_iters: self.max_iters,
        }
    }
}

fn run(cli: Cli) -> equidesign::Result<CommandOutcome> {
    let (common, run): (
        &Common,
        fn(&RunConfig) -> equidesign::Result<CommandOutcome>,
    ) = match &cli.command {
        Command::Forward(c) => (c, workbench::forward),
        Command::Optimize(c) => (c, workbench::optimize),
        Command::Gradcheck(c) => (c, workbench::gradcheck),
        Command::Validate(c) => (c, workbench::validate),
    };
    let mut config = RunConfig::load(&common.config)?;
    config.apply(&common.overrides());
    run(&config)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_CONFIG as u8)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(outcome) => {
            for f in &outcome.files {
                eprintln!("wrote {}", f.display());
            }
            ExitCode::from(outcome.exit_code as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_CONFIG as u8)
        }
    }
}
