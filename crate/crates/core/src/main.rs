use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use queue_bounds::cli::run::{finish, Overrides};
use queue_bounds::cli::{reproduce, run_bounds, run_perturb, run_solve, Check, CliError, ExperimentConfig};

#[derive(Parser)]
#[command(name = "queue-bounds", version, about = "Convergence and perturbation bounds for a periodic M/M/1 queue with balking, catastrophes and repairs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; defaults to `outputs` from the configuration or `out`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Truncation dimension, overriding the configuration.
    #[arg(long)]
    truncation: Option<usize>,
    /// Integration step, overriding the configuration.
    #[arg(long)]
    step: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Ergodicity rates, envelopes and perturbation bounds.
    Bounds(Common),
    /// Transient and limiting curves of the queue characteristics.
    Solve(Common),
    /// Perturbed limiting curves with their theoretical bands.
    Perturb(Common),
    /// Every artifact and check for a shipped example.
    Reproduce {
        /// Example number (1 or 2).
        #[arg(value_parser = clap::value_parser!(u8).range(1..=2))]
        example: u8,
        #[command(flatten)]
        common: Common,
    },
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides { truncation: self.truncation, step: self.step }
    }

    fn load(&self) -> Result<(ExperimentConfig, PathBuf), CliError> {
        let path = self.config.as_deref().ok_or_else(|| CliError::Config("--config is required".into()))?;
        let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let mut cfg = ExperimentConfig::parse(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        self.overrides().apply(&mut cfg)?;
        let out = self.out.clone().or_else(|| cfg.outputs.clone()).unwrap_or_else(|| PathBuf::from("out"));
        Ok((cfg, out))
    }
}

fn execute(cmd: Command) -> Result<Vec<Check>, CliError> {
    type Runner = fn(&ExperimentConfig, &Path) -> Result<Vec<Check>, CliError>;
    let (common, runner): (Common, Runner) = match cmd {
        Command::Reproduce { example, common } => {
            let out = common.out.clone().unwrap_or_else(|| PathBuf::from(format!("out/example{example}")));
            return reproduce(example, &out, common.overrides());
        }
        Command::Bounds(c) => (c, run_bounds),
        Command::Solve(c) => (c, run_solve),
        Command::Perturb(c) => (c, run_perturb),
    };
    let (cfg, out) = common.load()?;
    finish(runner(&cfg, &out)?)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(checks) => {
            for c in &checks {
                println!("PASS {:<40} {:.6e} <= {:.6e}", c.name, c.lhs, c.rhs);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
