use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mfc_lab::lab::{self, ExperimentConfig, ExperimentKind, Overrides};

#[derive(Parser)]
#[command(name = "mfc-lab", version, about = "Mean-field control laboratory")]
struct Cli {
    /// Key-value config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Simulate the uncontrolled particle system.
    Simulate,
    /// Solve the mean-field BSDE.
    Bsde,
    /// Solve the lifted HJB equation.
    Hjb,
    /// Propagation-of-chaos study.
    Chaos,
    /// Weak-rate study of the N-particle value.
    Rate,
    /// BSDE stability table.
    Stability,
    /// PDE against BSDE value.
    Crosscheck,
    /// Partial-observation study.
    Partialobs,
}

impl Command {
    fn kind(self) -> Option<ExperimentKind> {
        match self {
            Command::Chaos => Some(ExperimentKind::Chaos),
            Command::Rate => Some(ExperimentKind::ValueRate),
            Command::Stability => Some(ExperimentKind::Stability),
            Command::Crosscheck => Some(ExperimentKind::CrossCheck),
            Command::Partialobs => Some(ExperimentKind::PartialObs),
            Command::Simulate | Command::Bsde | Command::Hjb => None,
        }
    }
}

fn run(cli: &Cli) -> mfc_lab::Result<bool> {
    if let Some(k) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(k).build_global().map_err(|e| mfc_lab::Error::Config(e.to_string()))?;
    }
    let mut cfg = match (&cli.config, cli.command.kind()) {
        (Some(path), _) => ExperimentConfig::load(path)?,
        (None, Some(kind)) => ExperimentConfig::defaults(kind),
        (None, None) => ExperimentConfig::defaults(ExperimentKind::CrossCheck),
    };
    if let Some(kind) = cli.command.kind() {
        if cfg.kind != kind {
            return Err(mfc_lab::Error::Config(format!("config describes `{}`, not `{kind}`", cfg.kind)));
        }
    }
    Overrides { seed: cli.seed, out: cli.out.clone() }.apply(&mut cfg);
    let body = match cli.command {
        Command::Simulate => lab::run_simulate_tool(&cfg)?,
        Command::Bsde => lab::run_bsde_tool(&cfg)?,
        Command::Hjb => lab::run_hjb_tool(&cfg)?,
        _ => {
            let outcome = lab::run_experiment(&cfg)?;
            outcome.write(&cfg.out)?;
            print!("{}", outcome.report());
            return Ok(outcome.passed());
        }
    };
    println!("{}", serde_json::to_string_pretty(&body)?);
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
