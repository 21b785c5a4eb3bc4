use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use stochreg_cli::config::{ExperimentConfig, ExperimentKind, OutputFormat};
use stochreg_cli::{emit, run_with_threads, CliError};

#[derive(Parser)]
#[command(name = "stochreg", version, about = "Stochastic maximal regularity experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON experiment configuration; defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true, value_enum)]
    format: Option<OutputFormat>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Single ratio for one integrand (maxreg, ito-iso or shift configs).
    Simulate,
    EstimateConstant,
    Counterexample,
    VerifyKernels,
    Rbound,
    MaximalFn,
    Factorization,
    MaximalEstimate,
}

impl Command {
    fn kinds(self) -> &'static [ExperimentKind] {
        use ExperimentKind::*;
        match self {
            Command::Simulate => &[Maxreg, ItoIso, Shift],
            Command::EstimateConstant => &[EstimateConstant],
            Command::Counterexample => &[Counterexample],
            Command::VerifyKernels => &[Kernels],
            Command::Rbound => &[Rbound],
            Command::MaximalFn => &[MaximalFn],
            Command::Factorization => &[Factorization],
            Command::MaximalEstimate => &[MaximalEstimate],
        }
    }
}

fn load(cli: &Cli) -> Result<ExperimentConfig, CliError> {
    let kinds = cli.command.kinds();
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            let cfg = ExperimentConfig::from_json(&text)?;
            if !kinds.contains(&cfg.experiment) {
                return Err(CliError::Validation(vec![format!(
                    "experiment: '{}' cannot be run by this subcommand",
                    cfg.experiment.name()
                )]));
            }
            cfg
        }
        None => ExperimentConfig::new(kinds[0]),
    };
    if let Some(s) = cli.seed {
        cfg.monte_carlo.master_seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.output.dir = o.display().to_string();
    }
    if let Some(f) = cli.format {
        cfg.output.format = f;
    }
    Ok(cfg)
}

fn execute(cli: &Cli) -> Result<(), CliError> {
    let cfg = load(cli)?;
    let threads = cli.threads.unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1));
    if threads == 0 {
        return Err(CliError::Validation(vec!["--threads: must be positive".into()]));
    }
    let record = run_with_threads(&cfg, threads)?;
    let files = emit::emit(std::slice::from_ref(&record), cfg.output.dir.as_ref(), cfg.output.format)?;
    for row in &record.rows {
        println!("{:<28} K={:<4} ratio={:.6} ± {:.2e}", row.experiment, row.modes.map_or("-".into(), |k| k.to_string()), row.ratio, row.stderr);
    }
    for f in files {
        eprintln!("wrote {}", f.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
