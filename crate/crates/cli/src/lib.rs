//! Experiment harness: configuration, dispatch, and result files.

pub mod config;
pub mod emit;
pub mod runner;

pub use config::{ExperimentConfig, ExperimentKind, OutputFormat};
pub use runner::{run, run_with_threads, ResultRecord, SummaryRow, TraceRow};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Validation(Vec<String>),
    #[error(transparent)]
    Core(#[from] stochreg::Error),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    /// 2 for validation failures, 3 for numerical failures, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Core(e) if e.is_validation() => 2,
            CliError::Core(_) => 3,
            _ => 1,
        }
    }
}

/// Small configurations covering every experiment kind, used for the
/// determinism check and as a smoke run.
pub fn suite(master_seed: u64) -> Vec<ExperimentConfig> {
    use config::*;
    let mut out = Vec::new();
    let mut c = |kind: ExperimentKind, f: &dyn Fn(&mut ExperimentConfig)| {
        let mut cfg = ExperimentConfig::new(kind);
        cfg.monte_carlo.master_seed = master_seed;
        cfg.grid = GridSpec { horizon: 1.0, steps: 40 };
        cfg.monte_carlo.paths = 64;
        f(&mut cfg);
        out.push(cfg);
    };
    c(ExperimentKind::ItoIso, &|c| {
        c.exponents.p = 3.0;
        c.ensemble.members = 3;
    });
    c(ExperimentKind::Maxreg, &|c| {
        c.monte_carlo.evaluation = stochreg::maxreg::EvalMode::MonteCarlo;
        c.ensemble.refinements = 1;
    });
    c(ExperimentKind::EstimateConstant, &|c| {
        c.ensemble.ks = vec![2, 4];
        c.ensemble.members = 3;
        c.ensemble.refinements = 1;
    });
    c(ExperimentKind::Counterexample, &|c| c.ensemble.ks = vec![8, 12]);
    c(ExperimentKind::Kernels, &|_| {});
    c(ExperimentKind::Rbound, &|c| {
        c.exponents.p = 3.0;
        c.ensemble.ks = vec![2, 4];
        c.ensemble.trials = 1;
        c.monte_carlo.paths = 8;
        c.grid.steps = 16;
    });
    c(ExperimentKind::MaximalFn, &|c| {
        c.ensemble.ks = vec![2, 8];
        c.ensemble.members = 50;
        c.ensemble.cells = 32;
    });
    c(ExperimentKind::Factorization, &|c| {
        c.exponents.theta = 0.25;
        c.model = ModelSpec::Diagonal { eigenvalues: vec![1.0] };
        c.exponents.q = 2.0;
        c.ensemble.refinements = 1;
        c.monte_carlo.paths = 16;
    });
    c(ExperimentKind::MaximalEstimate, &|c| {
        c.model = ModelSpec::Diagonal { eigenvalues: vec![1.0] };
        c.grid.steps = 10;
        c.monte_carlo.paths = 16;
    });
    c(ExperimentKind::Shift, &|c| {
        c.exponents.delta = 0.25;
        c.monte_carlo.evaluation = stochreg::maxreg::EvalMode::MonteCarlo;
    });
    out
}
