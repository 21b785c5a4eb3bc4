//! Experiment configuration: a single JSON document with explicit defaults.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use stochreg::maxreg::{check_exponents, EvalMode, Horizon};
use stochreg::spectral::SpectralModel;
use stochreg::stochastic::Scheme;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    ItoIso,
    Maxreg,
    EstimateConstant,
    Counterexample,
    Kernels,
    Rbound,
    MaximalFn,
    Factorization,
    MaximalEstimate,
    Shift,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::ItoIso => "ito-iso",
            Self::Maxreg => "maxreg",
            Self::EstimateConstant => "estimate-constant",
            Self::Counterexample => "counterexample",
            Self::Kernels => "kernels",
            Self::Rbound => "rbound",
            Self::MaximalFn => "maximal-fn",
            Self::Factorization => "factorization",
            Self::MaximalEstimate => "maximal-estimate",
            Self::Shift => "shift",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelSpec {
    Diagonal { eigenvalues: Vec<f64> },
    /// `λ_k = base^k`, `k = 1..=count`.
    Ladder { base: f64, count: usize },
    Torus { dim: usize, points: usize, shift: f64 },
    Dirichlet { points: usize },
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self::Ladder { base: 4.0, count: 4 }
    }
}

impl ModelSpec {
    pub fn build(&self, q: f64) -> stochreg::Result<SpectralModel> {
        match self {
            Self::Diagonal { eigenvalues } => SpectralModel::diagonal(eigenvalues.clone(), q),
            Self::Ladder { base, count } => SpectralModel::geometric_ladder(*base, *count, q),
            Self::Torus { dim, points, shift } => SpectralModel::fourier_torus(*dim, *points, *shift, q),
            Self::Dirichlet { points } => SpectralModel::dirichlet_sine(*points, q),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    #[serde(rename = "T")]
    pub horizon: f64,
    #[serde(rename = "N")]
    pub steps: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { horizon: 1.0, steps: 100 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExponentSpec {
    pub p: f64,
    pub q: f64,
    pub theta: f64,
    pub delta: f64,
}

impl Default for ExponentSpec {
    fn default() -> Self {
        Self {
            p: 4.0,
            q: 4.0,
            theta: 0.0,
            delta: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McSpec {
    #[serde(rename = "N_mc")]
    pub paths: usize,
    pub master_seed: u64,
    pub scheme: Scheme,
    pub evaluation: EvalMode,
    pub horizon: Horizon,
}

impl Default for McSpec {
    fn default() -> Self {
        Self {
            paths: 200,
            master_seed: 1,
            scheme: Scheme::Maruyama,
            evaluation: EvalMode::Auto,
            horizon: Horizon::HalfLine,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleConfig {
    /// Random integrands (estimate-constant, ito-iso) or random step
    /// functions (maximal-fn).
    pub members: usize,
    /// Noise directions `dim H`.
    pub dims: usize,
    /// `Δt` halvings in refinement traces.
    pub refinements: usize,
    /// Mode counts for `K` sweeps; family sizes for rbound.
    pub ks: Vec<usize>,
    pub trials: usize,
    pub search_sweeps: usize,
    pub adapted: bool,
    /// Time cells of the maximal-function ensemble.
    pub cells: usize,
    /// Inner exponents `(r, s)` of the maximal-function check.
    pub r: f64,
    pub s: f64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            members: 8,
            dims: 1,
            refinements: 2,
            ks: vec![8, 12, 16, 20, 24],
            trials: 2,
            search_sweeps: 0,
            adapted: false,
            cells: 128,
            r: 1.5,
            s: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum OutputFormat {
    Jsonl,
    Csv,
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSpec {
    pub dir: String,
    pub format: OutputFormat,
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self {
            dir: "out".into(),
            format: OutputFormat::Both,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(default)]
    pub model: ModelSpec,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default)]
    pub exponents: ExponentSpec,
    #[serde(default)]
    pub monte_carlo: McSpec,
    #[serde(default)]
    pub ensemble: EnsembleConfig,
    #[serde(default)]
    pub output: OutputSpec,
}

impl ExperimentConfig {
    pub fn new(experiment: ExperimentKind) -> Self {
        Self {
            experiment,
            model: ModelSpec::default(),
            grid: GridSpec::default(),
            exponents: ExponentSpec::default(),
            monte_carlo: McSpec::default(),
            ensemble: EnsembleConfig::default(),
            output: OutputSpec::default(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Validation(vec![format!("config: {e}")]))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the canonical (compact, defaults filled) serialization.
    /// Output settings are excluded: they do not affect results.
    pub fn hash(&self) -> String {
        let canonical = Self {
            output: OutputSpec::default(),
            ..self.clone()
        };
        let bytes = serde_json::to_vec(&canonical).expect("config serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Every problem with the configuration, one message per field.
    pub fn validate(&self) -> Result<(), CliError> {
        let mut errs = Vec::new();
        let e = &self.exponents;
        let g = &self.grid;
        if !(g.horizon.is_finite() && g.horizon > 0.0) {
            errs.push(format!("grid.T: must be positive, got {}", g.horizon));
        }
        if g.steps == 0 {
            errs.push("grid.N: at least one time cell is required".into());
        }
        if !(e.q >= 2.0) {
            errs.push(format!("exponents.q: must be at least 2, got {}", e.q));
        }
        let needs_model = !matches!(self.experiment, ExperimentKind::Counterexample | ExperimentKind::Kernels | ExperimentKind::MaximalFn);
        if needs_model {
            if let Err(err) = self.model.build(e.q.max(2.0)) {
                errs.push(format!("model: {err}"));
            }
        }
        let mc_needed = matches!(
            self.experiment,
            ExperimentKind::ItoIso | ExperimentKind::Factorization | ExperimentKind::MaximalEstimate | ExperimentKind::Rbound
        ) || (matches!(self.experiment, ExperimentKind::Maxreg | ExperimentKind::EstimateConstant | ExperimentKind::Shift)
            && self.monte_carlo.evaluation == EvalMode::MonteCarlo);
        if mc_needed && self.monte_carlo.paths == 0 {
            errs.push("monte_carlo.N_mc: at least one path is required".into());
        }
        match self.experiment {
            ExperimentKind::Maxreg | ExperimentKind::EstimateConstant | ExperimentKind::Shift => {
                if let Err(err) = check_exponents(e.p, e.q) {
                    errs.push(format!("exponents.p: {err}"));
                }
                if !(0.0..0.5).contains(&e.theta) {
                    errs.push(format!("exponents.theta: must lie in [0, 1/2), got {}", e.theta));
                }
                if self.experiment == ExperimentKind::Shift && !(e.delta >= 0.0) {
                    errs.push(format!("exponents.delta: must be nonnegative, got {}", e.delta));
                }
            }
            ExperimentKind::ItoIso => {
                if !(e.p > 1.0) {
                    errs.push(format!("exponents.p: must exceed 1, got {}", e.p));
                }
            }
            ExperimentKind::Counterexample => {
                if !(e.q > 2.0 && e.q.is_finite()) {
                    errs.push(format!("exponents.q: the counterexample needs q ∈ (2, ∞), got {}", e.q));
                }
                if !(e.p > 2.0) {
                    errs.push(format!("exponents.p: the control needs p ∈ (2, ∞), got {}", e.p));
                }
                if self.ensemble.ks.is_empty() || self.ensemble.ks.iter().any(|k| *k == 0 || *k > 24) {
                    errs.push("ensemble.ks: each K must lie in 1..=24".into());
                }
            }
            ExperimentKind::Rbound => {
                if !(e.p >= 1.0) {
                    errs.push(format!("exponents.p: must be at least 1, got {}", e.p));
                }
                if self.ensemble.ks.is_empty() || self.ensemble.ks.contains(&0) {
                    errs.push("ensemble.ks: family sizes must be positive".into());
                }
                if self.ensemble.trials == 0 {
                    errs.push("ensemble.trials: at least one trial is required".into());
                }
            }
            ExperimentKind::MaximalFn => {
                if !(self.ensemble.r > 1.0 && self.ensemble.r.is_finite()) {
                    errs.push(format!("ensemble.r: must lie in (1, ∞), got {}", self.ensemble.r));
                }
                if !(self.ensemble.s > 1.0) {
                    errs.push(format!("ensemble.s: must exceed 1, got {}", self.ensemble.s));
                }
                if self.ensemble.ks.is_empty() || self.ensemble.ks.contains(&0) {
                    errs.push("ensemble.ks: component counts must be positive".into());
                }
                if self.ensemble.members == 0 || self.ensemble.cells == 0 {
                    errs.push("ensemble: members and cells must be positive".into());
                }
            }
            ExperimentKind::Factorization => {
                if !(e.theta > 0.0 && e.theta < 0.5) {
                    errs.push(format!("exponents.theta: must lie in (0, 1/2), got {}", e.theta));
                }
            }
            ExperimentKind::MaximalEstimate => {
                if !(e.p > 2.0 && e.p.is_finite()) {
                    errs.push(format!("exponents.p: must lie in (2, ∞), got {}", e.p));
                }
            }
            ExperimentKind::Kernels => {}
        }
        if self.ensemble.dims == 0 {
            errs.push("ensemble.dims: must be positive".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(CliError::Validation(errs))
        }
    }
}
