//! Dispatch from a validated config to the probes, producing one record.

use std::f64::consts::PI;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use stochreg::convops::{self, OperatorFamily, OperatorFamilySpec, RboundEnsemble, StepFunctionEnsemble};
use stochreg::kernels::{self, KernelFn, SectorFunction};
use stochreg::maxreg::{self, NoiseEnsemble};
use stochreg::seed::{self, RNG_ALGORITHM};
use stochreg::spectral::{SpectralModel, TimeGrid};
use stochreg::stats::RatioStatistic;
use stochreg::stochastic::{self, EnsembleSpec, StepProcess};

use crate::config::{ExperimentConfig, ExperimentKind, ModelSpec};
use crate::CliError;

/// One line of the CSV summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub experiment: String,
    pub p: Option<f64>,
    pub q: Option<f64>,
    pub theta: Option<f64>,
    #[serde(rename = "K")]
    pub modes: Option<usize>,
    #[serde(rename = "T")]
    pub horizon: Option<f64>,
    #[serde(rename = "N")]
    pub steps: Option<usize>,
    #[serde(rename = "N_mc")]
    pub paths: Option<usize>,
    pub ratio: f64,
    pub stderr: f64,
}

impl SummaryRow {
    fn from_stat(experiment: impl Into<String>, st: &RatioStatistic) -> Self {
        Self {
            experiment: experiment.into(),
            p: Some(st.exponents.p),
            q: Some(st.exponents.q),
            theta: Some(st.exponents.theta),
            modes: Some(st.grid.modes),
            horizon: Some(st.grid.horizon),
            steps: Some(st.grid.steps),
            paths: Some(st.grid.paths),
            ratio: st.ratio,
            stderr: st.stderr,
        }
    }

    fn bare(experiment: impl Into<String>, ratio: f64) -> Self {
        Self {
            experiment: experiment.into(),
            p: None,
            q: None,
            theta: None,
            modes: None,
            horizon: None,
            steps: None,
            paths: None,
            ratio,
            stderr: 0.0,
        }
    }
}

/// One point of a plot trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub experiment: String,
    pub trace: String,
    pub x: f64,
    pub ratio: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub experiment: String,
    pub config_hash: String,
    pub rng_algorithm: String,
    pub software_version: String,
    pub wall_clock_seconds: f64,
    pub payload: Value,
    pub rows: Vec<SummaryRow>,
    pub traces: Vec<TraceRow>,
}

struct Outcome {
    payload: Value,
    rows: Vec<SummaryRow>,
    traces: Vec<TraceRow>,
}

fn trace(experiment: &str, name: &str, x: f64, ratio: f64, stderr: f64) -> TraceRow {
    TraceRow {
        experiment: experiment.into(),
        trace: name.into(),
        x,
        ratio,
        stderr,
    }
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("results serialize")
}

/// Validates and runs one experiment on the current rayon pool.
pub fn run(cfg: &ExperimentConfig) -> Result<ResultRecord, CliError> {
    cfg.validate()?;
    let start = Instant::now();
    let out = match cfg.experiment {
        ExperimentKind::ItoIso => ito_iso(cfg)?,
        ExperimentKind::Maxreg => maxreg_single(cfg)?,
        ExperimentKind::EstimateConstant => estimate_constant(cfg)?,
        ExperimentKind::Counterexample => counterexample(cfg)?,
        ExperimentKind::Kernels => kernel_checks()?,
        ExperimentKind::Rbound => rbound(cfg)?,
        ExperimentKind::MaximalFn => maximal_fn(cfg)?,
        ExperimentKind::Factorization => factorization(cfg)?,
        ExperimentKind::MaximalEstimate => maximal_estimate(cfg)?,
        ExperimentKind::Shift => shift(cfg)?,
    };
    Ok(ResultRecord {
        experiment: cfg.experiment.name().into(),
        config_hash: cfg.hash(),
        rng_algorithm: RNG_ALGORITHM.into(),
        software_version: env!("CARGO_PKG_VERSION").into(),
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        payload: out.payload,
        rows: out.rows,
        traces: out.traces,
    })
}

/// Runs `cfg` on a dedicated pool of `threads` workers.
pub fn run_with_threads(cfg: &ExperimentConfig, threads: usize) -> Result<ResultRecord, CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Runtime(format!("thread pool: {e}")))?;
    pool.install(|| run(cfg))
}

fn model(cfg: &ExperimentConfig) -> Result<SpectralModel, CliError> {
    Ok(cfg.model.build(cfg.exponents.q)?)
}

fn grid(cfg: &ExperimentConfig) -> Result<TimeGrid, CliError> {
    Ok(TimeGrid::new(cfg.grid.horizon, cfg.grid.steps)?)
}

fn noise(cfg: &ExperimentConfig) -> NoiseEnsemble {
    let mc = &cfg.monte_carlo;
    NoiseEnsemble {
        paths: mc.paths,
        master_seed: mc.master_seed,
        scheme: mc.scheme,
        mode: mc.evaluation,
        horizon: mc.horizon,
    }
}

fn witness(cfg: &ExperimentConfig, m: &SpectralModel) -> Result<StepProcess, CliError> {
    let g = grid(cfg)?;
    let s = seed::derive_seed(cfg.monte_carlo.master_seed ^ 0x7769_746e, 0);
    Ok(stochastic::random_step_process(g, m.modes(), cfg.ensemble.dims, s))
}

fn ito_iso(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let m = model(cfg)?;
    let spec = EnsembleSpec {
        members: cfg.ensemble.members,
        paths: cfg.monte_carlo.paths,
        dims: cfg.ensemble.dims,
        master_seed: cfg.monte_carlo.master_seed,
        adapted: cfg.ensemble.adapted,
    };
    let s = stochastic::ito_isomorphism_ratio(&m, grid(cfg)?, cfg.exponents.p, &spec)?;
    let rows = s.ratios.iter().map(|r| SummaryRow::from_stat("ito-iso", r)).collect();
    Ok(Outcome {
        payload: to_value(&s),
        rows,
        traces: Vec::new(),
    })
}

fn maxreg_single(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let m = model(cfg)?;
    let ens = noise(cfg);
    let mut g = witness(cfg, &m)?;
    let e = &cfg.exponents;
    let base = maxreg::maxreg_ratio(&m, &g, e.p, e.theta, &ens)?;
    let mut traces = vec![trace("maxreg", "ratio-vs-dt", g.grid().dt(), base.ratio, base.stderr)];
    let mut refined = Vec::new();
    for _ in 0..cfg.ensemble.refinements {
        g = maxreg::refine_step(&g);
        let r = maxreg::maxreg_ratio(&m, &g, e.p, e.theta, &ens)?;
        traces.push(trace("maxreg", "ratio-vs-dt", g.grid().dt(), r.ratio, r.stderr));
        refined.push(r);
    }
    Ok(Outcome {
        payload: json!({ "statistic": base, "refinements": refined }),
        rows: vec![SummaryRow::from_stat("maxreg", &base)],
        traces,
    })
}

fn estimate_constant(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let e = &cfg.exponents;
    let models: Vec<SpectralModel> = match &cfg.model {
        ModelSpec::Ladder { base, .. } => cfg
            .ensemble
            .ks
            .iter()
            .map(|k| SpectralModel::geometric_ladder(*base, *k, e.q))
            .collect::<stochreg::Result<_>>()?,
        _ => vec![model(cfg)?],
    };
    let spec = maxreg::ConstantEnsemble {
        horizon: cfg.grid.horizon,
        steps: cfg.grid.steps,
        dims: cfg.ensemble.dims,
        random_members: cfg.ensemble.members,
        master_seed: cfg.monte_carlo.master_seed,
        noise: noise(cfg),
        refinements: cfg.ensemble.refinements,
    };
    let mut rows = Vec::new();
    let mut traces = Vec::new();
    let mut estimates = Vec::new();
    for m in &models {
        let est = maxreg::estimate_constant(m, e.p, e.theta, &spec)?;
        let k = m.modes();
        rows.push(SummaryRow {
            experiment: "estimate-constant".into(),
            p: Some(e.p),
            q: Some(e.q),
            theta: Some(e.theta),
            modes: Some(k),
            horizon: Some(cfg.grid.horizon),
            steps: Some(cfg.grid.steps),
            paths: Some(est.refinement[0].paths),
            ratio: est.sup_ratio,
            stderr: est.refinement[0].stderr,
        });
        traces.push(trace("estimate-constant", "ratio-vs-K", k as f64, est.sup_ratio, est.refinement[0].stderr));
        for r in est.refinement.iter().filter(|r| r.paths == est.refinement[0].paths) {
            traces.push(trace(&format!("estimate-constant[K={k}]"), "ratio-vs-dt", r.dt, r.ratio, r.stderr));
        }
        estimates.push(json!({ "K": k, "estimate": est }));
    }
    Ok(Outcome {
        payload: json!({ "estimates": estimates }),
        rows,
        traces,
    })
}

fn counterexample(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let q = cfg.exponents.q;
    let p = cfg.exponents.p;
    let mut rows = Vec::new();
    let mut traces = Vec::new();
    let mut points = Vec::new();
    for &k in &cfg.ensemble.ks {
        let r2 = maxreg::counterexample_probe(q, k, None)?;
        let control = maxreg::counterexample_control(p, k, None)?;
        let bound = maxreg::counterexample_lower_bound(q, k);
        let mut point = json!({ "K": k, "ratio_squared": r2, "lower_bound": bound, "control_p": p, "control_ratio": control });
        if cfg.ensemble.search_sweeps > 0 {
            let start = maxreg::dyadic_witness(q, k)?;
            let (found, _) = maxreg::counterexample_search(q, k, &start, cfg.ensemble.search_sweeps)?;
            point["search_ratio_squared"] = json!(found);
        }
        points.push(point);
        for (name, pp, ratio) in [("counterexample", 2.0, r2.sqrt()), ("counterexample-control", p, control)] {
            rows.push(SummaryRow {
                experiment: name.into(),
                p: Some(pp),
                q: Some(if name == "counterexample" { q } else { p }),
                theta: Some(0.0),
                modes: Some(k),
                horizon: None,
                steps: None,
                paths: Some(0),
                ratio,
                stderr: 0.0,
            });
            traces.push(trace(name, "ratio-vs-K", k as f64, ratio, 0.0));
        }
    }
    let monotone = points.windows(2).all(|w| w[1]["ratio_squared"].as_f64() >= w[0]["ratio_squared"].as_f64());
    Ok(Outcome {
        payload: json!({ "q": q, "points": points, "monotone": monotone }),
        rows,
        traces,
    })
}

fn kernel_checks() -> Result<Outcome, CliError> {
    let mut checks = Vec::new();
    let mut push = |name: &str, value: f64, expected: f64| {
        checks.push((name.to_string(), value, expected));
    };
    let e1 = kernels::kclass_seminorm(&KernelFn::exponential(1.0, 1.0));
    push("kclass e^-t", e1.value, PI.sqrt() / 2.0);
    let e2 = kernels::kclass_seminorm(&KernelFn::exponential(2.0, 1.0));
    push("kclass 2e^-t", e2.value, PI.sqrt());
    push(
        "poisson e^-z",
        kernels::poisson_reconstruct(&SectorFunction::exp_decay(1.0), 1.0, PI / 4.0)?,
        (-1f64).exp(),
    );
    push("poisson 1", kernels::poisson_reconstruct(&SectorFunction::constant(1.0), 1.0, PI / 4.0)?, 1.0);
    let mut worst: f64 = 0.0;
    for &l in &[0.3, 1.0, 5.0] {
        for &t in &[0.2, 1.0, 3.0] {
            for &th in &[0.0, 0.25] {
                for &a in &[PI / 4.0, 1.3] {
                    worst = worst.max(kernels::spoisson_identity_check(l, t, th, a)?.abs_error);
                }
            }
        }
    }
    push("identity max error", worst, 0.0);
    let rows = checks.iter().map(|(n, v, _)| SummaryRow::bare(format!("kernels/{n}"), *v)).collect();
    let payload = json!({
        "checks": checks.iter().map(|(n, v, x)| json!({ "name": n, "value": v, "expected": x, "abs_error": (v - x).abs() })).collect::<Vec<_>>(),
        "kclass_members": [e1.is_member, e2.is_member],
    });
    Ok(Outcome {
        payload,
        rows,
        traces: Vec::new(),
    })
}

/// `n` windows log-spaced over `[lo, hi]`, ordered so that every prefix of
/// length `2^j + 1` is itself log-spaced (endpoints first, then bisection).
pub fn nested_windows(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![hi];
    }
    let mut fracs = vec![0.0, 1.0];
    let mut denom = 2u64;
    while fracs.len() < n {
        for num in (1..denom).step_by(2) {
            if fracs.len() == n {
                break;
            }
            fracs.push(num as f64 / denom as f64);
        }
        denom *= 2;
    }
    fracs.iter().map(|f| (hi.ln() + f * (lo.ln() - hi.ln())).exp()).collect()
}

fn rbound(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let m = model(cfg)?;
    let e = &cfg.exponents;
    let g = grid(cfg)?;
    let n = *cfg.ensemble.ks.iter().max().expect("validated");
    let rs = nested_windows(g.dt(), g.horizon(), n);
    let ens = RboundEnsemble {
        horizon: g.horizon(),
        steps: g.steps(),
        dims: cfg.ensemble.dims,
        paths: cfg.monte_carlo.paths,
        master_seed: cfg.monte_carlo.master_seed,
    };
    let spec = OperatorFamilySpec {
        family: OperatorFamily::J { rs: rs.clone() },
        p: e.p,
        q: e.q,
    };
    let est = convops::rbound_estimate(&m, &spec, &ens, cfg.ensemble.trials)?;
    let coeffs: Vec<f64> = (0..8)
        .map(|j| 4.0 * (seed::derive_seed(cfg.monte_carlo.master_seed ^ 0xc0ef, j) >> 11) as f64 / (1u64 << 53) as f64 - 2.0)
        .collect();
    let scalar = convops::rbound_estimate(
        &m,
        &OperatorFamilySpec {
            family: OperatorFamily::Scalar { coeffs: coeffs.clone() },
            p: e.p,
            q: e.q,
        },
        &ens,
        cfg.ensemble.trials,
    )?;
    let max_c = coeffs.iter().fold(0.0f64, |a, c| a.max(c.abs()));
    let mut rows = Vec::new();
    let mut traces = Vec::new();
    for &k in &cfg.ensemble.ks {
        let v = est.per_prefix[k - 1];
        rows.push(SummaryRow {
            experiment: format!("rbound-j[n={k}]"),
            p: Some(e.p),
            q: Some(e.q),
            theta: None,
            modes: Some(m.modes()),
            horizon: Some(g.horizon()),
            steps: Some(g.steps()),
            paths: Some(cfg.monte_carlo.paths),
            ratio: v,
            stderr: 0.0,
        });
        traces.push(trace("rbound-j", "ratio-vs-members", k as f64, v, 0.0));
    }
    rows.push(SummaryRow {
        experiment: "rbound-scalar".into(),
        ratio: scalar.value / max_c,
        ..SummaryRow::bare("", 0.0)
    });
    Ok(Outcome {
        payload: json!({ "windows": rs, "j_family": est, "scalar_coeffs": coeffs, "scalar": scalar, "max_abs_coeff": max_c }),
        rows,
        traces,
    })
}

fn maximal_fn(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let ens = StepFunctionEnsemble {
        members: cfg.ensemble.members,
        cells: cfg.ensemble.cells,
        master_seed: cfg.monte_carlo.master_seed,
    };
    let (r, s) = (cfg.ensemble.r, cfg.ensemble.s);
    let mut rows = Vec::new();
    let mut traces = Vec::new();
    let mut reports = Vec::new();
    for &k in &cfg.ensemble.ks {
        let rep = convops::fefferman_stein_check(r, s, k, &ens)?;
        rows.push(SummaryRow {
            experiment: "maximal-fn".into(),
            p: Some(r),
            q: Some(s),
            theta: None,
            modes: Some(k),
            horizon: Some(1.0),
            steps: Some(ens.cells),
            paths: Some(ens.members),
            ratio: rep.sup_ratio,
            stderr: 0.0,
        });
        traces.push(trace("maximal-fn", "ratio-vs-K", k as f64, rep.sup_ratio, 0.0));
        reports.push(json!({ "K": k, "report": rep }));
    }
    Ok(Outcome {
        payload: json!({ "reports": reports }),
        rows,
        traces,
    })
}

fn factorization(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let m = model(cfg)?;
    let theta = cfg.exponents.theta;
    let mut g = StepProcess::constant(grid(cfg)?, m.modes(), cfg.ensemble.dims, 1.0);
    let mut rows = Vec::new();
    let mut traces = Vec::new();
    let mut errors = Vec::new();
    for level in 0..=cfg.ensemble.refinements {
        if level > 0 {
            g = maxreg::refine_step(&g);
        }
        let err = maxreg::factorization_error(&m, &g, theta, cfg.monte_carlo.paths, cfg.monte_carlo.master_seed)?;
        let gr = g.grid();
        rows.push(SummaryRow {
            experiment: "factorization".into(),
            p: Some(2.0),
            q: Some(2.0),
            theta: Some(theta),
            modes: Some(m.modes()),
            horizon: Some(gr.horizon()),
            steps: Some(gr.steps()),
            paths: Some(cfg.monte_carlo.paths),
            ratio: err,
            stderr: 0.0,
        });
        traces.push(trace("factorization", "ratio-vs-dt", gr.dt(), err, 0.0));
        errors.push(json!({ "dt": gr.dt(), "relative_error": err }));
    }
    Ok(Outcome {
        payload: json!({ "theta": theta, "errors": errors }),
        rows,
        traces,
    })
}

fn maximal_estimate(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let m = model(cfg)?;
    let g = StepProcess::constant(grid(cfg)?, m.modes(), cfg.ensemble.dims, 1.0);
    let r = maxreg::maximal_estimate_probe(&m, &g, cfg.exponents.p, cfg.monte_carlo.paths, cfg.monte_carlo.master_seed)?;
    Ok(Outcome {
        rows: vec![SummaryRow::from_stat("maximal-estimate", &r.statistic)],
        payload: to_value(&r),
        traces: Vec::new(),
    })
}

fn shift(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let m = model(cfg)?;
    let g = witness(cfg, &m)?;
    let r = maxreg::higher_regularity_shift(&m, &g, cfg.exponents.delta, cfg.exponents.p, &noise(cfg))?;
    Ok(Outcome {
        rows: vec![SummaryRow::from_stat("shift", &r)],
        payload: json!({ "delta": cfg.exponents.delta, "statistic": r }),
        traces: Vec::new(),
    })
}
