//! Windowed stochastic integrals `J(r)`, kernel convolutions `I(k)`, the
//! pathwise reduction of `I(k)` to an `r`-integral of `J(r)`, empirical
//! R-bounds, and the one-sided maximal function with its averaging
//! operators `T(δ)`, `T*(δ)`.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::KernelFn;
use crate::seed;
use crate::spectral::{lq_norm, FieldPath, SpectralModel, TimeGrid};
use crate::stats::{self, Evaluation, Exponents, GridInfo, RatioStatistic};
use crate::stochastic::{random_step_process, sample_noise, NoisePath, Scheme, StepProcess};

/// Largest family size for which the sign expectation is enumerated exactly.
pub const MAX_EXACT_SIGNS: usize = 10;

/// Number of sampled sign vectors for larger families.
pub const SAMPLED_SIGNS: usize = 512;

const SNAP_TOL: f64 = 1e-9;

fn window_cells(r: f64, dt: f64) -> usize {
    (r / dt + SNAP_TOL).floor() as usize
}

/// `J(r)G(t_n) = r^{−1/2} Σ_{h} Σ_{cells i ⊂ [(t_n − r)∨0, t_n]} G[i] ΔW_i`.
pub fn apply_j(r: f64, g: &StepProcess, noise: &NoisePath) -> Result<FieldPath> {
    g.check_noise(noise)?;
    let grid = g.grid();
    if !(r.is_finite() && r >= grid.dt() * (1.0 - SNAP_TOL)) {
        return Err(Error::param(
            "r",
            format!("window {r} is shorter than the time step {}", grid.dt()),
        ));
    }
    let prefix = prefix_sums(g, noise);
    Ok(j_from_prefix(&prefix, grid, g.modes(), r))
}

fn prefix_sums(g: &StepProcess, noise: &NoisePath) -> Vec<f64> {
    let k = g.modes();
    let b = g.driven(noise);
    let mut prefix = vec![0.0; (g.grid().steps() + 1) * k];
    for i in 0..g.grid().steps() {
        for kk in 0..k {
            prefix[(i + 1) * k + kk] = prefix[i * k + kk] + b[i * k + kk];
        }
    }
    prefix
}

fn j_from_prefix(prefix: &[f64], grid: TimeGrid, k: usize, r: f64) -> FieldPath {
    let w = window_cells(r, grid.dt());
    let scale = 1.0 / r.sqrt();
    let mut out = FieldPath::zeros(grid, k);
    for n in 0..=grid.steps() {
        let start = n.saturating_sub(w);
        let row = out.at_mut(n);
        for kk in 0..k {
            row[kk] = scale * (prefix[n * k + kk] - prefix[start * k + kk]);
        }
    }
    out
}

/// `I(k)G(t_n) = Σ_{i<n} k(t_n − t_i) Σ_h G[i] ΔW_i`.
pub fn apply_i(kernel: &KernelFn, g: &StepProcess, noise: &NoisePath) -> Result<FieldPath> {
    g.check_noise(noise)?;
    let grid = g.grid();
    let k = g.modes();
    let b = g.driven(noise);
    let weights: Vec<f64> = (0..=grid.steps()).map(|j| if j == 0 { 0.0 } else { kernel.value(j as f64 * grid.dt()) }).collect();
    let mut out = FieldPath::zeros(grid, k);
    for n in 1..=grid.steps() {
        let row = out.at_mut(n);
        for i in 0..n {
            let w = weights[n - i];
            for kk in 0..k {
                row[kk] += w * b[i * k + kk];
            }
        }
    }
    Ok(out)
}

/// Midpoint rule in `ln r` on `[r_min, r_max]` with spacing `h`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogGrid {
    pub r_min: f64,
    pub r_max: f64,
    pub h: f64,
}

impl LogGrid {
    /// The grid refined jointly with the time step: `r_min = Δt`, `h = Δt`.
    pub fn joint(dt: f64, r_max: f64) -> Self {
        Self { r_min: dt, r_max, h: dt }
    }

    fn nodes(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        let lo = self.r_min.ln();
        let count = ((self.r_max.ln() - lo) / self.h).ceil().max(1.0) as usize;
        let h = (self.r_max.ln() - lo) / count as f64;
        (0..count).map(move |j| {
            let r = (lo + (j as f64 + 0.5) * h).exp();
            (r, r * h)
        })
    }
}

/// `−∫ √r k′(r) J(r)G dr` by the log-midpoint rule, on the same noise.
pub fn reduced_i(kernel: &KernelFn, g: &StepProcess, noise: &NoisePath, rgrid: &LogGrid) -> Result<FieldPath> {
    g.check_noise(noise)?;
    let grid = g.grid();
    if rgrid.r_min < grid.dt() * (1.0 - SNAP_TOL) || rgrid.r_max <= rgrid.r_min || rgrid.h <= 0.0 {
        return Err(Error::param("r grid", "needs Δt ≤ r_min < r_max and a positive spacing"));
    }
    let k = g.modes();
    let prefix = prefix_sums(g, noise);
    let mut out = FieldPath::zeros(grid, k);
    for (r, w) in rgrid.nodes() {
        let c = -w * r.sqrt() * kernel.derivative(r);
        if c == 0.0 {
            continue;
        }
        let wc = window_cells(r, grid.dt());
        let scale = c / r.sqrt();
        for n in 1..=grid.steps() {
            let start = n.saturating_sub(wc);
            let row = out.at_mut(n);
            for kk in 0..k {
                row[kk] += scale * (prefix[n * k + kk] - prefix[start * k + kk]);
            }
        }
    }
    Ok(out)
}

/// Relative `L²(Ω × [0,T]; ℓ²)` distance between paired path families.
pub fn relative_l2_mismatch(pairs: &[(FieldPath, FieldPath)]) -> f64 {
    let mut diff = 0.0;
    let mut base = 0.0;
    for (a, b) in pairs {
        for (x, y) in a.data().iter().zip(b.data()) {
            diff += (x - y) * (x - y);
            base += x * x;
        }
    }
    (diff / base).sqrt()
}

/// Mismatch between `I(k)G` and its `J(r)` reduction over `paths` noise
/// samples, with the `r`-grid refined jointly with `Δt`.
pub fn reduction_mismatch(
    kernel: &KernelFn,
    grid: TimeGrid,
    g: &StepProcess,
    paths: usize,
    master_seed: u64,
    r_max: f64,
) -> Result<f64> {
    let rgrid = LogGrid::joint(grid.dt(), r_max);
    let pairs = stats::try_monte_carlo(paths, master_seed, |_, s| {
        let noise = sample_noise(grid, g.dims(), Scheme::Maruyama, None, s)?;
        Ok((apply_i(kernel, g, &noise)?, reduced_i(kernel, g, &noise, &rgrid)?))
    })?;
    Ok(relative_l2_mismatch(&pairs))
}

/// How Rademacher expectations are evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SignMode {
    /// Exact enumeration when the family has at most [`MAX_EXACT_SIGNS`]
    /// members, sampling otherwise.
    Auto,
    Sampled { count: usize },
}

/// Sign vectors with their weights for a family of `n` members. Exact
/// enumeration fixes `ε_1 = +1`, since `ε` and `−ε` give equal norms.
fn sign_vectors(n: usize, mode: SignMode, seed: u64) -> Vec<Vec<f64>> {
    let sampled = match mode {
        SignMode::Auto if n <= MAX_EXACT_SIGNS => None,
        SignMode::Auto => Some(SAMPLED_SIGNS),
        SignMode::Sampled { count } => Some(count),
    };
    match sampled {
        None => (0..1usize << (n.saturating_sub(1)))
            .map(|bits| (0..n).map(|j| if j > 0 && bits >> (j - 1) & 1 == 1 { -1.0 } else { 1.0 }).collect())
            .collect(),
        Some(count) => {
            let mut rng = seed::path_rng(seed);
            (0..count).map(|_| (0..n).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect()).collect()
        }
    }
}

/// `(E_ε ‖Σ_n ε_n x_n‖²)^{1/2}`.
pub fn rademacher_norm(xs: &[Vec<f64>], norm: &dyn Fn(&[f64]) -> f64, mode: SignMode, seed: u64) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let len = xs[0].len();
    let signs = sign_vectors(xs.len(), mode, seed);
    let mut buf = vec![0.0; len];
    let total: f64 = signs
        .iter()
        .map(|eps| {
            buf.iter_mut().for_each(|v| *v = 0.0);
            for (e, x) in eps.iter().zip(xs) {
                for (b, v) in buf.iter_mut().zip(x) {
                    *b += e * v;
                }
            }
            norm(&buf).powi(2)
        })
        .sum();
    (total / signs.len() as f64).sqrt()
}

/// `‖(Σ_n |x_n|²)^{1/2}‖_q` for vectors in `ℓ^q`.
pub fn square_function(xs: &[Vec<f64>], q: f64) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let sq: Vec<f64> = (0..xs[0].len()).map(|k| xs.iter().map(|x| x[k] * x[k]).sum::<f64>().sqrt()).collect();
    lq_norm(&sq, q)
}

/// Bounds `[1/√(q−1), B_q]` on the ratio of the Rademacher `L²` norm to the
/// square function in `ℓ^q`, `q ≥ 2`, with Haagerup's constant
/// `B_q = √2 (Γ((q+1)/2)/√π)^{1/q}`.
pub fn khintchine_bounds(q: f64) -> (f64, f64) {
    let b = 2f64.sqrt() * (statrs::function::gamma::gamma((q + 1.0) / 2.0) / std::f64::consts::PI.sqrt()).powf(1.0 / q);
    (1.0 / (q - 1.0).sqrt(), b.max(1.0))
}

/// A finite family of operators acting on step processes.
#[derive(Clone)]
pub enum OperatorFamily {
    J { rs: Vec<f64> },
    I { kernels: Vec<KernelFn> },
    /// `G ↦ c_n G`.
    Scalar { coeffs: Vec<f64> },
    Custom(Vec<Arc<dyn Fn(&StepProcess, &NoisePath) -> Result<FieldPath> + Send + Sync>>),
}

impl std::fmt::Debug for OperatorFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::J { rs } => f.debug_struct("J").field("rs", rs).finish(),
            Self::I { kernels } => f.debug_struct("I").field("kernels", kernels).finish(),
            Self::Scalar { coeffs } => f.debug_struct("Scalar").field("coeffs", coeffs).finish(),
            Self::Custom(v) => write!(f, "Custom({} members)", v.len()),
        }
    }
}

impl OperatorFamily {
    pub fn len(&self) -> usize {
        match self {
            Self::J { rs } => rs.len(),
            Self::I { kernels } => kernels.len(),
            Self::Scalar { coeffs } => coeffs.len(),
            Self::Custom(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Family together with the exponents of `L^p(Ω × [0,T]; L^q)`.
#[derive(Debug, Clone)]
pub struct OperatorFamilySpec {
    pub family: OperatorFamily,
    pub p: f64,
    pub q: f64,
}

/// Random inputs on which an R-bound is estimated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RboundEnsemble {
    pub horizon: f64,
    pub steps: usize,
    pub dims: usize,
    pub paths: usize,
    pub master_seed: u64,
}

/// Empirical (lower) estimate of an R-bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RboundEstimate {
    pub value: f64,
    /// `per_prefix[n − 1]` is the estimate for the first `n` members.
    pub per_prefix: Vec<f64>,
    pub exact_signs: bool,
}

/// Norm of `L^p(blocks; ℓ^q(modes; ℓ²(dims)))` with equal block weights.
#[derive(Debug, Clone)]
struct Layout {
    blocks: usize,
    dims: usize,
    weight: f64,
    p: f64,
    model: SpectralModel,
}

impl Layout {
    fn norm(&self, x: &[f64]) -> f64 {
        let width = x.len() / self.blocks;
        let s: f64 = x
            .chunks(width)
            .map(|b| self.model.norm_with_dims(b, self.dims, self.model.q()).powf(self.p))
            .sum();
        (self.weight * s).powf(1.0 / self.p)
    }
}

/// R-bound estimate from explicit configurations: each configuration lists
/// inputs `x_n` and outputs `T_n x_n`. Every prefix of every configuration
/// and every single member is a candidate, so the estimate for a family is
/// never below that of any subfamily.
fn rbound_from_configurations(
    configs: &[(Vec<Vec<f64>>, Vec<Vec<f64>>)],
    in_norm: &dyn Fn(&[f64]) -> f64,
    out_norm: &dyn Fn(&[f64]) -> f64,
    mode: SignMode,
    seed: u64,
) -> Vec<f64> {
    let n = configs.first().map(|c| c.0.len()).unwrap_or(0);
    let mut best = vec![0.0f64; n];
    for (t, (inputs, outputs)) in configs.iter().enumerate() {
        let sampled = sign_vectors(n, mode, seed::derive_seed(seed, t as u64));
        let mut spike_best = 0.0f64;
        for m in 1..=n {
            let d = in_norm(&inputs[m - 1]);
            if d > 0.0 {
                spike_best = spike_best.max(out_norm(&outputs[m - 1]) / d);
            }
            let exact = matches!(mode, SignMode::Auto) && m <= MAX_EXACT_SIGNS;
            let signs: Vec<Vec<f64>> = if exact {
                sign_vectors(m, SignMode::Auto, 0)
            } else {
                sampled.iter().map(|e| e[..m].to_vec()).collect()
            };
            let (num, den) = signed_norms(&inputs[..m], &outputs[..m], &signs, in_norm, out_norm);
            let ratio = if den > 0.0 { num / den } else { 0.0 };
            best[m - 1] = best[m - 1].max(ratio).max(spike_best);
        }
    }
    for m in 1..n {
        best[m] = best[m].max(best[m - 1]);
    }
    best
}

fn signed_norms(
    inputs: &[Vec<f64>],
    outputs: &[Vec<f64>],
    signs: &[Vec<f64>],
    in_norm: &dyn Fn(&[f64]) -> f64,
    out_norm: &dyn Fn(&[f64]) -> f64,
) -> (f64, f64) {
    let mut xin = vec![0.0; inputs[0].len()];
    let mut xout = vec![0.0; outputs[0].len()];
    let mut num = 0.0;
    let mut den = 0.0;
    for eps in signs {
        xin.iter_mut().for_each(|v| *v = 0.0);
        xout.iter_mut().for_each(|v| *v = 0.0);
        for ((e, a), b) in eps.iter().zip(inputs).zip(outputs) {
            for (x, v) in xin.iter_mut().zip(a) {
                *x += e * v;
            }
            for (x, v) in xout.iter_mut().zip(b) {
                *x += e * v;
            }
        }
        num += out_norm(&xout).powi(2);
        den += in_norm(&xin).powi(2);
    }
    (num.sqrt(), den.sqrt())
}

/// Empirical R-bound of a family from adapted-integrand space
/// `L^p(Ω × [0,T]; L^q(H))` into `L^p(Ω × [0,T]; L^q)`.
///
/// Each trial draws one random integrand per member and a shared set of
/// noise paths; the estimate is the maximum Rademacher ratio over trials,
/// prefixes and single-member configurations. It is a lower estimate of the
/// true R-bound.
pub fn rbound_estimate(
    model: &SpectralModel,
    spec: &OperatorFamilySpec,
    ensemble: &RboundEnsemble,
    trials: usize,
) -> Result<RboundEstimate> {
    let n = spec.family.len();
    if n == 0 || trials == 0 {
        return Err(Error::param("family", "need at least one member and one trial"));
    }
    if !(spec.p >= 1.0) {
        return Err(Error::param("p", "exponent must be at least 1"));
    }
    let model = model.with_q(spec.q)?;
    let grid = TimeGrid::new(ensemble.horizon, ensemble.steps)?;
    let k = model.modes();
    let m = ensemble.dims;
    let steps = grid.steps();
    let scalar = matches!(spec.family, OperatorFamily::Scalar { .. });

    let configs = (0..trials)
        .map(|t| {
            let trial_seed = seed::derive_seed(ensemble.master_seed, t as u64);
            let inputs: Vec<StepProcess> = (0..n)
                .map(|j| random_step_process(grid, k, m, seed::derive_seed(trial_seed ^ 0x5eed, j as u64)))
                .collect();
            let flat_in: Vec<Vec<f64>> = inputs.iter().map(|g| g.values().to_vec()).collect();
            if let OperatorFamily::Scalar { coeffs } = &spec.family {
                let out = flat_in.iter().zip(coeffs).map(|(x, c)| x.iter().map(|v| c * v).collect()).collect();
                return Ok((flat_in, out));
            }
            let per_path = stats::try_monte_carlo(ensemble.paths, trial_seed, |_, s| {
                let noise = sample_noise(grid, m, Scheme::Maruyama, None, s)?;
                (0..n)
                    .map(|j| {
                        let g = &inputs[j];
                        let out = match &spec.family {
                            OperatorFamily::J { rs } => apply_j(rs[j], g, &noise)?,
                            OperatorFamily::I { kernels } => apply_i(&kernels[j], g, &noise)?,
                            OperatorFamily::Custom(ops) => ops[j](g, &noise)?,
                            OperatorFamily::Scalar { .. } => unreachable!(),
                        };
                        Ok(out.data()[..steps * k].to_vec())
                    })
                    .collect::<Result<Vec<Vec<f64>>>>()
            })?;
            let outputs: Vec<Vec<f64>> = (0..n).map(|j| per_path.iter().flat_map(|p| p[j].iter().copied()).collect()).collect();
            Ok((flat_in, outputs))
        })
        .collect::<Result<Vec<_>>>()?;

    let in_layout = Layout {
        blocks: steps,
        dims: m,
        weight: grid.dt(),
        p: spec.p,
        model: model.clone(),
    };
    let out_layout = if scalar {
        in_layout.clone()
    } else {
        Layout {
            blocks: steps * ensemble.paths,
            dims: 1,
            weight: grid.dt() / ensemble.paths as f64,
            p: spec.p,
            model,
        }
    };
    let per_prefix = rbound_from_configurations(
        &configs,
        &|x| in_layout.norm(x),
        &|x| out_layout.norm(x),
        SignMode::Auto,
        ensemble.master_seed,
    );
    Ok(RboundEstimate {
        value: *per_prefix.last().expect("nonempty family"),
        per_prefix,
        exact_signs: n <= MAX_EXACT_SIGNS,
    })
}

/// `M f(t_i) = max_{j ≥ 1} (1/j) Σ_{l=i}^{i+j−1} |f_l|`, windows confined to
/// the grid (the function vanishes beyond its end).
pub fn one_sided_maximal(f: &[f64]) -> Vec<f64> {
    let n = f.len();
    let mut prefix = vec![0.0; n + 1];
    for (i, v) in f.iter().enumerate() {
        prefix[i + 1] = prefix[i] + v.abs();
    }
    (0..n)
        .map(|i| {
            (i + 1..=n)
                .map(|j| (prefix[j] - prefix[i]) / (j - i) as f64)
                .fold(0.0, f64::max)
        })
        .collect()
}

/// `(Σ_i Δt ‖f(t_i)‖_{ℓ^s}^r)^{1/r}` for `f[i][k]`; `s = ∞` allowed.
pub fn lr_ls_norm(f: &[Vec<f64>], dt: f64, r: f64, s: f64) -> f64 {
    let total: f64 = f
        .iter()
        .map(|row| {
            let inner = if s.is_infinite() {
                row.iter().fold(0.0f64, |m, v| m.max(v.abs()))
            } else {
                lq_norm(row, s)
            };
            inner.powf(r)
        })
        .sum();
    (dt * total).powf(1.0 / r)
}

/// Componentwise maximal function of a vector-valued grid function `f[i][k]`.
pub fn vector_maximal(f: &[Vec<f64>]) -> Vec<Vec<f64>> {
    if f.is_empty() {
        return Vec::new();
    }
    let k = f[0].len();
    let cols: Vec<Vec<f64>> = (0..k).map(|c| one_sided_maximal(&f.iter().map(|row| row[c]).collect::<Vec<_>>())).collect();
    (0..f.len()).map(|i| cols.iter().map(|c| c[i]).collect()).collect()
}

/// Ensemble of random vector-valued step functions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepFunctionEnsemble {
    pub members: usize,
    pub cells: usize,
    pub master_seed: u64,
}

/// Component `k` of member `j`: piecewise constant with up to eight random
/// jumps and lognormal levels, some of them zero. Components depend only on
/// `(j, k)`, so ensembles with different `K` share their leading components.
pub fn random_step_function(cells: usize, master_seed: u64, member: usize, component: usize) -> Vec<f64> {
    let mut rng = seed::stream(seed::derive_seed(master_seed, member as u64), component as u64);
    let pieces = rng.random_range(1..=8usize);
    let mut cuts: Vec<usize> = (0..pieces - 1).map(|_| rng.random_range(0..cells)).collect();
    cuts.push(cells);
    cuts.sort_unstable();
    let mut out = Vec::with_capacity(cells);
    let mut start = 0;
    for c in cuts {
        let level = if rng.random::<f64>() < 0.3 {
            0.0
        } else {
            (2.0 * rng.random::<f64>() - 1.0).exp() * if rng.random::<bool>() { 1.0 } else { -1.0 }
        };
        out.extend(std::iter::repeat_n(level, c.saturating_sub(start)));
        start = start.max(c);
    }
    out
}

/// Empirical Fefferman–Stein ratio `‖M̃f‖_{L^r(ℓ^s_K)} / ‖f‖_{L^r(ℓ^s_K)}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaximalReport {
    pub sup_ratio: f64,
    pub witness: usize,
    pub statistic: RatioStatistic,
}

pub fn fefferman_stein_check(r: f64, s: f64, k: usize, ensemble: &StepFunctionEnsemble) -> Result<MaximalReport> {
    if !(r > 1.0 && r.is_finite()) {
        return Err(Error::param("r", format!("must lie in (1, ∞), got {r}")));
    }
    if !(s > 1.0) {
        return Err(Error::param("s", format!("must lie in (1, ∞], got {s}")));
    }
    if k == 0 || ensemble.cells == 0 || ensemble.members == 0 {
        return Err(Error::param("ensemble", "dimensions must be positive"));
    }
    let dt = 1.0 / ensemble.cells as f64;
    let ratios = stats::monte_carlo(ensemble.members, ensemble.master_seed, |j, _| {
        let cols: Vec<Vec<f64>> = (0..k).map(|c| random_step_function(ensemble.cells, ensemble.master_seed, j, c)).collect();
        let f: Vec<Vec<f64>> = (0..ensemble.cells).map(|i| cols.iter().map(|c| c[i]).collect()).collect();
        let den = lr_ls_norm(&f, dt, r, s);
        let num = lr_ls_norm(&vector_maximal(&f), dt, r, s);
        (num, den)
    });
    let (witness, &(num, den)) = ratios
        .iter()
        .enumerate()
        .filter(|(_, (_, d))| *d > 0.0)
        .max_by(|a, b| (a.1 .0 / a.1 .1).total_cmp(&(b.1 .0 / b.1 .1)))
        .ok_or_else(|| Error::param("ensemble", "every member vanished"))?;
    let statistic = RatioStatistic::new(
        num,
        den,
        0.0,
        GridInfo {
            horizon: 1.0,
            steps: ensemble.cells,
            dt,
            paths: ensemble.members,
            modes: k,
        },
        Exponents {
            p: r,
            q: s,
            theta: 0.0,
            gamma: 0.0,
        },
        Evaluation::Exact,
    )?;
    Ok(MaximalReport {
        sup_ratio: num / den,
        witness,
        statistic,
    })
}

/// `T(δ)ψ(t_i) = (1/j) Σ_{l=i}^{i+j−1} ψ_l` with `δ = jΔt`.
pub fn t_delta(j: usize, psi: &[f64]) -> Vec<f64> {
    let n = psi.len();
    (0..n).map(|i| psi[i..(i + j).min(n)].iter().sum::<f64>() / j as f64).collect()
}

/// `T*(δ)φ(t_l) = (1/j) Σ_{i=(l−j+1)∨0}^{l} φ_i`, the grid transpose of `T(δ)`.
pub fn t_star_delta(j: usize, phi: &[f64]) -> Vec<f64> {
    (0..phi.len()).map(|l| phi[(l + 1).saturating_sub(j)..=l].iter().sum::<f64>() / j as f64).collect()
}

fn delta_cells(delta: f64, dt: f64) -> Result<usize> {
    let x = delta / dt;
    let j = x.round();
    if j < 1.0 || (x - j).abs() > 1e-9 * x.max(1.0) {
        return Err(Error::param("delta", format!("{delta} is not a positive multiple of Δt = {dt}")));
    }
    Ok(j as usize)
}

/// `(⟨T(δ)ψ, φ⟩, ⟨ψ, T*(δ)φ⟩)` with the grid inner product `Σ_i Δt ψ_i φ_i`.
pub fn duality_pair_check(delta: f64, dt: f64, psi: &[f64], phi: &[f64]) -> Result<(f64, f64)> {
    if psi.len() != phi.len() {
        return Err(Error::ShapeMismatch("ψ and φ differ in length".into()));
    }
    let j = delta_cells(delta, dt)?;
    let lhs = dt * t_delta(j, psi).iter().zip(phi).map(|(a, b)| a * b).sum::<f64>();
    let rhs = dt * psi.iter().zip(t_star_delta(j, phi)).map(|(a, b)| a * b).sum::<f64>();
    Ok((lhs, rhs))
}

/// Both sides of `‖Σ_n T*(δ_n)|f_n|‖_{L^{r′}(ℓ^{s′})} ≤ C ‖Σ_n |f_n|‖_{L^{r′}(ℓ^{s′})}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SumBound {
    pub lhs: f64,
    /// `‖Σ|f_n|‖` without the constant.
    pub rhs_base: f64,
    /// `‖M̃ψ‖/‖ψ‖` at the dual witness `ψ` norming the left side; the
    /// duality argument gives `lhs ≤ witness_constant · rhs_base`.
    pub witness_constant: f64,
}

/// Evaluates the dual sum bound for vector-valued nonnegative `f_n[i][k]`
/// with exponents `(r, s)` of the space on which the maximal operator acts.
pub fn lemma_sum_bound(deltas: &[f64], dt: f64, fs: &[Vec<Vec<f64>>], r: f64, s: f64) -> Result<SumBound> {
    if deltas.len() != fs.len() || fs.is_empty() {
        return Err(Error::ShapeMismatch("one δ per function is required".into()));
    }
    if !(r > 1.0 && s > 1.0 && r.is_finite() && s.is_finite()) {
        return Err(Error::param("r, s", "exponents must lie in (1, ∞)"));
    }
    let rp = r / (r - 1.0);
    let sp = s / (s - 1.0);
    let cells = fs[0].len();
    let k = fs[0].first().map(|v| v.len()).unwrap_or(0);
    let mut lhs_fn = vec![vec![0.0; k]; cells];
    let mut sum_fn = vec![vec![0.0; k]; cells];
    for (d, f) in deltas.iter().zip(fs) {
        let j = delta_cells(*d, dt)?;
        for c in 0..k {
            let col: Vec<f64> = f.iter().map(|row| row[c].abs()).collect();
            let ts = t_star_delta(j, &col);
            for i in 0..cells {
                lhs_fn[i][c] += ts[i];
                sum_fn[i][c] += col[i];
            }
        }
    }
    let lhs = lr_ls_norm(&lhs_fn, dt, rp, sp);
    let rhs_base = lr_ls_norm(&sum_fn, dt, rp, sp);
    // Norming functional of g = lhs_fn in L^{r′}(ℓ^{s′}):
    // ψ_ik = g_ik^{s′−1} ‖g_i‖_{s′}^{r′−s′}.
    let psi: Vec<Vec<f64>> = lhs_fn
        .iter()
        .map(|row| {
            let nrm = lq_norm(row, sp);
            row.iter()
                .map(|v| if nrm > 0.0 { v.powf(sp - 1.0) * nrm.powf(rp - sp) } else { 0.0 })
                .collect()
        })
        .collect();
    let pn = lr_ls_norm(&psi, dt, r, s);
    let witness_constant = if pn > 0.0 { lr_ls_norm(&vector_maximal(&psi), dt, r, s) / pn } else { 0.0 };
    Ok(SumBound {
        lhs,
        rhs_base,
        witness_constant,
    })
}

/// Both sides of `‖MG‖ ≤ R̂ ‖G‖` in the square-function norm for a diagonal
/// multiplier `M(t_i) = diag(m[i][k])`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MultiplierBound {
    pub lhs: f64,
    pub rhs: f64,
    pub rbound: f64,
}

pub fn multiplier_bound_check(
    model: &SpectralModel,
    multiplier: &[Vec<f64>],
    g: &StepProcess,
    trials: usize,
    seed: u64,
) -> Result<MultiplierBound> {
    let steps = g.grid().steps();
    if multiplier.len() != steps || multiplier.iter().any(|row| row.len() != g.modes()) || g.modes() != model.modes() {
        return Err(Error::ShapeMismatch("multiplier must have one K-vector per time cell".into()));
    }
    let mg = g.map_modes(|i, k| multiplier[i][k]);
    let lhs = crate::stochastic::square_function_norm_model(model, &mg);
    let base = crate::stochastic::square_function_norm_model(model, g);
    let rbound = diagonal_family_rbound(model, multiplier, trials, seed);
    Ok(MultiplierBound {
        lhs,
        rhs: rbound * base,
        rbound,
    })
}

/// Empirical R-bound of `{diag(m_i)}` on `L^q`, using random Gaussian
/// inputs and coordinate spikes.
pub fn diagonal_family_rbound(model: &SpectralModel, multiplier: &[Vec<f64>], trials: usize, seed: u64) -> f64 {
    let k = model.modes();
    let n = multiplier.len();
    let mut rng = seed::path_rng(seed);
    let mut configs: Vec<(Vec<Vec<f64>>, Vec<Vec<f64>>)> = Vec::with_capacity(trials + k);
    for _ in 0..trials {
        let inputs: Vec<Vec<f64>> = (0..n).map(|_| (0..k).map(|_| rng.sample(rand_distr::StandardNormal)).collect()).collect();
        let outputs = inputs.iter().zip(multiplier).map(|(x, m)| x.iter().zip(m).map(|(a, b)| a * b).collect()).collect();
        configs.push((inputs, outputs));
    }
    // Coordinate spikes realize |m_i(k)| as a single-member ratio.
    for c in 0..k {
        let inputs: Vec<Vec<f64>> = (0..n).map(|_| (0..k).map(|j| if j == c { 1.0 } else { 0.0 }).collect()).collect();
        let outputs = inputs.iter().zip(multiplier).map(|(x, m)| x.iter().zip(m).map(|(a, b)| a * b).collect()).collect();
        configs.push((inputs, outputs));
    }
    let norm = |x: &[f64]| model.norm(x);
    *rbound_from_configurations(&configs, &norm, &norm, SignMode::Auto, seed)
        .last()
        .unwrap_or(&0.0)
}
