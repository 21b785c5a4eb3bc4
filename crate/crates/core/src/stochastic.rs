//! Cylindrical Brownian increments, adapted step processes, Itô integrals
//! and stochastic convolutions against the diagonal semigroup.
//!
//! A step process `G` is constant on each cell `[t_i, t_{i+1})` and its value
//! on cell `i` is a `K × m` array (modes × noise directions). Integrals use
//! the left-endpoint (Itô) rule throughout, so the value on cell `i` only
//! ever multiplies the increment of that cell.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::seed;
use crate::spectral::{lq_norm, FieldPath, SpatialField, SpectralModel, TimeGrid};
use crate::stats::{self, Exponents, GridInfo, RatioStatistic};

/// Time-stepping scheme for stochastic convolutions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    /// Left-endpoint rule with the semigroup evaluated at cell edges.
    Maruyama,
    /// Exact one-step recursion driven by the exponentially weighted
    /// increments `ξ_k = ∫_cell e^{-λ_k(t_{i+1}-s)} dW(s)`.
    ExactExponential,
}

/// Joint law of `(ξ_1, …, ξ_K)` given the plain increment `ΔW` of one cell.
///
/// `ξ = c ΔW + L z` with `c_k = Cov(ξ_k, ΔW)/Δt` and `L Lᵀ` the conditional
/// covariance, factored once by a symmetric eigendecomposition (the matrix is
/// singular whenever eigenvalues repeat, which rules out Cholesky).
#[derive(Debug, Clone)]
pub struct ExactFactor {
    eigenvalues: Vec<f64>,
    dt: f64,
    regression: Vec<f64>,
    factor: DMatrix<f64>,
}

/// `(1 − e^{−sΔt})/s`, continuous at `s = 0`.
fn exp_integral(s: f64, dt: f64) -> f64 {
    if s == 0.0 {
        dt
    } else {
        -(-s * dt).exp_m1() / s
    }
}

impl ExactFactor {
    pub fn new(eigenvalues: &[f64], dt: f64) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::param("dt", "time step must be positive"));
        }
        let k = eigenvalues.len();
        let cross: Vec<f64> = eigenvalues.iter().map(|&l| exp_integral(l, dt)).collect();
        let regression: Vec<f64> = cross.iter().map(|c| c / dt).collect();
        let cond = DMatrix::from_fn(k, k, |a, b| {
            exp_integral(eigenvalues[a] + eigenvalues[b], dt) - cross[a] * cross[b] / dt
        });
        let eig = SymmetricEigen::new(cond);
        let top = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let floor = -1e-9 * top.max(dt * dt * dt) * k as f64;
        if let Some(bad) = eig.eigenvalues.iter().find(|v| **v < floor) {
            return Err(Error::Factorization(format!(
                "conditional covariance has eigenvalue {bad:e} below the regularization floor {floor:e}"
            )));
        }
        let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
        let factor = eig.eigenvectors * DMatrix::from_diagonal(&roots);
        Ok(Self {
            eigenvalues: eigenvalues.to_vec(),
            dt,
            regression,
            factor,
        })
    }

    pub fn modes(&self) -> usize {
        self.eigenvalues.len()
    }

    /// `Var ξ_k` implied by the factor.
    pub fn variance(&self, k: usize) -> f64 {
        let r = self.factor.row(k);
        self.regression[k] * self.regression[k] * self.dt + r.dot(&r)
    }

    /// `Cov(ξ_k, ξ_l)` implied by the factor.
    pub fn covariance(&self, k: usize, l: usize) -> f64 {
        self.regression[k] * self.regression[l] * self.dt + self.factor.row(k).dot(&self.factor.row(l))
    }

    fn sample_into<R: Rng>(&self, dw: f64, rng: &mut R, z: &mut [f64], out: &mut [f64]) {
        for v in z.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        for (k, o) in out.iter_mut().enumerate() {
            let mut acc = self.regression[k] * dw;
            for (j, zj) in z.iter().enumerate() {
                acc += self.factor[(k, j)] * zj;
            }
            *o = acc;
        }
    }
}

/// One realization of `m` independent Brownian motions on a grid, with the
/// exponentially weighted auxiliaries when an exact factor was supplied.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisePath {
    grid: TimeGrid,
    dims: usize,
    seed: u64,
    increments: Vec<f64>,
    aux: Option<Auxiliary>,
}

#[derive(Debug, Clone, PartialEq)]
struct Auxiliary {
    eigenvalues: Vec<f64>,
    /// `xi[(i * m + h) * K + k]`.
    xi: Vec<f64>,
}

impl NoisePath {
    /// A path from explicit increments `increments[i * dims + h]`.
    pub fn from_increments(grid: TimeGrid, dims: usize, increments: Vec<f64>) -> Result<Self> {
        if dims == 0 || increments.len() != grid.steps() * dims {
            return Err(Error::ShapeMismatch(format!(
                "expected {} increments for {} cells and {dims} directions",
                grid.steps() * dims,
                grid.steps()
            )));
        }
        Ok(Self {
            grid,
            dims,
            seed: 0,
            increments,
            aux: None,
        })
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn has_auxiliaries(&self) -> bool {
        self.aux.is_some()
    }

    /// `ΔW[i][·]`.
    pub fn increments_at(&self, i: usize) -> &[f64] {
        &self.increments[i * self.dims..(i + 1) * self.dims]
    }

    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    /// `ξ_·[i][h]` (all modes), when auxiliaries were sampled.
    pub fn xi_at(&self, i: usize, h: usize) -> Option<&[f64]> {
        self.aux.as_ref().map(|a| {
            let k = a.eigenvalues.len();
            &a.xi[(i * self.dims + h) * k..(i * self.dims + h + 1) * k]
        })
    }

    /// `W_h(t_0), …, W_h(t_N)`.
    pub fn brownian(&self, h: usize) -> Vec<f64> {
        let mut w = Vec::with_capacity(self.grid.steps() + 1);
        let mut acc = 0.0;
        w.push(0.0);
        for i in 0..self.grid.steps() {
            acc += self.increments[i * self.dims + h];
            w.push(acc);
        }
        w
    }
}

/// Samples a noise path. The plain increments are drawn first, so for a given
/// seed they are identical under both schemes.
pub fn sample_noise(
    grid: TimeGrid,
    dims: usize,
    scheme: Scheme,
    model: Option<&SpectralModel>,
    seed: u64,
) -> Result<NoisePath> {
    let factor = match scheme {
        Scheme::Maruyama => None,
        Scheme::ExactExponential => {
            let m = model.ok_or_else(|| Error::param("model", "the exact-exponential scheme needs the model"))?;
            Some(ExactFactor::new(m.eigenvalues(), grid.dt())?)
        }
    };
    sample_noise_with(grid, dims, factor.as_ref(), seed)
}

/// [`sample_noise`] with a precomputed exact factor, for reuse across paths.
pub fn sample_noise_with(grid: TimeGrid, dims: usize, factor: Option<&ExactFactor>, seed: u64) -> Result<NoisePath> {
    if dims == 0 {
        return Err(Error::param("dims", "at least one noise direction is required"));
    }
    if let Some(f) = factor {
        if (f.dt - grid.dt()).abs() > 1e-15 * grid.dt() {
            return Err(Error::param("dt", "exact factor was built for a different time step"));
        }
    }
    let mut rng = seed::path_rng(seed);
    let sd = grid.dt().sqrt();
    let n = grid.steps() * dims;
    let increments: Vec<f64> = (0..n).map(|_| sd * rng.sample::<f64, _>(StandardNormal)).collect();
    let aux = factor.map(|f| {
        let k = f.modes();
        let mut xi = vec![0.0; n * k];
        let mut z = vec![0.0; k];
        for (j, dw) in increments.iter().enumerate() {
            f.sample_into(*dw, &mut rng, &mut z, &mut xi[j * k..(j + 1) * k]);
        }
        Auxiliary {
            eigenvalues: f.eigenvalues.clone(),
            xi,
        }
    });
    Ok(NoisePath {
        grid,
        dims,
        seed,
        increments,
        aux,
    })
}

/// An adapted step process with values `G[i][k][h]`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepProcess {
    grid: TimeGrid,
    modes: usize,
    dims: usize,
    values: Vec<f64>,
}

impl StepProcess {
    pub fn zeros(grid: TimeGrid, modes: usize, dims: usize) -> Self {
        Self {
            grid,
            modes,
            dims,
            values: vec![0.0; grid.steps() * modes * dims],
        }
    }

    pub fn from_fn(grid: TimeGrid, modes: usize, dims: usize, f: impl Fn(usize, usize, usize) -> f64) -> Self {
        let mut g = Self::zeros(grid, modes, dims);
        for i in 0..grid.steps() {
            for k in 0..modes {
                for h in 0..dims {
                    g.values[(i * modes + k) * dims + h] = f(i, k, h);
                }
            }
        }
        g
    }

    pub fn constant(grid: TimeGrid, modes: usize, dims: usize, c: f64) -> Self {
        Self::from_fn(grid, modes, dims, |_, _, _| c)
    }

    /// `G[i][k][h] = g(i, k, W(t_i))`: adapted because only the Brownian
    /// values at the left edge of each cell are read.
    pub fn adapted(
        noise: &NoisePath,
        modes: usize,
        f: impl Fn(usize, usize, usize, &[f64]) -> f64,
    ) -> Self {
        let dims = noise.dims();
        let grid = noise.grid();
        let paths: Vec<Vec<f64>> = (0..dims).map(|h| noise.brownian(h)).collect();
        let mut w = vec![0.0; dims];
        let mut g = Self::zeros(grid, modes, dims);
        for i in 0..grid.steps() {
            for (h, p) in paths.iter().enumerate() {
                w[h] = p[i];
            }
            for k in 0..modes {
                for h in 0..dims {
                    g.values[(i * modes + k) * dims + h] = f(i, k, h, &w);
                }
            }
        }
        g
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// The `K × m` value on cell `i`, stored as `[k * m + h]`.
    pub fn at(&self, i: usize) -> &[f64] {
        let w = self.modes * self.dims;
        &self.values[i * w..(i + 1) * w]
    }

    pub fn get(&self, i: usize, k: usize, h: usize) -> f64 {
        self.values[(i * self.modes + k) * self.dims + h]
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| *v == 0.0)
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            values: self.values.iter().map(|v| c * v).collect(),
            ..self.clone()
        }
    }

    /// `a·self + b·other`.
    pub fn combine(&self, a: f64, other: &StepProcess, b: f64) -> Result<Self> {
        self.check_same_shape(other)?;
        Ok(Self {
            values: self.values.iter().zip(&other.values).map(|(x, y)| a * x + b * y).collect(),
            ..self.clone()
        })
    }

    /// Applies `f(i, k)` as a modewise multiplier on cell `i`.
    pub fn map_modes(&self, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut g = self.clone();
        for i in 0..self.grid.steps() {
            for k in 0..self.modes {
                let c = f(i, k);
                for h in 0..self.dims {
                    g.values[(i * self.modes + k) * self.dims + h] *= c;
                }
            }
        }
        g
    }

    fn check_same_shape(&self, other: &StepProcess) -> Result<()> {
        if self.grid != other.grid || self.modes != other.modes || self.dims != other.dims {
            return Err(Error::ShapeMismatch("step processes differ in shape".into()));
        }
        Ok(())
    }

    pub(crate) fn check_against(&self, model: &SpectralModel, noise: &NoisePath) -> Result<()> {
        if self.modes != model.modes() {
            return Err(Error::ShapeMismatch(format!(
                "G has {} modes, model has {}",
                self.modes,
                model.modes()
            )));
        }
        self.check_noise(noise)
    }

    pub(crate) fn check_noise(&self, noise: &NoisePath) -> Result<()> {
        if self.grid != noise.grid() || self.dims != noise.dims() {
            return Err(Error::ShapeMismatch("G and the noise live on different grids or directions".into()));
        }
        Ok(())
    }

    /// `b_i[k] = Σ_h G[i][k][h] ΔW[i][h]`, the driving term of each cell.
    pub(crate) fn driven(&self, noise: &NoisePath) -> Vec<f64> {
        let mut out = vec![0.0; self.grid.steps() * self.modes];
        for i in 0..self.grid.steps() {
            let dw = noise.increments_at(i);
            let gi = self.at(i);
            for k in 0..self.modes {
                out[i * self.modes + k] = gi[k * self.dims..(k + 1) * self.dims].iter().zip(dw).map(|(g, w)| g * w).sum();
            }
        }
        out
    }
}

/// `Σ_{i: t_{i+1} ≤ t} Σ_h G[i][·][h] ΔW[i][h]`.
pub fn ito_integral(g: &StepProcess, noise: &NoisePath, t: f64) -> Result<SpatialField> {
    g.check_noise(noise)?;
    let n = g.grid().index_of(t)?;
    let b = g.driven(noise);
    let k = g.modes();
    let mut out = vec![0.0; k];
    for i in 0..n {
        for (o, v) in out.iter_mut().zip(&b[i * k..(i + 1) * k]) {
            *o += v;
        }
    }
    Ok(SpatialField(out))
}

/// `A^γ S_θ ⋄ G` at every grid point, where `S_θ(t) = t^{−θ} S(t)/Γ(1−θ)`.
///
/// The Maruyama scheme evaluates the weight at the left edge of each cell
/// except the last one before `t_n`, where `t^{−θ}` is taken at the cell
/// midpoint `Δt/2`. The exact scheme (θ = 0 only) propagates
/// `U(t_{i+1}) = e^{−λΔt} U(t_i) + λ^γ Σ_h G[i][·][h] ξ[i][h]`.
pub fn stoch_convolution(
    model: &SpectralModel,
    g: &StepProcess,
    noise: &NoisePath,
    gamma_pow: f64,
    theta: f64,
    scheme: Scheme,
) -> Result<FieldPath> {
    g.check_against(model, noise)?;
    if !(0.0..0.5).contains(&theta) {
        return Err(Error::param("theta", format!("must lie in [0, 1/2), got {theta}")));
    }
    if gamma_pow < 0.0 && !model.is_invertible() {
        return Err(Error::param("gamma", "negative powers need an invertible model"));
    }
    let grid = g.grid();
    let n_steps = grid.steps();
    let k_count = model.modes();
    let dt = grid.dt();
    let lam = model.eigenvalues();
    let power: Vec<f64> = lam.iter().map(|l| if gamma_pow == 0.0 { 1.0 } else { l.powf(gamma_pow) }).collect();
    let decay: Vec<f64> = lam.iter().map(|l| (-l * dt).exp()).collect();
    let mut out = FieldPath::zeros(grid, k_count);

    match scheme {
        Scheme::ExactExponential => {
            if theta != 0.0 {
                return Err(Error::param("theta", "the exact-exponential scheme supports θ = 0 only"));
            }
            if !noise.has_auxiliaries() {
                return Err(Error::param("noise", "exact-exponential scheme needs auxiliary increments"));
            }
            let m = g.dims();
            let mut u = vec![0.0; k_count];
            for i in 0..n_steps {
                let gi = g.at(i);
                for k in 0..k_count {
                    u[k] *= decay[k];
                }
                for h in 0..m {
                    let xi = noise.xi_at(i, h).expect("auxiliaries present");
                    if xi.len() != k_count {
                        return Err(Error::ShapeMismatch("auxiliaries sampled for another model".into()));
                    }
                    for k in 0..k_count {
                        u[k] += power[k] * gi[k * m + h] * xi[k];
                    }
                }
                out.at_mut(i + 1).copy_from_slice(&u);
            }
        }
        Scheme::Maruyama if theta == 0.0 => {
            let b = g.driven(noise);
            let mut u = vec![0.0; k_count];
            for i in 0..n_steps {
                for k in 0..k_count {
                    u[k] = decay[k] * (u[k] + power[k] * b[i * k_count + k]);
                }
                out.at_mut(i + 1).copy_from_slice(&u);
            }
        }
        Scheme::Maruyama => {
            let b = g.driven(noise);
            let norm = 1.0 / gamma(1.0 - theta);
            let weight: Vec<f64> = (0..=n_steps)
                .map(|j| match j {
                    0 => 0.0,
                    1 => (0.5 * dt).powf(-theta) * norm,
                    _ => (j as f64 * dt).powf(-theta) * norm,
                })
                .collect();
            for k in 0..k_count {
                let kernel: Vec<f64> = (0..=n_steps).map(|j| weight[j] * decay[k].powi(j as i32)).collect();
                for n in 1..=n_steps {
                    let mut acc = 0.0;
                    for i in 0..n {
                        acc += kernel[n - i] * b[i * k_count + k];
                    }
                    out.at_mut(n)[k] = power[k] * acc;
                }
            }
        }
    }
    Ok(out)
}

/// Variance of the exact-scheme Ornstein–Uhlenbeck recursion for one mode
/// with deterministic scalar integrand `g`, propagated without sampling from
/// the covariance carried by `factor`.
pub fn exact_variance_trace(factor: &ExactFactor, k: usize, g: f64, steps: usize) -> Vec<f64> {
    let decay2 = (-2.0 * factor.eigenvalues[k] * factor.dt).exp();
    let inject = g * g * factor.variance(k);
    let mut v = Vec::with_capacity(steps + 1);
    let mut cur = 0.0;
    v.push(cur);
    for _ in 0..steps {
        cur = decay2 * cur + inject;
        v.push(cur);
    }
    v
}

/// `‖ (Σ_i Δt Σ_h G[i][k][h]²)^{1/2} ‖_{ℓ^q over k}`.
pub fn square_function_norm(g: &StepProcess, q: f64) -> f64 {
    let dt = g.grid().dt();
    let mut per_mode = vec![0.0; g.modes()];
    for i in 0..g.grid().steps() {
        for (k, acc) in per_mode.iter_mut().enumerate() {
            for h in 0..g.dims() {
                *acc += dt * g.get(i, k, h).powi(2);
            }
        }
    }
    let per_mode: Vec<f64> = per_mode.into_iter().map(f64::sqrt).collect();
    lq_norm(&per_mode, q)
}

/// `‖G‖_{L^q(𝒪; L²(0,T; H))}` measured through the model's physical space.
pub fn square_function_norm_model(model: &SpectralModel, g: &StepProcess) -> f64 {
    let (n, k, m) = (g.grid().steps(), g.modes(), g.dims());
    let sd = g.grid().dt().sqrt();
    // Treat (cell, direction) as a single ℓ² index.
    let mut flat = vec![0.0; k * n * m];
    for i in 0..n {
        for kk in 0..k {
            for h in 0..m {
                flat[kk * n * m + i * m + h] = sd * g.get(i, kk, h);
            }
        }
    }
    model.norm_with_dims(&flat, n * m, model.q())
}

/// `‖G‖_{L^p(0,T; L^q(𝒪; H))}` with the model's `q`.
pub fn step_process_norm(model: &SpectralModel, g: &StepProcess, p: f64) -> f64 {
    let dt = g.grid().dt();
    let s: f64 = (0..g.grid().steps())
        .map(|i| model.norm_with_dims(g.at(i), g.dims(), model.q()).powf(p))
        .sum();
    (dt * s).powf(1.0 / p)
}

/// Ensemble of random integrands for the Itô isomorphism probe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub members: usize,
    pub paths: usize,
    pub dims: usize,
    pub master_seed: u64,
    /// Modulate each member by a bounded function of the running Brownian
    /// motion, producing genuinely random adapted integrands.
    pub adapted: bool,
}

/// A random deterministic integrand: lognormal mode scales, Gaussian cell
/// values, and a random active time window.
pub fn random_step_process(grid: TimeGrid, modes: usize, dims: usize, seed: u64) -> StepProcess {
    let mut rng = seed::path_rng(seed);
    let scales: Vec<f64> = (0..modes).map(|_| rng.sample::<f64, _>(StandardNormal).exp()).collect();
    let n = grid.steps();
    let a = rng.random_range(0..n);
    let b = rng.random_range(a + 1..=n);
    let z: Vec<f64> = (0..n * modes * dims).map(|_| rng.sample(StandardNormal)).collect();
    StepProcess::from_fn(grid, modes, dims, |i, k, h| {
        if i >= a && i < b {
            scales[k] * z[(i * modes + k) * dims + h]
        } else {
            0.0
        }
    })
}

/// Per-member ratios `(E‖∫₀^T G dW‖_q^p)^{1/p} / (E‖G‖_{L^q(L²(H))}^p)^{1/p}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsomorphismSummary {
    pub ratios: Vec<RatioStatistic>,
    pub min: f64,
    pub max: f64,
}

pub fn ito_isomorphism_ratio(
    model: &SpectralModel,
    grid: TimeGrid,
    p: f64,
    spec: &EnsembleSpec,
) -> Result<IsomorphismSummary> {
    if !(p > 1.0 && p.is_finite()) {
        return Err(Error::param("p", format!("must lie in (1, ∞), got {p}")));
    }
    if spec.members == 0 || spec.paths == 0 {
        return Err(Error::param("ensemble", "members and paths must be positive"));
    }
    let q = model.q();
    let mut ratios = Vec::with_capacity(spec.members);
    for j in 0..spec.members {
        let base_seed = seed::derive_seed(spec.master_seed ^ 0x6974_6f2d_6973_6f21, j as u64);
        let base = random_step_process(grid, model.modes(), spec.dims, base_seed);
        if base.is_zero() {
            continue;
        }
        let member_seed = seed::derive_seed(spec.master_seed, j as u64);
        let samples = stats::try_monte_carlo(spec.paths, member_seed, |_, s| {
            let noise = sample_noise(grid, spec.dims, Scheme::Maruyama, None, s)?;
            let g = if spec.adapted {
                let gate = StepProcess::adapted(&noise, model.modes(), |_, _, _, w| 1.0 + 0.5 * w[0].tanh());
                StepProcess {
                    values: base.values.iter().zip(&gate.values).map(|(a, b)| a * b).collect(),
                    ..base.clone()
                }
            } else {
                base.clone()
            };
            let x = ito_integral(&g, &noise, grid.horizon())?;
            Ok((model.norm(&x.0).powf(p), square_function_norm_model(model, &g).powf(p)))
        })?;
        let (xs, ys): (Vec<f64>, Vec<f64>) = samples.into_iter().unzip();
        ratios.push(RatioStatistic::from_moments(
            &xs,
            &ys,
            p,
            GridInfo {
                horizon: grid.horizon(),
                steps: grid.steps(),
                dt: grid.dt(),
                paths: spec.paths,
                modes: model.modes(),
            },
            Exponents {
                p,
                q,
                theta: 0.0,
                gamma: 0.0,
            },
        )?);
    }
    if ratios.is_empty() {
        return Err(Error::param("ensemble", "every sampled integrand vanished"));
    }
    let min = ratios.iter().map(|r| r.ratio).fold(f64::INFINITY, f64::min);
    let max = ratios.iter().map(|r| r.ratio).fold(0.0, f64::max);
    Ok(IsomorphismSummary { ratios, min, max })
}

/// Exact `E‖∫₀^T G dW‖_q^p` for deterministic `G` on a diagonal model when
/// either a single mode is present or `p = q`: each coordinate is centred
/// Gaussian with variance `σ_k² = Σ_{i,h} Δt G[i][k][h]²`.
pub fn ito_moment_exact(model: &SpectralModel, g: &StepProcess, p: f64) -> Result<f64> {
    if model.transform() != crate::spectral::Transform::None {
        return Err(Error::param("model", "closed-form moments need a diagonal model"));
    }
    let q = model.q();
    if g.modes() != 1 && (p - q).abs() > 1e-12 {
        return Err(Error::param("p", "closed-form moments need K = 1 or p = q"));
    }
    let dt = g.grid().dt();
    let sig: Vec<f64> = (0..g.modes())
        .map(|k| {
            (0..g.grid().steps())
                .map(|i| (0..g.dims()).map(|h| dt * g.get(i, k, h).powi(2)).sum::<f64>())
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    Ok(stats::gaussian_abs_moment(p) * sig.iter().map(|s| s.powf(p)).sum::<f64>())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn grid(t: f64, n: usize) -> TimeGrid {
        TimeGrid::new(t, n).unwrap()
    }

    #[test]
    fn noise_is_reproducible() {
        let g = grid(1.0, 50);
        let m = SpectralModel::diagonal(vec![1.0, 3.0], 2.0).unwrap();
        let a = sample_noise(g, 2, Scheme::ExactExponential, Some(&m), 77).unwrap();
        let b = sample_noise(g, 2, Scheme::ExactExponential, Some(&m), 77).unwrap();
        assert_eq!(a, b);
        let c = sample_noise(g, 2, Scheme::Maruyama, None, 77).unwrap();
        assert_eq!(a.increments(), c.increments());
        assert!(sample_noise(g, 2, Scheme::ExactExponential, None, 1).is_err());
        assert!(sample_noise(g, 0, Scheme::Maruyama, None, 1).is_err());
    }

    #[test]
    fn increment_variance() {
        let g = grid(1.0, 10);
        let draws: Vec<f64> = (0..10_000)
            .flat_map(|s| sample_noise(g, 1, Scheme::Maruyama, None, s).unwrap().increments()[..1].to_vec())
            .collect();
        let sq: Vec<f64> = draws.iter().map(|x| x * x).collect();
        let (m, se) = stats::mean_stderr(&sq);
        assert!((m - 0.1).abs() <= 3.0 * se, "{m} ± {se}");
    }

    #[test]
    fn auxiliary_covariances() {
        let g = grid(1.0, 10);
        let m = SpectralModel::diagonal(vec![1.0, 1.0, 5.0], 2.0).unwrap();
        let f = ExactFactor::new(m.eigenvalues(), 0.1).unwrap();
        // factor reproduces the closed forms
        for k in 0..3 {
            for l in 0..3 {
                let s = m.eigenvalues()[k] + m.eigenvalues()[l];
                assert_abs_diff_eq!(f.covariance(k, l), (1.0 - (-s * 0.1).exp()) / s, epsilon = 1e-14);
            }
        }
        let prods: Vec<f64> = (0..10_000)
            .map(|s| {
                let n = sample_noise_with(g, 1, Some(&f), s).unwrap();
                n.xi_at(0, 0).unwrap()[0] * n.increments()[0]
            })
            .collect();
        let (c, se) = stats::mean_stderr(&prods);
        let want = 1.0 - (-0.1f64).exp();
        assert_abs_diff_eq!(want, 0.0951626, epsilon = 1e-7);
        assert!((c - want).abs() <= 3.0 * se, "{c} ± {se}");
    }

    #[test]
    fn ito_integral_properties() {
        let g = grid(1.0, 100);
        let one = StepProcess::constant(g, 1, 1, 1.0);
        let vals: Vec<f64> = (0..10_000)
            .map(|s| {
                let n = sample_noise(g, 1, Scheme::Maruyama, None, s).unwrap();
                ito_integral(&one, &n, 0.5).unwrap().0[0]
            })
            .collect();
        let (mean, se) = stats::mean_stderr(&vals);
        assert!(mean.abs() <= 3.0 * se);
        let sq: Vec<f64> = vals.iter().map(|v| v * v).collect();
        let (v, se) = stats::mean_stderr(&sq);
        assert!((v - 0.5).abs() <= 3.0 * se, "{v} ± {se}");

        let n = sample_noise(g, 1, Scheme::Maruyama, None, 3).unwrap();
        assert!(ito_integral(&one, &n, 0.505).is_err());
        let w = n.brownian(0);
        assert_abs_diff_eq!(ito_integral(&one, &n, 0.3).unwrap().0[0], w[30], epsilon = 1e-14);
    }

    #[test]
    fn ito_isometry_closed_form() {
        let g = grid(1.0, 40);
        let m = SpectralModel::diagonal(vec![1.0, 2.0, 3.0], 2.0).unwrap();
        let gp = StepProcess::from_fn(g, 3, 2, |i, k, h| ((i + 2 * k + 3 * h) as f64 * 0.37).sin());
        let sum_sq: f64 = gp.values().iter().map(|v| v * v * g.dt()).sum();
        assert_abs_diff_eq!(ito_moment_exact(&m, &gp, 2.0).unwrap(), sum_sq, epsilon = 1e-12);
        let xs: Vec<f64> = (0..20_000)
            .map(|s| {
                let n = sample_noise(g, 2, Scheme::Maruyama, None, s).unwrap();
                m.norm(&ito_integral(&gp, &n, 1.0).unwrap().0).powi(2)
            })
            .collect();
        let (v, se) = stats::mean_stderr(&xs);
        assert!((v - sum_sq).abs() <= 3.0 * se, "{v} ± {se} vs {sum_sq}");
    }

    #[test]
    fn zero_integrand_gives_zero() {
        let g = grid(1.0, 20);
        let m = SpectralModel::diagonal(vec![1.0, 4.0], 2.0).unwrap();
        let z = StepProcess::zeros(g, 2, 1);
        let n = sample_noise(g, 1, Scheme::ExactExponential, Some(&m), 1).unwrap();
        for scheme in [Scheme::Maruyama, Scheme::ExactExponential] {
            let u = stoch_convolution(&m, &z, &n, 0.5, 0.0, scheme).unwrap();
            assert!(u.data().iter().all(|v| *v == 0.0));
        }
        let u = stoch_convolution(&m, &z, &n, 0.5, 0.3, Scheme::Maruyama).unwrap();
        assert!(u.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn convolution_rejections() {
        let g = grid(1.0, 20);
        let m = SpectralModel::diagonal(vec![1.0], 2.0).unwrap();
        let one = StepProcess::constant(g, 1, 1, 1.0);
        let n = sample_noise(g, 1, Scheme::ExactExponential, Some(&m), 1).unwrap();
        assert!(stoch_convolution(&m, &one, &n, 0.0, 0.2, Scheme::ExactExponential).is_err());
        assert!(stoch_convolution(&m, &one, &n, 0.0, 0.5, Scheme::Maruyama).is_err());
        let plain = sample_noise(g, 1, Scheme::Maruyama, None, 1).unwrap();
        assert!(stoch_convolution(&m, &one, &plain, 0.0, 0.0, Scheme::ExactExponential).is_err());
    }

    #[test]
    fn exact_variance_propagation() {
        for &l in &[0.3, 1.0, 17.0] {
            let f = ExactFactor::new(&[l], 1e-3).unwrap();
            let v = exact_variance_trace(&f, 0, 1.0, 1000);
            for (n, vn) in v.iter().enumerate() {
                let t = n as f64 * 1e-3;
                let want = -(-2.0 * l * t).exp_m1() / (2.0 * l);
                assert!((vn - want).abs() <= 1e-12, "λ={l} n={n}: {vn} vs {want}");
            }
        }
    }

    #[test]
    fn ornstein_uhlenbeck_variance() {
        let g = grid(1.0, 1000);
        let m = SpectralModel::diagonal(vec![1.0], 2.0).unwrap();
        let one = StepProcess::constant(g, 1, 1, 1.0);
        let ends: Vec<f64> = stats::monte_carlo(10_000, 5, |_, s| {
            let n = sample_noise(g, 1, Scheme::Maruyama, None, s).unwrap();
            stoch_convolution(&m, &one, &n, 0.0, 0.0, Scheme::Maruyama).unwrap().at(1000)[0].powi(2)
        });
        let (v, se) = stats::mean_stderr(&ends);
        let want = (1.0 - (-2f64).exp()) / 2.0;
        assert_abs_diff_eq!(want, 0.4323324, epsilon = 1e-7);
        assert!((v - want).abs() <= 3.0 * se, "{v} ± {se}");
    }

    #[test]
    fn schemes_converge_to_each_other() {
        let m = SpectralModel::diagonal(vec![1.0], 2.0).unwrap();
        let mut errs = Vec::new();
        for &n in &[64usize, 128, 256, 512] {
            let g = grid(1.0, n);
            let one = StepProcess::constant(g, 1, 1, 1.0);
            let f = ExactFactor::new(m.eigenvalues(), g.dt()).unwrap();
            let sq: Vec<f64> = stats::monte_carlo(400, 11, |_, s| {
                let noise = sample_noise_with(g, 1, Some(&f), s).unwrap();
                let a = stoch_convolution(&m, &one, &noise, 0.0, 0.0, Scheme::Maruyama).unwrap();
                let b = stoch_convolution(&m, &one, &noise, 0.0, 0.0, Scheme::ExactExponential).unwrap();
                let d = a.difference(&b).unwrap();
                (0..n).map(|i| d.at(i)[0].powi(2) * g.dt()).sum::<f64>()
            });
            errs.push(stats::mean(&sq).sqrt());
        }
        for w in errs.windows(2) {
            let r = w[0] / w[1];
            // additive noise: the left-endpoint scheme is strongly first order
            assert!((1.7..2.3).contains(&r), "halving ratio {r}, errors {errs:?}");
        }
    }

    #[test]
    fn adaptedness_under_future_shuffles() {
        let g = grid(1.0, 40);
        let m = SpectralModel::diagonal(vec![0.5, 2.0], 2.0).unwrap();
        let noise = sample_noise(g, 2, Scheme::Maruyama, None, 9).unwrap();
        let gp = StepProcess::adapted(&noise, 2, |i, k, h, w| (1.0 + k as f64) * (w[h] + i as f64 * 0.01).cos());
        let base = stoch_convolution(&m, &gp, &noise, 0.5, 0.25, Scheme::Maruyama).unwrap();
        for cut in [0usize, 10, 25, 39] {
            // reverse the increments of cells after `cut`
            let mut inc = noise.increments().to_vec();
            let tail: Vec<f64> = inc[(cut + 1) * 2..].chunks(2).rev().flatten().copied().collect();
            inc[(cut + 1) * 2..].copy_from_slice(&tail);
            let shuffled = NoisePath::from_increments(g, 2, inc).unwrap();
            let gp2 = StepProcess::adapted(&shuffled, 2, |i, k, h, w| (1.0 + k as f64) * (w[h] + i as f64 * 0.01).cos());
            let u = stoch_convolution(&m, &gp2, &shuffled, 0.5, 0.25, Scheme::Maruyama).unwrap();
            assert_eq!(u.at(cut + 1), base.at(cut + 1));
        }
    }

    #[test]
    fn square_function_examples() {
        let g = grid(2.0, 20);
        let c = 1.7;
        let gp = StepProcess::constant(g, 3, 1, c);
        assert_abs_diff_eq!(square_function_norm(&gp, 4.0), c * 2f64.sqrt() * 3f64.powf(0.25), epsilon = 1e-12);
        let single = StepProcess::from_fn(grid(1.0, 10), 1, 1, |i, _, _| if i == 4 { -3.0 } else { 0.0 });
        assert_abs_diff_eq!(square_function_norm(&single, 2.0), 3.0 * 0.1f64.sqrt(), epsilon = 1e-14);
        let m = SpectralModel::diagonal(vec![1.0, 2.0, 3.0], 4.0).unwrap();
        assert_abs_diff_eq!(square_function_norm_model(&m, &gp), square_function_norm(&gp, 4.0), epsilon = 1e-12);
    }

    #[test]
    fn fourth_moment_ratio() {
        let g = grid(1.0, 10);
        let m = SpectralModel::diagonal(vec![1.0], 2.0).unwrap();
        let gp = StepProcess::constant(g, 1, 1, 0.8);
        let num = ito_moment_exact(&m, &gp, 4.0).unwrap().powf(0.25);
        let den = square_function_norm(&gp, 2.0);
        assert_abs_diff_eq!(num / den, 3f64.powf(0.25), epsilon = 1e-12);
        assert_abs_diff_eq!(num / den, 1.3160740, epsilon = 1e-7);
    }

    #[test]
    fn isomorphism_ratios_at_q2() {
        let g = grid(1.0, 20);
        let m = SpectralModel::diagonal(vec![1.0, 2.0], 2.0).unwrap();
        let spec = EnsembleSpec {
            members: 5,
            paths: 4000,
            dims: 2,
            master_seed: 3,
            adapted: false,
        };
        let s = ito_isomorphism_ratio(&m, g, 2.0, &spec).unwrap();
        for r in &s.ratios {
            assert!((r.ratio - 1.0).abs() <= 3.0 * r.stderr + 1e-12, "{r:?}");
        }
        let adapted = ito_isomorphism_ratio(&m, g, 4.0, &EnsembleSpec { adapted: true, paths: 500, ..spec }).unwrap();
        assert!(adapted.min > 0.0 && adapted.max.is_finite());
    }

    fn random_process() -> impl Strategy<Value = (usize, usize, usize, Vec<f64>)> {
        (1usize..6, 1usize..4, 1usize..3).prop_flat_map(|(n, k, m)| {
            (Just(n), Just(k), Just(m), proptest::collection::vec(-5.0f64..5.0, n * k * m))
        })
    }

    proptest! {
        #[test]
        fn minkowski_square_function_below_lp_lq((n, k, m, v) in random_process(), q in 2.0f64..8.0) {
            let g = grid(1.0, n);
            let gp = StepProcess { grid: g, modes: k, dims: m, values: v };
            let model = SpectralModel::diagonal((1..=k).map(|x| x as f64).collect(), q).unwrap();
            let sq = square_function_norm_model(&model, &gp);
            let l2lq = step_process_norm(&model, &gp, 2.0);
            prop_assert!(sq <= l2lq * (1.0 + 1e-12) + 1e-300);
        }

        #[test]
        fn ito_integral_is_linear((n, k, m, v) in random_process(), a in -3.0f64..3.0, b in -3.0f64..3.0, seed in 0u64..1000) {
            let g = grid(1.0, n);
            let g1 = StepProcess { grid: g, modes: k, dims: m, values: v.clone() };
            let g2 = StepProcess { grid: g, modes: k, dims: m, values: v.iter().map(|x| x * x - 1.0).collect() };
            let noise = sample_noise(g, m, Scheme::Maruyama, None, seed).unwrap();
            let lhs = ito_integral(&g1.combine(a, &g2, b).unwrap(), &noise, 1.0).unwrap();
            let i1 = ito_integral(&g1, &noise, 1.0).unwrap();
            let i2 = ito_integral(&g2, &noise, 1.0).unwrap();
            for kk in 0..k {
                let want = a * i1.0[kk] + b * i2.0[kk];
                prop_assert!((lhs.0[kk] - want).abs() <= 1e-12 * (1.0 + want.abs()));
            }
        }
    }
}
