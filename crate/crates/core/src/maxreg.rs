//! Maximal-regularity ratio probes: the constant of
//! `‖A^{1/2−θ} S_θ ⋄ G‖_{L^p(L^q)} ≤ C ‖G‖_{L^p(L^q(H))}`, the fractional
//! integration factorization, the maximal estimate in `D_A(½−1/p, p)`, and
//! the dyadic-ladder counterexample at `p = 2 < q`.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma, gamma_lr, gamma_ur};

use crate::error::{Error, Result};
use crate::quad;
use crate::seed;
use crate::spectral::{lq_norm, FieldPath, SpatialField, SpectralModel, TimeGrid, Transform};
use crate::stats::{self, Evaluation, Exponents, GridInfo, RatioStatistic};
use crate::stochastic::{random_step_process, sample_noise, stoch_convolution, NoisePath, Scheme, StepProcess};

/// Hypothesis named in validation errors.
pub const P_HYPOTHESIS: &str = "p ∈ (2,∞) or p = q = 2";

/// Time range of the solution norm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Horizon {
    /// `[0, T]` only.
    Finite,
    /// `[0, ∞)` with `G` extended by zero after `T`.
    HalfLine,
}

/// How the numerator expectation is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalMode {
    /// Closed form when available (diagonal model and `p = q` or `K = 1`).
    Auto,
    Exact,
    MonteCarlo,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseEnsemble {
    pub paths: usize,
    pub master_seed: u64,
    pub scheme: Scheme,
    pub mode: EvalMode,
    pub horizon: Horizon,
}

impl NoiseEnsemble {
    pub fn exact(horizon: Horizon) -> Self {
        Self {
            paths: 0,
            master_seed: 0,
            scheme: Scheme::Maruyama,
            mode: EvalMode::Exact,
            horizon,
        }
    }

    pub fn monte_carlo(paths: usize, master_seed: u64) -> Self {
        Self {
            paths,
            master_seed,
            scheme: Scheme::Maruyama,
            mode: EvalMode::MonteCarlo,
            horizon: Horizon::HalfLine,
        }
    }
}

/// Checks `p` against the theorem range; returns whether the pair lies
/// outside it (`p = 2 < q`, still evaluated).
pub fn check_exponents(p: f64, q: f64) -> Result<bool> {
    if p > 2.0 && p.is_finite() {
        return Ok(false);
    }
    if p == 2.0 {
        return Ok(q > 2.0);
    }
    Err(Error::param("p", format!("{P_HYPOTHESIS} is required, got p = {p}, q = {q}")))
}

fn check_theta(theta: f64) -> Result<()> {
    if (0.0..0.5).contains(&theta) {
        Ok(())
    } else {
        Err(Error::param("theta", format!("must lie in [0, 1/2), got {theta}")))
    }
}

fn exact_available(model: &SpectralModel, g: &StepProcess, p: f64) -> bool {
    model.transform() == Transform::None && (g.modes() == 1 || (p - model.q()).abs() < 1e-12)
}

/// `∫_a^b s^{−2θ} e^{−2λs} ds`, `0 ≤ a ≤ b`.
fn int_w2(lam: f64, theta: f64, a: f64, b: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    if theta == 0.0 {
        if lam == 0.0 {
            return b - a;
        }
        return (-2.0 * lam * a).exp() * -(-2.0 * lam * (b - a)).exp_m1() / (2.0 * lam);
    }
    let e = 1.0 - 2.0 * theta;
    if lam == 0.0 {
        return (b.powf(e) - a.powf(e)) / e;
    }
    let (xa, xb) = (2.0 * lam * a, 2.0 * lam * b);
    let scale = (2.0 * lam).powf(-e) * gamma(e);
    if xa > 1.0 {
        scale * (gamma_ur(e, xa) - gamma_ur(e, xb))
    } else {
        scale * (gamma_lr(e, xb) - if xa > 0.0 { gamma_lr(e, xa) } else { 0.0 })
    }
}

/// Exact variances of `A^γ S_θ ⋄ G` for deterministic `G` on a diagonal model.
struct ExactVariance<'a> {
    lam: &'a [f64],
    /// `λ^{2γ}/Γ(1−θ)²`, per mode.
    weight: Vec<f64>,
    /// `Σ_h G[i][k][h]²`, laid out `i·K + k`.
    g2: Vec<f64>,
    theta: f64,
    dt: f64,
    steps: usize,
    /// `σ_k²(t_n)`, filled for θ = 0.
    nodes: Vec<f64>,
}

impl<'a> ExactVariance<'a> {
    fn new(model: &'a SpectralModel, g: &StepProcess, gamma_pow: f64, theta: f64) -> Self {
        let lam = model.eigenvalues();
        let k = lam.len();
        let norm = gamma(1.0 - theta).powi(-2);
        let weight = lam.iter().map(|l| if *l == 0.0 { 0.0 } else { l.powf(2.0 * gamma_pow) * norm }).collect();
        let steps = g.grid().steps();
        let g2 = (0..steps)
            .flat_map(|i| (0..k).map(move |kk| (i, kk)))
            .map(|(i, kk)| (0..g.dims()).map(|h| g.get(i, kk, h).powi(2)).sum())
            .collect();
        let mut ev = Self {
            lam,
            weight,
            g2,
            theta,
            dt: g.grid().dt(),
            steps,
            nodes: Vec::new(),
        };
        if theta == 0.0 {
            let mut nodes = vec![0.0; (steps + 1) * k];
            for i in 0..steps {
                for kk in 0..k {
                    let l = lam[kk];
                    nodes[(i + 1) * k + kk] = (-2.0 * l * ev.dt).exp() * nodes[i * k + kk]
                        + ev.weight[kk] * ev.g2[i * k + kk] * int_w2(l, 0.0, 0.0, ev.dt);
                }
            }
            ev.nodes = nodes;
        }
        ev
    }

    /// `σ_k²(t)` for any `t ≥ 0`.
    fn variance(&self, k: usize, t: f64) -> f64 {
        let kk = self.lam.len();
        let l = self.lam[k];
        if self.theta == 0.0 {
            let n = ((t / self.dt).floor() as usize).min(self.steps);
            let tau = t - n as f64 * self.dt;
            let mut v = (-2.0 * l * tau).exp() * self.nodes[n * kk + k];
            if n < self.steps {
                v += self.weight[k] * self.g2[n * kk + k] * int_w2(l, 0.0, 0.0, tau);
            }
            return v;
        }
        let mut v = 0.0;
        for i in 0..self.steps {
            let s0 = i as f64 * self.dt;
            if s0 >= t {
                break;
            }
            let c = self.g2[i * kk + k];
            if c == 0.0 {
                continue;
            }
            let s1 = (s0 + self.dt).min(t);
            v += c * int_w2(l, self.theta, t - s1, t - s0);
        }
        self.weight[k] * v
    }

    fn moment_density(&self, t: f64, p: f64) -> f64 {
        (0..self.lam.len()).map(|k| self.variance(k, t).max(0.0).powf(p / 2.0)).sum::<f64>() * stats::gaussian_abs_moment(p)
    }

    /// `∫ E‖A^γ S_θ ⋄ G(t)‖_q^p dt` over the chosen horizon.
    fn integrated_moment(&self, p: f64, horizon: Horizon) -> Result<f64> {
        let mut total = 0.0;
        for n in 0..self.steps {
            let a = n as f64 * self.dt;
            let f = |t: f64| self.moment_density(t, p);
            // For θ > 0 each cell starts with a (t − a)^{1−2θ} onset that a
            // fixed rule resolves only to about 1e-5.
            total += if self.theta == 0.0 {
                quad::gauss_kronrod_15(&f, a, a + self.dt).0
            } else {
                quad::integrate(&f, a, a + self.dt, 0.0, 1e-11)?.value
            };
        }
        if horizon == Horizon::HalfLine {
            total += self.tail(p)?;
        }
        Ok(total)
    }

    fn tail(&self, p: f64) -> Result<f64> {
        let t_end = self.steps as f64 * self.dt;
        if self.theta == 0.0 {
            let cp = stats::gaussian_abs_moment(p);
            let kk = self.lam.len();
            return Ok((0..kk)
                .filter(|k| self.lam[*k] > 0.0)
                .map(|k| cp * self.nodes[self.steps * kk + k].powf(p / 2.0) / (p * self.lam[k]))
                .sum());
        }
        let mut scales: Vec<f64> = self.lam.iter().filter(|l| **l > 0.0).map(|l| 1.0 / l).collect();
        scales.push(t_end);
        let head = self.moment_density(t_end, p);
        let r = quad::integrate_half_line(&|u: f64| self.moment_density(t_end + u, p), &scales, 1e-12 * head.max(1e-300))?;
        Ok(r.value)
    }
}

/// `∫_T^∞ ‖A^γ S_θ(· − s) ⋄ G‖_q^p` along one path, `G` vanishing after `T`.
fn path_tail(model: &SpectralModel, b: &[f64], grid: TimeGrid, gamma_pow: f64, theta: f64, end: &[f64], p: f64) -> Result<f64> {
    let lam = model.eigenvalues();
    let kk = lam.len();
    let t_end = grid.horizon();
    let head = model.norm(end).powf(p);
    let mut scales: Vec<f64> = lam.iter().filter(|l| **l > 0.0).map(|l| 1.0 / l).collect();
    scales.push(t_end);
    if theta == 0.0 {
        let f = |u: f64| {
            let x: Vec<f64> = lam.iter().zip(end).map(|(l, v)| (-l * u).exp() * v).collect();
            model.norm(&x).powf(p)
        };
        return Ok(quad::integrate_half_line(&f, &scales, 1e-12 * head.max(1e-300))?.value);
    }
    let norm = 1.0 / gamma(1.0 - theta);
    let power: Vec<f64> = lam.iter().map(|l| if gamma_pow == 0.0 { 1.0 } else { l.powf(gamma_pow) }).collect();
    let f = |u: f64| {
        let mut x = vec![0.0; kk];
        for i in 0..grid.steps() {
            let s = t_end + u - grid.time(i);
            let w = s.powf(-theta) * norm;
            for k in 0..kk {
                x[k] += w * (-lam[k] * s).exp() * b[i * kk + k];
            }
        }
        for k in 0..kk {
            x[k] *= power[k];
        }
        model.norm(&x).powf(p)
    };
    Ok(quad::integrate_half_line(&f, &scales, 1e-12 * head.max(1e-300))?.value)
}

fn grid_info(grid: TimeGrid, paths: usize, modes: usize) -> GridInfo {
    GridInfo {
        horizon: grid.horizon(),
        steps: grid.steps(),
        dt: grid.dt(),
        paths,
        modes,
    }
}

/// Ratio for `A^γ S_θ ⋄ G` against `‖G‖`, shared by the maximal-regularity
/// and shifted-regularity probes.
fn convolution_ratio(
    model: &SpectralModel,
    g: &StepProcess,
    p: f64,
    gamma_pow: f64,
    theta: f64,
    ens: &NoiseEnsemble,
) -> Result<RatioStatistic> {
    let q = model.q();
    let outside = check_exponents(p, q)?;
    check_theta(theta)?;
    if g.modes() != model.modes() {
        return Err(Error::ShapeMismatch("integrand and model differ in mode count".into()));
    }
    if g.is_zero() {
        return Err(Error::param("G", "the integrand must be nonzero"));
    }
    let grid = g.grid();
    let den_p = crate::stochastic::step_process_norm(model, g, p).powf(p);
    let exps = Exponents {
        p,
        q,
        theta,
        gamma: gamma_pow,
    };
    let exact = match ens.mode {
        EvalMode::Exact => {
            if !exact_available(model, g, p) {
                return Err(Error::param("mode", "exact evaluation needs a diagonal model with K = 1 or p = q"));
            }
            true
        }
        EvalMode::Auto => exact_available(model, g, p),
        EvalMode::MonteCarlo => false,
    };
    if exact {
        let num_p = ExactVariance::new(model, g, gamma_pow, theta).integrated_moment(p, ens.horizon)?;
        let st = RatioStatistic::new(num_p.powf(1.0 / p), den_p.powf(1.0 / p), 0.0, grid_info(grid, 0, model.modes()), exps, Evaluation::Exact)?;
        return Ok(st.flag_outside_hypotheses(outside));
    }
    if ens.paths == 0 {
        return Err(Error::param("paths", "Monte Carlo evaluation needs at least one path"));
    }
    let xs = stats::try_monte_carlo(ens.paths, ens.master_seed, |_, s| {
        let noise = sample_noise(grid, g.dims(), ens.scheme, Some(model), s)?;
        let u = stoch_convolution(model, g, &noise, gamma_pow, theta, ens.scheme)?;
        let mut x: f64 = (0..grid.steps()).map(|n| model.norm(u.at(n)).powf(p)).sum::<f64>() * grid.dt();
        if ens.horizon == Horizon::HalfLine {
            let b = g.driven(&noise);
            x += path_tail(model, &b, grid, gamma_pow, theta, u.at(grid.steps()), p)?;
        }
        if !x.is_finite() {
            return Err(Error::Numerical(format!("path norm overflowed: {x}")));
        }
        Ok(x)
    })?;
    let ys = vec![den_p; xs.len()];
    let st = RatioStatistic::from_moments(&xs, &ys, p, grid_info(grid, ens.paths, model.modes()), exps)?;
    Ok(st.flag_outside_hypotheses(outside))
}

/// `(E‖A^{1/2−θ} S_θ ⋄ G‖_{L^p L^q}^p)^{1/p} / ‖G‖_{L^p(L^q(H))}` for a
/// deterministic step integrand.
pub fn maxreg_ratio(model: &SpectralModel, g: &StepProcess, p: f64, theta: f64, ens: &NoiseEnsemble) -> Result<RatioStatistic> {
    convolution_ratio(model, g, p, 0.5 - theta, theta, ens)
}

/// `‖A^{1/2+δ} S ⋄ G‖ / ‖A^δ G‖`, evaluated as the θ = 0 ratio for `A^δ G`.
pub fn higher_regularity_shift(model: &SpectralModel, g: &StepProcess, delta: f64, p: f64, ens: &NoiseEnsemble) -> Result<RatioStatistic> {
    if !(delta >= 0.0 && delta.is_finite()) {
        return Err(Error::param("delta", format!("must be nonnegative, got {delta}")));
    }
    if delta > 0.0 && !model.is_invertible() {
        return Err(Error::param("model", "the shifted estimate needs an invertible model"));
    }
    let lam = model.eigenvalues().to_vec();
    let shifted = if delta == 0.0 { g.clone() } else { g.map_modes(|_, k| lam[k].powf(delta)) };
    let mut st = convolution_ratio(model, &shifted, p, 0.5, 0.0, ens)?;
    st.exponents.gamma = 0.5 + delta;
    Ok(st)
}

/// One point of a refinement trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementPoint {
    /// Increasing resolution level.
    pub level: usize,
    pub label: String,
    pub steps: usize,
    pub dt: f64,
    pub paths: usize,
    pub ratio: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstantEstimate {
    pub sup_ratio: f64,
    pub witness: usize,
    pub witness_label: String,
    /// `(label, ratio)` of every member.
    pub members: Vec<(String, f64)>,
    pub refinement: Vec<RefinementPoint>,
    pub ensemble: String,
}

/// Ensemble for [`estimate_constant`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstantEnsemble {
    pub horizon: f64,
    pub steps: usize,
    pub dims: usize,
    pub random_members: usize,
    pub master_seed: u64,
    pub noise: NoiseEnsemble,
    /// Number of `Δt` halvings in the refinement trace.
    pub refinements: usize,
}

/// `G` on a grid with every cell split in two.
pub fn refine_step(g: &StepProcess) -> StepProcess {
    StepProcess::from_fn(g.grid().refined(), g.modes(), g.dims(), |i, k, h| g.get(i / 2, k, h))
}

fn structured_witnesses(grid: TimeGrid, modes: usize, dims: usize) -> Vec<(String, StepProcess)> {
    let n = grid.steps();
    let first = (n / 8).max(1);
    vec![
        ("constant".into(), StepProcess::constant(grid, modes, dims, 1.0)),
        (
            "initial-window".into(),
            StepProcess::from_fn(grid, modes, dims, |i, _, h| if i < first && h == 0 { 1.0 } else { 0.0 }),
        ),
        (
            "top-mode".into(),
            StepProcess::from_fn(grid, modes, dims, |_, k, h| if k + 1 == modes && h == 0 { 1.0 } else { 0.0 }),
        ),
        (
            "first-cell".into(),
            StepProcess::from_fn(grid, modes, dims, |i, _, h| if i == 0 && h == 0 { 1.0 } else { 0.0 }),
        ),
        (
            "alternating".into(),
            StepProcess::from_fn(grid, modes, dims, |i, k, _| if (i + k) % 2 == 0 { 1.0 } else { -1.0 }),
        ),
    ]
}

/// Sup of [`maxreg_ratio`] over random and structured integrands, with a
/// refinement trace (`Δt` halvings, then doubled paths for Monte Carlo)
/// recorded for the maximizing witness.
pub fn estimate_constant(model: &SpectralModel, p: f64, theta: f64, spec: &ConstantEnsemble) -> Result<ConstantEstimate> {
    check_exponents(p, model.q())?;
    check_theta(theta)?;
    let grid = TimeGrid::new(spec.horizon, spec.steps)?;
    let k = model.modes();
    let mut members = structured_witnesses(grid, k, spec.dims);
    for j in 0..spec.random_members {
        let g = random_step_process(grid, k, spec.dims, seed::derive_seed(spec.master_seed ^ 0x636f_6e73, j as u64));
        members.push((format!("random-{j}"), g));
    }
    let stats_list = members
        .iter()
        .map(|(_, g)| maxreg_ratio(model, g, p, theta, &spec.noise))
        .collect::<Result<Vec<_>>>()?;
    let (witness, best) = stats_list
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.ratio.total_cmp(&b.1.ratio))
        .expect("structured witnesses are always present");
    let mut refinement = vec![RefinementPoint {
        level: 0,
        label: "base".into(),
        steps: grid.steps(),
        dt: grid.dt(),
        paths: spec.noise.paths,
        ratio: best.ratio,
        stderr: best.stderr,
    }];
    let mut g = members[witness].1.clone();
    for level in 1..=spec.refinements {
        g = refine_step(&g);
        let r = maxreg_ratio(model, &g, p, theta, &spec.noise)?;
        refinement.push(RefinementPoint {
            level,
            label: format!("dt/{}", 1usize << level),
            steps: g.grid().steps(),
            dt: g.grid().dt(),
            paths: spec.noise.paths,
            ratio: r.ratio,
            stderr: r.stderr,
        });
    }
    if best.evaluation == Evaluation::MonteCarlo {
        let noise = NoiseEnsemble {
            paths: 2 * spec.noise.paths,
            ..spec.noise
        };
        let r = maxreg_ratio(model, &members[witness].1, p, theta, &noise)?;
        refinement.push(RefinementPoint {
            level: spec.refinements + 1,
            label: "paths×2".into(),
            steps: grid.steps(),
            dt: grid.dt(),
            paths: noise.paths,
            ratio: r.ratio,
            stderr: r.stderr,
        });
    }
    Ok(ConstantEstimate {
        sup_ratio: best.ratio,
        witness,
        witness_label: members[witness].0.clone(),
        members: members.iter().zip(&stats_list).map(|((l, _), s)| (l.clone(), s.ratio)).collect(),
        refinement,
        ensemble: format!(
            "{} structured + {} random, T = {}, N = {}, dims = {}",
            structured_witnesses(grid, k, spec.dims).len(),
            spec.random_members,
            spec.horizon,
            spec.steps,
            spec.dims
        ),
    })
}

/// `g_k² = a[k][j]` on `[b_j, b_{j+1})`, zero after the last break.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseWitness {
    pub breaks: Vec<f64>,
    pub squares: Vec<Vec<f64>>,
}

impl PiecewiseWitness {
    /// `g_k = √(v/ε)·1_{[0,ε]}`, `v = K^{−2/q}`, `ε = 4^{−K−1}`.
    pub fn default_for(q: f64, k: usize) -> Self {
        let eps = 4f64.powi(-(k as i32) - 1);
        let v = (k as f64).powf(-2.0 / q);
        Self {
            breaks: vec![0.0, eps],
            squares: vec![vec![v / eps]; k],
        }
    }

    fn validate(&self, k: usize) -> Result<()> {
        if self.breaks.len() < 2 || self.breaks[0] != 0.0 || self.breaks.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::param("witness", "breaks must start at 0 and increase"));
        }
        if self.squares.len() != k || self.squares.iter().any(|r| r.len() + 1 != self.breaks.len() || r.iter().any(|v| !(*v >= 0.0))) {
            return Err(Error::param("witness", "need one nonnegative square per mode and piece"));
        }
        Ok(())
    }
}

/// Dyadic ladder `λ_k = 4^k`, `k = 1..=K`.
pub fn dyadic_ladder(k: usize) -> Result<Vec<f64>> {
    if k == 0 || k > 24 {
        return Err(Error::param("K", format!("must lie in 1..=24 for the 4^k ladder, got {k}")));
    }
    let lam: Vec<f64> = (1..=k as i32).map(|j| 4f64.powi(j)).collect();
    if lam.iter().any(|l| !l.is_finite()) {
        return Err(Error::Numerical("eigenvalue ladder overflowed".into()));
    }
    Ok(lam)
}

/// `σ_k²(t) = λ_k ∫₀^t e^{−2λ_k(t−s)} g_k(s)² ds` for piecewise-constant `g²`.
struct LadderVariance {
    lam: Vec<f64>,
    breaks: Vec<f64>,
    squares: Vec<Vec<f64>>,
    /// `σ_k²(b_j)`.
    at_breaks: Vec<Vec<f64>>,
}

impl LadderVariance {
    fn new(lam: Vec<f64>, w: &PiecewiseWitness) -> Self {
        let at_breaks = lam
            .iter()
            .zip(&w.squares)
            .map(|(l, a)| {
                let mut v = vec![0.0; w.breaks.len()];
                for j in 0..a.len() {
                    let d = w.breaks[j + 1] - w.breaks[j];
                    let e = (-2.0 * l * d).exp();
                    v[j + 1] = e * v[j] - a[j] * (-2.0 * l * d).exp_m1() / 2.0;
                }
                v
            })
            .collect();
        Self {
            lam,
            breaks: w.breaks.clone(),
            squares: w.squares.clone(),
            at_breaks,
        }
    }

    fn variance(&self, k: usize, t: f64) -> f64 {
        let j = self.breaks.partition_point(|b| *b <= t) - 1;
        let l = self.lam[k];
        let tau = t - self.breaks[j];
        let mut v = (-2.0 * l * tau).exp() * self.at_breaks[k][j];
        if j < self.squares[k].len() {
            v -= self.squares[k][j] * (-2.0 * l * tau).exp_m1() / 2.0;
        }
        v
    }

    fn scales(&self) -> Vec<f64> {
        let mut s: Vec<f64> = self.lam.iter().map(|l| 1.0 / l).collect();
        s.extend(self.breaks.iter().skip(1));
        s
    }

    /// `∫₀^∞ F(t) dt` by log-time quadrature.
    fn integrate(&self, f: &dyn Fn(f64) -> f64, scale: f64) -> Result<f64> {
        Ok(quad::integrate_half_line(&|t: f64| f(t), &self.scales(), 1e-12 * scale)?.value)
    }
}

fn witness_sides_p2(lam: &[f64], w: &PiecewiseWitness, q: f64) -> Result<(f64, f64)> {
    let lv = LadderVariance::new(lam.to_vec(), w);
    let k = lam.len();
    let num = lv.integrate(
        &|t| {
            let s: Vec<f64> = (0..k).map(|kk| lv.variance(kk, t).max(0.0)).collect();
            lq_norm(&s, q / 2.0)
        },
        1.0,
    )?;
    let den: f64 = (0..w.breaks.len() - 1)
        .map(|j| {
            let col: Vec<f64> = w.squares.iter().map(|r| r[j]).collect();
            (w.breaks[j + 1] - w.breaks[j]) * lq_norm(&col, q / 2.0)
        })
        .sum();
    Ok((num, den))
}

/// Both sides of the `p = 2` reduction
/// `∫₀^∞ ‖(σ_k²(t))_k‖_{ℓ^{q/2}} dt` against `∫₀^∞ ‖(g_k²(t))_k‖_{ℓ^{q/2}} dt`
/// on the ladder `λ_k = 4^k`; returns their quotient, the squared ratio.
pub fn counterexample_probe(q: f64, k: usize, witness: Option<&PiecewiseWitness>) -> Result<f64> {
    if !(q > 2.0 && q.is_finite()) {
        return Err(Error::param("q", format!("must lie in (2, ∞), got {q}")));
    }
    let lam = dyadic_ladder(k)?;
    let w = witness.cloned().unwrap_or_else(|| PiecewiseWitness::default_for(q, k));
    w.validate(k)?;
    let (num, den) = witness_sides_p2(&lam, &w, q)?;
    if !(den > 0.0) {
        return Err(Error::param("witness", "the witness vanishes"));
    }
    Ok(num / den)
}

/// `0.1162721·K^{1−2/q}`: the disjoint windows `[1/(2λ_k), 1/λ_k]` each carry
/// `(e^{−1} − e^{−2})/2` of the numerator.
pub fn counterexample_lower_bound(q: f64, k: usize) -> f64 {
    ((-1f64).exp() - (-2f64).exp()) / 2.0 * (k as f64).powf(1.0 - 2.0 / q)
}

/// The `p = q` ratio on the same witness, using
/// `E‖U(t)‖_q^q = c_q Σ_k σ_k(t)^q` (exact for deterministic `G`).
pub fn counterexample_control(p: f64, k: usize, witness: Option<&PiecewiseWitness>) -> Result<f64> {
    check_exponents(p, p)?;
    let lam = dyadic_ladder(k)?;
    let w = witness.cloned().unwrap_or_else(|| PiecewiseWitness::default_for(p, k));
    w.validate(k)?;
    let lv = LadderVariance::new(lam, &w);
    let cp = stats::gaussian_abs_moment(p);
    let den: f64 = (0..w.breaks.len() - 1)
        .map(|j| (w.breaks[j + 1] - w.breaks[j]) * w.squares.iter().map(|r| r[j].powf(p / 2.0)).sum::<f64>())
        .sum();
    let num = lv.integrate(&|t| cp * (0..k).map(|kk| lv.variance(kk, t).max(0.0).powf(p / 2.0)).sum::<f64>(), den)?;
    Ok((num / den).powf(1.0 / p))
}

/// Coordinate ascent over the piecewise squares of a witness for the `p = 2`
/// ratio. Each sweep tries to halve or double every entry and keeps changes
/// that increase the ratio.
pub fn counterexample_search(q: f64, k: usize, start: &PiecewiseWitness, sweeps: usize) -> Result<(f64, PiecewiseWitness)> {
    let mut best = start.clone();
    let mut value = counterexample_probe(q, k, Some(&best))?;
    for _ in 0..sweeps {
        let mut improved = false;
        for kk in 0..k {
            for j in 0..best.squares[kk].len() {
                for factor in [2.0, 0.5] {
                    let mut cand = best.clone();
                    cand.squares[kk][j] *= factor;
                    if let Ok(v) = counterexample_probe(q, k, Some(&cand)) {
                        if v > value * (1.0 + 1e-9) {
                            value = v;
                            best = cand;
                            improved = true;
                        }
                    }
                }
            }
        }
        if !improved {
            break;
        }
    }
    Ok((value, best))
}

/// Breakpoints `0 < 1/(2λ_K) < … < 1/(2λ_1)` with the default witness spread
/// uniformly over them, a starting point for the search.
pub fn dyadic_witness(q: f64, k: usize) -> Result<PiecewiseWitness> {
    let lam = dyadic_ladder(k)?;
    let mut breaks = vec![0.0];
    breaks.extend(lam.iter().rev().map(|l| 0.5 / l));
    let v = (k as f64).powf(-2.0 / q);
    let squares = (0..k).map(|_| (0..k).map(|j| if j == 0 { v / breaks[1] } else { 0.0 }).collect()).collect();
    Ok(PiecewiseWitness { breaks, squares })
}

/// `2∫₀^∞ ‖Λ e^{−2Λt} v‖_{ℓ^{q/2}} dt` on the ladder `λ_k = 4^k`.
pub fn deterministic_l1_probe(q: f64, k: usize, v: &[f64]) -> Result<f64> {
    if !(q > 2.0 && q.is_finite()) {
        return Err(Error::param("q", format!("must lie in (2, ∞), got {q}")));
    }
    let lam = dyadic_ladder(k)?;
    if v.len() != k || v.iter().any(|x| !(*x >= 0.0)) {
        return Err(Error::param("v", "need K nonnegative entries"));
    }
    let nv = lq_norm(v, q / 2.0);
    if (nv - 1.0).abs() > 1e-10 {
        return Err(Error::param("v", format!("‖v‖_(q/2) must equal 1, got {nv}")));
    }
    let scales: Vec<f64> = lam.iter().map(|l| 1.0 / l).collect();
    let f = |t: f64| {
        let x: Vec<f64> = lam.iter().zip(v).map(|(l, a)| l * (-2.0 * l * t).exp() * a).collect();
        lq_norm(&x, q / 2.0)
    };
    Ok(2.0 * quad::integrate_half_line(&f, &scales, 1e-12)?.value)
}

/// `(𝒞^{−θ} f)(t_n) = (1/Γ(θ)) ∫₀^{t_n} (t_n − s)^{θ−1} S(t_n − s) f(s) ds` with
/// `f` held at its left value on each cell; the kernel is integrated exactly
/// over each cell.
pub fn fractional_integral(model: &SpectralModel, theta: f64, f: &FieldPath) -> Result<FieldPath> {
    if !(theta > 0.0 && theta < 1.0) {
        return Err(Error::param("theta", format!("must lie in (0, 1), got {theta}")));
    }
    if f.modes() != model.modes() {
        return Err(Error::ShapeMismatch("path and model differ in mode count".into()));
    }
    let grid = f.grid();
    let n = grid.steps();
    let dt = grid.dt();
    let k = model.modes();
    let weights: Vec<Vec<f64>> = model
        .eigenvalues()
        .iter()
        .map(|&l| {
            let cum = |u: f64| -> f64 {
                if u == 0.0 {
                    0.0
                } else if l == 0.0 {
                    u.powf(theta) / gamma(theta + 1.0)
                } else {
                    l.powf(-theta) * gamma_lr(theta, l * u)
                }
            };
            let upper = |a: f64, b: f64| -> f64 { l.powf(-theta) * (gamma_ur(theta, l * a) - gamma_ur(theta, l * b)) };
            (0..n)
                .map(|j| {
                    let (a, b) = (j as f64 * dt, (j + 1) as f64 * dt);
                    if l > 0.0 && l * a > 1.0 {
                        upper(a, b)
                    } else {
                        cum(b) - cum(a)
                    }
                })
                .collect()
        })
        .collect();
    let mut out = FieldPath::zeros(grid, k);
    for m in 1..=n {
        let row: Vec<f64> = (0..k)
            .map(|kk| (0..m).map(|i| weights[kk][m - 1 - i] * f.at(i)[kk]).sum())
            .collect();
        out.at_mut(m).copy_from_slice(&row);
    }
    Ok(out)
}

/// `∫_r^t (t−s)^{θ−1}(s−r)^{−θ} ds` and its value divided by `Γ(θ)Γ(1−θ)`.
pub fn beta_identity_check(theta: f64, r: f64, t: f64) -> Result<(f64, f64)> {
    if !(theta > 0.0 && theta < 1.0) {
        return Err(Error::param("theta", format!("must lie in (0, 1), got {theta}")));
    }
    if !(r >= 0.0 && t > r) {
        return Err(Error::param("r, t", "need 0 ≤ r < t"));
    }
    let raw = quad::integrate_endpoint_singular(&|da: f64, db: f64| db.powf(theta - 1.0) * da.powf(-theta), r, t, 1e-13)?.value;
    Ok((raw, raw / (gamma(theta) * gamma(1.0 - theta))))
}

/// Relative `L²(0,T; ℓ²)` distance between `𝒞^{−θ}(A^{1/2−θ} S_θ ⋄ G)` and
/// `A^{1/2−θ} S ⋄ G` on one noise path, as `(‖difference‖², ‖direct‖²)`.
pub fn factorization_parts(model: &SpectralModel, g: &StepProcess, noise: &NoisePath, theta: f64) -> Result<(f64, f64)> {
    check_theta(theta)?;
    let gp = 0.5 - theta;
    let direct = stoch_convolution(model, g, noise, gp, 0.0, Scheme::Maruyama)?;
    if theta == 0.0 {
        return Ok((0.0, direct.data().iter().map(|v| v * v).sum()));
    }
    let weighted = stoch_convolution(model, g, noise, gp, theta, Scheme::Maruyama)?;
    let lhs = fractional_integral(model, theta, &weighted)?;
    let dt = g.grid().dt();
    let n = g.grid().steps();
    let mut diff = 0.0;
    let mut base = 0.0;
    for m in 0..n {
        for (a, b) in lhs.at(m).iter().zip(direct.at(m)) {
            diff += dt * (a - b) * (a - b);
            base += dt * b * b;
        }
    }
    Ok((diff, base))
}

pub fn factorization_check(model: &SpectralModel, g: &StepProcess, noise: &NoisePath, theta: f64) -> Result<f64> {
    let (d, b) = factorization_parts(model, g, noise, theta)?;
    Ok(if b > 0.0 { (d / b).sqrt() } else { 0.0 })
}

/// Pooled relative error over `paths` noise samples.
pub fn factorization_error(model: &SpectralModel, g: &StepProcess, theta: f64, paths: usize, master_seed: u64) -> Result<f64> {
    let parts = stats::try_monte_carlo(paths, master_seed, |_, s| {
        let noise = sample_noise(g.grid(), g.dims(), Scheme::Maruyama, None, s)?;
        factorization_parts(model, g, &noise, theta)
    })?;
    let (d, b) = parts.iter().fold((0.0, 0.0), |acc, x| (acc.0 + x.0, acc.1 + x.1));
    Ok((d / b).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaximalEstimate {
    pub statistic: RatioStatistic,
    /// `(E interp_norm(U(T))^p)^{1/p}`.
    pub endpoint_numerator: f64,
}

/// `(E max_n ‖U(t_n)‖_{D_A(½−1/p,p)}^p)^{1/p} / ‖G‖_{L^p(L^q(H))}` for
/// `U = S ⋄ G`.
pub fn maximal_estimate_probe(model: &SpectralModel, g: &StepProcess, p: f64, paths: usize, master_seed: u64) -> Result<MaximalEstimate> {
    if !model.is_invertible() {
        return Err(Error::param("model", "the maximal estimate needs 0 in the resolvent set of A"));
    }
    if !(p > 2.0 && p.is_finite()) {
        return Err(Error::param("p", format!("must lie in (2, ∞), got {p}")));
    }
    if paths == 0 {
        return Err(Error::param("paths", "at least one path is required"));
    }
    let grid = g.grid();
    let s = 0.5 - 1.0 / p;
    let den = crate::stochastic::step_process_norm(model, g, p);
    let samples = stats::try_monte_carlo(paths, master_seed, |_, sd| {
        let noise = sample_noise(grid, g.dims(), Scheme::Maruyama, None, sd)?;
        let u = stoch_convolution(model, g, &noise, 0.0, 0.0, Scheme::Maruyama)?;
        let mut best = 0.0f64;
        let mut end = 0.0;
        for n in 0..=grid.steps() {
            let v = model.interp_norm(s, p, &SpatialField(u.at(n).to_vec()))?;
            best = best.max(v);
            if n == grid.steps() {
                end = v;
            }
        }
        Ok((best.powf(p), end.powf(p)))
    })?;
    let xs: Vec<f64> = samples.iter().map(|v| v.0).collect();
    let ends: Vec<f64> = samples.iter().map(|v| v.1).collect();
    let exps = Exponents {
        p,
        q: model.q(),
        theta: s,
        gamma: 0.0,
    };
    let statistic = if den > 0.0 {
        RatioStatistic::from_moments(&xs, &vec![den.powf(p); xs.len()], p, grid_info(grid, paths, model.modes()), exps)?
    } else {
        return Err(Error::param("G", "the integrand must be nonzero"));
    };
    Ok(MaximalEstimate {
        statistic,
        endpoint_numerator: stats::mean(&ends).powf(1.0 / p),
    })
}
