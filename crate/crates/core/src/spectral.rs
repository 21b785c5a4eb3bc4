//! Diagonal realizations of the operator `A`, its semigroup and fractional
//! powers, and the deterministic norms evaluated on fields.
//!
//! Every model is diagonal in an orthonormal basis `e_1, …, e_K` with
//! `A e_k = λ_k e_k`. Fields are stored as mode coefficients. When a physical
//! transform is attached (Fourier torus or Dirichlet sine grid), `L^q`
//! norms are taken of the synthesized grid values with the cell volume as
//! weight; for `q = 2` the synthesis is an isometry.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad;

/// Physical realization attached to a spectral model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Transform {
    /// `ℓ^q` over the mode index with counting measure.
    None,
    /// `-½Δ + shift` on the torus `[0, 2π)^dim` sampled at `points^dim` nodes.
    FourierTorus { dim: usize, points: usize, shift: f64 },
    /// `-½ d²/dx²` on `(0, π)` with Dirichlet conditions, `points` interior nodes.
    DirichletSine { points: usize },
}

#[derive(Debug, Clone)]
struct PhysicalBasis {
    points: usize,
    volume: f64,
    /// `values[j * K + k]` is `e_k` at node `j`.
    values: Vec<f64>,
    gradient: Option<GradientBasis>,
}

#[derive(Debug, Clone)]
struct GradientBasis {
    dim: usize,
    points: usize,
    volume: f64,
    /// `values[(j * K + k) * dim + a]` is `∂_a e_k` at fine node `j`.
    values: Vec<f64>,
}

/// The operator `A = diag(λ_1, …, λ_K)` acting on `L^q`.
#[derive(Debug, Clone)]
pub struct SpectralModel {
    eigenvalues: Vec<f64>,
    q: f64,
    transform: Transform,
    invertible: bool,
    basis: Option<PhysicalBasis>,
}

/// Uniform time grid `t_i = iT/N` on `[0, T]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::param("horizon", format!("must be positive, got {horizon}")));
        }
        if steps == 0 {
            return Err(Error::param("steps", "at least one time cell is required"));
        }
        Ok(Self { horizon, steps })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn time(&self, i: usize) -> f64 {
        if i == self.steps {
            self.horizon
        } else {
            i as f64 * self.dt()
        }
    }

    /// Index of the grid point at `t`, or an error if `t` is off-grid.
    pub fn index_of(&self, t: f64) -> Result<usize> {
        let x = t / self.dt();
        let i = x.round();
        if t < 0.0 || i > self.steps as f64 || (x - i).abs() > 1e-9 * x.abs().max(1.0) {
            return Err(Error::param("t", format!("{t} is not a grid point of {self:?}")));
        }
        Ok(i as usize)
    }

    /// The same interval with every cell split in two.
    pub fn refined(&self) -> Self {
        Self {
            horizon: self.horizon,
            steps: 2 * self.steps,
        }
    }
}

/// Mode coefficients of one element of `L^q`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialField(pub Vec<f64>);

impl SpatialField {
    pub fn zeros(modes: usize) -> Self {
        Self(vec![0.0; modes])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.0
    }
}

/// A field sampled at the grid points `t_0, …, t_N`.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldPath {
    grid: TimeGrid,
    modes: usize,
    data: Vec<f64>,
}

impl FieldPath {
    pub fn zeros(grid: TimeGrid, modes: usize) -> Self {
        Self {
            grid,
            modes,
            data: vec![0.0; (grid.steps() + 1) * modes],
        }
    }

    pub fn from_fn(grid: TimeGrid, modes: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut path = Self::zeros(grid, modes);
        for n in 0..=grid.steps() {
            for k in 0..modes {
                path.data[n * modes + k] = f(n, k);
            }
        }
        path
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    /// Coefficients at grid point `n`.
    pub fn at(&self, n: usize) -> &[f64] {
        &self.data[n * self.modes..(n + 1) * self.modes]
    }

    pub fn at_mut(&mut self, n: usize) -> &mut [f64] {
        &mut self.data[n * self.modes..(n + 1) * self.modes]
    }

    pub fn field(&self, n: usize) -> SpatialField {
        SpatialField(self.at(n).to_vec())
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Pointwise `self - other`.
    pub fn difference(&self, other: &FieldPath) -> Result<FieldPath> {
        if self.grid != other.grid || self.modes != other.modes {
            return Err(Error::ShapeMismatch("field paths on different grids".into()));
        }
        Ok(FieldPath {
            grid: self.grid,
            modes: self.modes,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        })
    }
}

/// Time exponent of a mixed norm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TimeExponent {
    Lp(f64),
    Sup,
}

/// Exponents of `L^p(0,T; L^q)`, with an optional separate moment exponent
/// for expectations (defaults to `p`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixedNormSpec {
    pub time: TimeExponent,
    pub space: f64,
    pub expectation: Option<f64>,
}

impl MixedNormSpec {
    pub fn new(p: f64, q: f64) -> Self {
        Self {
            time: TimeExponent::Lp(p),
            space: q,
            expectation: None,
        }
    }

    pub fn sup(q: f64) -> Self {
        Self {
            time: TimeExponent::Sup,
            space: q,
            expectation: None,
        }
    }

    pub fn expectation_exponent(&self) -> f64 {
        match (self.expectation, self.time) {
            (Some(e), _) => e,
            (None, TimeExponent::Lp(p)) => p,
            (None, TimeExponent::Sup) => self.space,
        }
    }
}

/// `(Σ_k |x_k|^q)^{1/q}`.
pub fn lq_norm(x: &[f64], q: f64) -> f64 {
    if q == 2.0 {
        return x.iter().map(|v| v * v).sum::<f64>().sqrt();
    }
    let m = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if m == 0.0 {
        return 0.0;
    }
    m * x.iter().map(|v| (v.abs() / m).powf(q)).sum::<f64>().powf(1.0 / q)
}

/// Validates an eigenvalue ladder and space exponent and builds the model.
pub fn make_model(eigenvalues: &[f64], q: f64, transform: Transform) -> Result<SpectralModel> {
    let model = match transform {
        Transform::None => SpectralModel::diagonal(eigenvalues.to_vec(), q)?,
        Transform::FourierTorus { dim, points, shift } => SpectralModel::fourier_torus(dim, points, shift, q)?,
        Transform::DirichletSine { points } => SpectralModel::dirichlet_sine(points, q)?,
    };
    if !matches!(transform, Transform::None) && !eigenvalues.is_empty() {
        let same = eigenvalues.len() == model.eigenvalues.len()
            && eigenvalues
                .iter()
                .zip(&model.eigenvalues)
                .all(|(a, b)| (a - b).abs() <= 1e-12 * b.abs().max(1.0));
        if !same {
            return Err(Error::param(
                "eigenvalues",
                "supplied eigenvalues do not match the transform's spectrum",
            ));
        }
    }
    Ok(model)
}

fn check_q(q: f64) -> Result<()> {
    if !(q >= 2.0 && q.is_finite()) {
        return Err(Error::param("q", format!("space exponent must lie in [2, ∞), got {q}")));
    }
    Ok(())
}

impl SpectralModel {
    /// Diagonal model on `ℓ^q`; eigenvalues must be positive and nondecreasing.
    pub fn diagonal(eigenvalues: Vec<f64>, q: f64) -> Result<Self> {
        check_q(q)?;
        if eigenvalues.is_empty() {
            return Err(Error::param("eigenvalues", "at least one mode is required"));
        }
        if let Some(bad) = eigenvalues.iter().find(|l| !(l.is_finite() && **l > 0.0)) {
            return Err(Error::param("eigenvalues", format!("must be finite and positive, found {bad}")));
        }
        if eigenvalues.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::param("eigenvalues", "must be nondecreasing"));
        }
        Ok(Self {
            eigenvalues,
            q,
            transform: Transform::None,
            invertible: true,
            basis: None,
        })
    }

    /// The ladder `λ_k = base^k`, `k = 1..=count`.
    pub fn geometric_ladder(base: f64, count: usize, q: f64) -> Result<Self> {
        if !(base > 1.0) {
            return Err(Error::param("base", "ladder base must exceed 1"));
        }
        let eig: Vec<f64> = (1..=count).map(|k| base.powi(k as i32)).collect();
        if eig.iter().any(|l| !l.is_finite()) {
            return Err(Error::param("count", "ladder overflows double precision"));
        }
        Self::diagonal(eig, q)
    }

    /// `-½Δ + shift` on the `dim`-torus with `points` nodes per axis.
    ///
    /// Uses the real cosine/sine basis of the retained frequencies
    /// `m ∈ {-⌊n/2⌋, …, ⌈n/2⌉-1}^dim`; the eigenvalue of frequency `m` is
    /// `|m|²/2 + shift`. A zero shift leaves the constant mode in the kernel
    /// and the model is flagged non-invertible.
    pub fn fourier_torus(dim: usize, points: usize, shift: f64, q: f64) -> Result<Self> {
        check_q(q)?;
        if dim == 0 || dim > 3 {
            return Err(Error::param("dim", "torus dimension must be 1, 2 or 3"));
        }
        if points < 2 {
            return Err(Error::param("points", "need at least two nodes per axis"));
        }
        if !(shift >= 0.0 && shift.is_finite()) {
            return Err(Error::param("shift", "must be finite and nonnegative"));
        }
        let n = points as i64;
        let lo = -(n / 2);
        let hi = (n + 1) / 2 - 1;
        let wrap = |c: i64| if c > hi { c - n } else if c < lo { c + n } else { c };
        let total = points.pow(dim as u32);
        let freq = |idx: usize| -> Vec<i64> {
            let mut r = idx;
            (0..dim)
                .map(|_| {
                    let c = (r % points) as i64 + lo;
                    r /= points;
                    c
                })
                .collect()
        };

        // (frequency, is_sine, self_conjugate)
        let mut modes: Vec<(Vec<i64>, bool, bool)> = Vec::with_capacity(total);
        for idx in 0..total {
            let m = freq(idx);
            let conj: Vec<i64> = m.iter().map(|&c| wrap(-c)).collect();
            if conj == m {
                modes.push((m, false, true));
            } else if m > conj {
                modes.push((m.clone(), false, false));
                modes.push((m, true, false));
            }
        }
        let norm2 = |m: &[i64]| m.iter().map(|&c| (c * c) as f64).sum::<f64>();
        let mut order: Vec<usize> = (0..modes.len()).collect();
        order.sort_by(|&a, &b| norm2(&modes[a].0).total_cmp(&norm2(&modes[b].0)));
        let modes: Vec<_> = order.into_iter().map(|i| modes[i].clone()).collect();
        let eigenvalues: Vec<f64> = modes.iter().map(|(m, _, _)| 0.5 * norm2(m) + shift).collect();

        let k_count = modes.len();
        let amp = (2.0 * PI).powf(-(dim as f64) / 2.0);
        let node = |idx: usize, per_axis: usize| -> Vec<f64> {
            let mut r = idx;
            (0..dim)
                .map(|_| {
                    let j = r % per_axis;
                    r /= per_axis;
                    2.0 * PI * j as f64 / per_axis as f64
                })
                .collect()
        };
        let basis_value = |mode: &(Vec<i64>, bool, bool), x: &[f64]| -> f64 {
            let phase: f64 = mode.0.iter().zip(x).map(|(&c, &xi)| c as f64 * xi).sum();
            let scale = if mode.2 { amp } else { amp * 2f64.sqrt() };
            if mode.1 {
                scale * phase.sin()
            } else {
                scale * phase.cos()
            }
        };
        let mut values = vec![0.0; total * k_count];
        for j in 0..total {
            let x = node(j, points);
            for (k, mode) in modes.iter().enumerate() {
                values[j * k_count + k] = basis_value(mode, &x);
            }
        }

        // Gradients are sampled on a grid twice as fine so that every
        // retained frequency, Nyquist included, is resolved.
        let fine = 2 * points;
        let fine_total = fine.pow(dim as u32);
        let mut grad = vec![0.0; fine_total * k_count * dim];
        for j in 0..fine_total {
            let x = node(j, fine);
            for (k, mode) in modes.iter().enumerate() {
                let phase: f64 = mode.0.iter().zip(&x).map(|(&c, &xi)| c as f64 * xi).sum();
                // A self-conjugate mode other than the constant contains a
                // Nyquist component; its grid samples are ±amp, and the
                // continuum cosine with the same L² norm carries √2·amp.
                let scale = if mode.2 && mode.0.iter().all(|&c| c == 0) { amp } else { amp * 2f64.sqrt() };
                let d = if mode.1 { scale * phase.cos() } else { -scale * phase.sin() };
                for a in 0..dim {
                    grad[(j * k_count + k) * dim + a] = d * mode.0[a] as f64;
                }
            }
        }
        let h = 2.0 * PI / points as f64;
        let hf = 2.0 * PI / fine as f64;
        Ok(Self {
            invertible: eigenvalues[0] > 0.0,
            eigenvalues,
            q,
            transform: Transform::FourierTorus { dim, points, shift },
            basis: Some(PhysicalBasis {
                points: total,
                volume: h.powi(dim as i32),
                values,
                gradient: Some(GradientBasis {
                    dim,
                    points: fine_total,
                    volume: hf.powi(dim as i32),
                    values: grad,
                }),
            }),
        })
    }

    /// `-½ d²/dx²` on `(0, π)` with Dirichlet conditions: `λ_k = k²/2`,
    /// `e_k = √(2/π) sin(kx)` sampled at `x_j = jπ/(n+1)`.
    pub fn dirichlet_sine(points: usize, q: f64) -> Result<Self> {
        check_q(q)?;
        if points == 0 {
            return Err(Error::param("points", "need at least one interior node"));
        }
        let h = PI / (points + 1) as f64;
        let amp = (2.0 / PI).sqrt();
        let mut values = vec![0.0; points * points];
        for j in 0..points {
            let x = (j + 1) as f64 * h;
            for k in 0..points {
                values[j * points + k] = amp * ((k + 1) as f64 * x).sin();
            }
        }
        Ok(Self {
            eigenvalues: (1..=points).map(|k| 0.5 * (k * k) as f64).collect(),
            q,
            transform: Transform::DirichletSine { points },
            invertible: true,
            basis: Some(PhysicalBasis {
                points,
                volume: h,
                values,
                gradient: None,
            }),
        })
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn modes(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn transform(&self) -> Transform {
        self.transform
    }

    pub fn is_invertible(&self) -> bool {
        self.invertible
    }

    /// The same operator measured in a different `L^q`.
    pub fn with_q(&self, q: f64) -> Result<Self> {
        check_q(q)?;
        Ok(Self { q, ..self.clone() })
    }

    fn check_len(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.modes() {
            return Err(Error::ShapeMismatch(format!(
                "field has {} coefficients, model has {} modes",
                x.len(),
                self.modes()
            )));
        }
        Ok(())
    }

    /// Physical grid values of `x`, or `None` for models without a transform.
    pub fn synthesize(&self, x: &[f64]) -> Option<Vec<f64>> {
        let basis = self.basis.as_ref()?;
        let k = self.modes();
        Some(
            (0..basis.points)
                .map(|j| basis.values[j * k..(j + 1) * k].iter().zip(x).map(|(b, c)| b * c).sum())
                .collect(),
        )
    }

    /// `‖x‖_q` in the model's space.
    pub fn norm(&self, x: &[f64]) -> f64 {
        self.norm_in(x, self.q)
    }

    /// `‖x‖_r` for an arbitrary exponent `r`, using the model's measure.
    pub fn norm_in(&self, x: &[f64], r: f64) -> f64 {
        match (&self.basis, self.synthesize(x)) {
            (Some(b), Some(u)) => lq_norm(&u, r) * b.volume.powf(1.0 / r),
            _ => lq_norm(x, r),
        }
    }

    /// `‖ (Σ_d |g_d|²)^{1/2} ‖_r` for a field with values in `ℓ²_dims`,
    /// stored mode-major as `g[k * dims + d]`.
    pub fn norm_with_dims(&self, g: &[f64], dims: usize, r: f64) -> f64 {
        let k_count = self.modes();
        debug_assert_eq!(g.len(), k_count * dims);
        match &self.basis {
            None => {
                let per_mode: Vec<f64> = g.chunks(dims).map(|row| lq_norm(row, 2.0)).collect();
                lq_norm(&per_mode, r)
            }
            Some(b) => {
                let mut point = vec![0.0; dims];
                let per_point: Vec<f64> = (0..b.points)
                    .map(|j| {
                        point.iter_mut().for_each(|v| *v = 0.0);
                        let row = &b.values[j * k_count..(j + 1) * k_count];
                        for (bk, gk) in row.iter().zip(g.chunks(dims)) {
                            for (p, v) in point.iter_mut().zip(gk) {
                                *p += bk * v;
                            }
                        }
                        lq_norm(&point, 2.0)
                    })
                    .collect();
                lq_norm(&per_point, r) * b.volume.powf(1.0 / r)
            }
        }
    }

    /// `S(t)x`, coefficients `e^{-λ_k t} x_k`.
    pub fn apply_semigroup(&self, t: f64, x: &SpatialField) -> Result<SpatialField> {
        self.check_len(&x.0)?;
        if !(t >= 0.0) {
            return Err(Error::param("t", format!("semigroup time must be nonnegative, got {t}")));
        }
        Ok(SpatialField(
            self.eigenvalues.iter().zip(&x.0).map(|(l, c)| (-l * t).exp() * c).collect(),
        ))
    }

    /// `A^γ x`, coefficients `λ_k^γ x_k`.
    pub fn apply_fractional_power(&self, gamma: f64, x: &SpatialField) -> Result<SpatialField> {
        self.check_len(&x.0)?;
        if gamma < 0.0 && !self.invertible {
            return Err(Error::param("gamma", "negative powers need an invertible model"));
        }
        Ok(SpatialField(
            self.eigenvalues
                .iter()
                .zip(&x.0)
                .map(|(l, c)| if gamma == 0.0 { *c } else { l.powf(gamma) * c })
                .collect(),
        ))
    }

    /// `‖x‖_q + (∫₀^∞ (t^{1-θ}‖A S(t)x‖_q)^p dt/t)^{1/p}`, the semigroup
    /// characterization of the real interpolation norm of `(L^q, D(A))_{θ,p}`.
    pub fn interp_norm(&self, theta: f64, p: f64, x: &SpatialField) -> Result<f64> {
        self.check_len(&x.0)?;
        if !(theta > 0.0 && theta < 1.0) {
            return Err(Error::param("theta", format!("must lie in (0, 1), got {theta}")));
        }
        if !(p > 1.0 && p.is_finite()) {
            return Err(Error::param("p", format!("must lie in (1, ∞), got {p}")));
        }
        let base = self.norm(&x.0);
        if base == 0.0 {
            return Ok(0.0);
        }
        // Largest single-mode contribution sets the absolute tolerance scale.
        let scale = self
            .eigenvalues
            .iter()
            .zip(&x.0)
            .filter(|(l, _)| **l > 0.0)
            .map(|(l, c)| c.abs().powf(p) * l.powf(p * theta) * p.powf(-p * (1.0 - theta)))
            .fold(0.0f64, f64::max)
            * statrs::function::gamma::gamma(p * (1.0 - theta));
        let scales: Vec<f64> = self.eigenvalues.iter().filter(|l| **l > 0.0).map(|l| 1.0 / l).collect();
        let integrand = |t: f64| {
            let b: Vec<f64> = self.eigenvalues.iter().zip(&x.0).map(|(l, c)| l * (-l * t).exp() * c).collect();
            (t.powf(1.0 - theta) * self.norm(&b)).powf(p)
        };
        let seminorm = quad::integrate_dt_over_t(&integrand, &scales, quad::DEFAULT_ABS_TOL * scale.max(1e-300))?;
        Ok(base + seminorm.value.max(0.0).powf(1.0 / p))
    }

    /// `‖∇x‖_q` of the physical field, computed from the exact derivatives of
    /// the trigonometric basis on a twice-refined grid.
    pub fn gradient_norm(&self, x: &SpatialField) -> Result<f64> {
        self.check_len(&x.0)?;
        let grad = self
            .basis
            .as_ref()
            .and_then(|b| b.gradient.as_ref())
            .ok_or_else(|| Error::param("model", "gradient norm needs a Fourier-torus model"))?;
        let k = self.modes();
        let mut acc = Vec::with_capacity(grad.points);
        let mut g = vec![0.0; grad.dim];
        for j in 0..grad.points {
            g.iter_mut().for_each(|v| *v = 0.0);
            for (kk, c) in x.0.iter().enumerate() {
                let row = &grad.values[(j * k + kk) * grad.dim..(j * k + kk + 1) * grad.dim];
                for (ga, r) in g.iter_mut().zip(row) {
                    *ga += c * r;
                }
            }
            acc.push(lq_norm(&g, 2.0));
        }
        Ok(lq_norm(&acc, self.q) * grad.volume.powf(1.0 / self.q))
    }

    /// `‖path‖_{L^p(0,T; L^q)}` with left-endpoint values on each cell, or
    /// the maximum over all grid points for the sup exponent.
    pub fn mixed_norm(&self, path: &FieldPath, spec: &MixedNormSpec) -> Result<f64> {
        if path.modes() != self.modes() {
            return Err(Error::ShapeMismatch("path and model differ in mode count".into()));
        }
        if (spec.space - self.q).abs() > 1e-12 {
            return Err(Error::param(
                "space exponent",
                format!("norm spec uses q = {}, model has q = {}", spec.space, self.q),
            ));
        }
        mixed_norm_with(path, spec.time, |x| self.norm(x))
    }
}

/// `mixed_norm` with an arbitrary spatial norm.
pub fn mixed_norm_with(path: &FieldPath, time: TimeExponent, space: impl Fn(&[f64]) -> f64) -> Result<f64> {
    let grid = path.grid();
    match time {
        TimeExponent::Sup => Ok((0..=grid.steps()).map(|n| space(path.at(n))).fold(0.0, f64::max)),
        TimeExponent::Lp(p) => {
            if !(p >= 1.0 && p.is_finite()) {
                return Err(Error::param("p", format!("time exponent must lie in [1, ∞), got {p}")));
            }
            let s: f64 = (0..grid.steps()).map(|n| space(path.at(n)).powf(p)).sum();
            Ok((grid.dt() * s).powf(1.0 / p))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn model_validation() {
        let m = make_model(&[1.0], 2.0, Transform::None).unwrap();
        assert!(m.is_invertible());
        assert_eq!(m.modes(), 1);
        assert!(make_model(&[1.0, 0.5], 2.0, Transform::None).is_err());
        assert!(make_model(&[0.0, 1.0], 2.0, Transform::None).is_err());
        assert!(make_model(&[-1.0], 2.0, Transform::None).is_err());
        assert!(make_model(&[1.0], 1.5, Transform::None).is_err());
        let ladder: Vec<f64> = (1..=8).map(|k| 4f64.powi(k)).collect();
        let m = make_model(&ladder, 4.0, Transform::None).unwrap();
        assert_eq!(m.eigenvalues()[7], 65536.0);
    }

    #[test]
    fn torus_spectrum() {
        let m = SpectralModel::fourier_torus(1, 16, 1.0, 2.0).unwrap();
        assert_eq!(m.modes(), 16);
        let mut expected: Vec<f64> = (-8i32..8).map(|k| 0.5 * (k * k) as f64 + 1.0).collect();
        expected.sort_by(f64::total_cmp);
        for (a, b) in m.eigenvalues().iter().zip(&expected) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-14);
        }
        let set: std::collections::BTreeSet<u64> = m.eigenvalues().iter().map(|l| l.to_bits()).collect();
        let want: std::collections::BTreeSet<u64> =
            (-8i32..=8).map(|k| (0.5 * (k * k) as f64 + 1.0).to_bits()).collect();
        assert_eq!(set, want);
        assert!(m.is_invertible());
        assert!(!SpectralModel::fourier_torus(1, 16, 0.0, 2.0).unwrap().is_invertible());
        // supplied eigenvalues must agree with the transform
        assert!(make_model(&expected, 2.0, Transform::FourierTorus { dim: 1, points: 16, shift: 1.0 }).is_ok());
        assert!(make_model(&[1.0], 2.0, Transform::FourierTorus { dim: 1, points: 16, shift: 1.0 }).is_err());
    }

    #[test]
    fn dirichlet_spectrum() {
        let m = SpectralModel::dirichlet_sine(5, 2.0).unwrap();
        assert_eq!(m.eigenvalues(), &[0.5, 2.0, 4.5, 8.0, 12.5]);
    }

    #[test]
    fn semigroup_examples() {
        let m = SpectralModel::diagonal(vec![1.0], 2.0).unwrap();
        let x = SpatialField(vec![1.0]);
        assert_eq!(m.apply_semigroup(0.0, &x).unwrap(), x);
        assert_abs_diff_eq!(m.apply_semigroup(2f64.ln(), &x).unwrap().0[0], 0.5, epsilon = 1e-15);
        assert!(m.apply_semigroup(-1.0, &x).is_err());
        assert!(m.apply_semigroup(1.0, &SpatialField(vec![1.0, 2.0])).is_err());
    }

    #[test]
    fn fractional_power_examples() {
        let m = SpectralModel::diagonal(vec![4.0], 2.0).unwrap();
        let x = SpatialField(vec![3.0]);
        assert_eq!(m.apply_fractional_power(0.0, &x).unwrap(), x);
        assert_abs_diff_eq!(m.apply_fractional_power(0.5, &x).unwrap().0[0], 6.0, epsilon = 1e-14);
    }

    #[test]
    fn mixed_norm_examples() {
        let grid = TimeGrid::new(2.0, 20).unwrap();
        let m = SpectralModel::diagonal(vec![1.0, 2.0, 3.0], 4.0).unwrap();
        let c = 1.5;
        let path = FieldPath::from_fn(grid, 3, |_, _| c);
        let v = m.mixed_norm(&path, &MixedNormSpec::new(3.0, 4.0)).unwrap();
        assert_abs_diff_eq!(v, c * 3f64.powf(0.25) * 2f64.powf(1.0 / 3.0), epsilon = 1e-12);
        assert_abs_diff_eq!(m.mixed_norm(&path, &MixedNormSpec::sup(4.0)).unwrap(), c * 3f64.powf(0.25), epsilon = 1e-12);
        assert!(m.mixed_norm(&path, &MixedNormSpec::new(3.0, 2.0)).is_err());

        let one = SpectralModel::diagonal(vec![1.0], 2.0).unwrap();
        let grid = TimeGrid::new(1.0, 10).unwrap();
        let spike = FieldPath::from_fn(grid, 1, |n, _| if n == 3 { 1.0 } else { 0.0 });
        assert_abs_diff_eq!(one.mixed_norm(&spike, &MixedNormSpec::new(2.0, 2.0)).unwrap(), 0.1f64.sqrt(), epsilon = 1e-15);
        assert!(TimeGrid::new(1.0, 0).is_err());
    }

    #[test]
    fn interp_norm_single_mode_gamma_integral() {
        let m = SpectralModel::diagonal(vec![1.0], 2.0).unwrap();
        let v = m.interp_norm(0.25, 4.0, &SpatialField(vec![1.0])).unwrap();
        // 1 + (Γ(3)/4³)^{1/4}
        assert_abs_diff_eq!(v, 1.0 + (2.0f64 / 64.0).powf(0.25), epsilon = 1e-9);
        assert_abs_diff_eq!(v, 1.420448, epsilon = 1e-6);
        assert_eq!(m.interp_norm(0.25, 4.0, &SpatialField(vec![0.0])).unwrap(), 0.0);
        assert!(m.interp_norm(1.0, 4.0, &SpatialField(vec![1.0])).is_err());
        assert!(m.interp_norm(0.0, 4.0, &SpatialField(vec![1.0])).is_err());
    }

    #[test]
    fn interp_norm_homogeneous_and_monotone() {
        let m = SpectralModel::diagonal(vec![0.5, 2.0, 9.0], 3.0).unwrap();
        let x = SpatialField(vec![0.3, 1.0, 0.7]);
        let v = m.interp_norm(0.4, 3.0, &x).unwrap();
        let scaled = SpatialField(x.0.iter().map(|c| -2.5 * c).collect());
        assert_abs_diff_eq!(m.interp_norm(0.4, 3.0, &scaled).unwrap(), 2.5 * v, epsilon = 1e-8 * v);
        let bigger = SpectralModel::diagonal(vec![0.5, 3.0, 9.0], 3.0).unwrap();
        assert!(bigger.interp_norm(0.4, 3.0, &x).unwrap() > v);
    }

    #[test]
    fn torus_isometry_and_gradient() {
        let m = SpectralModel::fourier_torus(1, 16, 0.0, 2.0).unwrap();
        let x: Vec<f64> = (0..16).map(|k| ((k * 7 + 3) % 11) as f64 / 11.0 - 0.4).collect();
        assert_abs_diff_eq!(m.norm(&x), lq_norm(&x, 2.0), epsilon = 1e-12);

        // constant mode has zero gradient
        let mut c = vec![0.0; 16];
        c[0] = 2.0;
        assert_abs_diff_eq!(m.gradient_norm(&SpatialField(c)).unwrap(), 0.0, epsilon = 1e-12);

        // ‖∇x‖₂ = √2 ‖A^{1/2} x‖₂ for mean-zero x
        let mut z = x.clone();
        z[0] = 0.0;
        let zf = SpatialField(z);
        let half = m.apply_fractional_power(0.5, &zf).unwrap();
        assert_abs_diff_eq!(m.gradient_norm(&zf).unwrap(), 2f64.sqrt() * m.norm(&half.0), epsilon = 1e-11);

        // each basis mode: ‖∇e‖ / ‖e‖ = |m|
        for k in 1..16 {
            let mut e = vec![0.0; 16];
            e[k] = 1.0;
            let freq = (2.0 * m.eigenvalues()[k]).sqrt();
            assert_abs_diff_eq!(m.gradient_norm(&SpatialField(e)).unwrap(), freq, epsilon = 1e-11);
        }
        let diag = SpectralModel::diagonal(vec![1.0], 2.0).unwrap();
        assert!(diag.gradient_norm(&SpatialField(vec![1.0])).is_err());
    }

    #[test]
    fn torus_2d_and_dirichlet_isometry() {
        let m = SpectralModel::fourier_torus(2, 6, 0.5, 2.0).unwrap();
        assert_eq!(m.modes(), 36);
        let x: Vec<f64> = (0..36).map(|k| (k as f64 * 0.37).sin()).collect();
        assert_abs_diff_eq!(m.norm(&x), lq_norm(&x, 2.0), epsilon = 1e-12);
        let d = SpectralModel::dirichlet_sine(9, 2.0).unwrap();
        let y: Vec<f64> = (0..9).map(|k| (k as f64 * 1.3).cos()).collect();
        assert_abs_diff_eq!(d.norm(&y), lq_norm(&y, 2.0), epsilon = 1e-12);
    }

    fn diag_model() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (1usize..6).prop_flat_map(|k| {
            (
                proptest::collection::vec(0.01f64..50.0, k),
                proptest::collection::vec(-3.0f64..3.0, k),
            )
        })
    }

    proptest! {
        #[test]
        fn semigroup_law_and_decay((mut eig, x) in diag_model(), s in 0.0f64..2.0, t in 0.0f64..2.0, q in 2.0f64..6.0) {
            eig.sort_by(f64::total_cmp);
            let m = SpectralModel::diagonal(eig, q).unwrap();
            let x = SpatialField(x);
            let st = m.apply_semigroup(t, &x).unwrap();
            let sst = m.apply_semigroup(s, &st).unwrap();
            let direct = m.apply_semigroup(s + t, &x).unwrap();
            for (a, b) in sst.0.iter().zip(&direct.0) {
                prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1e-300) + 1e-300);
            }
            prop_assert!(m.norm(&sst.0) <= m.norm(&st.0) * (1.0 + 1e-14));
        }

        #[test]
        fn powers_compose_and_commute((mut eig, x) in diag_model(), t in 0.0f64..3.0, g in -1.0f64..1.0) {
            eig.sort_by(f64::total_cmp);
            let m = SpectralModel::diagonal(eig, 2.0).unwrap();
            let x = SpatialField(x);
            let twice = m.apply_fractional_power(0.5, &m.apply_fractional_power(0.5, &x).unwrap()).unwrap();
            let once = m.apply_fractional_power(1.0, &x).unwrap();
            for (a, b) in twice.0.iter().zip(&once.0) {
                prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1e-12));
            }
            let ps = m.apply_fractional_power(g, &m.apply_semigroup(t, &x).unwrap()).unwrap();
            let sp = m.apply_semigroup(t, &m.apply_fractional_power(g, &x).unwrap()).unwrap();
            for (a, b) in ps.0.iter().zip(&sp.0) {
                prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1e-12));
            }
        }
    }
}
