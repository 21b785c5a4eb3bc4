//! Scalar kernel calculus: the sector Poisson kernels `k_α` and `k_{α,θ}`,
//! the K-class seminorm, Poisson reconstruction of analytic functions from
//! their values on two rays, and square-function constants of `H^∞_0`
//! functions.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::quad;
use crate::spectral::{SpectralModel, Transform};

type RealFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
type ComplexFn = Arc<dyn Fn(Complex64) -> Complex64 + Send + Sync>;

/// Tolerance on the imaginary residue of quantities that are real by symmetry.
pub const IMAGINARY_RESIDUE_TOL: f64 = 1e-12;

/// A kernel `k : (0, ∞) → ℝ` together with its derivative.
#[derive(Clone)]
pub struct KernelFn {
    label: String,
    value: RealFn,
    derivative: RealFn,
    decays: bool,
    scales: Vec<f64>,
}

impl fmt::Debug for KernelFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KernelFn")
            .field("label", &self.label)
            .field("decays", &self.decays)
            .field("scales", &self.scales)
            .finish()
    }
}

impl KernelFn {
    /// `scales` are the characteristic times of `k` (used as quadrature
    /// breakpoints); `decays` asserts `k(t) → 0` as `t → ∞`.
    pub fn new(
        label: impl Into<String>,
        value: impl Fn(f64) -> f64 + Send + Sync + 'static,
        derivative: impl Fn(f64) -> f64 + Send + Sync + 'static,
        decays: bool,
        scales: Vec<f64>,
    ) -> Self {
        Self {
            label: label.into(),
            value: Arc::new(value),
            derivative: Arc::new(derivative),
            decays,
            scales,
        }
    }

    /// `amplitude · e^{-rate·t}`.
    pub fn exponential(amplitude: f64, rate: f64) -> Self {
        Self::new(
            format!("{amplitude}*exp(-{rate}t)"),
            move |t| amplitude * (-rate * t).exp(),
            move |t| -rate * amplitude * (-rate * t).exp(),
            rate > 0.0 || amplitude == 0.0,
            vec![1.0 / rate.abs().max(1e-300)],
        )
    }

    pub fn zero() -> Self {
        Self::new("0", |_| 0.0, |_| 0.0, true, vec![1.0])
    }

    /// `t ↦ k_{α,θ}(u, t)` for fixed `u`.
    pub fn alpha_theta(u: f64, alpha: f64, theta: f64) -> Self {
        let b = PI / (2.0 * alpha);
        let x_star = h_sign_change(alpha, theta).unwrap_or(1.0);
        Self::new(
            format!("k_alpha_theta(u={u}, alpha={alpha}, theta={theta})"),
            move |t| kalpha_theta_raw(u, t, alpha, theta),
            move |t| {
                // d/dt log k = (b - θ)/t - 2b t^{2b-1}/(t^{2b} + u^{2b})
                let r = (t / u).powf(2.0 * b);
                let log_deriv = (b - theta) / t - 2.0 * b / t * (r / (r + 1.0));
                kalpha_theta_raw(u, t, alpha, theta) * log_deriv
            },
            b - theta > 0.0,
            vec![u, u * x_star],
        )
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn value(&self, t: f64) -> f64 {
        (self.value)(t)
    }

    pub fn derivative(&self, t: f64) -> f64 {
        (self.derivative)(t)
    }

    pub fn decays(&self) -> bool {
        self.decays
    }

    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    /// Largest relative discrepancy between `k′` and a central difference
    /// of `k` over the given points.
    pub fn derivative_consistency(&self, points: &[f64]) -> f64 {
        points
            .iter()
            .map(|&t| {
                let h = 1e-5 * t;
                let fd = (self.value(t + h) - self.value(t - h)) / (2.0 * h);
                let d = self.derivative(t);
                let floor = 1e-8 * (self.value(t).abs() / t).max(1e-300);
                (fd - d).abs() / d.abs().max(floor)
            })
            .fold(0.0, f64::max)
    }
}

/// Outcome of a K-class test.
#[derive(Debug, Clone, PartialEq)]
pub struct KClassReport {
    pub value: f64,
    pub is_member: bool,
    pub diagnostic: Option<String>,
}

fn check_positive(name: &'static str, v: f64) -> Result<()> {
    if !(v > 0.0 && v.is_finite()) {
        return Err(Error::param(name, format!("must be finite and positive, got {v}")));
    }
    Ok(())
}

fn check_alpha(alpha: f64, upper: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < upper) {
        return Err(Error::param("alpha", format!("must lie in (0, {upper}), got {alpha}")));
    }
    Ok(())
}

/// `x^{c}/(x^{β}+1)` evaluated without overflow for large or small `x`.
fn ratio_power(x: f64, c: f64, beta: f64) -> f64 {
    if x <= 1.0 {
        x.powf(c) / (x.powf(beta) + 1.0)
    } else {
        x.powf(c - beta) / (1.0 + x.powf(-beta))
    }
}

fn kalpha_raw(u: f64, t: f64, alpha: f64) -> f64 {
    let beta = PI / alpha;
    ratio_power(t / u, 0.5 * beta, beta) / u
}

fn kalpha_theta_raw(u: f64, t: f64, alpha: f64, theta: f64) -> f64 {
    let beta = PI / alpha;
    // √u (u/t)^θ k_α(u,t) = u^{-1/2} h(t/u)
    ratio_power(t / u, 0.5 * beta - theta, beta) / u.sqrt()
}

/// `k_α(u, t) = (t/u)^{π/2α} / ((t/u)^{π/α} + 1) · 1/u`.
pub fn eval_kernel_alpha(u: f64, t: f64, alpha: f64) -> Result<f64> {
    check_positive("u", u)?;
    check_positive("t", t)?;
    check_alpha(alpha, FRAC_PI_2)?;
    Ok(kalpha_raw(u, t, alpha))
}

/// `k_{α,θ}(u, t) = √u (u/t)^θ k_α(u, t)`.
pub fn eval_kernel_alpha_theta(u: f64, t: f64, alpha: f64, theta: f64) -> Result<f64> {
    check_positive("u", u)?;
    check_positive("t", t)?;
    check_alpha(alpha, FRAC_PI_2)?;
    if !(0.0..=1.0).contains(&theta) {
        return Err(Error::param("theta", format!("must lie in [0, 1], got {theta}")));
    }
    Ok(kalpha_theta_raw(u, t, alpha, theta))
}

/// `∫₀^∞ √t |k′(t)| dt`; membership requires the value to be at most one
/// and `k` to vanish at infinity.
pub fn kclass_seminorm(kernel: &KernelFn) -> KClassReport {
    let f = |t: f64| t.sqrt() * kernel.derivative(t).abs();
    let mut scales = kernel.scales().to_vec();
    if scales.is_empty() {
        scales.push(1.0);
    }
    let tails_vanish = {
        let lo = scales.iter().copied().fold(f64::INFINITY, f64::min) * 1e-12;
        let hi = scales.iter().copied().fold(0.0, f64::max) * 1e12;
        (lo * f(lo)).abs() < 1e-6 && (hi * f(hi)).abs() < 1e-6
    };
    match quad::integrate_half_line(&f, &scales, quad::DEFAULT_ABS_TOL) {
        Ok(i) if tails_vanish && i.value.is_finite() => KClassReport {
            value: i.value,
            is_member: i.value <= 1.0 && kernel.decays(),
            diagnostic: (!kernel.decays()).then(|| "kernel does not vanish at infinity".to_string()),
        },
        Ok(i) => KClassReport {
            value: f64::INFINITY,
            is_member: false,
            diagnostic: Some(format!("seminorm integral diverges (partial value {:e})", i.value)),
        },
        Err(e) => KClassReport {
            value: f64::INFINITY,
            is_member: false,
            diagnostic: Some(e.to_string()),
        },
    }
}

/// The point where `h(x) = x^{a}/(x^{β}+1)`, `a = π/2α − θ`, attains its
/// maximum: `x^β = a/(β − a)`.
fn h_sign_change(alpha: f64, theta: f64) -> Option<f64> {
    let beta = PI / alpha;
    let a = 0.5 * beta - theta;
    (a > 0.0).then(|| (a / (beta - a)).powf(1.0 / beta))
}

fn check_seminorm_params(alpha: f64, theta: f64) -> Result<()> {
    check_alpha(alpha, PI)?;
    if !(0.0..=1.0).contains(&theta) {
        return Err(Error::param("theta", format!("must lie in [0, 1], got {theta}")));
    }
    if PI / (2.0 * alpha) - theta <= 0.0 {
        return Err(Error::param("theta", "requires π/2α − θ > 0"));
    }
    Ok(())
}

/// `∫₀^∞ √x |h′(x)| dx` with `h(x) = x^{π/2α−θ}/(x^{π/α}+1)`, which equals
/// `∫₀^∞ √t |∂_t k_{α,θ}(u,t)| dt` for every `u > 0`.
pub fn kalpha_theta_time_seminorm(alpha: f64, theta: f64) -> Result<f64> {
    check_seminorm_params(alpha, theta)?;
    let beta = PI / alpha;
    let a = 0.5 * beta - theta;
    let x_star = h_sign_change(alpha, theta).unwrap_or(1.0);
    let dh = |x: f64| {
        // h′(x) = x^{a−1}(a(x^β+1) − βx^β)/(x^β+1)²
        if x <= 1.0 {
            let xb = x.powf(beta);
            x.powf(a - 1.0) * (a * (xb + 1.0) - beta * xb) / ((xb + 1.0) * (xb + 1.0))
        } else {
            let yb = x.powf(-beta);
            x.powf(a - 1.0 - beta) * (a * (1.0 + yb) - beta) / ((1.0 + yb) * (1.0 + yb))
        }
    };
    let f = |x: f64| x.sqrt() * dh(x).abs();
    Ok(quad::integrate_half_line(&f, &[x_star, 1.0], quad::DEFAULT_ABS_TOL * 1e-2)?.value)
}

/// The same seminorm computed in the original time variable at a given `u`.
pub fn kalpha_theta_time_seminorm_at(alpha: f64, theta: f64, u: f64) -> Result<f64> {
    check_seminorm_params(alpha, theta)?;
    check_positive("u", u)?;
    let k = KernelFn::alpha_theta(u, alpha, theta);
    // ∂_t k scales like u^{-3/2}; rescale the tolerance so it is relative.
    let f = |t: f64| t.sqrt() * k.derivative(t).abs();
    Ok(quad::integrate_half_line(&f, k.scales(), quad::DEFAULT_ABS_TOL * 1e-2)?.value)
}

/// An analytic function on a sector `Σ_{angle}` around the positive axis.
#[derive(Clone)]
pub struct SectorFunction {
    label: String,
    angle: f64,
    eval: ComplexFn,
}

impl fmt::Debug for SectorFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SectorFunction")
            .field("label", &self.label)
            .field("angle", &self.angle)
            .finish()
    }
}

impl SectorFunction {
    pub fn new(
        label: impl Into<String>,
        angle: f64,
        eval: impl Fn(Complex64) -> Complex64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            label: label.into(),
            angle,
            eval: Arc::new(eval),
        }
    }

    pub fn constant(c: f64) -> Self {
        Self::new(format!("{c}"), PI, move |_| Complex64::new(c, 0.0))
    }

    /// `e^{-cz}`, bounded on every sector of angle below π/2.
    pub fn exp_decay(c: f64) -> Self {
        Self::new(format!("exp(-{c}z)"), FRAC_PI_2, move |z| (-c * z).exp())
    }

    /// `(c + z)^{-1}` with `c > 0`.
    pub fn resolvent(c: f64) -> Self {
        Self::new(format!("1/({c}+z)"), PI, move |z| 1.0 / (c + z))
    }

    /// `z^{1/2} e^{-z}`.
    pub fn sqrt_exp() -> Self {
        Self::new("sqrt(z)exp(-z)", FRAC_PI_2, |z: Complex64| z.sqrt() * (-z).exp())
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn angle(&self) -> f64 {
        self.angle
    }

    pub fn eval(&self, z: Complex64) -> Complex64 {
        (self.eval)(z)
    }

    /// Largest `|f(z̄) − conj f(z)|` over the given sample points.
    pub fn conjugate_symmetry_defect(&self, samples: &[Complex64]) -> f64 {
        samples
            .iter()
            .map(|z| (self.eval(z.conj()) - self.eval(*z).conj()).norm())
            .fold(0.0, f64::max)
    }
}

/// `f(s) = Σ_{j=±1} (1/2α) ∫₀^∞ k_α(u, s) f(u e^{ijα}) du`.
pub fn poisson_reconstruct(f: &SectorFunction, s: f64, alpha: f64) -> Result<f64> {
    poisson_reconstruct_signed(f, s, alpha, [1.0, 1.0])
}

/// Ray sum with per-ray signs `[σ_{+1}, σ_{−1}]`; only `[1, 1]` reproduces `f`.
pub(crate) fn poisson_reconstruct_signed(f: &SectorFunction, s: f64, alpha: f64, signs: [f64; 2]) -> Result<f64> {
    check_positive("s", s)?;
    check_alpha(alpha, PI)?;
    if alpha >= f.angle() {
        return Err(Error::param(
            "alpha",
            format!("ray angle {alpha} must be below the function's sector angle {}", f.angle()),
        ));
    }
    let up = Complex64::from_polar(1.0, alpha);
    let down = up.conj();
    let ray_sum = |u: f64| signs[0] * f.eval(up * u) + signs[1] * f.eval(down * u);
    let scale = 1.0 / (2.0 * alpha);
    let re = quad::integrate_half_line(&|u: f64| kalpha_raw(u, s, alpha) * ray_sum(u).re, &[s], 1e-12)?;
    let im = quad::integrate_half_line(&|u: f64| kalpha_raw(u, s, alpha) * ray_sum(u).im, &[s], 1e-12)?;
    let value = scale * re.value;
    let residue = scale * im.value;
    if residue.abs() > IMAGINARY_RESIDUE_TOL * value.abs().max(1.0) {
        return Err(Error::Numerical(format!(
            "reconstruction has imaginary residue {residue:e}; the function is not real on the positive axis"
        )));
    }
    Ok(value)
}

fn check_v_params(u: f64, lambda: f64, theta: f64, alpha: f64) -> Result<()> {
    check_positive("u", u)?;
    check_positive("lambda", lambda)?;
    if !(0.0..0.5).contains(&theta) {
        return Err(Error::param("theta", format!("must lie in [0, 1/2), got {theta}")));
    }
    check_alpha(alpha, FRAC_PI_2)
}

/// `V(u) = (1/Γ(1−θ)) (1/2α) Σ_{j=±1} φ_j(uλ)²` with
/// `φ_j(v) = v^{1/4−θ/2} e^{−v e^{ijα}/2}`; real because the two terms are
/// complex conjugates.
pub fn scalar_v(u: f64, lambda: f64, theta: f64, alpha: f64) -> Result<f64> {
    check_v_params(u, lambda, theta, alpha)?;
    let v = u * lambda;
    let phi_sq = |j: f64| {
        let phi = v.powf(0.25 - 0.5 * theta) * (-0.5 * v * Complex64::from_polar(1.0, j * alpha)).exp();
        phi * phi
    };
    let total = (phi_sq(1.0) + phi_sq(-1.0)) / (2.0 * alpha * gamma(1.0 - theta));
    if total.im.abs() > IMAGINARY_RESIDUE_TOL * total.re.abs().max(1.0) {
        return Err(Error::Numerical(format!("V has imaginary residue {:e}", total.im)));
    }
    Ok(total.re)
}

/// Real closed form of [`scalar_v`]:
/// `(uλ)^{1/2−θ} cos(uλ sin α) e^{−uλ cos α} / (α Γ(1−θ))`.
fn scalar_v_real(u: f64, lambda: f64, theta: f64, alpha: f64) -> f64 {
    let v = u * lambda;
    v.powf(0.5 - theta) * (v * alpha.sin()).cos() * (-v * alpha.cos()).exp() / (alpha * gamma(1.0 - theta))
}

/// Both sides of the scalar identity
/// `t^{−θ} λ^{1/2−θ} e^{−λt} / Γ(1−θ) = ∫₀^∞ k_{α,θ}(u,t) V(u) du/u`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdentityCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub abs_error: f64,
}

pub fn spoisson_identity_check(lambda: f64, t: f64, theta: f64, alpha: f64) -> Result<IdentityCheck> {
    check_v_params(1.0, lambda, theta, alpha)?;
    check_positive("t", t)?;
    let lhs = t.powf(-theta) * lambda.powf(0.5 - theta) * (-lambda * t).exp() / gamma(1.0 - theta);
    let integrand = |u: f64| kalpha_theta_raw(u, t, alpha, theta) * scalar_v_real(u, lambda, theta, alpha) / u;
    let rhs = quad::integrate_half_line(&integrand, &[t, 1.0 / lambda], 1e-12)?.value;
    Ok(IdentityCheck {
        lhs,
        rhs,
        abs_error: (lhs - rhs).abs(),
    })
}

/// Square-function constant `c_φ = (∫₀^∞ |φ(t)|² dt/t)^{1/2}` and the largest
/// relative deviation of `∫|φ(tλ)|² dt/t` from `c_φ²` over the sampled `λ`.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareConstant {
    pub constant: f64,
    pub invariance_deviation: f64,
}

pub fn hinf_square_constant(phi: &(dyn Fn(f64) -> f64 + Sync), lambdas: &[f64]) -> Result<SquareConstant> {
    let sq = |l: f64| -> Result<f64> {
        let g = |t: f64| phi(t * l).powi(2);
        let (lo, hi) = (1e-14 / l, 1e14 / l);
        if !(g(lo) < 1e-8 && g(hi) < 1e-8) {
            return Err(Error::param("phi", "|φ|² does not vanish at 0 and ∞; φ is not in H^∞_0"));
        }
        let i = quad::integrate_dt_over_t(&g, &[1.0 / l], 1e-13)?;
        if !i.value.is_finite() {
            return Err(Error::param("phi", "square-function integral diverges"));
        }
        Ok(i.value)
    };
    let c2 = sq(1.0)?;
    let mut dev: f64 = 0.0;
    for &l in lambdas {
        check_positive("lambda", l)?;
        dev = dev.max((sq(l)? - c2).abs() / c2.max(1e-300));
    }
    Ok(SquareConstant {
        constant: c2.sqrt(),
        invariance_deviation: dev,
    })
}

/// `‖(∫₀^∞ |φ(tA)x|² dt/t)^{1/2}‖_q` for a diagonal model, computed mode
/// by mode by quadrature.
pub fn diagonal_square_function(model: &SpectralModel, phi: &(dyn Fn(f64) -> f64 + Sync), x: &[f64]) -> Result<f64> {
    if model.transform() != Transform::None {
        return Err(Error::param("model", "square function is evaluated per mode on diagonal models"));
    }
    if x.len() != model.modes() {
        return Err(Error::ShapeMismatch("field length differs from mode count".into()));
    }
    let per_mode = model
        .eigenvalues()
        .iter()
        .zip(x)
        .map(|(&l, &c)| {
            let i = quad::integrate_dt_over_t(&|t: f64| (phi(t * l) * c).powi(2), &[1.0 / l], 1e-13 * c * c)?;
            Ok(i.value.max(0.0).sqrt())
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(crate::spectral::lq_norm(&per_mode, model.q()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn kernel_alpha_values() {
        assert_abs_diff_eq!(eval_kernel_alpha(1.0, 1.0, PI / 4.0).unwrap(), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(eval_kernel_alpha(1.0, 2.0, PI / 4.0).unwrap(), 4.0 / 17.0, epsilon = 1e-15);
        assert!(eval_kernel_alpha(0.0, 1.0, 0.5).is_err());
        assert!(eval_kernel_alpha(1.0, -1.0, 0.5).is_err());
        assert!(eval_kernel_alpha(1.0, 1.0, 2.0).is_err());
    }

    #[test]
    fn kernel_alpha_theta_values() {
        assert_abs_diff_eq!(eval_kernel_alpha_theta(1.0, 1.0, PI / 4.0, 0.0).unwrap(), 0.5, epsilon = 1e-15);
        // 2·4^{1/4}·k_{π/4}(4,1), k_{π/4}(4,1) = (1/16)/((1/256)+1)/4
        let k41 = (1.0 / 16.0) / (1.0 / 256.0 + 1.0) / 4.0;
        assert_abs_diff_eq!(k41, 0.0155642, epsilon = 1e-7);
        let v = eval_kernel_alpha_theta(4.0, 1.0, PI / 4.0, 0.25).unwrap();
        assert_abs_diff_eq!(v, 2.0 * 4f64.powf(0.25) * k41, epsilon = 1e-15);
        assert_abs_diff_eq!(v, 0.0440225, epsilon = 1e-6);
        assert_abs_diff_eq!(eval_kernel_alpha_theta(4.0, 4.0, PI / 4.0, 0.0).unwrap(), 0.25, epsilon = 1e-15);
        assert!(eval_kernel_alpha_theta(1.0, 1.0, PI / 4.0, 1.5).is_err());
    }

    #[test]
    fn kernel_mass_equals_alpha() {
        for &(alpha, s) in &[(PI / 3.0, 2.0), (PI / 4.0, 1.0), (0.2, 5.0), (1.5, 0.01)] {
            let m = quad::integrate_half_line(&|u: f64| kalpha_raw(u, s, alpha), &[s], 1e-12).unwrap();
            assert_abs_diff_eq!(m.value, alpha, epsilon = 1e-9);
        }
        let m = quad::integrate_half_line(&|u: f64| kalpha_raw(u, 2.0, PI / 3.0), &[2.0], 1e-12).unwrap();
        assert_abs_diff_eq!(m.value, 1.0471976, epsilon = 1e-7);
    }

    #[test]
    fn kclass_examples() {
        let e = kclass_seminorm(&KernelFn::exponential(1.0, 1.0));
        assert_abs_diff_eq!(e.value, 0.886_226_925_452_758, epsilon = 1e-9);
        assert!(e.is_member);
        let e2 = kclass_seminorm(&KernelFn::exponential(2.0, 1.0));
        assert_abs_diff_eq!(e2.value, 1.772_453_850_905_516, epsilon = 1e-9);
        assert!(!e2.is_member);
        let z = kclass_seminorm(&KernelFn::zero());
        assert_eq!(z.value, 0.0);
        assert!(z.is_member);
        // √t|k′| with k = t^{-1/4} on (0,∞) is not integrable at infinity
        let bad = KernelFn::new("t^-1/4", |t: f64| t.powf(-0.25), |t: f64| -0.25 * t.powf(-1.25), true, vec![1.0]);
        let r = kclass_seminorm(&bad);
        assert!(!r.is_member && r.diagnostic.is_some());
    }

    #[test]
    fn derivative_spot_checks() {
        let pts = [0.013, 0.4, 1.0, 2.7, 19.0];
        assert!(KernelFn::exponential(1.3, 0.7).derivative_consistency(&pts) < 1e-6);
        for &(a, th) in &[(PI / 4.0, 0.0), (PI / 4.0, 0.6), (3.0 * PI / 4.0, 0.3)] {
            assert!(KernelFn::alpha_theta(2.0, a, th).derivative_consistency(&pts) < 1e-6);
        }
    }

    #[test]
    fn time_seminorm_two_routes() {
        let a = kalpha_theta_time_seminorm(PI / 4.0, 0.0).unwrap();
        assert_abs_diff_eq!(a, 1.122_742_015_324_352_6, epsilon = 1e-8);
        for &u in &[1.0, 7.0] {
            let b = kalpha_theta_time_seminorm_at(PI / 4.0, 0.0, u).unwrap();
            assert_abs_diff_eq!(a, b, epsilon = 1e-8);
        }
        for &th in &[0.25, 0.5, 0.75, 1.0] {
            let a = kalpha_theta_time_seminorm(PI / 4.0, th).unwrap();
            let b = kalpha_theta_time_seminorm_at(PI / 4.0, th, 3.3).unwrap();
            assert_abs_diff_eq!(a, b, epsilon = 1e-8);
        }
        assert_abs_diff_eq!(kalpha_theta_time_seminorm(PI / 4.0, 0.5).unwrap(), 1.0314159, epsilon = 1e-6);
        assert!(kalpha_theta_time_seminorm(3.0 * PI / 4.0, 0.7).is_err());
        assert!(kalpha_theta_time_seminorm(PI, 0.0).is_err());
    }

    #[test]
    fn poisson_examples() {
        let one = SectorFunction::constant(1.0);
        for &(s, a) in &[(0.3, 0.2), (1.0, PI / 4.0), (9.0, 1.4)] {
            assert_abs_diff_eq!(poisson_reconstruct(&one, s, a).unwrap(), 1.0, epsilon = 1e-9);
        }
        let e = SectorFunction::exp_decay(1.0);
        assert_abs_diff_eq!(poisson_reconstruct(&e, 1.0, PI / 4.0).unwrap(), (-1f64).exp(), epsilon = 1e-8);
        let r = SectorFunction::resolvent(1.0);
        assert_abs_diff_eq!(poisson_reconstruct(&r, 3.0, PI / 4.0).unwrap(), 0.25, epsilon = 1e-8);
        // rays must lie inside the function's sector
        assert!(poisson_reconstruct(&e, 1.0, 1.6).is_err());
    }

    #[test]
    fn alternating_ray_signs_fail_the_mass_check() {
        let one = SectorFunction::constant(1.0);
        let v = poisson_reconstruct_signed(&one, 1.0, PI / 4.0, [1.0, -1.0]).unwrap();
        assert_abs_diff_eq!(v, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn poisson_family_grid() {
        let family = [
            SectorFunction::exp_decay(0.5),
            SectorFunction::exp_decay(2.0),
            SectorFunction::resolvent(0.3),
            SectorFunction::resolvent(4.0),
            SectorFunction::sqrt_exp(),
        ];
        for f in &family {
            let samples = [Complex64::new(1.0, 0.5), Complex64::new(0.2, -0.1)];
            assert!(f.conjugate_symmetry_defect(&samples) < 1e-14);
            for &s in &[0.2, 1.0, 4.0] {
                for &a in &[0.3, PI / 4.0, 1.2] {
                    let exact = f.eval(Complex64::new(s, 0.0)).re;
                    let v = poisson_reconstruct(f, s, a).unwrap();
                    assert!((v - exact).abs() <= 1e-8, "{} s={s} a={a}: {v} vs {exact}", f.label());
                }
            }
        }
    }

    #[test]
    fn v_examples() {
        assert!(scalar_v(1e-14, 1.0, 0.0, PI / 4.0).unwrap().abs() < 1e-6);
        for &u in &[0.1, 1.0, 3.7] {
            let complex = scalar_v(u, 1.3, 0.2, 0.9).unwrap();
            assert_abs_diff_eq!(complex, scalar_v_real(u, 1.3, 0.2, 0.9), epsilon = 1e-14);
        }
        let z = FRAC_PI_2 / (PI / 4.0).sin();
        assert_abs_diff_eq!(z, 2.2214415, epsilon = 1e-7);
        assert!(scalar_v(z * 0.999, 1.0, 0.0, PI / 4.0).unwrap() > 0.0);
        assert!(scalar_v(z * 1.001, 1.0, 0.0, PI / 4.0).unwrap() < 0.0);
        assert!(scalar_v(1.0, 1.0, 0.5, PI / 4.0).is_err());
    }

    #[test]
    fn identity_examples() {
        let c = spoisson_identity_check(1.0, 1.0, 0.0, PI / 4.0).unwrap();
        assert_abs_diff_eq!(c.lhs, 0.3678794, epsilon = 1e-7);
        assert!(c.abs_error <= 1e-8);
        let c = spoisson_identity_check(2.0, 1.0, 0.25, PI / 4.0).unwrap();
        assert_abs_diff_eq!(c.lhs, 2f64.powf(0.25) * (-2f64).exp() / gamma(0.75), epsilon = 1e-15);
        assert_abs_diff_eq!(c.lhs, 0.131336, epsilon = 1e-6);
        assert_abs_diff_eq!(gamma(0.75), 1.2254167, epsilon = 1e-7);
        assert!(c.abs_error <= 1e-8);
        let a = spoisson_identity_check(0.7, 1.4, 0.1, 0.8).unwrap();
        let b = spoisson_identity_check(0.7 * 5.0, 1.4 / 5.0, 0.1, 0.8).unwrap();
        assert!((a.abs_error - b.abs_error).abs() <= 1e-10);
    }

    #[test]
    fn identity_grid() {
        for &l in &[0.3, 1.0, 5.0] {
            for &t in &[0.2, 1.0, 3.0] {
                for &th in &[0.0, 0.2, 0.45] {
                    for &a in &[0.3, PI / 4.0, 1.3] {
                        let c = spoisson_identity_check(l, t, th, a).unwrap();
                        assert!(c.abs_error <= 1e-8, "{l} {t} {th} {a}: {c:?}");
                    }
                }
            }
        }
    }

    #[test]
    fn square_constants() {
        let c = hinf_square_constant(&|t: f64| t.sqrt() * (-t).exp(), &[0.1, 1.0, 10.0]).unwrap();
        assert_abs_diff_eq!(c.constant, 0.5f64.sqrt(), epsilon = 1e-10);
        assert!(c.invariance_deviation <= 1e-10);
        let c = hinf_square_constant(&|t: f64| t * (-t).exp(), &[0.1, 1.0, 10.0]).unwrap();
        assert_abs_diff_eq!(c.constant * c.constant, 0.25, epsilon = 1e-10);
        assert!(hinf_square_constant(&|_| 1.0, &[]).is_err());
        assert!(hinf_square_constant(&|t: f64| 1.0 / (1.0 + t), &[]).is_err());
    }

    #[test]
    fn diagonal_square_function_is_exact() {
        let m = SpectralModel::diagonal(vec![0.2, 1.0, 30.0, 400.0], 3.0).unwrap();
        let x = [0.5, -1.0, 2.0, 0.1];
        let phi = |t: f64| t.sqrt() * (-t).exp();
        let v = diagonal_square_function(&m, &phi, &x).unwrap();
        assert_abs_diff_eq!(v, 0.5f64.sqrt() * m.norm(&x), epsilon = 1e-10);
    }

    proptest! {
        #[test]
        fn homogeneity(u in 0.01f64..50.0, t in 0.01f64..50.0, c in 0.1f64..10.0, alpha in 0.05f64..1.55, theta in 0.0f64..1.0) {
            let k = kalpha_raw(u, t, alpha);
            prop_assert!((kalpha_raw(c * u, c * t, alpha) - k / c).abs() <= 1e-13 * k / c + 1e-300);
            let kt = kalpha_theta_raw(u, t, alpha, theta);
            let want = kt / c.sqrt();
            prop_assert!((kalpha_theta_raw(c * u, c * t, alpha, theta) - want).abs() <= 1e-13 * want + 1e-300);
        }

        #[test]
        fn seminorm_independent_of_u(u in 0.05f64..20.0, theta in 0.0f64..1.0) {
            let a = kalpha_theta_time_seminorm(PI / 4.0, theta).unwrap();
            let b = kalpha_theta_time_seminorm_at(PI / 4.0, theta, u).unwrap();
            prop_assert!((a - b).abs() <= 1e-9);
        }
    }
}
