//! Adaptive Gauss–Kronrod quadrature and the half-line / log-time wrappers
//! used by every deterministic integral in the crate.
//!
//! All integrals over `(0, ∞)` are computed in the variable `s = ln t`, where
//! integrands built from `t^a e^{-λt}` are smooth and decay at least
//! exponentially on both sides. Callers pass characteristic time scales
//! (typically `1/λ_k`) which become breakpoints.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

/// Absolute tolerance used when a caller has no better information.
pub const DEFAULT_ABS_TOL: f64 = 1e-10;

const MAX_INTERVALS: usize = 20_000;

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
// 7-point Gauss weights for the odd Kronrod abscissae (XGK[1], XGK[3], XGK[5]) and the centre.
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// Result of a quadrature: value, estimated absolute error and the number
/// of integrand evaluations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Integral {
    pub value: f64,
    pub abs_error: f64,
    pub evaluations: usize,
}

#[derive(Debug, Clone, Copy)]
struct Segment {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Segment {}
impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Segment {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

/// One 15-point Kronrod evaluation with its embedded 7-point Gauss estimate.
/// Returns `(kronrod, |kronrod - gauss|)`.
pub fn gauss_kronrod_15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let centre = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(centre);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for (j, (&x, &w)) in XGK.iter().zip(WGK.iter()).take(7).enumerate() {
        let dx = half * x;
        let pair = f(centre - dx) + f(centre + dx);
        kronrod += w * pair;
        if j % 2 == 1 {
            gauss += WG[j / 2] * pair;
        }
    }
    (kronrod * half, ((kronrod - gauss) * half).abs())
}

/// Globally adaptive Gauss–Kronrod integration of `f` over `[a, b]`.
///
/// Bisects the interval with the largest error estimate until the summed
/// estimate is below `max(abs_tol, rel_tol·|I|)`.
pub fn integrate<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, abs_tol: f64, rel_tol: f64) -> Result<Integral> {
    integrate_with_breaks(f, &[a, b], abs_tol, rel_tol)
}

/// As [`integrate`], with the interval pre-split at the sorted `points`
/// (first and last entries are the integration limits).
pub fn integrate_with_breaks<F: Fn(f64) -> f64>(
    f: &F,
    points: &[f64],
    abs_tol: f64,
    rel_tol: f64,
) -> Result<Integral> {
    if points.len() < 2 {
        return Ok(Integral {
            value: 0.0,
            abs_error: 0.0,
            evaluations: 0,
        });
    }
    let mut heap = BinaryHeap::new();
    let mut value = 0.0;
    let mut error = 0.0;
    let mut evaluations = 0;
    for w in points.windows(2) {
        if w[1] <= w[0] {
            continue;
        }
        let (v, e) = gauss_kronrod_15(f, w[0], w[1]);
        evaluations += 15;
        value += v;
        error += e;
        heap.push(Segment {
            a: w[0],
            b: w[1],
            value: v,
            error: e,
        });
    }
    if !value.is_finite() {
        return Err(Error::Numerical(format!(
            "non-finite integrand on [{}, {}]",
            points[0],
            points[points.len() - 1]
        )));
    }
    while error > abs_tol.max(rel_tol * value.abs()) {
        if heap.len() >= MAX_INTERVALS {
            return Err(Error::Quadrature {
                estimate: value,
                error,
                intervals: heap.len(),
            });
        }
        let worst = heap.pop().expect("heap holds at least one segment");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            // Interval exhausted at machine resolution; keep its contribution.
            heap.push(Segment {
                error: 0.0,
                ..worst
            });
            error -= worst.error;
            continue;
        }
        let (v1, e1) = gauss_kronrod_15(f, worst.a, mid);
        let (v2, e2) = gauss_kronrod_15(f, mid, worst.b);
        evaluations += 30;
        value += v1 + v2 - worst.value;
        error += e1 + e2 - worst.error;
        heap.push(Segment {
            a: worst.a,
            b: mid,
            value: v1,
            error: e1,
        });
        heap.push(Segment {
            a: mid,
            b: worst.b,
            value: v2,
            error: e2,
        });
        if !value.is_finite() {
            return Err(Error::Numerical("non-finite integrand".into()));
        }
    }
    // Re-sum to shed accumulated cancellation from the running total.
    let value = heap.iter().map(|s| s.value).sum();
    let error = heap.iter().map(|s| s.error).sum();
    Ok(Integral {
        value,
        abs_error: error,
        evaluations,
    })
}

/// Integrates `g(s)` over `[lo, hi]` where either end may be infinite.
///
/// Finite breakpoints inside the range are honoured. Infinite ends are
/// handled by marching panels of doubling width until two consecutive panels
/// contribute less than `abs_tol / 100`, capped at `|s| = 700`.
pub fn integrate_line<F: Fn(f64) -> f64>(
    g: &F,
    lo: f64,
    hi: f64,
    breaks: &[f64],
    abs_tol: f64,
) -> Result<Integral> {
    const LIMIT: f64 = 700.0;
    let mut pts: Vec<f64> = breaks
        .iter()
        .copied()
        .filter(|b| b.is_finite() && *b > lo && *b < hi)
        .collect();
    pts.sort_by(f64::total_cmp);
    pts.dedup();

    let core_lo = if lo.is_finite() {
        lo
    } else {
        pts.first().copied().unwrap_or(0.0).min(hi) - 2.0
    };
    let core_hi = if hi.is_finite() {
        hi
    } else {
        pts.last().copied().unwrap_or(0.0).max(core_lo) + 2.0
    };
    let mut points = vec![core_lo];
    points.extend(pts.iter().copied().filter(|p| *p > core_lo && *p < core_hi));
    points.push(core_hi);

    let mut total = integrate_with_breaks(g, &points, abs_tol, 0.0)?;
    let panel_tol = abs_tol / 100.0;

    let mut march = |mut edge: f64, dir: f64| -> Result<()> {
        let mut width = 1.0;
        let mut quiet = 0;
        while quiet < 2 && edge.abs() < LIMIT {
            let next = (edge + dir * width).clamp(-LIMIT, LIMIT);
            let (a, b) = if dir > 0.0 { (edge, next) } else { (next, edge) };
            let panel = integrate(g, a, b, panel_tol, 0.0)?;
            total.value += panel.value;
            total.abs_error += panel.abs_error;
            total.evaluations += panel.evaluations;
            let mass = integrate(&|s: f64| g(s).abs(), a, b, panel_tol, 1e-3)?;
            if mass.value < panel_tol {
                quiet += 1;
            } else {
                quiet = 0;
            }
            edge = next;
            width = (width * 2.0).min(64.0);
        }
        Ok(())
    };
    if !lo.is_finite() {
        march(core_lo, -1.0)?;
    }
    if !hi.is_finite() {
        march(core_hi, 1.0)?;
    }
    Ok(total)
}

/// `∫₀^∞ f(t) dt/t`, computed in log-time with the given characteristic
/// time scales as breakpoints.
pub fn integrate_dt_over_t<F: Fn(f64) -> f64>(f: &F, scales: &[f64], abs_tol: f64) -> Result<Integral> {
    let breaks: Vec<f64> = scales.iter().filter(|s| **s > 0.0).map(|s| s.ln()).collect();
    integrate_line(&|s: f64| f(s.exp()), f64::NEG_INFINITY, f64::INFINITY, &breaks, abs_tol)
}

/// `∫₀^∞ f(t) dt`, computed in log-time.
pub fn integrate_half_line<F: Fn(f64) -> f64>(f: &F, scales: &[f64], abs_tol: f64) -> Result<Integral> {
    integrate_dt_over_t(&|t: f64| t * f(t), scales, abs_tol)
}

/// `∫_a^b f(t) dt` for integrands with algebraic singularities at one or both
/// ends. The integrand receives `(distance_to_a, distance_to_b)` so that
/// neither distance suffers cancellation near its endpoint.
pub fn integrate_endpoint_singular<F: Fn(f64, f64) -> f64>(f: &F, a: f64, b: f64, abs_tol: f64) -> Result<Integral> {
    if b <= a {
        return Err(Error::param("interval", format!("empty interval [{a}, {b}]")));
    }
    let len = b - a;
    let half_log = (0.5 * len).ln();
    // Left half: distance d = e^s from a, s ∈ (-∞, ln(len/2)].
    let left = integrate_line(
        &|s: f64| {
            let d = s.exp();
            f(d, len - d) * d
        },
        f64::NEG_INFINITY,
        half_log,
        &[],
        abs_tol / 2.0,
    )?;
    let right = integrate_line(
        &|s: f64| {
            let d = s.exp();
            f(len - d, d) * d
        },
        f64::NEG_INFINITY,
        half_log,
        &[],
        abs_tol / 2.0,
    )?;
    Ok(Integral {
        value: left.value + right.value,
        abs_error: left.abs_error + right.abs_error,
        evaluations: left.evaluations + right.evaluations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use statrs::function::gamma::gamma;

    #[test]
    fn polynomial_is_exact() {
        let r = integrate(&|x: f64| x.powi(6) - 2.0 * x, 0.0, 2.0, 1e-13, 0.0).unwrap();
        assert_abs_diff_eq!(r.value, 128.0 / 7.0 - 4.0, epsilon = 1e-12);
    }

    #[test]
    fn oscillatory_integrand() {
        let r = integrate(&|x: f64| (10.0 * x).sin(), 0.0, std::f64::consts::PI, 1e-12, 0.0).unwrap();
        assert_abs_diff_eq!(r.value, 0.0, epsilon = 1e-11);
    }

    #[test]
    fn gamma_integrals_on_half_line() {
        for &(a, lam) in &[(0.5, 1.0), (2.5, 3.0), (0.25, 1e-3), (1.0, 1e6)] {
            let r = integrate_dt_over_t(&|t: f64| t.powf(a) * (-lam * t).exp(), &[1.0 / lam], 1e-12).unwrap();
            let exact = gamma(a) / lam.powf(a);
            assert!((r.value - exact).abs() <= 1e-10 * exact.max(1.0), "a={a} lam={lam}: {} vs {exact}", r.value);
        }
    }

    #[test]
    fn half_line_rational_tail() {
        let r = integrate_half_line(&|t: f64| 1.0 / (1.0 + t * t), &[1.0], 1e-11).unwrap();
        assert_abs_diff_eq!(r.value, std::f64::consts::FRAC_PI_2, epsilon = 1e-9);
    }

    #[test]
    fn beta_integral_with_endpoint_singularities() {
        let (a, b) = (0.3, 0.6);
        let r = integrate_endpoint_singular(&|l: f64, r: f64| l.powf(a - 1.0) * r.powf(b - 1.0), 0.0, 1.0, 1e-12).unwrap();
        let exact = gamma(a) * gamma(b) / gamma(a + b);
        assert_abs_diff_eq!(r.value, exact, epsilon = 1e-10);
    }

    #[test]
    fn non_finite_integrand_is_reported() {
        assert!(integrate(&|_x: f64| f64::NAN, 0.0, 1.0, 1e-10, 0.0).is_err());
    }
}
