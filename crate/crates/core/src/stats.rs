//! Monte Carlo aggregation and the ratio record shared by all probes.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// How the expectations in a ratio were evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Evaluation {
    /// Closed-form expectation or deterministic quadrature.
    Exact,
    MonteCarlo,
}

/// Discretization metadata attached to a ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridInfo {
    pub horizon: f64,
    pub steps: usize,
    pub dt: f64,
    pub paths: usize,
    pub modes: usize,
}

/// Exponents of a probed inequality.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Exponents {
    pub p: f64,
    pub q: f64,
    pub theta: f64,
    pub gamma: f64,
}

/// Numerator and denominator norms of one inequality probe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioStatistic {
    pub numerator: f64,
    pub denominator: f64,
    pub ratio: f64,
    /// Monte Carlo standard error of `ratio` (zero for exact evaluations).
    pub stderr: f64,
    pub grid: GridInfo,
    pub exponents: Exponents,
    pub evaluation: Evaluation,
    /// Set when the exponents lie outside the range where the inequality is
    /// known to hold (for example `p = 2 < q`).
    pub outside_hypotheses: bool,
}

impl RatioStatistic {
    pub fn new(
        numerator: f64,
        denominator: f64,
        stderr: f64,
        grid: GridInfo,
        exponents: Exponents,
        evaluation: Evaluation,
    ) -> Result<Self> {
        if !(denominator > 0.0 && denominator.is_finite()) {
            return Err(Error::param("G", format!("denominator norm must be positive, got {denominator}")));
        }
        if !numerator.is_finite() {
            return Err(Error::Numerical(format!("numerator norm is not finite: {numerator}")));
        }
        Ok(Self {
            numerator,
            denominator,
            ratio: numerator / denominator,
            stderr,
            grid,
            exponents,
            evaluation,
            outside_hypotheses: false,
        })
    }

    /// Builds the ratio `(E X)^{1/p} / (E Y)^{1/p}` from per-path samples of
    /// `X = ‖num‖^p` and `Y = ‖den‖^p`, with a delta-method standard error.
    pub fn from_moments(xs: &[f64], ys: &[f64], p: f64, grid: GridInfo, exponents: Exponents) -> Result<Self> {
        if xs.len() != ys.len() || xs.is_empty() {
            return Err(Error::ShapeMismatch("moment samples must be paired and nonempty".into()));
        }
        let mx = mean(xs);
        let my = mean(ys);
        let n = xs.len() as f64;
        let (vx, vy, cxy) = if xs.len() > 1 {
            let mut vx = 0.0;
            let mut vy = 0.0;
            let mut c = 0.0;
            for (x, y) in xs.iter().zip(ys) {
                vx += (x - mx) * (x - mx);
                vy += (y - my) * (y - my);
                c += (x - mx) * (y - my);
            }
            (vx / (n - 1.0), vy / (n - 1.0), c / (n - 1.0))
        } else {
            (0.0, 0.0, 0.0)
        };
        let num = mx.powf(1.0 / p);
        let den = my.powf(1.0 / p);
        let mut st = Self::new(num, den, 0.0, grid, exponents, Evaluation::MonteCarlo)?;
        if mx > 0.0 {
            let rel2 = (vx / (mx * mx) + vy / (my * my) - 2.0 * cxy / (mx * my)) / n;
            st.stderr = st.ratio / p * rel2.max(0.0).sqrt();
        }
        Ok(st)
    }

    pub fn flag_outside_hypotheses(mut self, flag: bool) -> Self {
        self.outside_hypotheses = flag;
        self
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample mean and its standard error.
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let m = mean(xs);
    if xs.len() < 2 {
        return (m, 0.0);
    }
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64;
    (m, (v / xs.len() as f64).sqrt())
}

/// Runs `f(index, seed)` for `paths` indices in parallel and returns the
/// results in index order, so any later reduction is schedule independent.
pub fn monte_carlo<T, F>(paths: usize, master_seed: u64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize, u64) -> T + Sync + Send,
{
    (0..paths)
        .into_par_iter()
        .map(|i| f(i, seed::derive_seed(master_seed, i as u64)))
        .collect()
}

/// Fallible variant of [`monte_carlo`]; the first error in index order wins.
pub fn try_monte_carlo<T, F>(paths: usize, master_seed: u64, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize, u64) -> Result<T> + Sync + Send,
{
    monte_carlo(paths, master_seed, f).into_iter().collect()
}

/// `E|Z|^p` for a standard normal `Z`: `2^{p/2} Γ((p+1)/2) / √π`.
pub fn gaussian_abs_moment(p: f64) -> f64 {
    2f64.powf(p / 2.0) * statrs::function::gamma::gamma((p + 1.0) / 2.0) / std::f64::consts::PI.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn meta() -> (GridInfo, Exponents) {
        (
            GridInfo {
                horizon: 1.0,
                steps: 10,
                dt: 0.1,
                paths: 3,
                modes: 1,
            },
            Exponents {
                p: 2.0,
                q: 2.0,
                theta: 0.0,
                gamma: 0.5,
            },
        )
    }

    #[test]
    fn gaussian_moments() {
        assert_abs_diff_eq!(gaussian_abs_moment(2.0), 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(gaussian_abs_moment(4.0), 3.0, epsilon = 1e-13);
        assert_abs_diff_eq!(gaussian_abs_moment(1.0), (2.0 / std::f64::consts::PI).sqrt(), epsilon = 1e-14);
    }

    #[test]
    fn ratio_rejects_zero_denominator() {
        let (g, e) = meta();
        assert!(RatioStatistic::new(1.0, 0.0, 0.0, g, e, Evaluation::Exact).is_err());
        let r = RatioStatistic::new(1.0, 2.0, 0.0, g, e, Evaluation::Exact).unwrap();
        assert_eq!(r.ratio, 0.5);
    }

    #[test]
    fn moment_ratio_with_constant_denominator() {
        let (g, e) = meta();
        let r = RatioStatistic::from_moments(&[1.0, 2.0, 3.0], &[4.0, 4.0, 4.0], 2.0, g, e).unwrap();
        assert_abs_diff_eq!(r.ratio, (2.0f64 / 4.0).sqrt(), epsilon = 1e-15);
        // se of mean X is 1/√3; ratio = √(X̄/4) → se = ratio/2 · se(X̄)/X̄
        assert_abs_diff_eq!(r.stderr, r.ratio / 2.0 * (1.0 / 3f64.sqrt()) / 2.0, epsilon = 1e-15);
    }

    #[test]
    fn monte_carlo_is_ordered() {
        let v = monte_carlo(100, 9, |i, s| (i, s));
        for (j, (i, s)) in v.iter().enumerate() {
            assert_eq!(*i, j);
            assert_eq!(*s, seed::derive_seed(9, j as u64));
        }
    }
}
