//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Criteria whose failure is a property of the construction itself rather
//! than of the code are listed in `KNOWN_RED`; the suite still evaluates and
//! prints them, and fails if any other criterion is red or if a known-red
//! criterion starts passing unnoticed.

use std::f64::consts::PI;
use std::time::Instant;

use stochreg::convops::{self, OperatorFamily, OperatorFamilySpec, RboundEnsemble, StepFunctionEnsemble};
use stochreg::kernels::{self, KernelFn, SectorFunction};
use stochreg::maxreg::{self, Horizon, NoiseEnsemble};
use stochreg::spectral::{SpectralModel, TimeGrid};
use stochreg::stats;
use stochreg::stochastic::{self, sample_noise, ExactFactor, Scheme, StepProcess};
use stochreg_cli::runner::nested_windows;

/// Criterion 7: the p = 4 control on the default witness decays like
/// K^{−1/4}, so the 10% band cannot hold (see the decisions ledger).
const KNOWN_RED: &[u32] = &[7];

struct Line {
    id: u32,
    pass: bool,
    detail: String,
}

fn line(id: u32, pass: bool, detail: String) -> Line {
    println!("criterion {id:>2}: {} | {detail}", if pass { "PASS" } else { "FAIL" });
    Line { id, pass, detail }
}

fn grid(t: f64, n: usize) -> TimeGrid {
    TimeGrid::new(t, n).unwrap()
}

fn c1() -> Line {
    let start = Instant::now();
    let m = SpectralModel::diagonal(vec![1.0, 10.0, 100.0], 2.0).unwrap();
    let g = grid(1.0, 1000);
    let mut worst: f64 = 0.0;
    for seed in 0..3 {
        let gp = stochastic::random_step_process(g, 3, 2, seed);
        let r = maxreg::maxreg_ratio(&m, &gp, 2.0, 0.0, &NoiseEnsemble::exact(Horizon::HalfLine)).unwrap();
        worst = worst.max((r.ratio.powi(2) / 0.5 - 1.0).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    line(1, worst <= 1e-3 && secs < 5.0, format!("max |ratio²/0.5 − 1| = {worst:.2e} (tol 1e-3), {secs:.2}s (< 5s)"))
}

fn c2() -> Line {
    let start = Instant::now();
    let a = kernels::poisson_reconstruct(&SectorFunction::exp_decay(1.0), 1.0, PI / 4.0).unwrap();
    let b = kernels::poisson_reconstruct(&SectorFunction::constant(1.0), 1.0, PI / 4.0).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let ea = (a - (-1f64).exp()).abs();
    let eb = (b - 1.0).abs();
    line(
        2,
        ea <= 1e-8 && eb <= 1e-9 && (a - 0.3678794).abs() <= 5e-8 && secs < 1.0,
        format!("e^-z → {a:.10} (err {ea:.1e} ≤ 1e-8), 1 → {b:.12} (err {eb:.1e} ≤ 1e-9), {secs:.3}s (< 1s)"),
    )
}

fn c3() -> Line {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for &l in &[0.5, 1.0, 4.0] {
        for &t in &[0.3, 1.0, 2.5] {
            for &th in &[0.0, 0.25] {
                for &a in &[PI / 4.0, PI / 3.0] {
                    worst = worst.max(kernels::spoisson_identity_check(l, t, th, a).unwrap().abs_error);
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    line(3, worst <= 1e-8 && secs < 5.0, format!("max abs error {worst:.2e} over 36 points (≤ 1e-8), {secs:.2}s (< 5s)"))
}

fn c4() -> Line {
    let a = kernels::kclass_seminorm(&KernelFn::exponential(1.0, 1.0));
    let b = kernels::kclass_seminorm(&KernelFn::exponential(2.0, 1.0));
    let ea = (a.value - PI.sqrt() / 2.0).abs();
    let eb = (b.value - PI.sqrt()).abs();
    let pass = ea <= 1e-8 && eb <= 1e-8 && a.is_member && !b.is_member && (a.value - 0.8862269).abs() <= 5e-8 && (b.value - 1.7724539).abs() <= 5e-8;
    line(4, pass, format!("e^-t → {:.10} member={}, 2e^-t → {:.10} member={}", a.value, a.is_member, b.value, b.is_member))
}

fn c5() -> Line {
    let g = grid(1.0, 1000);
    let m = SpectralModel::diagonal(vec![1.0], 2.0).unwrap();
    let one = StepProcess::constant(g, 1, 1, 1.0);
    let v: Vec<f64> = stats::monte_carlo(10_000, 55, |_, s| {
        let n = sample_noise(g, 1, Scheme::Maruyama, None, s).unwrap();
        stochastic::stoch_convolution(&m, &one, &n, 0.0, 0.0, Scheme::Maruyama).unwrap().at(1000)[0].powi(2)
    });
    let (mean, se) = stats::mean_stderr(&v);
    let target = (1.0 - (-2f64).exp()) / 2.0;
    let factor = ExactFactor::new(&[1.0], g.dt()).unwrap();
    let exact = *stochastic::exact_variance_trace(&factor, 0, 1.0, 1000).last().unwrap();
    let ee = (exact - target).abs();
    let z = (mean - 0.4323324).abs() / se;
    line(5, z <= 3.0 && ee <= 1e-12, format!("MC Var U(1) = {mean:.5} ± {se:.5} ({z:.2} SE), exact recursion error {ee:.1e} (≤ 1e-12)"))
}

fn c6() -> Line {
    let k = KernelFn::exponential(1.0, 1.0);
    let errs: Vec<f64> = [100usize, 200, 400]
        .iter()
        .map(|&n| {
            let g = grid(1.0, n);
            convops::reduction_mismatch(&k, g, &StepProcess::constant(g, 1, 1, 1.0), 100, 606, 40.0).unwrap()
        })
        .collect();
    let f: Vec<f64> = errs.windows(2).map(|w| w[0] / w[1]).collect();
    let pass = f.iter().all(|x| (1.3..=2.8).contains(x));
    line(6, pass, format!("mismatch {} at Δt = 1e-2, 5e-3, 2.5e-3; factors {f:.3?} (∈ [1.3, 2.8])", sci(&errs)))
}

fn c7() -> (Line, bool) {
    let start = Instant::now();
    let ks = [8usize, 12, 16, 20, 24];
    let r2: Vec<f64> = ks.iter().map(|k| maxreg::counterexample_probe(4.0, *k, None).unwrap()).collect();
    let above = ks.iter().zip(&r2).all(|(k, r)| *r > 0.1162721 * (*k as f64).sqrt());
    let growth = r2[4] / r2[0];
    let control: Vec<f64> = ks.iter().map(|k| maxreg::counterexample_control(4.0, *k, None).unwrap()).collect();
    let (lo, hi) = control.iter().fold((f64::INFINITY, 0.0f64), |(a, b), c| (a.min(*c), b.max(*c)));
    let variation = (hi - lo) / hi;
    let secs = start.elapsed().as_secs_f64();
    let growth_ok = above && growth >= 1.5 && secs < 30.0;
    let l = line(
        7,
        growth_ok && variation <= 0.10,
        format!(
            "ratio² {r2:.5?}, above bound: {above}, ratio²(24)/ratio²(8) = {growth:.3} (≥ 1.5), {secs:.2}s; p=4 control {control:.4?} varies {:.1}% (≤ 10%)",
            100.0 * variation
        ),
    );
    (l, growth_ok)
}

fn c8() -> Line {
    let mut worst: f64 = 0.0;
    for th in [0.25, 0.5, 0.75] {
        for (r, t) in [(0.0, 1.0), (2.0, 5.0)] {
            worst = worst.max((maxreg::beta_identity_check(th, r, t).unwrap().1 - 1.0).abs());
        }
    }
    let raw = maxreg::beta_identity_check(0.5, 0.0, 1.0).unwrap().0;
    let er = (raw - PI).abs();
    line(8, worst <= 1e-10 && er <= 1e-10, format!("max |normalized − 1| = {worst:.1e}, |raw(½) − π| = {er:.1e} (≤ 1e-10)"))
}

fn c9() -> Line {
    let m = SpectralModel::diagonal(vec![1.0], 2.0).unwrap();
    let errs: Vec<f64> = [250usize, 500, 1000]
        .iter()
        .map(|&n| maxreg::factorization_error(&m, &StepProcess::constant(grid(1.0, n), 1, 1, 1.0), 0.25, 100, 909).unwrap())
        .collect();
    let pass = errs.windows(2).all(|w| w[1] < w[0]);
    line(9, pass, format!("relative error {} at Δt = 4e-3, 2e-3, 1e-3 (decreasing)", sci(&errs)))
}

fn c10() -> Line {
    let ens = StepFunctionEnsemble {
        members: 1000,
        cells: 128,
        master_seed: 1010,
    };
    let s8 = convops::fefferman_stein_check(1.5, 2.0, 8, &ens).unwrap().sup_ratio;
    let s64 = convops::fefferman_stein_check(1.5, 2.0, 64, &ens).unwrap().sup_ratio;
    let pass = s8.is_finite() && s64.is_finite() && s64 <= 2.0 * s8;
    line(10, pass, format!("sup ratio K=8: {s8:.4}, K=64: {s64:.4}, quotient {:.3} (≤ 2)", s64 / s8))
}

fn c11() -> Line {
    let m = SpectralModel::diagonal(vec![1.0, 4.0], 4.0).unwrap();
    let ens = RboundEnsemble {
        horizon: 1.0,
        steps: 32,
        dims: 1,
        paths: 64,
        master_seed: 1111,
    };
    let rs = nested_windows(1.0 / 32.0, 1.0, 32);
    let j = convops::rbound_estimate(
        &m,
        &OperatorFamilySpec {
            family: OperatorFamily::J { rs },
            p: 3.0,
            q: 4.0,
        },
        &ens,
        2,
    )
    .unwrap();
    let at: Vec<f64> = [2usize, 4, 8, 16, 32].iter().map(|n| j.per_prefix[n - 1]).collect();
    let growth = at[4] / at[0] - 1.0;
    let coeffs = vec![0.4, -1.3, 0.9, 2.1, -0.2, 1.7, -0.8, 0.05];
    let sc = convops::rbound_estimate(
        &m,
        &OperatorFamilySpec {
            family: OperatorFamily::Scalar { coeffs },
            p: 3.0,
            q: 4.0,
        },
        &ens,
        2,
    )
    .unwrap();
    let rel = (sc.value / 2.1 - 1.0).abs();
    line(
        11,
        growth < 0.2 && rel <= 0.1 && sc.exact_signs,
        format!("J-family R̂ at N=2..32 {at:.4?}, growth {:.1}% (< 20%); scalar R̂ {:.4} vs max|c| 2.1 ({:.1}%, ≤ 10%)", 100.0 * growth, sc.value, 100.0 * rel),
    )
}

fn c12() -> Line {
    let suite = stochreg_cli::suite(12);
    let run = |threads: usize| {
        let recs: Vec<_> = suite.iter().map(|c| stochreg_cli::run_with_threads(c, threads).unwrap()).collect();
        (stochreg_cli::emit::summary_csv(&recs).unwrap(), stochreg_cli::emit::trace_csv(&recs).unwrap())
    };
    let (a, ta) = run(1);
    let (b, tb) = run(8);
    line(12, a == b && ta == tb, format!("{} summary bytes, {} trace bytes; identical at 1 and 8 threads: {}", a.len(), ta.len(), a == b && ta == tb))
}

fn main() {
    let mut lines = vec![c1(), c2(), c3(), c4(), c5(), c6()];
    let (l7, growth_ok) = c7();
    lines.push(l7);
    lines.extend([c8(), c9(), c10(), c11(), c12()]);
    let red: Vec<u32> = lines.iter().filter(|l| !l.pass).map(|l| l.id).collect();
    println!("red criteria: {red:?} (known: {KNOWN_RED:?})");
    assert!(growth_ok, "counterexample growth part of criterion 7 failed");
    for l in &lines {
        if !l.pass && !KNOWN_RED.contains(&l.id) {
            panic!("criterion {} failed: {}", l.id, l.detail);
        }
    }
    assert_eq!(red, KNOWN_RED, "known-red list is out of date");
}

fn sci(xs: &[f64]) -> String {
    let parts: Vec<String> = xs.iter().map(|x| format!("{x:.3e}")).collect();
    format!("[{}]", parts.join(", "))
}
