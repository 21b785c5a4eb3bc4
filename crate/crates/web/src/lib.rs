//! wasm-bindgen entry points for the browser demo in `www/`.
//!
//! Only deterministic paths are exposed; the Monte Carlo drivers use rayon
//! and are left to the native CLI.

use wasm_bindgen::prelude::*;

use stochreg::convops;
use stochreg::maxreg::{self, Horizon, NoiseEnsemble};
use stochreg::spectral::{SpectralModel, TimeGrid};
use stochreg::stochastic::random_step_process;

fn js(e: stochreg::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// Flattened pairs `[ratio²(1), bound(1), ratio²(2), bound(2), …]` for the
/// ladder `λ_k = 4^k`, `K = 1..=k_max`, with the default witness.
#[wasm_bindgen]
pub fn counterexample_curve(q: f64, k_max: usize) -> Result<Vec<f64>, JsError> {
    let mut out = Vec::with_capacity(2 * k_max);
    for k in 1..=k_max {
        out.push(maxreg::counterexample_probe(q, k, None).map_err(js)?);
        out.push(maxreg::counterexample_lower_bound(q, k));
    }
    Ok(out)
}

/// Exact `p = q = 2` ratio over the half-line for a random step integrand;
/// it should not depend on the eigenvalues or the seed.
#[wasm_bindgen]
pub fn maxreg_ratio_exact(eigenvalues: Vec<f64>, theta: f64, steps: usize, seed: u64) -> Result<f64, JsError> {
    let mut lam = eigenvalues;
    lam.sort_by(f64::total_cmp);
    let k = lam.len();
    let model = SpectralModel::diagonal(lam, 2.0).map_err(js)?;
    let grid = TimeGrid::new(1.0, steps).map_err(js)?;
    let g = random_step_process(grid, k, 1, seed);
    let r = maxreg::maxreg_ratio(&model, &g, 2.0, theta, &NoiseEnsemble::exact(Horizon::HalfLine)).map_err(js)?;
    Ok(r.ratio)
}

#[wasm_bindgen]
pub fn one_sided_maximal(f: Vec<f64>) -> Vec<f64> {
    convops::one_sided_maximal(&f)
}
