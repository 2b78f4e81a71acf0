//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Each exported function returns a flat `Float64Array` laid out row by row.
//! The `*_rows` functions hold the logic and are plain Rust so they can be
//! tested natively.

use bdgp::gp::sparse::{bohman, solve_sparsity_constant};
use bdgp::model::estimate_proportions;
use bdgp::rng::{substream, Purpose};
use bdgp::BirthDeathParams;
use wasm_bindgen::prelude::*;

/// Rows of `(t, P0(t), density(t))` on `points` equally spaced times in `(0, t_max]`.
pub fn extinction_curve_rows(lambda: f64, mu: f64, x0: u32, t_max: f64, points: usize) -> Result<Vec<f64>, String> {
    let p = BirthDeathParams::new(lambda, mu, x0).map_err(|e| e.to_string())?;
    if !(t_max > 0.0 && t_max.is_finite()) || points < 2 {
        return Err("need a positive horizon and at least two points".into());
    }
    let mut out = Vec::with_capacity(3 * points);
    for i in 1..=points {
        let t = t_max * i as f64 / points as f64;
        out.push(t);
        out.push(p.extinction_prob(t).map_err(|e| e.to_string())?);
        out.push(p.extinction_density(t).map_err(|e| e.to_string())?);
    }
    Ok(out)
}

/// Rows of `(t, simulated fraction, P0(t), binomial sd)` for `t = 1, ..., 11`
/// from one cohort of `n` cells.
pub fn simulation_check_rows(lambda: f64, mu: f64, x0: u32, n: u32, seed: u64) -> Result<Vec<f64>, String> {
    let p = BirthDeathParams::new(lambda, mu, x0).map_err(|e| e.to_string())?;
    if n == 0 || n > 200_000 {
        return Err("cohort size must be between 1 and 200000".into());
    }
    let times: Vec<f64> = (1..=11).map(f64::from).collect();
    let mut r = substream(seed, Purpose::Replicate, 0);
    let est = estimate_proportions(&p, n, &times, &mut r).map_err(|e| e.to_string())?;
    let mut out = Vec::with_capacity(4 * times.len());
    for e in est {
        let p0 = p.extinction_prob(e.t).map_err(|e| e.to_string())?;
        out.extend([e.t, e.p_hat, p0, (p0 * (1.0 - p0) / f64::from(n)).sqrt()]);
    }
    Ok(out)
}

/// The support sum `2c` for sparsity `s` in two dimensions, followed by rows
/// of `(distance, k(distance))` for a kernel with support `tau1` on one axis.
pub fn bohman_rows(sparsity: f64, tau1: f64, points: usize) -> Result<Vec<f64>, String> {
    let c = solve_sparsity_constant(sparsity, 2).map_err(|e| e.to_string())?;
    if !(tau1 > 0.0 && tau1 <= 2.0 * c) {
        return Err(format!("tau1 must lie in (0, {:.4}]", 2.0 * c));
    }
    if points < 2 {
        return Err("need at least two points".into());
    }
    let mut out = vec![2.0 * c];
    for i in 0..points {
        let d = 1.2 * tau1 * i as f64 / (points - 1) as f64;
        out.push(d);
        out.push(bohman(d, tau1));
    }
    Ok(out)
}

#[wasm_bindgen]
pub fn extinction_curve(lambda: f64, mu: f64, x0: u32, t_max: f64, points: usize) -> Result<Vec<f64>, JsError> {
    extinction_curve_rows(lambda, mu, x0, t_max, points).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn simulation_check(lambda: f64, mu: f64, x0: u32, n: u32, seed: u64) -> Result<Vec<f64>, JsError> {
    simulation_check_rows(lambda, mu, x0, n, seed).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn bohman_profile(sparsity: f64, tau1: f64, points: usize) -> Result<Vec<f64>, JsError> {
    bohman_rows(sparsity, tau1, points).map_err(|e| JsError::new(&e))
}
