//! Emulator with a compactly supported Bohman covariance on unit-scaled inputs.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{
    chol_log_det, cholesky_with_jitter, hyper_prior, nugget_variances, residuals, Emulator, HyperMcmc,
    MeanCoefficients, Prediction, JITTER_STEPS,
};
use crate::design::{scale_to_unit, Point, TrainingSet};
use crate::error::{invalid, Error, Result};
use crate::mcmc::{mh_sample_with, MCMCConfig, ReflectedWalk, Trace};
use crate::sparse::{SparseSolver, SparseSym};
use crate::stats;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Bohman correlation at distance `delta` for support range `tau`.
pub fn bohman(delta: f64, tau: f64) -> f64 {
    if delta >= tau {
        return 0.0;
    }
    let x = delta / tau;
    let px = std::f64::consts::PI * x;
    (1.0 - x) * px.cos() + px.sin() / std::f64::consts::PI
}

/// Target sparsity `s` and the matching bound `c` on the mean support range,
/// from `c (2 - c) = (1 - s)^{1/n_p}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SparsityBudget {
    pub s: f64,
    pub n_p: usize,
    pub c: f64,
}

pub fn solve_sparsity_constant(s: f64, n_p: usize) -> Result<f64> {
    if !(s > 0.0 && s < 1.0) || n_p == 0 {
        return Err(invalid(format!("sparsity must lie in (0, 1) with n_p >= 1, got s={s}, n_p={n_p}")));
    }
    let q = (1.0 - s).powf(1.0 / n_p as f64);
    Ok(1.0 - (1.0 - q).sqrt())
}

impl SparsityBudget {
    pub fn new(s: f64, n_p: usize) -> Result<Self> {
        Ok(Self { s, n_p, c: solve_sparsity_constant(s, n_p)? })
    }

    /// Upper edge of the proposal box for each support range.
    pub fn box_edge(&self) -> f64 {
        (self.n_p as f64 * self.c).min(1.0)
    }

    pub fn admits(&self, tau: &[f64]) -> bool {
        tau.len() == self.n_p
            && tau.iter().all(|&t| t > 0.0 && t < 1.0)
            && tau.iter().sum::<f64>() / self.n_p as f64 <= self.c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseHyper {
    pub a: f64,
    pub tau: Vec<f64>,
}

/// Draws support ranges uniformly from the constrained simplex by rejection.
pub fn sample_tau_prior<R: Rng + ?Sized>(budget: &SparsityBudget, rng: &mut R) -> Vec<f64> {
    let edge = budget.box_edge();
    loop {
        let tau: Vec<f64> = (0..budget.n_p).map(|_| edge * rng.random::<f64>()).collect();
        if budget.admits(&tau) {
            return tau;
        }
    }
}

fn pair_cov(p: &Point, q: &Point, h: &SparseHyper) -> f64 {
    let mut v = h.a;
    for k in 0..2 {
        let r = bohman((p[k] - q[k]).abs(), h.tau[k]);
        if r == 0.0 {
            return 0.0;
        }
        v *= r;
    }
    v
}

/// Covariance over unit-scaled points, storing only nonzero entries.
pub fn sparse_cov(points: &[Point], h: &SparseHyper) -> SparseSym {
    let rows = (0..points.len())
        .map(|i| {
            let mut row: Vec<(usize, f64)> = (0..i)
                .filter_map(|j| {
                    let v = pair_cov(&points[i], &points[j], h);
                    (v != 0.0).then_some((j, v))
                })
                .collect();
            row.push((i, h.a));
            row
        })
        .collect();
    SparseSym::from_lower_rows(rows)
}

fn scaled(points: &[Point], bounds: &[(f64, f64); 2]) -> Vec<Point> {
    points.iter().map(|p| scale_to_unit(p, bounds)).collect()
}

/// Factors `K + diag(nugget)` with the shared jitter ladder.
fn factor(k: &SparseSym, nugget: &[f64], a: f64, max_entries: usize) -> Option<(SparseSolver, f64)> {
    for step in JITTER_STEPS {
        let mut m = k.clone();
        let j = step * a;
        m.add_diagonal(&nugget.iter().map(|v| v + j).collect::<Vec<_>>());
        if let Some(s) = SparseSolver::new(&m, max_entries) {
            return Some((s, j));
        }
    }
    None
}

fn log_likelihood(pts: &[Point], resid: &[f64], nugget: &[f64], h: &SparseHyper, max_entries: usize) -> f64 {
    let k = sparse_cov(pts, h);
    let (quad, log_det) = match factor(&k, nugget, h.a, max_entries) {
        Some((s, _)) => match (s.quad_form(resid), s.log_det()) {
            (Ok(q), Some(ld)) => (q, ld),
            _ => {
                // The iterative path has no determinant; fall back to a dense factor.
                let mut d = k.to_dense();
                for (i, v) in nugget.iter().enumerate() {
                    d[(i, i)] += v;
                }
                let Some((c, _)) = cholesky_with_jitter(&d, h.a) else {
                    return f64::NEG_INFINITY;
                };
                let r = nalgebra::DVector::from_column_slice(resid);
                (r.dot(&c.solve(&r)), chol_log_det(&c))
            }
        },
        None => return f64::NEG_INFINITY,
    };
    -0.5 * (quad + log_det + resid.len() as f64 * LN_2PI)
}

/// Log posterior of `(a, tau)`: `LN(0, 10)` on `a`, uniform prior on the
/// constrained support ranges, and the normal likelihood of the targets.
pub fn sparse_hyper_log_posterior(
    h: &SparseHyper,
    training: &TrainingSet,
    mean: &MeanCoefficients,
    budget: &SparsityBudget,
    bounds: &[(f64, f64); 2],
) -> f64 {
    if !(h.a > 0.0) || !budget.admits(&h.tau) {
        return f64::NEG_INFINITY;
    }
    hyper_prior().ln_pdf(h.a)
        + log_likelihood(
            &scaled(&training.points, bounds),
            &residuals(training, mean),
            &nugget_variances(training),
            h,
            usize::MAX,
        )
}

/// Metropolis-Hastings over `(log a, tau)`, with the support ranges proposed
/// by reflected walks inside the prior box. Returns posterior means.
#[allow(clippy::too_many_arguments)]
pub fn fit_sparse_hyper<R: Rng + ?Sized>(
    training: &TrainingSet,
    mean: &MeanCoefficients,
    budget: &SparsityBudget,
    bounds: &[(f64, f64); 2],
    config: &HyperMcmc,
    max_entries: usize,
    rng: &mut R,
) -> Result<(SparseHyper, Trace)> {
    training.validate()?;
    if budget.n_p != 2 {
        return Err(invalid("the emulator input has two dimensions"));
    }
    let pts = scaled(&training.points, bounds);
    let resid = residuals(training, mean);
    let nugget = nugget_variances(training);
    let var = stats::sd(&resid).powi(2);
    let a0 = (var - stats::mean(&nugget)).max(0.1 * var).max(1e-6);
    let tau0 = (budget.n_p as f64 * budget.c / (budget.n_p as f64 + 1.0)).min(0.5);
    let prior = hyper_prior();
    let target = |th: &[f64]| {
        let h = SparseHyper { a: th[0].exp(), tau: th[1..].to_vec() };
        if !budget.admits(&h.tau) {
            return f64::NEG_INFINITY;
        }
        prior.ln_pdf_log(th[0]) + log_likelihood(&pts, &resid, &nugget, &h, max_entries)
    };
    let edge = budget.box_edge();
    let walk = ReflectedWalk {
        step_sd: vec![config.step_sd, config.tau_step, config.tau_step],
        bounds: vec![None, Some((0.0, edge)), Some((0.0, edge))],
    };
    let cfg = MCMCConfig::new(config.iterations, config.burnin, config.thin, walk.step_sd.clone())?;
    let trace = mh_sample_with(target, &walk, &[a0.ln(), tau0, tau0], &["log_a", "tau1", "tau2"], &cfg, rng)?;
    let a = stats::mean(&trace.column(0).iter().map(|v| v.exp()).collect::<Vec<_>>());
    let tau = vec![stats::mean(&trace.column(1)), stats::mean(&trace.column(2))];
    Ok((SparseHyper { a, tau }, trace))
}

/// On-disk form of a sparse emulator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseEmulatorData {
    pub training: TrainingSet,
    pub mean: MeanCoefficients,
    pub hyper: SparseHyper,
    pub budget: SparsityBudget,
    /// Per-dimension range mapped onto `[0, 1]` before applying the kernel.
    pub scale: [(f64, f64); 2],
    pub prediction_nugget: bool,
    pub max_factor_entries: usize,
}

#[derive(Debug, Clone)]
struct Cache {
    scaled: Vec<Point>,
    cov: SparseSym,
    solver: SparseSolver,
    alpha: Vec<f64>,
    jitter: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "SparseEmulatorData", into = "SparseEmulatorData")]
pub struct SparseEmulator {
    data: SparseEmulatorData,
    cache: Cache,
}

impl TryFrom<SparseEmulatorData> for SparseEmulator {
    type Error = Error;

    fn try_from(data: SparseEmulatorData) -> Result<Self> {
        data.training.validate()?;
        if !(data.hyper.a > 0.0) || !data.budget.admits(&data.hyper.tau) {
            return Err(invalid("sparse hyperparameters violate the support constraint"));
        }
        let scaled = scaled(&data.training.points, &data.scale);
        let cov = sparse_cov(&scaled, &data.hyper);
        let nugget = nugget_variances(&data.training);
        let (solver, jitter) =
            factor(&cov, &nugget, data.hyper.a, data.max_factor_entries).ok_or(Error::Factorization)?;
        let alpha = solver.solve(&residuals(&data.training, &data.mean))?;
        Ok(Self { data, cache: Cache { scaled, cov, solver, alpha, jitter } })
    }
}

impl From<SparseEmulator> for SparseEmulatorData {
    fn from(e: SparseEmulator) -> Self {
        e.data
    }
}

impl SparseEmulator {
    pub fn new(
        training: TrainingSet,
        mean: MeanCoefficients,
        hyper: SparseHyper,
        budget: SparsityBudget,
        scale: [(f64, f64); 2],
        prediction_nugget: bool,
        max_factor_entries: usize,
    ) -> Result<Self> {
        SparseEmulatorData { training, mean, hyper, budget, scale, prediction_nugget, max_factor_entries }
            .try_into()
    }

    pub fn hyper(&self) -> &SparseHyper {
        &self.data.hyper
    }

    pub fn budget(&self) -> &SparsityBudget {
        &self.data.budget
    }

    /// Covariance of the training points, without nugget.
    pub fn training_cov(&self) -> &SparseSym {
        &self.cache.cov
    }

    pub fn jitter(&self) -> f64 {
        self.cache.jitter
    }

    pub fn uses_factorization(&self) -> bool {
        matches!(self.cache.solver, SparseSolver::Factor(_))
    }

    pub fn with_prediction_nugget(mut self, on: bool) -> Self {
        self.data.prediction_nugget = on;
        self
    }
}

impl Emulator for SparseEmulator {
    fn time(&self) -> f64 {
        self.data.training.t
    }
    fn training(&self) -> &TrainingSet {
        &self.data.training
    }
    fn mean_surface(&self) -> &MeanCoefficients {
        &self.data.mean
    }
    fn variance(&self) -> f64 {
        self.data.hyper.a
    }
    fn cov(&self, p: &Point, q: &Point) -> f64 {
        pair_cov(&scale_to_unit(p, &self.data.scale), &scale_to_unit(q, &self.data.scale), &self.data.hyper)
    }
    fn cross_cov(&self, p: &Point) -> Vec<f64> {
        let u = scale_to_unit(p, &self.data.scale);
        self.cache.scaled.iter().map(|q| pair_cov(&u, q, &self.data.hyper)).collect()
    }
    fn solve_training(&self, b: &[f64]) -> Result<Vec<f64>> {
        self.cache.solver.solve(b)
    }
    fn weights(&self) -> &[f64] {
        &self.cache.alpha
    }
    fn includes_prediction_nugget(&self) -> bool {
        self.data.prediction_nugget
    }

    fn predict(&self, p: &Point) -> Result<Prediction> {
        let k = self.cross_cov(p);
        let mut mean = self.data.mean.eval(p);
        let mut reduction = 0.0;
        if k.iter().any(|&v| v != 0.0) {
            mean += k.iter().zip(&self.cache.alpha).map(|(k, w)| k * w).sum::<f64>();
            reduction = self.cache.solver.quad_form(&k)?;
        }
        let var = (self.data.hyper.a - reduction).max(0.0) + self.point_nugget(mean);
        Ok(Prediction { mean, var })
    }
}
