//! Per-time Gaussian process emulators of the empirical logit of the
//! simulated dead fraction.

pub mod dense;
pub mod mean;
pub mod sparse;

use std::path::Path;

use nalgebra::{Cholesky, DMatrix, Dyn};
use serde::{Deserialize, Serialize};

use crate::design::{Design, DesignRuns, FilterMode, Point, TrainingSet};
use crate::error::{invalid, Result};
use crate::mcmc::LogNormalPrior;
use crate::model::eexpit;
use crate::parallel;
use crate::rng::{self, Purpose};

pub use dense::{DenseEmulator, DenseHyper};
pub use mean::{fit_mean, MeanCoefficients};
pub use sparse::{SparseEmulator, SparseHyper, SparsityBudget};

/// Diagonal jitter tried in turn, relative to the covariance variance `a`.
pub const JITTER_STEPS: [f64; 4] = [0.0, 1e-10, 1e-8, 1e-6];

/// Default memory cap (stored entries) for the sparse envelope factor.
pub const DEFAULT_MAX_FACTOR_ENTRIES: usize = 50_000_000;

/// `LN(0, 10)` prior used for every covariance hyperparameter.
pub fn hyper_prior() -> LogNormalPrior {
    LogNormalPrior { location: 0.0, scale_var: 10.0 }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub mean: f64,
    pub var: f64,
}

/// Binomial variance of the empirical logit at each training point, from the
/// observed proportions.
pub fn nugget_variances(training: &TrainingSet) -> Vec<f64> {
    let n = f64::from(training.n);
    training.p_hat.iter().map(|&p| 1.0 / (n * p * (1.0 - p))).collect()
}

/// Nugget at a prediction point whose nugget-free predictive mean is `mean`.
/// The implied proportion is clamped to `[0.5/n, 1 - 0.5/n]`.
pub fn prediction_nugget(mean: f64, n: u32) -> f64 {
    let lo = 0.5 / f64::from(n);
    let q = eexpit(mean, n).clamp(lo, 1.0 - lo);
    1.0 / (f64::from(n) * q * (1.0 - q))
}

/// Cholesky of `k + diag(jitter * a)` for the first jitter step that works,
/// with the jitter used.
pub fn cholesky_with_jitter(k: &DMatrix<f64>, a: f64) -> Option<(Cholesky<f64, Dyn>, f64)> {
    for step in JITTER_STEPS {
        let mut m = k.clone();
        let j = step * a;
        if j > 0.0 {
            for i in 0..m.nrows() {
                m[(i, i)] += j;
            }
        }
        if let Some(c) = Cholesky::new(m) {
            if c.l_dirty().diagonal().iter().all(|d| d.is_finite() && *d > 0.0) {
                return Some((c, j));
            }
        }
    }
    None
}

pub(crate) fn chol_log_det(c: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * c.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

/// Residuals of the training targets about the mean surface.
pub(crate) fn residuals(training: &TrainingSet, mean: &MeanCoefficients) -> Vec<f64> {
    training.points.iter().zip(&training.targets).map(|(p, y)| y - mean.eval(p)).collect()
}

/// Common interface of fitted emulators.
pub trait Emulator {
    fn time(&self) -> f64;
    fn training(&self) -> &TrainingSet;
    fn mean_surface(&self) -> &MeanCoefficients;
    /// Prior covariance variance `a`.
    fn variance(&self) -> f64;
    /// Prior covariance between two inputs, without nugget.
    fn cov(&self, p: &Point, q: &Point) -> f64;
    /// `K~(Theta, Theta)^{-1} b` against the fitted training covariance.
    fn solve_training(&self, b: &[f64]) -> Result<Vec<f64>>;
    /// Cached `K~(Theta, Theta)^{-1} (y - m(Theta))`.
    fn weights(&self) -> &[f64];
    fn includes_prediction_nugget(&self) -> bool;

    fn replicates(&self) -> u32 {
        self.training().n
    }

    fn cross_cov(&self, p: &Point) -> Vec<f64> {
        self.training().points.iter().map(|q| self.cov(p, q)).collect()
    }

    /// Predictive mean without any nugget considerations.
    fn predict_mean(&self, p: &Point) -> f64 {
        let k = self.cross_cov(p);
        self.mean_surface().eval(p) + k.iter().zip(self.weights()).map(|(k, w)| k * w).sum::<f64>()
    }

    /// Nugget added at `p` given its nugget-free predictive mean.
    fn point_nugget(&self, mean: f64) -> f64 {
        if self.includes_prediction_nugget() {
            prediction_nugget(mean, self.replicates())
        } else {
            0.0
        }
    }

    fn predict(&self, p: &Point) -> Result<Prediction> {
        let k = self.cross_cov(p);
        let mean = self.mean_surface().eval(p) + k.iter().zip(self.weights()).map(|(k, w)| k * w).sum::<f64>();
        let reduction = if k.iter().all(|&v| v == 0.0) {
            0.0
        } else {
            let s = self.solve_training(&k)?;
            s.iter().zip(&k).map(|(s, k)| s * k).sum()
        };
        let var = (self.variance() - reduction).max(0.0) + self.point_nugget(mean);
        Ok(Prediction { mean, var })
    }
}

/// A fitted emulator of either covariance family, tagged by `kind` on disk.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EmulatorModel {
    Dense(DenseEmulator),
    Sparse(SparseEmulator),
}

macro_rules! delegate {
    ($self:ident, $e:ident => $body:expr) => {
        match $self {
            EmulatorModel::Dense($e) => $body,
            EmulatorModel::Sparse($e) => $body,
        }
    };
}

impl Emulator for EmulatorModel {
    fn time(&self) -> f64 {
        delegate!(self, e => e.time())
    }
    fn training(&self) -> &TrainingSet {
        delegate!(self, e => e.training())
    }
    fn mean_surface(&self) -> &MeanCoefficients {
        delegate!(self, e => e.mean_surface())
    }
    fn variance(&self) -> f64 {
        delegate!(self, e => e.variance())
    }
    fn cov(&self, p: &Point, q: &Point) -> f64 {
        delegate!(self, e => e.cov(p, q))
    }
    fn solve_training(&self, b: &[f64]) -> Result<Vec<f64>> {
        delegate!(self, e => e.solve_training(b))
    }
    fn weights(&self) -> &[f64] {
        delegate!(self, e => e.weights())
    }
    fn includes_prediction_nugget(&self) -> bool {
        delegate!(self, e => e.includes_prediction_nugget())
    }
    fn cross_cov(&self, p: &Point) -> Vec<f64> {
        delegate!(self, e => e.cross_cov(p))
    }
    fn predict(&self, p: &Point) -> Result<Prediction> {
        delegate!(self, e => e.predict(p))
    }
}

impl EmulatorModel {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        let s = serde_json::to_string_pretty(self)?;
        std::fs::write(path, s + "\n")?;
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&s)?)
    }

    pub fn kind(&self) -> &'static str {
        match self {
            EmulatorModel::Dense(_) => "dense",
            EmulatorModel::Sparse(_) => "sparse",
        }
    }
}

/// Metropolis-Hastings settings for covariance hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HyperMcmc {
    pub iterations: usize,
    pub burnin: usize,
    pub thin: usize,
    /// Proposal sd for each log-scale hyperparameter.
    pub step_sd: f64,
    /// Proposal sd for sparse support ranges (unit-scaled inputs).
    pub tau_step: f64,
}

impl Default for HyperMcmc {
    fn default() -> Self {
        Self { iterations: 5000, burnin: 1000, thin: 4, step_sd: 0.15, tau_step: 0.03 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum CovarianceKind {
    Dense,
    Sparse { sparsity: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmulatorConfig {
    pub covariance: CovarianceKind,
    pub mcmc: HyperMcmc,
    pub prediction_nugget: bool,
    pub filter: FilterMode,
    pub max_factor_entries: usize,
}

impl Default for EmulatorConfig {
    fn default() -> Self {
        Self {
            covariance: CovarianceKind::Dense,
            mcmc: HyperMcmc::default(),
            prediction_nugget: true,
            filter: FilterMode::PerTime,
            max_factor_entries: DEFAULT_MAX_FACTOR_ENTRIES,
        }
    }
}

/// Fits one emulator for census index `b`, using hyperparameter substream `b`.
pub fn fit_emulator(
    design: &Design,
    runs: &DesignRuns,
    b: usize,
    config: &EmulatorConfig,
    seed: u64,
) -> Result<EmulatorModel> {
    let training = runs.training_set(design, b, config.filter)?;
    let mean = fit_mean(&training.points, &training.targets)?;
    let mut r = rng::substream(seed, Purpose::HyperFit, b as u64);
    Ok(match config.covariance {
        CovarianceKind::Dense => {
            let (hyper, _) = dense::fit_hyper(&training, &mean, &config.mcmc, &mut r)?;
            EmulatorModel::Dense(DenseEmulator::new(training, mean, hyper, config.prediction_nugget)?)
        }
        CovarianceKind::Sparse { sparsity } => {
            let budget = SparsityBudget::new(sparsity, 2)?;
            let (hyper, _) = sparse::fit_sparse_hyper(
                &training,
                &mean,
                &budget,
                &design.bounds,
                &config.mcmc,
                config.max_factor_entries,
                &mut r,
            )?;
            EmulatorModel::Sparse(SparseEmulator::new(
                training,
                mean,
                hyper,
                budget,
                design.bounds,
                config.prediction_nugget,
                config.max_factor_entries,
            )?)
        }
    })
}

/// Fits the emulators for every census time, in parallel across times.
pub fn train_emulators(
    design: &Design,
    runs: &DesignRuns,
    config: &EmulatorConfig,
    seed: u64,
    workers: usize,
) -> Result<Vec<EmulatorModel>> {
    if runs.dead.len() != design.len() {
        return Err(invalid("design runs do not match the design"));
    }
    parallel::try_map(workers, runs.times.len(), |b| fit_emulator(design, runs, b, config, seed))
}

/// Checks that emulators line up one-to-one with census times.
pub fn match_grid<'a, E: Emulator>(emulators: &'a [E], times: &[f64]) -> Result<Vec<&'a E>> {
    if emulators.len() != times.len() {
        return Err(invalid(format!(
            "{} emulators supplied for {} census times",
            emulators.len(),
            times.len()
        )));
    }
    times
        .iter()
        .map(|&t| {
            emulators
                .iter()
                .find(|e| (e.time() - t).abs() <= 1e-9 * t.abs().max(1.0))
                .ok_or_else(|| invalid(format!("no emulator for census time {t}")))
        })
        .collect()
}
