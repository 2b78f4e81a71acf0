//! Out-of-sample emulator checks: individual prediction errors, their
//! probability integral transform, and a Mahalanobis distance.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::design::{maximin_lhd, simulate_points, Design, DesignRuns, MaximinOptions, Point, RETAIN_RANGE};
use crate::error::{invalid, Error, Result};
use crate::gp::{cholesky_with_jitter, Emulator};
use crate::model::elogit;
use crate::rng::{self, Purpose};
use crate::stats;

/// Denominators used for the errors and the distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DiagnosticMode {
    /// Prior variance plus nugget at each validation point, ignoring the
    /// conditioning on the training data.
    Literal,
    /// Predictive variance given the training data, prediction nugget included.
    #[default]
    Predictive,
}

impl fmt::Display for DiagnosticMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DiagnosticMode::Literal => "literal",
            DiagnosticMode::Predictive => "predictive",
        })
    }
}

impl FromStr for DiagnosticMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "literal" => Ok(DiagnosticMode::Literal),
            "predictive" => Ok(DiagnosticMode::Predictive),
            _ => Err(invalid(format!("unknown diagnostic mode {s:?}; expected literal or predictive"))),
        }
    }
}

/// Held-out simulator runs at one census time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationSet {
    pub t: f64,
    pub points: Vec<Point>,
    pub targets: Vec<f64>,
    pub n: u32,
}

impl ValidationSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.len() != self.targets.len() {
            return Err(invalid("validation points and targets differ in length"));
        }
        if self.points.len() < 10 {
            return Err(invalid(format!("validation needs at least 10 points, got {}", self.points.len())));
        }
        Ok(())
    }

    /// First `count` non-extreme points of `runs` at census index `b`, in design order.
    pub fn from_runs(design: &Design, runs: &DesignRuns, b: usize, count: usize) -> Result<Self> {
        let n = runs.n;
        let (mut points, mut targets) = (Vec::new(), Vec::new());
        for (i, dead) in runs.dead.iter().enumerate() {
            let p = f64::from(dead[b]) / f64::from(n);
            if p > RETAIN_RANGE.0 && p < RETAIN_RANGE.1 {
                points.push(design.points[i]);
                targets.push(elogit(p, n));
                if points.len() == count {
                    break;
                }
            }
        }
        let set = Self { t: runs.times[b], points, targets, n };
        set.validate().map_err(|_| Error::InsufficientDesign { t: set.t, retained: set.len(), required: 10 })?;
        Ok(set)
    }
}

/// Fresh validation runs: a Latin hypercube of `pool` points drawn from
/// substream `(seed, Validation, 0)`, simulated with per-point substreams
/// `(seed, ValidationPoint, i)`. Filtering and truncation happen per time in
/// [`ValidationSet::from_runs`].
#[allow(clippy::too_many_arguments)]
pub fn simulate_validation(
    bounds: [(f64, f64); 2],
    pool: usize,
    times: &[f64],
    x0: u32,
    n: u32,
    seed: u64,
    workers: usize,
) -> Result<(Design, DesignRuns)> {
    let mut r = rng::substream(seed, Purpose::Validation, 0);
    let design = maximin_lhd(pool, bounds, MaximinOptions::default(), &mut r)?;
    let runs = simulate_points(&design.points, times, x0, n, seed, Purpose::ValidationPoint, workers)?;
    Ok((design, runs))
}

/// Nugget-free predictive means, prediction nuggets and the covariance of
/// the validation outputs under `mode`.
fn joint<E: Emulator>(em: &E, points: &[Point], mode: DiagnosticMode) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let m = points.len();
    let cross: Vec<Vec<f64>> = points.iter().map(|p| em.cross_cov(p)).collect();
    let means: Vec<f64> = points
        .iter()
        .zip(&cross)
        .map(|(p, k)| em.mean_surface().eval(p) + k.iter().zip(em.weights()).map(|(k, w)| k * w).sum::<f64>())
        .collect();
    let mut c = DMatrix::from_fn(m, m, |i, j| em.cov(&points[i], &points[j]));
    if mode == DiagnosticMode::Predictive {
        let solved: Vec<Vec<f64>> = cross.iter().map(|k| em.solve_training(k)).collect::<Result<_>>()?;
        for i in 0..m {
            for j in 0..=i {
                let v: f64 = cross[i].iter().zip(&solved[j]).map(|(a, b)| a * b).sum();
                c[(i, j)] -= v;
                if i != j {
                    c[(j, i)] -= v;
                }
            }
        }
    }
    for i in 0..m {
        c[(i, i)] = c[(i, i)].max(0.0) + em.point_nugget(means[i]);
    }
    Ok((means, c))
}

/// Mean vector and covariance of the emulator's joint prediction at `points`
/// (predictive mode).
pub fn predictive_joint<E: Emulator>(em: &E, points: &[Point]) -> Result<(Vec<f64>, DMatrix<f64>)> {
    joint(em, points, DiagnosticMode::Predictive)
}

/// Draws validation targets jointly from the emulator's own predictive distribution.
pub fn self_simulated_targets<E: Emulator, R: Rng + ?Sized>(em: &E, points: &[Point], rng: &mut R) -> Result<Vec<f64>> {
    let (mean, cov) = predictive_joint(em, points)?;
    let (chol, _) = cholesky_with_jitter(&cov, em.variance())
        .ok_or_else(|| Error::Diagnostics("predictive covariance is not positive definite".into()))?;
    let z = DVector::from_fn(points.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
    let draw = chol.l() * z;
    Ok(mean.iter().zip(draw.iter()).map(|(m, d)| m + d).collect())
}

pub fn individual_prediction_errors<E: Emulator>(em: &E, val: &ValidationSet, mode: DiagnosticMode) -> Result<Vec<f64>> {
    let (mean, cov) = joint(em, &val.points, mode)?;
    Ok((0..val.len()).map(|i| (val.targets[i] - mean[i]) / cov[(i, i)].sqrt()).collect())
}

/// Standard normal CDF of each error.
pub fn pit_statistics(ipe: &[f64]) -> Vec<f64> {
    ipe.iter().map(|&d| stats::normal_cdf(d)).collect()
}

pub fn mahalanobis<E: Emulator>(em: &E, val: &ValidationSet, mode: DiagnosticMode) -> Result<f64> {
    let (mean, cov) = joint(em, &val.points, mode)?;
    let (chol, _) = cholesky_with_jitter(&cov, em.variance())
        .ok_or_else(|| Error::Diagnostics(format!("validation covariance at t={} is singular", val.t)))?;
    let r = DVector::from_iterator(val.len(), val.targets.iter().zip(&mean).map(|(y, m)| y - m));
    let z = chol
        .l_dirty()
        .solve_lower_triangular(&r)
        .ok_or_else(|| Error::Diagnostics("triangular solve failed".into()))?;
    Ok(z.norm_squared())
}

/// Central probability mass of the reference intervals.
pub const REFERENCE_MASS: f64 = 0.95;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub t: f64,
    pub mode: DiagnosticMode,
    pub points: Vec<Point>,
    pub targets: Vec<f64>,
    pub ipe: Vec<f64>,
    pub pit: Vec<f64>,
    pub md2: f64,
    pub df: usize,
    pub chi2_interval: (f64, f64),
}

/// Summary written next to the per-point table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsSummary {
    pub t: f64,
    pub mode: DiagnosticMode,
    pub points: usize,
    pub md2: f64,
    pub df: usize,
    pub chi2_interval: (f64, f64),
    pub md2_inside: bool,
    pub ipe_inside_fraction: f64,
    pub pit_ks_statistic: f64,
    pub pit_ks_p_value: f64,
}

impl DiagnosticsReport {
    pub fn md2_inside(&self) -> bool {
        self.md2 >= self.chi2_interval.0 && self.md2 <= self.chi2_interval.1
    }

    /// Fraction of errors inside the central normal interval.
    pub fn ipe_inside_fraction(&self) -> f64 {
        let z = stats::normal_quantile(0.5 + 0.5 * REFERENCE_MASS);
        self.ipe.iter().filter(|d| d.abs() <= z).count() as f64 / self.ipe.len() as f64
    }

    pub fn summary(&self) -> DiagnosticsSummary {
        let (d, p) = stats::ks_uniform(&self.pit);
        DiagnosticsSummary {
            t: self.t,
            mode: self.mode,
            points: self.ipe.len(),
            md2: self.md2,
            df: self.df,
            chi2_interval: self.chi2_interval,
            md2_inside: self.md2_inside(),
            ipe_inside_fraction: self.ipe_inside_fraction(),
            pit_ks_statistic: d,
            pit_ks_p_value: p,
        }
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["idx", "log_lambda", "log_mu", "x", "ipe", "pit"])?;
        for i in 0..self.ipe.len() {
            w.write_record([
                i.to_string(),
                self.points[i][0].to_string(),
                self.points[i][1].to_string(),
                self.targets[i].to_string(),
                self.ipe[i].to_string(),
                self.pit[i].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Plot-ready counts: IPE in unit-width bins over `[-4, 4]` (outer bins
    /// open) and PIT in ten equal bins.
    pub fn write_histogram_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["statistic", "lo", "hi", "count"])?;
        let mut ipe = [0usize; 8];
        for d in &self.ipe {
            ipe[((d + 4.0).floor().clamp(0.0, 7.0)) as usize] += 1;
        }
        for (k, c) in ipe.iter().enumerate() {
            let lo = if k == 0 { "-inf".to_string() } else { (k as f64 - 4.0).to_string() };
            let hi = if k == 7 { "inf".to_string() } else { (k as f64 - 3.0).to_string() };
            w.write_record(["ipe".to_string(), lo, hi, c.to_string()])?;
        }
        let mut pit = [0usize; 10];
        for u in &self.pit {
            pit[((u * 10.0).floor() as usize).min(9)] += 1;
        }
        for (k, c) in pit.iter().enumerate() {
            w.write_record(["pit".to_string(), (k as f64 / 10.0).to_string(), ((k + 1) as f64 / 10.0).to_string(), c.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn diagnose<E: Emulator>(em: &E, val: &ValidationSet, mode: DiagnosticMode) -> Result<DiagnosticsReport> {
    val.validate()?;
    if (em.time() - val.t).abs() > 1e-9 * val.t.abs().max(1.0) {
        return Err(invalid(format!("emulator time {} does not match validation time {}", em.time(), val.t)));
    }
    let ipe = individual_prediction_errors(em, val, mode)?;
    let md2 = mahalanobis(em, val, mode)?;
    let df = val.len();
    Ok(DiagnosticsReport {
        t: val.t,
        mode,
        points: val.points.clone(),
        targets: val.targets.clone(),
        pit: pit_statistics(&ipe),
        ipe,
        md2,
        df,
        chi2_interval: stats::chi2_central_interval(df as f64, REFERENCE_MASS),
    })
}
