//! Emulator with a Gaussian (squared-exponential) covariance.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{
    chol_log_det, cholesky_with_jitter, hyper_prior, nugget_variances, residuals, Emulator, HyperMcmc,
    MeanCoefficients,
};
use crate::design::{Point, TrainingSet};
use crate::error::{invalid, Error, Result};
use crate::mcmc::{mh_sample, MCMCConfig, Trace};
use crate::stats;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DenseHyper {
    pub a: f64,
    pub r1: f64,
    pub r2: f64,
}

impl DenseHyper {
    pub fn validate(&self) -> Result<()> {
        if [self.a, self.r1, self.r2].iter().all(|v| *v > 0.0 && v.is_finite()) {
            Ok(())
        } else {
            Err(invalid("dense hyperparameters must be positive and finite"))
        }
    }
}

/// `a exp(-d1^2/r1^2 - d2^2/r2^2)`.
pub fn gauss_cov(p: &Point, q: &Point, h: &DenseHyper) -> f64 {
    let d1 = (p[0] - q[0]) / h.r1;
    let d2 = (p[1] - q[1]) / h.r2;
    h.a * (-d1 * d1 - d2 * d2).exp()
}

fn training_cov(points: &[Point], h: &DenseHyper, nugget: &[f64]) -> DMatrix<f64> {
    let n = points.len();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        k[(i, i)] = h.a + nugget[i];
        for j in 0..i {
            let v = gauss_cov(&points[i], &points[j], h);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

fn mvn_log_density(points: &[Point], resid: &[f64], nugget: &[f64], h: &DenseHyper) -> f64 {
    let k = training_cov(points, h, nugget);
    let Some((chol, _)) = cholesky_with_jitter(&k, h.a) else {
        return f64::NEG_INFINITY;
    };
    let r = DVector::from_column_slice(resid);
    let z = chol.l_dirty().solve_lower_triangular(&r);
    let Some(z) = z else {
        return f64::NEG_INFINITY;
    };
    -0.5 * (z.norm_squared() + chol_log_det(&chol) + resid.len() as f64 * LN_2PI)
}

/// Log prior (independent `LN(0, 10)` on `a, r1, r2`) plus the normal log
/// density of the training targets. `-inf` if the covariance cannot be factored.
pub fn hyper_log_posterior(h: &DenseHyper, training: &TrainingSet, mean: &MeanCoefficients) -> f64 {
    if h.validate().is_err() {
        return f64::NEG_INFINITY;
    }
    let prior = hyper_prior();
    let lp = prior.ln_pdf(h.a) + prior.ln_pdf(h.r1) + prior.ln_pdf(h.r2);
    lp + mvn_log_density(&training.points, &residuals(training, mean), &nugget_variances(training), h)
}

fn initial_hyper(training: &TrainingSet, resid: &[f64], nugget: &[f64]) -> DenseHyper {
    let var = stats::sd(resid).powi(2);
    let a = (var - stats::mean(nugget)).max(0.1 * var).max(1e-6);
    let width = |k: usize| {
        let (lo, hi) = training
            .points
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p[k]), hi.max(p[k])));
        (0.3 * (hi - lo)).max(1e-3)
    };
    DenseHyper { a, r1: width(0), r2: width(1) }
}

/// Metropolis-Hastings on `(log a, log r1, log r2)`; returns the posterior mean
/// of each hyperparameter on its natural scale together with the log-scale trace.
pub fn fit_hyper<R: Rng + ?Sized>(
    training: &TrainingSet,
    mean: &MeanCoefficients,
    config: &HyperMcmc,
    rng: &mut R,
) -> Result<(DenseHyper, Trace)> {
    training.validate()?;
    let resid = residuals(training, mean);
    let nugget = nugget_variances(training);
    let prior = hyper_prior();
    let init = initial_hyper(training, &resid, &nugget);
    let target = |th: &[f64]| {
        let h = DenseHyper { a: th[0].exp(), r1: th[1].exp(), r2: th[2].exp() };
        let lp: f64 = th.iter().map(|&v| prior.ln_pdf_log(v)).sum();
        lp + mvn_log_density(&training.points, &resid, &nugget, &h)
    };
    let cfg = MCMCConfig::new(config.iterations, config.burnin, config.thin, vec![config.step_sd; 3])?;
    let trace = mh_sample(
        target,
        &[init.a.ln(), init.r1.ln(), init.r2.ln()],
        &["log_a", "log_r1", "log_r2"],
        &cfg,
        rng,
    )?;
    let m = |j: usize| stats::mean(&trace.column(j).iter().map(|v| v.exp()).collect::<Vec<_>>());
    Ok((DenseHyper { a: m(0), r1: m(1), r2: m(2) }, trace))
}

/// On-disk form of a dense emulator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseEmulatorData {
    pub training: TrainingSet,
    pub mean: MeanCoefficients,
    pub hyper: DenseHyper,
    pub prediction_nugget: bool,
}

#[derive(Debug, Clone)]
struct Cache {
    chol: Cholesky<f64, Dyn>,
    alpha: Vec<f64>,
    jitter: f64,
}

/// Fitted dense emulator. The Cholesky factor of the training covariance is
/// rebuilt from the stored values whenever the emulator is loaded.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "DenseEmulatorData", into = "DenseEmulatorData")]
pub struct DenseEmulator {
    data: DenseEmulatorData,
    cache: Cache,
}

impl TryFrom<DenseEmulatorData> for DenseEmulator {
    type Error = Error;

    fn try_from(data: DenseEmulatorData) -> Result<Self> {
        data.training.validate()?;
        data.hyper.validate()?;
        let k = training_cov(&data.training.points, &data.hyper, &nugget_variances(&data.training));
        let (chol, jitter) = cholesky_with_jitter(&k, data.hyper.a).ok_or(Error::Factorization)?;
        let resid = DVector::from_vec(residuals(&data.training, &data.mean));
        let alpha = chol.solve(&resid).as_slice().to_vec();
        Ok(Self { data, cache: Cache { chol, alpha, jitter } })
    }
}

impl From<DenseEmulator> for DenseEmulatorData {
    fn from(e: DenseEmulator) -> Self {
        e.data
    }
}

impl DenseEmulator {
    pub fn new(
        training: TrainingSet,
        mean: MeanCoefficients,
        hyper: DenseHyper,
        prediction_nugget: bool,
    ) -> Result<Self> {
        DenseEmulatorData { training, mean, hyper, prediction_nugget }.try_into()
    }

    pub fn hyper(&self) -> &DenseHyper {
        &self.data.hyper
    }

    /// Diagonal jitter that was needed to factor the training covariance.
    pub fn jitter(&self) -> f64 {
        self.cache.jitter
    }

    pub fn with_prediction_nugget(mut self, on: bool) -> Self {
        self.data.prediction_nugget = on;
        self
    }
}

impl Emulator for DenseEmulator {
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
        gauss_cov(p, q, &self.data.hyper)
    }
    fn solve_training(&self, b: &[f64]) -> Result<Vec<f64>> {
        Ok(self.cache.chol.solve(&DVector::from_column_slice(b)).as_slice().to_vec())
    }
    fn weights(&self) -> &[f64] {
        &self.cache.alpha
    }
    fn includes_prediction_nugget(&self) -> bool {
        self.data.prediction_nugget
    }
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)]
mod tests {
    use super::*;
    use crate::design::{maximin_lhd, MaximinOptions};
    use crate::gp::prediction_nugget;
    use crate::rng::substream;
    use crate::rng::Purpose;
    use rand_distr::{Distribution, StandardNormal};

    fn three_point() -> (TrainingSet, MeanCoefficients) {
        let ts = TrainingSet {
            t: 2.0,
            points: vec![[0.1, -0.2], [0.5, 0.3], [-0.4, 0.6]],
            targets: vec![0.7, -0.3, 1.1],
            p_hat: vec![0.4, 0.6, 0.2],
            n: 100,
            retained_idx: vec![0, 1, 2],
        };
        (ts, MeanCoefficients([0.2, 0.5, -0.1, 0.0, 0.0, 0.0]))
    }

    fn inv3(m: [[f64; 3]; 3]) -> ([[f64; 3]; 3], f64) {
        let c = |r: usize, s: usize| {
            let (r1, r2) = ((r + 1) % 3, (r + 2) % 3);
            let (s1, s2) = ((s + 1) % 3, (s + 2) % 3);
            m[r1][s1] * m[r2][s2] - m[r1][s2] * m[r2][s1]
        };
        let det = m[0][0] * c(0, 0) + m[0][1] * c(0, 1) + m[0][2] * c(0, 2);
        let mut inv = [[0.0; 3]; 3];
        for r in 0..3 {
            for s in 0..3 {
                inv[s][r] = c(r, s) / det;
            }
        }
        (inv, det)
    }

    /// Hand-assembled `K~` for the three-point fixture.
    fn three_point_cov(ts: &TrainingSet, h: &DenseHyper) -> [[f64; 3]; 3] {
        let mut k = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                let d1 = ts.points[i][0] - ts.points[j][0];
                let d2 = ts.points[i][1] - ts.points[j][1];
                k[i][j] = h.a * (-(d1 * d1) / (h.r1 * h.r1) - (d2 * d2) / (h.r2 * h.r2)).exp();
            }
            k[i][i] += 1.0 / (ts.n as f64 * ts.p_hat[i] * (1.0 - ts.p_hat[i]));
        }
        k
    }

    #[test]
    fn gaussian_covariance_values() {
        let h = DenseHyper { a: 2.0, r1: 1.0, r2: 2.0 };
        assert_eq!(gauss_cov(&[0.3, 0.4], &[0.3, 0.4], &h), 2.0);
        assert!((gauss_cov(&[0.0, 0.0], &[1.0, 0.0], &h) - 2.0 * (-1.0f64).exp()).abs() < 1e-15);
        let v = gauss_cov(&[0.0, 0.0], &[0.5, 1.0], &h);
        assert!((v - 2.0 * (-0.5f64).exp()).abs() < 1e-14);
        assert!((v - 1.2131).abs() < 1e-4);
        assert_eq!(v, gauss_cov(&[0.5, 1.0], &[0.0, 0.0], &h));
    }

    #[test]
    fn nugget_values() {
        let mut ts = three_point().0;
        ts.n = 1000;
        ts.p_hat = vec![0.5, 0.005, 0.995];
        let v = nugget_variances(&ts);
        assert!((v[0] - 0.004).abs() < 1e-15);
        assert!((v[1] - 0.201_005).abs() < 1e-5);
        ts.n = 1_000_000_000;
        assert!(nugget_variances(&ts)[0] < 1e-8);
    }

    #[test]
    fn log_posterior_matches_three_by_three_oracle() {
        let (ts, mean) = three_point();
        let h = DenseHyper { a: 0.8, r1: 0.6, r2: 1.3 };
        let (inv, det) = inv3(three_point_cov(&ts, &h));
        let r: Vec<f64> = (0..3).map(|i| ts.targets[i] - mean.eval(&ts.points[i])).collect();
        let mut q = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                q += r[i] * inv[i][j] * r[j];
            }
        }
        let ll = -0.5 * (q + det.ln() + 3.0 * (2.0 * std::f64::consts::PI).ln());
        let lp: f64 = [h.a, h.r1, h.r2]
            .iter()
            .map(|&x: &f64| {
                -x.ln() - 0.5 * (2.0 * std::f64::consts::PI * 10.0).ln() - x.ln().powi(2) / 20.0
            })
            .sum();
        assert!((hyper_log_posterior(&h, &ts, &mean) - (ll + lp)).abs() < 1e-8);
    }

    #[test]
    fn exact_mean_targets_prefer_small_variance() {
        let (mut ts, mean) = three_point();
        ts.targets = ts.points.iter().map(|p| mean.eval(p)).collect();
        let ll = |a: f64| {
            let h = DenseHyper { a, r1: 0.5, r2: 0.5 };
            mvn_log_density(&ts.points, &residuals(&ts, &mean), &nugget_variances(&ts), &h)
        };
        assert!(ll(0.01) > ll(0.1) && ll(0.1) > ll(1.0));
        let median = DenseHyper { a: 1.0, r1: 1.0, r2: 1.0 };
        assert!(hyper_log_posterior(&median, &three_point().0, &mean).is_finite());
    }

    #[test]
    fn prediction_matches_three_by_three_oracle() {
        let (ts, mean) = three_point();
        let h = DenseHyper { a: 0.8, r1: 0.6, r2: 1.3 };
        let (inv, _) = inv3(three_point_cov(&ts, &h));
        let star = [0.2, 0.1];
        let k: Vec<f64> = ts.points.iter().map(|p| gauss_cov(&star, p, &h)).collect();
        let r: Vec<f64> = (0..3).map(|i| ts.targets[i] - mean.eval(&ts.points[i])).collect();
        let (mut m, mut red) = (mean.eval(&star), 0.0);
        for i in 0..3 {
            for j in 0..3 {
                m += k[i] * inv[i][j] * r[j];
                red += k[i] * inv[i][j] * k[j];
            }
        }
        let v = h.a - red + prediction_nugget(m, ts.n);
        let em = DenseEmulator::new(ts, mean, h, true).unwrap();
        let p = em.predict(&star).unwrap();
        assert!((p.mean - m).abs() < 1e-8);
        assert!((p.var - v).abs() < 1e-8);
        let bare = em.clone().with_prediction_nugget(false).predict(&star).unwrap();
        assert!((bare.var - (h.a - red)).abs() < 1e-8);
    }

    fn synthetic(n_pts: usize, h: &DenseHyper, seed: u64) -> (TrainingSet, MeanCoefficients) {
        let mut r = substream(seed, Purpose::Design, 0);
        let d = maximin_lhd(n_pts, [(0.0, 3.0), (0.0, 3.0)], MaximinOptions::default(), &mut r).unwrap();
        let nug = 0.004;
        let mut k = training_cov(&d.points, h, &vec![nug; n_pts]);
        for i in 0..n_pts {
            k[(i, i)] += 1e-10;
        }
        let l = Cholesky::new(k).unwrap().unpack();
        let z = DVector::from_fn(n_pts, |_, _| StandardNormal.sample(&mut r));
        let f = l * z;
        let mean = MeanCoefficients([0.5, -0.3, 0.2, 0.0, 0.1, 0.0]);
        let ts = TrainingSet {
            t: 1.0,
            targets: d.points.iter().enumerate().map(|(i, p)| mean.eval(p) + f[i]).collect(),
            points: d.points,
            p_hat: vec![0.5; n_pts],
            n: 1000,
            retained_idx: (0..n_pts).collect(),
        };
        (ts, mean)
    }

    #[test]
    fn far_points_revert_to_the_prior() {
        let h = DenseHyper { a: 1.0, r1: 0.5, r2: 0.5 };
        let (ts, mean) = synthetic(40, &h, 3);
        let em = DenseEmulator::new(ts, mean, h, true).unwrap();
        let far = [30.0, -25.0];
        let p = em.predict(&far).unwrap();
        let m = mean.eval(&far);
        assert!((p.mean - m).abs() <= 0.01 * m.abs());
        let v = h.a + prediction_nugget(p.mean, 1000);
        assert!((p.var - v).abs() <= 0.01 * v);
    }

    #[test]
    fn training_points_are_nearly_interpolated() {
        let h = DenseHyper { a: 1.0, r1: 0.5, r2: 0.5 };
        let (ts, mean) = synthetic(60, &h, 4);
        let em = DenseEmulator::new(ts.clone(), mean, h, true).unwrap();
        for (i, p) in ts.points.iter().enumerate() {
            let m = em.predict(p).unwrap().mean;
            assert!((m - ts.targets[i]).abs() < 2.0 * 0.004f64.sqrt(), "point {i}");
        }
    }

    #[test]
    fn covariance_is_numerically_psd() {
        let h = DenseHyper { a: 1.7, r1: 0.8, r2: 1.5 };
        let mut r = substream(9, Purpose::Design, 0);
        let d = maximin_lhd(100, [(-3.0, 3.0), (-3.0, 3.0)], MaximinOptions::default(), &mut r).unwrap();
        let k = training_cov(&d.points, &h, &[0.0; 100]);
        let min = k.symmetric_eigenvalues().min();
        assert!(min >= -1e-8 * h.a, "{min}");
        assert!(cholesky_with_jitter(&k, h.a).is_some());
    }

    #[test]
    fn coverage_on_draws_from_the_process() {
        let h = DenseHyper { a: 1.0, r1: 0.5, r2: 0.5 };
        let (all, mean) = synthetic(280, &h, 5);
        let (mut train, mut test) = (all.clone(), Vec::new());
        train.points.clear();
        train.targets.clear();
        for i in 0..all.len() {
            if i % 7 < 5 && train.points.len() < 80 {
                train.points.push(all.points[i]);
                train.targets.push(all.targets[i]);
            } else {
                test.push((all.points[i], all.targets[i]));
            }
        }
        test.truncate(200);
        assert_eq!(test.len(), 200);
        train.p_hat = vec![0.5; train.points.len()];
        train.retained_idx = (0..train.points.len()).collect();
        let em = DenseEmulator::new(train, mean, h, false).unwrap();
        // Held-out draws carry the same binomial noise as the training targets.
        let inside = test
            .iter()
            .filter(|(p, y)| {
                let pr = em.predict(p).unwrap();
                (y - pr.mean).abs() <= 1.96 * (pr.var + 0.004).sqrt()
            })
            .count() as f64
            / 200.0;
        assert!((0.90..=0.99).contains(&inside), "{inside}");
    }

    #[test]
    fn hyperparameters_are_recovered_and_stable() {
        let truth = DenseHyper { a: 1.0, r1: 0.5, r2: 0.5 };
        let (ts, mean) = synthetic(150, &truth, 11);
        let fitted_mean = crate::gp::fit_mean(&ts.points, &ts.targets).unwrap();
        // The posterior here is tighter than on binomial data, so take smaller steps.
        let cfg = HyperMcmc { iterations: 10_000, burnin: 1000, thin: 4, step_sd: 0.06, ..HyperMcmc::default() };
        let mut fits = Vec::new();
        for seed in [1, 2] {
            let mut r = substream(seed, Purpose::HyperFit, 0);
            let (h, trace) = fit_hyper(&ts, &fitted_mean, &cfg, &mut r).unwrap();
            assert!((0.1..0.7).contains(&trace.acceptance_rate), "{}", trace.acceptance_rate);
            fits.push(h);
        }
        let _ = mean;
        let h = fits[0];
        for (est, tru) in [(h.a, truth.a), (h.r1, truth.r1), (h.r2, truth.r2)] {
            assert!((est - tru).abs() <= 0.5 * tru, "{h:?}");
        }
        let rel = |x: f64, y: f64| (x - y).abs() / x.max(y);
        assert!(rel(fits[0].a, fits[1].a) < 0.1, "{fits:?}");
        assert!(rel(fits[0].r1, fits[1].r1) < 0.1, "{fits:?}");
        assert!(rel(fits[0].r2, fits[1].r2) < 0.1, "{fits:?}");
    }

    #[test]
    fn json_round_trip_rebuilds_identical_predictions() {
        let h = DenseHyper { a: 1.0, r1: 0.5, r2: 0.5 };
        let (ts, mean) = synthetic(30, &h, 6);
        let em = crate::gp::EmulatorModel::Dense(DenseEmulator::new(ts, mean, h, true).unwrap());
        let s = serde_json::to_string(&em).unwrap();
        assert!(s.contains("\"kind\":\"dense\""));
        let back: crate::gp::EmulatorModel = serde_json::from_str(&s).unwrap();
        for p in [[0.3, 2.2], [1.7, 0.4]] {
            let (a, b) = (em.predict(&p).unwrap(), back.predict(&p).unwrap());
            assert_eq!(a.mean.to_bits(), b.mean.to_bits());
            assert_eq!(a.var.to_bits(), b.var.to_bits());
        }
        assert_eq!(serde_json::to_string(&back).unwrap(), s);
    }
}
