//! Random-walk Metropolis-Hastings on unconstrained (log-scale) parameters.

use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::stats;

/// Log-normal prior `LN(location, scale_var)`: the log of the parameter is
/// normal with mean `location` and variance `scale_var`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogNormalPrior {
    pub location: f64,
    pub scale_var: f64,
}

impl LogNormalPrior {
    pub fn new(location: f64, scale_var: f64) -> Result<Self> {
        if !(scale_var > 0.0 && scale_var.is_finite() && location.is_finite()) {
            return Err(invalid("log-normal prior needs finite location and positive variance"));
        }
        Ok(Self { location, scale_var })
    }

    pub fn median(&self) -> f64 {
        self.location.exp()
    }

    /// Normal log density of `log x`, i.e. the prior on the log scale.
    pub fn ln_pdf_log(&self, log_x: f64) -> f64 {
        stats::normal_log_density(log_x, self.location, self.scale_var)
    }

    /// Log density of the parameter itself on its natural scale.
    pub fn ln_pdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return f64::NEG_INFINITY;
        }
        self.ln_pdf_log(x.ln()) - x.ln()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MCMCConfig {
    /// Total iterations, burn-in included.
    pub iterations: usize,
    pub burnin: usize,
    pub thin: usize,
    /// Proposal sd per coordinate.
    pub step_sd: Vec<f64>,
}

impl MCMCConfig {
    pub fn new(iterations: usize, burnin: usize, thin: usize, step_sd: Vec<f64>) -> Result<Self> {
        let cfg = Self { iterations, burnin, thin, step_sd };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.thin == 0 || self.iterations == 0 {
            return Err(invalid("iterations and thin must be positive"));
        }
        if self.burnin >= self.iterations {
            return Err(invalid("burn-in must be shorter than the run"));
        }
        if self.step_sd.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(invalid("proposal sds must be finite and non-negative"));
        }
        Ok(())
    }

    pub fn kept_rows(&self) -> usize {
        (self.iterations - self.burnin) / self.thin
    }

    /// Same settings with a single proposal sd broadcast to `dim` coordinates.
    pub fn with_dim(&self, dim: usize) -> Self {
        let mut c = self.clone();
        if c.step_sd.len() != dim {
            let s = c.step_sd.first().copied().unwrap_or(0.08);
            c.step_sd = vec![s; dim];
        }
        c
    }
}

/// Symmetric proposal kernel.
pub trait Proposal {
    fn propose<R: Rng + ?Sized>(&self, current: &[f64], next: &mut [f64], rng: &mut R);
}

/// Independent normal increments per coordinate.
#[derive(Debug, Clone)]
pub struct GaussianWalk {
    pub step_sd: Vec<f64>,
}

impl Proposal for GaussianWalk {
    fn propose<R: Rng + ?Sized>(&self, current: &[f64], next: &mut [f64], rng: &mut R) {
        for ((n, c), s) in next.iter_mut().zip(current).zip(&self.step_sd) {
            let z: f64 = rng.sample(StandardNormal);
            *n = c + s * z;
        }
    }
}

/// Normal increments folded back into per-coordinate intervals.
///
/// Reflection at the walls keeps the kernel symmetric.
#[derive(Debug, Clone)]
pub struct ReflectedWalk {
    pub step_sd: Vec<f64>,
    pub bounds: Vec<Option<(f64, f64)>>,
}

pub(crate) fn reflect(x: f64, lo: f64, hi: f64) -> f64 {
    let w = hi - lo;
    let mut y = (x - lo).rem_euclid(2.0 * w);
    if y > w {
        y = 2.0 * w - y;
    }
    lo + y
}

impl Proposal for ReflectedWalk {
    fn propose<R: Rng + ?Sized>(&self, current: &[f64], next: &mut [f64], rng: &mut R) {
        for (i, (n, c)) in next.iter_mut().zip(current).enumerate() {
            let z: f64 = rng.sample(StandardNormal);
            let x = c + self.step_sd[i] * z;
            *n = match self.bounds[i] {
                Some((lo, hi)) => reflect(x, lo, hi),
                None => x,
            };
        }
    }
}

/// Thinned post-burn-in samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub names: Vec<String>,
    /// Iteration number (1-based, burn-in included) of each kept row.
    pub iters: Vec<usize>,
    pub samples: Vec<Vec<f64>>,
    pub acceptance_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub q975: f64,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.samples.iter().map(|r| r[j]).collect()
    }

    pub fn column_by_name(&self, name: &str) -> Option<Vec<f64>> {
        self.names.iter().position(|n| n == name).map(|j| self.column(j))
    }

    pub fn summary(&self) -> Vec<ParamSummary> {
        (0..self.names.len())
            .map(|j| {
                let c = self.column(j);
                ParamSummary {
                    name: self.names[j].clone(),
                    mean: stats::mean(&c),
                    sd: stats::sd(&c),
                    q025: stats::quantile(&c, 0.025),
                    q975: stats::quantile(&c, 0.975),
                }
            })
            .collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["iter".to_string()];
        header.extend(self.names.iter().cloned());
        w.write_record(&header)?;
        for (it, row) in self.iters.iter().zip(&self.samples) {
            let mut rec = vec![it.to_string()];
            rec.extend(row.iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a trace CSV; the acceptance rate is not stored there and reads as NaN.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let header: Vec<String> = r.headers()?.iter().map(|h| h.trim().to_string()).collect();
        if header.first().map(String::as_str) != Some("iter") || header.len() < 2 {
            return Err(invalid(format!("{} is not a trace file", path.display())));
        }
        let mut iters = Vec::new();
        let mut samples = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            iters.push(
                rec[0]
                    .trim()
                    .parse()
                    .map_err(|e| invalid(format!("bad iteration {:?}: {e}", &rec[0])))?,
            );
            samples.push(
                rec.iter()
                    .skip(1)
                    .map(|s| s.trim().parse::<f64>().map_err(|e| invalid(format!("bad value {s:?}: {e}"))))
                    .collect::<Result<Vec<_>>>()?,
            );
        }
        Ok(Self { names: header[1..].to_vec(), iters, samples, acceptance_rate: f64::NAN })
    }
}

/// Gaussian random-walk Metropolis-Hastings.
///
/// The target is evaluated once per proposal and the current value is
/// cached, so a stochastic target keeps the estimate it was accepted with.
pub fn mh_sample<F, R>(
    log_target: F,
    init: &[f64],
    names: &[&str],
    config: &MCMCConfig,
    rng: &mut R,
) -> Result<Trace>
where
    F: FnMut(&[f64]) -> f64,
    R: Rng + ?Sized,
{
    let walk = GaussianWalk { step_sd: config.step_sd.clone() };
    mh_sample_with(log_target, &walk, init, names, config, rng)
}

pub fn mh_sample_with<F, P, R>(
    mut log_target: F,
    proposal: &P,
    init: &[f64],
    names: &[&str],
    config: &MCMCConfig,
    rng: &mut R,
) -> Result<Trace>
where
    F: FnMut(&[f64]) -> f64,
    P: Proposal,
    R: Rng + ?Sized,
{
    config.validate()?;
    if config.step_sd.len() != init.len() || names.len() != init.len() {
        return Err(invalid("proposal sds, names and initial state must have the same length"));
    }
    let mut current = init.to_vec();
    let mut current_lp = log_target(&current);
    if !current_lp.is_finite() {
        return Err(invalid(format!("log target is not finite at the initial state {init:?}")));
    }
    let mut next = current.clone();
    let mut accepted = 0usize;
    let mut iters = Vec::with_capacity(config.kept_rows());
    let mut samples = Vec::with_capacity(config.kept_rows());
    for it in 1..=config.iterations {
        proposal.propose(&current, &mut next, rng);
        let lp = log_target(&next);
        if lp.is_nan() {
            return Err(Error::NanTarget { iteration: it, state: next });
        }
        let u: f64 = rng.random();
        if u.ln() < lp - current_lp {
            std::mem::swap(&mut current, &mut next);
            current_lp = lp;
            accepted += 1;
        }
        if it > config.burnin && (it - config.burnin) % config.thin == 0 {
            iters.push(it);
            samples.push(current.clone());
        }
    }
    Ok(Trace {
        names: names.iter().map(|s| s.to_string()).collect(),
        iters,
        samples,
        acceptance_rate: accepted as f64 / config.iterations as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn std_normal_target(x: &[f64]) -> f64 {
        x.iter().map(|v| -0.5 * v * v).sum()
    }

    #[test]
    fn recovers_independent_normals() {
        let cfg = MCMCConfig::new(100_000, 1_000, 1, vec![2.4, 2.4]).unwrap();
        let t = mh_sample(std_normal_target, &[0.0, 0.0], &["a", "b"], &cfg, &mut rng::stream(5)).unwrap();
        for s in t.summary() {
            assert!(s.mean.abs() < 0.05, "{s:?}");
            assert!((s.sd - 1.0).abs() < 0.05, "{s:?}");
        }
    }

    #[test]
    fn acceptance_limits() {
        let wide = MCMCConfig::new(20_000, 0, 1, vec![50.0; 2]).unwrap();
        let t = mh_sample(std_normal_target, &[0.0, 0.0], &["a", "b"], &wide, &mut rng::stream(1)).unwrap();
        assert!(t.acceptance_rate < 0.01);
        let tiny = MCMCConfig::new(20_000, 0, 1, vec![1e-6; 2]).unwrap();
        let t = mh_sample(std_normal_target, &[0.0, 0.0], &["a", "b"], &tiny, &mut rng::stream(1)).unwrap();
        assert!(t.acceptance_rate > 0.99);
    }

    #[test]
    fn row_count_and_iteration_index() {
        let cfg = MCMCConfig::new(1_100, 100, 10, vec![1.0]).unwrap();
        let t = mh_sample(std_normal_target, &[0.0], &["a"], &cfg, &mut rng::stream(2)).unwrap();
        assert_eq!(t.len(), 100);
        assert_eq!(t.iters[0], 110);
        assert_eq!(*t.iters.last().unwrap(), 1_100);
    }

    #[test]
    fn two_state_stationary_distribution() {
        // Density 1 on [0, 1) and 3 on [1, 2): the upper cell holds 3/4 of the mass.
        let target = |x: &[f64]| match x[0] {
            v if (0.0..1.0).contains(&v) => 0.0,
            v if (1.0..2.0).contains(&v) => 3f64.ln(),
            _ => f64::NEG_INFINITY,
        };
        let cfg = MCMCConfig::new(1_000_000, 1_000, 1, vec![0.7]).unwrap();
        let t = mh_sample(target, &[0.5], &["x"], &cfg, &mut rng::stream(9)).unwrap();
        let upper = t.samples.iter().filter(|r| r[0] >= 1.0).count() as f64 / t.len() as f64;
        assert!((upper - 0.75).abs() < 0.01, "{upper}");
    }

    #[test]
    fn nan_target_aborts() {
        let mut calls = 0;
        let target = |_: &[f64]| {
            calls += 1;
            if calls > 3 { f64::NAN } else { 0.0 }
        };
        let cfg = MCMCConfig::new(10, 0, 1, vec![1.0]).unwrap();
        let err = mh_sample(target, &[0.0], &["x"], &cfg, &mut rng::stream(1)).unwrap_err();
        assert!(matches!(err, Error::NanTarget { iteration: 3, .. }));
    }

    #[test]
    fn non_finite_init_rejected() {
        let cfg = MCMCConfig::new(10, 0, 1, vec![1.0]).unwrap();
        assert!(mh_sample(|_: &[f64]| f64::NEG_INFINITY, &[0.0], &["x"], &cfg, &mut rng::stream(1)).is_err());
        assert!(MCMCConfig::new(10, 10, 1, vec![1.0]).is_err());
        assert!(MCMCConfig::new(10, 0, 0, vec![1.0]).is_err());
    }

    #[test]
    fn reflection_stays_inside() {
        for &x in &[-0.3, 0.0, 0.2, 1.3, 2.7, -5.1] {
            let y = reflect(x, 0.0, 1.0);
            assert!((0.0..=1.0).contains(&y), "{x} -> {y}");
        }
        assert!((reflect(1.25, 0.0, 1.0) - 0.75).abs() < 1e-15);
        assert!((reflect(-0.25, 0.0, 1.0) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn lognormal_prior_densities() {
        let p = LogNormalPrior::new(0.6f64.ln(), 2.0).unwrap();
        assert!((p.median() - 0.6).abs() < 1e-15);
        let x: f64 = 1.7;
        assert!((p.ln_pdf(x) - (p.ln_pdf_log(x.ln()) - x.ln())).abs() < 1e-15);
        assert_eq!(p.ln_pdf(-1.0), f64::NEG_INFINITY);
        assert!(LogNormalPrior::new(0.0, 0.0).is_err());
    }

    #[test]
    fn trace_csv_round_trip() {
        let t = Trace {
            names: vec!["log_lambda".into(), "log_mu".into()],
            iters: vec![10, 20],
            samples: vec![vec![-0.5, 0.1], vec![-0.45, 1e-17]],
            acceptance_rate: 0.3,
        };
        let p = std::env::temp_dir().join(format!("bdgp-trace-{}.csv", std::process::id()));
        t.write_csv(&p).unwrap();
        let back = Trace::read_csv(&p).unwrap();
        assert_eq!(back.samples, t.samples);
        assert_eq!(back.iters, t.iters);
        assert_eq!(back.names, t.names);
        std::fs::remove_file(&p).ok();
    }
}
