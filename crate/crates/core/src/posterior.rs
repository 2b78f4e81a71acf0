//! Log-likelihoods for the three observation regimes and the posterior
//! samplers built on them.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::design::Point;
use crate::error::{invalid, Result};
use crate::gp::{match_grid, Emulator};
use crate::mcmc::{mh_sample, LogNormalPrior, MCMCConfig, Trace};
use crate::model::{estimate_proportions, BirthDeathParams};
use crate::observation::{CensusCounts, ExactDeathTimes, ObservedDataset, ProportionObservations};
use crate::rng::{self, Purpose};
use crate::stats::normal_log_density;

/// `sum_i log p0(t_i)` over observed death times.
pub fn loglik_exact_times(data: &ExactDeathTimes, params: &BirthDeathParams) -> f64 {
    let mut ll = 0.0;
    for &t in &data.times {
        let v = params.log_extinction_density_unchecked(t);
        if v.is_nan() || v == f64::NEG_INFINITY {
            return f64::NEG_INFINITY;
        }
        ll += v;
    }
    ll
}

/// Probability of each census bin `(t_{i-1}, t_i]`, then of `(t_B, inf)`.
pub fn census_bin_probs(grid_times: &[f64], params: &BirthDeathParams) -> Vec<f64> {
    let mut probs = Vec::with_capacity(grid_times.len() + 1);
    let mut prev = 0.0;
    for &t in grid_times {
        let p = params.extinction_prob_unchecked(t);
        probs.push(p - prev);
        prev = p;
    }
    probs.push(params.ultimate_extinction() - prev);
    probs
}

/// `sum_i n_i log{P0(t_i) - P0(t_{i-1})}`, with the last bin closing at
/// the ultimate extinction probability.
pub fn loglik_census(data: &CensusCounts, params: &BirthDeathParams) -> f64 {
    let probs = census_bin_probs(data.grid.times(), params);
    let mut ll = 0.0;
    for (&n, &p) in data.counts.iter().zip(&probs) {
        if n == 0 {
            continue;
        }
        if !(p > 0.0) {
            return f64::NEG_INFINITY;
        }
        ll += n as f64 * p.ln();
    }
    ll
}

/// `sum_i log phi(y_i | logit P0(t_i), sigma^2)`.
pub fn loglik_proportions_exact(data: &ProportionObservations, params: &BirthDeathParams, sigma: f64) -> f64 {
    let var = sigma * sigma;
    let mut ll = 0.0;
    for (&t, &y) in data.grid.times().iter().zip(&data.y) {
        let m = params.logit_extinction_prob_unchecked(t);
        if !m.is_finite() {
            return f64::NEG_INFINITY;
        }
        ll += normal_log_density(y, m, var);
    }
    ll
}

fn simulated_logits<R: Rng + ?Sized>(
    data: &ProportionObservations,
    params: &BirthDeathParams,
    n: u32,
    rng: &mut R,
) -> Result<Vec<(f64, f64)>> {
    Ok(estimate_proportions(params, n, data.grid.times(), rng)?
        .into_iter()
        .map(|e| (e.x, e.p_hat))
        .collect())
}

/// Simulates one fresh cohort of `n` cells and scores the data against the
/// empirical logits of its dead fractions.
pub fn loglik_proportions_simulated<R: Rng + ?Sized>(
    data: &ProportionObservations,
    params: &BirthDeathParams,
    sigma: f64,
    n: u32,
    rng: &mut R,
) -> Result<f64> {
    let var = sigma * sigma;
    let sims = simulated_logits(data, params, n, rng)?;
    Ok(data.y.iter().zip(&sims).map(|(&y, &(x, _))| normal_log_density(y, x, var)).sum())
}

/// Binomial variance of an empirical logit, `1/{n p(1-p)}`, with `p`
/// clamped to `[0.5/n, 1 - 0.5/n]`.
pub fn inflation_variance(p_hat: f64, n: u32) -> f64 {
    let lo = 0.5 / f64::from(n);
    let p = p_hat.clamp(lo, 1.0 - lo);
    1.0 / (f64::from(n) * p * (1.0 - p))
}

/// As [`loglik_proportions_simulated`] with the variance widened by the
/// binomial variance of each simulated empirical logit.
pub fn loglik_proportions_inflated<R: Rng + ?Sized>(
    data: &ProportionObservations,
    params: &BirthDeathParams,
    sigma: f64,
    n: u32,
    rng: &mut R,
) -> Result<f64> {
    let var = sigma * sigma;
    let sims = simulated_logits(data, params, n, rng)?;
    Ok(data
        .y
        .iter()
        .zip(&sims)
        .map(|(&y, &(x, p))| normal_log_density(y, x, var + inflation_variance(p, n)))
        .sum())
}

/// `sum_i log phi(y_i | m*_i, v*_i + sigma^2)` with one emulator per census
/// time, given in grid order.
pub fn loglik_proportions_emulated<E: Emulator>(
    data: &ProportionObservations,
    theta: &Point,
    sigma: f64,
    emulators: &[&E],
) -> Result<f64> {
    if emulators.len() != data.y.len() {
        return Err(invalid("one emulator per census time is required"));
    }
    let var = sigma * sigma;
    let mut ll = 0.0;
    for (e, &y) in emulators.iter().zip(&data.y) {
        let p = e.predict(theta)?;
        ll += normal_log_density(y, p.mean, p.var + var);
    }
    Ok(ll)
}

/// Likelihood used by a posterior run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scenario {
    #[serde(rename = "a")]
    ExactTimes,
    #[serde(rename = "b")]
    Census,
    #[serde(rename = "c-exact")]
    ProportionsExact,
    #[serde(rename = "c-sim")]
    ProportionsSimulated,
    #[serde(rename = "c-inflated")]
    ProportionsInflated,
    #[serde(rename = "c-emulated")]
    ProportionsEmulated,
}

impl Scenario {
    pub const ALL: [Scenario; 6] = [
        Scenario::ExactTimes,
        Scenario::Census,
        Scenario::ProportionsExact,
        Scenario::ProportionsSimulated,
        Scenario::ProportionsInflated,
        Scenario::ProportionsEmulated,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Scenario::ExactTimes => "a",
            Scenario::Census => "b",
            Scenario::ProportionsExact => "c-exact",
            Scenario::ProportionsSimulated => "c-sim",
            Scenario::ProportionsInflated => "c-inflated",
            Scenario::ProportionsEmulated => "c-emulated",
        }
    }

    /// Whether the noise sd is a third sampled parameter.
    pub fn has_sigma(self) -> bool {
        !matches!(self, Scenario::ExactTimes | Scenario::Census)
    }

    pub fn param_names(self) -> &'static [&'static str] {
        if self.has_sigma() {
            &["log_lambda", "log_mu", "log_sigma"]
        } else {
            &["log_lambda", "log_mu"]
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Scenario {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.label() == s)
            .ok_or_else(|| invalid(format!("unknown scenario {s:?}; expected a, b, c-exact, c-sim, c-inflated or c-emulated")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Priors {
    pub lambda: LogNormalPrior,
    pub mu: LogNormalPrior,
    pub sigma: LogNormalPrior,
}

impl Default for Priors {
    fn default() -> Self {
        Self {
            lambda: LogNormalPrior { location: 0.6f64.ln(), scale_var: 2.0 },
            mu: LogNormalPrior { location: 0.0, scale_var: 2.0 },
            sigma: LogNormalPrior { location: 0.5f64.ln(), scale_var: 0.5 },
        }
    }
}

impl Priors {
    /// Log prior of log-scale parameters, Jacobian included.
    pub fn ln_pdf_log(&self, theta: &[f64]) -> f64 {
        let mut lp = self.lambda.ln_pdf_log(theta[0]) + self.mu.ln_pdf_log(theta[1]);
        if theta.len() > 2 {
            lp += self.sigma.ln_pdf_log(theta[2]);
        }
        lp
    }

    pub fn medians_log(&self, with_sigma: bool) -> Vec<f64> {
        let mut v = vec![self.lambda.location, self.mu.location];
        if with_sigma {
            v.push(self.sigma.location);
        }
        v
    }
}

/// Default proposal sd on every log parameter.
pub const DEFAULT_STEP_SD: f64 = 0.08;

/// Inputs of one posterior run.
#[derive(Debug, Clone)]
pub struct PosteriorSetup<'a, E> {
    pub scenario: Scenario,
    pub data: &'a ObservedDataset,
    pub priors: Priors,
    pub x0: u32,
    /// Cohort size for simulator-based likelihoods.
    pub replicates: u32,
    /// One emulator per census time, required for the emulated likelihood.
    pub emulators: Option<&'a [E]>,
    /// Starting point on the log scale; the prior medians when absent.
    pub init: Option<Vec<f64>>,
}

/// Samples the posterior of the log parameters. The chain draws from
/// substream `(seed, Chain, 0)` and any simulated cohorts from
/// `(seed, Likelihood, 0)`.
pub fn run_posterior<E: Emulator>(setup: &PosteriorSetup<'_, E>, config: &MCMCConfig, seed: u64) -> Result<Trace> {
    let sc = setup.scenario;
    let names = sc.param_names();
    let init = setup.init.clone().unwrap_or_else(|| setup.priors.medians_log(sc.has_sigma()));
    if init.len() != names.len() {
        return Err(invalid(format!("scenario {sc} has {} parameters", names.len())));
    }
    let config = if config.step_sd.len() == names.len() { config.clone() } else { config.with_dim(names.len()) };
    if setup.emulators.is_some() != (sc == Scenario::ProportionsEmulated) {
        return Err(invalid("emulators are supplied exactly when the scenario is c-emulated"));
    }
    let x0 = setup.x0;
    let priors = setup.priors;
    let mut chain = rng::substream(seed, Purpose::Chain, 0);
    let mut sim = rng::substream(seed, Purpose::Likelihood, 0);
    let params = |th: &[f64]| BirthDeathParams::from_log(th[0], th[1], x0).ok();
    let mut sim_error = None;

    let trace = match (sc, setup.data) {
        (Scenario::ExactTimes, ObservedDataset::Exact(d)) => mh_sample(
            |th: &[f64]| match params(th) {
                Some(p) => priors.ln_pdf_log(th) + loglik_exact_times(d, &p),
                None => f64::NEG_INFINITY,
            },
            &init,
            names,
            &config,
            &mut chain,
        )?,
        (Scenario::Census, ObservedDataset::Census(d)) => mh_sample(
            |th: &[f64]| match params(th) {
                Some(p) => priors.ln_pdf_log(th) + loglik_census(d, &p),
                None => f64::NEG_INFINITY,
            },
            &init,
            names,
            &config,
            &mut chain,
        )?,
        (Scenario::ProportionsExact, ObservedDataset::Proportions(d)) => mh_sample(
            |th: &[f64]| match params(th) {
                Some(p) => priors.ln_pdf_log(th) + loglik_proportions_exact(d, &p, th[2].exp()),
                None => f64::NEG_INFINITY,
            },
            &init,
            names,
            &config,
            &mut chain,
        )?,
        (Scenario::ProportionsSimulated | Scenario::ProportionsInflated, ObservedDataset::Proportions(d)) => {
            let n = setup.replicates;
            if n == 0 {
                return Err(invalid("simulated likelihoods need at least one replicate"));
            }
            let inflated = sc == Scenario::ProportionsInflated;
            mh_sample(
                |th: &[f64]| {
                    let Some(p) = params(th) else {
                        return f64::NEG_INFINITY;
                    };
                    let sigma = th[2].exp();
                    let ll = if inflated {
                        loglik_proportions_inflated(d, &p, sigma, n, &mut sim)
                    } else {
                        loglik_proportions_simulated(d, &p, sigma, n, &mut sim)
                    };
                    match ll {
                        Ok(v) => priors.ln_pdf_log(th) + v,
                        Err(e) => {
                            sim_error.get_or_insert(e);
                            f64::NAN
                        }
                    }
                },
                &init,
                names,
                &config,
                &mut chain,
            )
            .map_err(|e| sim_error.take().unwrap_or(e))?
        }
        (Scenario::ProportionsEmulated, ObservedDataset::Proportions(d)) => {
            let ems = match_grid(setup.emulators.unwrap_or_default(), d.grid.times())?;
            if let Some(e) = ems.iter().find(|e| e.replicates() == 0) {
                return Err(invalid(format!("emulator at t={} has no replicates", e.time())));
            }
            mh_sample(
                |th: &[f64]| match loglik_proportions_emulated(d, &[th[0], th[1]], th[2].exp(), &ems) {
                    Ok(v) => priors.ln_pdf_log(th) + v,
                    Err(e) => {
                        sim_error.get_or_insert(e);
                        f64::NAN
                    }
                },
                &init,
                names,
                &config,
                &mut chain,
            )
            .map_err(|e| sim_error.take().unwrap_or(e))?
        }
        (sc, _) => return Err(invalid(format!("dataset does not match scenario {sc}"))),
    };
    Ok(trace)
}
