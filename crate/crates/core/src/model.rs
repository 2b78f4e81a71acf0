//! Linear birth-death process inside a single cell.
//!
//! A cell carries a population of `x0` members; each member splits at rate
//! `lambda` and is removed at rate `mu`. The cell dies when the population
//! goes extinct. This module holds the closed-form extinction distribution
//! and an exact event-by-event simulator of the same process.

use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Relative gap below which `lambda` and `mu` are treated as equal.
const EQUAL_RATE_GUARD: f64 = 1e-8;

/// Supercritical paths are declared immortal once ultimate extinction from the
/// current population is less likely than this.
const IMMORTAL_TOL: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BirthDeathParams {
    pub lambda: f64,
    pub mu: f64,
    pub x0: u32,
}

impl BirthDeathParams {
    pub fn new(lambda: f64, mu: f64, x0: u32) -> Result<Self> {
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(invalid(format!("birth rate must be positive and finite, got {lambda}")));
        }
        if !(mu.is_finite() && mu > 0.0) {
            return Err(invalid(format!("death rate must be positive and finite, got {mu}")));
        }
        if x0 == 0 {
            return Err(invalid("initial population must be at least 1"));
        }
        Ok(Self { lambda, mu, x0 })
    }

    /// Builds parameters from log-rates, as stored in MCMC traces.
    pub fn from_log(log_lambda: f64, log_mu: f64, x0: u32) -> Result<Self> {
        Self::new(log_lambda.exp(), log_mu.exp(), x0)
    }

    fn near_equal(&self) -> bool {
        (self.lambda - self.mu).abs() < EQUAL_RATE_GUARD * self.lambda.max(self.mu)
    }

    /// Per-member extinction probability by time `t` and its time derivative.
    ///
    /// Written as `mu h / (s + c h)` with `s = |mu - lambda|`,
    /// `h = 1 - exp(-s t)` and `c = min(lambda, mu)`, which never forms the
    /// growing exponential and stays accurate for small `t`.
    fn member_extinction(&self, t: f64) -> (f64, f64) {
        let (l, m) = (self.lambda, self.mu);
        if self.near_equal() {
            let r = 0.5 * (l + m);
            let d = 1.0 + r * t;
            return (r * t / d, r / (d * d));
        }
        let s = (m - l).abs();
        let c = l.min(m);
        let h = -(-s * t).exp_m1();
        let g = (-s * t).exp();
        let denom = s + c * h;
        // Rounding can push the ratio past its limit min(1, m/l).
        let ratio = (m * h / denom).min(1.0).min(m / l);
        (ratio, m * s * s * g / (denom * denom))
    }

    /// Log of the per-member ratio and log of its derivative, for use deep in
    /// the tails where the plain values underflow.
    fn log_member_extinction(&self, t: f64) -> (f64, f64) {
        let (l, m) = (self.lambda, self.mu);
        if self.near_equal() {
            let r = 0.5 * (l + m);
            let d = 1.0 + r * t;
            return ((r * t).ln() - d.ln(), r.ln() - 2.0 * d.ln());
        }
        let s = (m - l).abs();
        let c = l.min(m);
        let h = -(-s * t).exp_m1();
        let denom = s + c * h;
        (
            (m.ln() + h.ln() - denom.ln()).min(0.0).min((m / l).ln()),
            m.ln() + 2.0 * s.ln() - s * t - 2.0 * denom.ln(),
        )
    }

    /// Probability that the cell is dead by time `t`.
    pub fn extinction_prob(&self, t: f64) -> Result<f64> {
        if !(t.is_finite() && t >= 0.0) {
            return Err(invalid(format!("time must be finite and non-negative, got {t}")));
        }
        Ok(self.extinction_prob_unchecked(t))
    }

    pub(crate) fn extinction_prob_unchecked(&self, t: f64) -> f64 {
        if t == 0.0 {
            return 0.0;
        }
        let (ratio, _) = self.member_extinction(t);
        ratio.powi(self.x0 as i32)
    }

    /// Density of the death time at `t > 0`.
    pub fn extinction_density(&self, t: f64) -> Result<f64> {
        Ok(self.log_extinction_density(t)?.exp())
    }

    pub fn log_extinction_density(&self, t: f64) -> Result<f64> {
        if !(t.is_finite() && t > 0.0) {
            return Err(invalid(format!("density needs a finite positive time, got {t}")));
        }
        Ok(self.log_extinction_density_unchecked(t))
    }

    pub(crate) fn log_extinction_density_unchecked(&self, t: f64) -> f64 {
        let (log_ratio, log_slope) = self.log_member_extinction(t);
        let x0 = f64::from(self.x0);
        x0.ln() + (x0 - 1.0) * log_ratio + log_slope
    }

    /// `logit P0(t)`, evaluated through `log P0` so it stays finite while
    /// `P0` is within rounding of 0 or 1.
    pub fn logit_extinction_prob(&self, t: f64) -> Result<f64> {
        if !(t.is_finite() && t >= 0.0) {
            return Err(invalid(format!("time must be finite and non-negative, got {t}")));
        }
        Ok(self.logit_extinction_prob_unchecked(t))
    }

    pub(crate) fn logit_extinction_prob_unchecked(&self, t: f64) -> f64 {
        if t == 0.0 {
            return f64::NEG_INFINITY;
        }
        let lp = f64::from(self.x0) * self.log_member_extinction(t).0;
        if lp > -0.693 {
            lp - (-lp.exp_m1()).ln()
        } else {
            lp - (-lp.exp()).ln_1p()
        }
    }

    /// `P0(inf) = min(1, (mu / lambda)^x0)`.
    pub fn ultimate_extinction(&self) -> f64 {
        if self.mu >= self.lambda {
            1.0
        } else {
            (self.mu / self.lambda).powi(self.x0 as i32)
        }
    }
}

/// Outcome of simulating one cell up to a horizon.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DeathTime {
    Died(f64),
    Censored,
}

impl DeathTime {
    pub fn time(self) -> Option<f64> {
        match self {
            DeathTime::Died(t) => Some(t),
            DeathTime::Censored => None,
        }
    }

    pub fn dead_by(self, t: f64) -> bool {
        matches!(self, DeathTime::Died(d) if d <= t)
    }
}

/// Exact event-driven simulation of one cell until extinction or `horizon`.
pub fn simulate_death_time<R: Rng + ?Sized>(
    params: &BirthDeathParams,
    horizon: f64,
    rng: &mut R,
) -> DeathTime {
    let (l, m) = (params.lambda, params.mu);
    let total = l + m;
    let p_birth = l / total;
    // Beyond this size a supercritical population has negligible chance of
    // ever dying out.
    let immortal_at = if l > m {
        (IMMORTAL_TOL.ln() / (m / l).ln()).ceil().max(1.0) as u64
    } else {
        u64::MAX
    };
    let mut x = u64::from(params.x0);
    let mut t = 0.0;
    loop {
        let wait: f64 = rng.sample(Exp1);
        t += wait / (total * x as f64);
        if t > horizon {
            return DeathTime::Censored;
        }
        if rng.random::<f64>() < p_birth {
            x += 1;
            if x >= immortal_at {
                return DeathTime::Censored;
            }
        } else {
            x -= 1;
            if x == 0 {
                return DeathTime::Died(t);
            }
        }
    }
}

/// Simulated dead fraction at one time point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProportionEstimate {
    pub t: f64,
    pub n: u32,
    pub p_hat: f64,
    /// Empirical logit of `p_hat`.
    pub x: f64,
}

impl ProportionEstimate {
    pub fn from_count(t: f64, dead: u32, n: u32) -> Self {
        let p_hat = f64::from(dead) / f64::from(n);
        Self { t, n, p_hat, x: elogit(p_hat, n) }
    }
}

/// Simulates `n` cells once and reports the dead fraction at every grid time.
///
/// The cohort is shared across the grid, so the estimates are nondecreasing
/// in time. Cells are censored at the last grid time.
pub fn estimate_proportions<R: Rng + ?Sized>(
    params: &BirthDeathParams,
    n: u32,
    times: &[f64],
    rng: &mut R,
) -> Result<Vec<ProportionEstimate>> {
    if n == 0 {
        return Err(invalid("replicate count must be at least 1"));
    }
    if times.is_empty() {
        return Err(invalid("time grid is empty"));
    }
    if times.windows(2).any(|w| w[0] >= w[1]) || times[0] < 0.0 {
        return Err(invalid("time grid must be non-negative and strictly increasing"));
    }
    let horizon = *times.last().unwrap();
    let mut dead = vec![0u32; times.len()];
    for _ in 0..n {
        if let DeathTime::Died(d) = simulate_death_time(params, horizon, rng) {
            let first = times.partition_point(|&t| t < d);
            for c in &mut dead[first..] {
                *c += 1;
            }
        }
    }
    Ok(times
        .iter()
        .zip(dead)
        .map(|(&t, k)| ProportionEstimate::from_count(t, k, n))
        .collect())
}

/// Empirical logit `log{(p + 0.5/n) / (1 - p + 0.5/n)}`, finite on `[0, 1]`.
pub fn elogit(p_hat: f64, n: u32) -> f64 {
    let c = 0.5 / f64::from(n);
    ((p_hat + c) / (1.0 - p_hat + c)).ln()
}

/// Inverse of [`elogit`] for fixed `n`, clamped to `[0, 1]`.
pub fn eexpit(m: f64, n: u32) -> f64 {
    let c = 0.5 / f64::from(n);
    let raw = if m > 0.0 {
        let e = (-m).exp();
        (1.0 + c - c * e) / (1.0 + e)
    } else {
        let e = m.exp();
        (e * (1.0 + c) - c) / (1.0 + e)
    };
    raw.clamp(0.0, 1.0)
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn truth() -> BirthDeathParams {
        BirthDeathParams::new(0.6, 1.0, 10).unwrap()
    }

    #[test]
    fn logit_of_extinction_probability() {
        let p = BirthDeathParams::new(0.6, 1.0, 10).unwrap();
        for t in [0.5, 2.0, 6.0, 11.0] {
            let want = logit(p.extinction_prob(t).unwrap());
            assert!((p.logit_extinction_prob(t).unwrap() - want).abs() < 1e-10 * want.abs().max(1.0));
        }
        let early = p.logit_extinction_prob(1e-3).unwrap();
        assert!(early.is_finite() && early < -60.0);
        assert_eq!(p.logit_extinction_prob(0.0).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn extinction_prob_boundaries() {
        let p = truth();
        assert_eq!(p.extinction_prob(0.0).unwrap(), 0.0);
        assert!(p.extinction_prob(1e6).unwrap() > 1.0 - 1e-12);
        assert!(p.extinction_prob(f64::NAN).is_err());
        assert!(p.extinction_prob(-1.0).is_err());
    }

    #[test]
    fn matches_literal_formula_away_from_overflow() {
        // Direct transcription of the closed form, fine for moderate (mu-lambda)t.
        let literal = |l: f64, m: f64, x0: i32, t: f64| {
            let e = ((m - l) * t).exp();
            ((m - m * e) / (l - m * e)).powi(x0)
        };
        let literal_density = |l: f64, m: f64, x0: i32, t: f64| {
            let e = ((m - l) * t).exp();
            f64::from(x0) * m.powi(x0) * (l - m).powi(2) * e * (1.0 - e).powi(x0)
                / ((1.0 - e) * (l - m * e).powi(x0 + 1))
        };
        for &(l, m) in &[(0.6, 1.0), (1.0, 0.6), (0.3, 1.7), (2.0, 0.25)] {
            let p = BirthDeathParams::new(l, m, 10).unwrap();
            for &t in &[0.3, 1.0, 4.0, 9.0] {
                let a = p.extinction_prob(t).unwrap();
                let b = literal(l, m, 10, t);
                assert!((a - b).abs() <= 1e-12 * b.max(1e-300), "{l} {m} {t}: {a} vs {b}");
                let a = p.extinction_density(t).unwrap();
                let b = literal_density(l, m, 10, t);
                assert!((a - b).abs() <= 1e-10 * b, "{l} {m} {t}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn equal_rates_use_continuity_limit() {
        let p = BirthDeathParams::new(0.8, 0.8, 3).unwrap();
        let t = 2.5;
        let r: f64 = 0.8 * t / (1.0 + 0.8 * t);
        assert!((p.extinction_prob(t).unwrap() - r.powi(3)).abs() < 1e-15);
        // Just outside the guard agrees with the limit.
        let q = BirthDeathParams::new(0.8 * (1.0 + 1e-6), 0.8, 3).unwrap();
        assert!((q.extinction_prob(t).unwrap() - r.powi(3)).abs() < 1e-6);
        let h = 1e-5;
        let fd = (p.extinction_prob(t + h).unwrap() - p.extinction_prob(t - h).unwrap()) / (2.0 * h);
        let d = p.extinction_density(t).unwrap();
        assert!(((fd - d) / d).abs() < 1e-6);
    }

    #[test]
    fn density_matches_finite_difference_at_two() {
        let p = truth();
        let h = 1e-5;
        let fd = (p.extinction_prob(2.0 + h).unwrap() - p.extinction_prob(2.0 - h).unwrap()) / (2.0 * h);
        let d = p.extinction_density(2.0).unwrap();
        assert!(((fd - d) / d).abs() < 1e-5);
        assert!(p.extinction_density(0.0).is_err());
    }

    #[test]
    fn log_density_is_finite_far_in_the_tail() {
        let p = truth();
        let ld = p.log_extinction_density(1e6).unwrap();
        assert!(ld.is_finite() && ld < -1e5);
    }

    #[test]
    fn ultimate_extinction_values() {
        assert_eq!(truth().ultimate_extinction(), 1.0);
        let sup = BirthDeathParams::new(1.0, 0.6, 10).unwrap();
        assert!((sup.ultimate_extinction() - 0.6f64.powi(10)).abs() < 1e-15);
        assert!((sup.extinction_prob(1e6).unwrap() - 0.6f64.powi(10)).abs() < 1e-9);
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(BirthDeathParams::new(0.0, 1.0, 1).is_err());
        assert!(BirthDeathParams::new(1.0, f64::INFINITY, 1).is_err());
        assert!(BirthDeathParams::new(1.0, 1.0, 0).is_err());
    }

    #[test]
    fn zero_horizon_is_censored() {
        let mut r = rng::stream(1);
        assert_eq!(simulate_death_time(&truth(), 0.0, &mut r), DeathTime::Censored);
    }

    #[test]
    fn single_cell_proportions_step_at_death() {
        let times: Vec<f64> = (1..=11).map(f64::from).collect();
        let mut r = rng::stream(3);
        // Find a seed path that dies inside the grid and check the step.
        for _ in 0..100 {
            let est = estimate_proportions(&truth(), 1, &times, &mut r).unwrap();
            assert!(est.windows(2).all(|w| w[0].p_hat <= w[1].p_hat));
            assert!(est.iter().all(|e| e.p_hat == 0.0 || e.p_hat == 1.0));
        }
        assert!(estimate_proportions(&truth(), 1, &[], &mut r).is_err());
        assert!(estimate_proportions(&truth(), 1, &[2.0, 1.0], &mut r).is_err());
    }

    #[test]
    fn elogit_eexpit_values() {
        assert_eq!(elogit(0.5, 37), 0.0);
        assert!((elogit(0.0, 1000) - (0.0005f64 / 1.0005).ln()).abs() < 1e-14);
        assert!((elogit(0.0, 1000) + 7.6014).abs() < 1e-4);
        assert_eq!(eexpit(0.0, 10), 0.5);
        assert_eq!(eexpit(-20.0, 1000), 0.0);
        for &p in &[0.0, 0.001, 0.5, 0.999, 1.0] {
            assert!((eexpit(elogit(p, 1000), 1000) - p).abs() < 1e-12);
        }
        assert!((eexpit(elogit(0.3, 100), 100) - 0.3).abs() < 1e-12);
        assert!(eexpit(800.0, 5).is_finite());
    }
}
