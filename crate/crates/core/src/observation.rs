//! The three observation regimes: exact death times, census counts on a time
//! grid, and noisy logit-proportions of dead cells on a time grid.

use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::{logit, simulate_death_time, BirthDeathParams, DeathTime};

/// Census times `t_1 < ... < t_B`, with implicit `t_0 = 0` and `t_{B+1} = inf`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TimeGrid {
    census_times: Vec<f64>,
}

impl TimeGrid {
    pub fn new(census_times: Vec<f64>) -> Result<Self> {
        if census_times.is_empty() {
            return Err(invalid("time grid needs at least one census time"));
        }
        if !census_times.iter().all(|t| t.is_finite()) || census_times[0] <= 0.0 {
            return Err(invalid("census times must be finite and positive"));
        }
        if census_times.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("census times must be strictly increasing"));
        }
        Ok(Self { census_times })
    }

    /// `bins` equal-width census intervals ending at 1 + 10 i / bins, i = 1..=bins,
    /// so the last census is at t = 11.
    pub fn uniform(bins: usize) -> Result<Self> {
        Self::uniform_on(bins, 1.0, 11.0)
    }

    pub fn uniform_on(bins: usize, start: f64, end: f64) -> Result<Self> {
        if bins == 0 {
            return Err(invalid("number of bins must be at least 1"));
        }
        let width = (end - start) / bins as f64;
        Self::new((1..=bins).map(|i| start + width * i as f64).collect())
    }

    pub fn times(&self) -> &[f64] {
        &self.census_times
    }

    pub fn len(&self) -> usize {
        self.census_times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.census_times.is_empty()
    }

    pub fn last(&self) -> f64 {
        *self.census_times.last().unwrap()
    }

    /// Index of the bin `(t_{i-1}, t_i]` holding `t`; `len()` is the open final bin.
    pub fn bin_of(&self, t: f64) -> usize {
        self.census_times.partition_point(|&c| c < t)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactDeathTimes {
    pub times: Vec<f64>,
}

impl ExactDeathTimes {
    pub fn new(times: Vec<f64>) -> Result<Self> {
        if times.is_empty() {
            return Err(invalid("no death times"));
        }
        if !times.iter().all(|&t| t.is_finite() && t > 0.0) {
            return Err(invalid("death times must be finite and positive"));
        }
        Ok(Self { times })
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["death_time"])?;
        for t in &self.times {
            w.write_record([t.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        expect_header(&mut r, &["death_time"])?;
        let times = r
            .records()
            .map(|rec| parse_field(&rec?, 0))
            .collect::<Result<Vec<_>>>()?;
        Self::new(times)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CensusCounts {
    /// `B + 1` counts; the last is the open bin after the final census.
    pub counts: Vec<u64>,
    pub grid: TimeGrid,
}

impl CensusCounts {
    pub fn new(counts: Vec<u64>, grid: TimeGrid) -> Result<Self> {
        if counts.len() != grid.len() + 1 {
            return Err(invalid(format!(
                "expected {} bin counts for {} census times, got {}",
                grid.len() + 1,
                grid.len(),
                counts.len()
            )));
        }
        Ok(Self { counts, grid })
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["t_lo", "t_hi", "count"])?;
        let mut lo = 0.0;
        for (i, c) in self.counts.iter().enumerate() {
            let hi = self.grid.times().get(i).copied().unwrap_or(f64::INFINITY);
            w.write_record([lo.to_string(), hi.to_string(), c.to_string()])?;
            lo = hi;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        expect_header(&mut r, &["t_lo", "t_hi", "count"])?;
        let mut times = Vec::new();
        let mut counts = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let hi = parse_field(&rec, 1)?;
            if hi.is_finite() {
                times.push(hi);
            }
            let c = rec[2]
                .trim()
                .parse::<u64>()
                .map_err(|e| invalid(format!("bad count {:?}: {e}", &rec[2])))?;
            counts.push(c);
        }
        Self::new(counts, TimeGrid::new(times)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProportionObservations {
    /// Logit of the observed dead fraction at each census time.
    pub y: Vec<f64>,
    pub grid: TimeGrid,
    pub sigma_true: Option<f64>,
}

impl ProportionObservations {
    pub fn new(y: Vec<f64>, grid: TimeGrid, sigma_true: Option<f64>) -> Result<Self> {
        if y.len() != grid.len() {
            return Err(invalid("one observation per census time expected"));
        }
        if !y.iter().all(|v| v.is_finite()) {
            return Err(invalid("observations must be finite"));
        }
        Ok(Self { y, grid, sigma_true })
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["t", "y"])?;
        for (t, y) in self.grid.times().iter().zip(&self.y) {
            w.write_record([t.to_string(), y.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        expect_header(&mut r, &["t", "y"])?;
        let mut t = Vec::new();
        let mut y = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            t.push(parse_field(&rec, 0)?);
            y.push(parse_field(&rec, 1)?);
        }
        Self::new(y, TimeGrid::new(t)?, None)
    }
}

/// Any of the three observed datasets.
#[derive(Debug, Clone, PartialEq)]
pub enum ObservedDataset {
    Exact(ExactDeathTimes),
    Census(CensusCounts),
    Proportions(ProportionObservations),
}

fn expect_header<R: std::io::Read>(r: &mut csv::Reader<R>, want: &[&str]) -> Result<()> {
    let got: Vec<String> = r.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if got != want {
        return Err(invalid(format!("expected columns {want:?}, found {got:?}")));
    }
    Ok(())
}

fn parse_field(rec: &csv::StringRecord, i: usize) -> Result<f64> {
    let s = rec.get(i).ok_or_else(|| invalid("short csv row"))?.trim();
    s.parse::<f64>().map_err(|e| invalid(format!("bad number {s:?}: {e}")))
}

/// Draws `m` death times, resampling cells still alive at `horizon`.
///
/// Fails once more than half of the attempted cells have survived, or after
/// `10 m` attempts.
pub fn generate_exact_times<R: Rng + ?Sized>(
    params: &BirthDeathParams,
    m: usize,
    horizon: f64,
    rng: &mut R,
) -> Result<ExactDeathTimes> {
    if m == 0 {
        return Err(invalid("number of cells must be at least 1"));
    }
    if !(horizon > 0.0) {
        return Err(invalid("horizon must be positive"));
    }
    let mut times = Vec::with_capacity(m);
    let mut attempted = 0usize;
    let mut survived = 0usize;
    while times.len() < m {
        if attempted >= 10 * m || (attempted >= m && 2 * survived > attempted) {
            return Err(Error::SurvivalRateTooHigh { survived, attempted, horizon });
        }
        attempted += 1;
        match simulate_death_time(params, horizon, rng) {
            DeathTime::Died(t) => times.push(t),
            DeathTime::Censored => survived += 1,
        }
    }
    ExactDeathTimes::new(times)
}

/// Counts deaths per census bin `(t_{i-1}, t_i]`, plus the open final bin.
pub fn bin_death_times(times: &ExactDeathTimes, grid: &TimeGrid) -> CensusCounts {
    let mut counts = vec![0u64; grid.len() + 1];
    for &t in &times.times {
        counts[grid.bin_of(t)] += 1;
    }
    CensusCounts { counts, grid: grid.clone() }
}

/// `y_i = logit P0(t_i) + sigma * eps_i` using the closed-form dead fraction.
pub fn generate_proportion_data<R: Rng + ?Sized>(
    params: &BirthDeathParams,
    grid: &TimeGrid,
    sigma: f64,
    rng: &mut R,
) -> Result<ProportionObservations> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(invalid("noise sd must be positive"));
    }
    let y = grid
        .times()
        .iter()
        .map(|&t| {
            let p = params.extinction_prob_unchecked(t);
            if p <= 0.0 || p >= 1.0 {
                return Err(Error::DegenerateLogit { t, p });
            }
            let eps: f64 = rng.sample(StandardNormal);
            Ok(logit(p) + sigma * eps)
        })
        .collect::<Result<Vec<_>>>()?;
    ProportionObservations::new(y, grid.clone(), Some(sigma))
}
