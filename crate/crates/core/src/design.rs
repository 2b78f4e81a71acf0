//! Space-filling training designs over `(log lambda, log mu)` and the
//! simulator runs that turn them into per-time training sets.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::mcmc::LogNormalPrior;
use crate::model::{estimate_proportions, BirthDeathParams};
use crate::parallel;
use crate::rng::{self, Purpose};
use crate::stats;

/// A point `(log lambda, log mu)`.
pub type Point = [f64; 2];

/// Training points keep only simulated dead fractions strictly inside this interval.
pub const RETAIN_RANGE: (f64, f64) = (0.005, 0.995);
pub const MIN_RETAINED: usize = 10;

/// Per-dimension interval `location +- z sqrt(scale_var)` holding `mass` of each prior.
pub fn prior_central_bounds(priors: &[LogNormalPrior], mass: f64) -> Result<Vec<(f64, f64)>> {
    if !(mass > 0.0 && mass < 1.0) {
        return Err(invalid(format!("prior mass must lie in (0, 1), got {mass}")));
    }
    let z = stats::normal_quantile(0.5 + 0.5 * mass);
    Ok(priors
        .iter()
        .map(|p| {
            let half = z * p.scale_var.sqrt();
            (p.location - half, p.location + half)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Design {
    pub points: Vec<Point>,
    pub bounds: [(f64, f64); 2],
}

impl Design {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Maps a point to the unit square spanned by the bounds.
    pub fn to_unit(&self, p: &Point) -> Point {
        scale_to_unit(p, &self.bounds)
    }

    /// Smallest pairwise distance, measured in unit-square coordinates.
    pub fn min_distance(&self) -> f64 {
        let unit: Vec<Point> = self.points.iter().map(|p| self.to_unit(p)).collect();
        min_pair_sq(&unit).sqrt()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["idx", "log_lambda", "log_mu"])?;
        for (i, p) in self.points.iter().enumerate() {
            w.write_record([i.to_string(), p[0].to_string(), p[1].to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn scale_to_unit(p: &Point, bounds: &[(f64, f64); 2]) -> Point {
    [
        (p[0] - bounds[0].0) / (bounds[0].1 - bounds[0].0),
        (p[1] - bounds[1].0) / (bounds[1].1 - bounds[1].0),
    ]
}

fn dist_sq(a: &Point, b: &Point) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    dx * dx + dy * dy
}

fn min_pair_sq(pts: &[Point]) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            best = best.min(dist_sq(&pts[i], &pts[j]));
        }
    }
    best
}

/// Tuning of the maximin search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaximinOptions {
    /// Random Latin hypercubes drawn; the best one seeds the search.
    pub starts: usize,
    /// Coordinate-swap attempts in the hill climb.
    pub swaps: usize,
}

impl Default for MaximinOptions {
    fn default() -> Self {
        Self { starts: 50, swaps: 2000 }
    }
}

fn random_lhd<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<Point> {
    let mut pts = vec![[0.0; 2]; n];
    for k in 0..2 {
        let mut strata: Vec<usize> = (0..n).collect();
        strata.shuffle(rng);
        for (p, s) in pts.iter_mut().zip(strata) {
            p[k] = (s as f64 + rng.random::<f64>()) / n as f64;
        }
    }
    pts
}

/// Nearest-neighbour bookkeeping for the swap search.
struct Neighbours {
    dist: Vec<f64>,
    idx: Vec<usize>,
}

impl Neighbours {
    fn build(pts: &[Point]) -> Self {
        let n = pts.len();
        let mut dist = vec![f64::INFINITY; n];
        let mut idx = vec![0; n];
        for i in 0..n {
            for j in i + 1..n {
                let d = dist_sq(&pts[i], &pts[j]);
                if d < dist[i] {
                    dist[i] = d;
                    idx[i] = j;
                }
                if d < dist[j] {
                    dist[j] = d;
                    idx[j] = i;
                }
            }
        }
        Self { dist, idx }
    }

    fn nearest(pts: &[Point], p: usize) -> (f64, usize) {
        let mut best = (f64::INFINITY, 0);
        for (q, other) in pts.iter().enumerate() {
            if q != p {
                let d = dist_sq(&pts[p], other);
                if d < best.0 {
                    best = (d, q);
                }
            }
        }
        best
    }

    fn min(&self) -> (f64, usize) {
        self.dist
            .iter()
            .enumerate()
            .fold((f64::INFINITY, 0), |acc, (i, &d)| if d < acc.0 { (d, i) } else { acc })
    }
}

/// Maximin Latin hypercube over `bounds`.
///
/// Starts from the best of `opts.starts` random Latin hypercubes and then
/// swaps single coordinates between a point of the closest pair and a random
/// partner, keeping a swap only when the minimum pairwise distance does not
/// decrease. Swaps preserve the one-point-per-stratum property.
pub fn maximin_lhd<R: Rng + ?Sized>(
    n_d: usize,
    bounds: [(f64, f64); 2],
    opts: MaximinOptions,
    rng: &mut R,
) -> Result<Design> {
    if n_d < 2 {
        return Err(invalid("a design needs at least two points"));
    }
    if bounds.iter().any(|(lo, hi)| !(lo < hi)) {
        return Err(invalid("design bounds must satisfy lo < hi"));
    }
    let mut best: Option<(f64, Vec<Point>)> = None;
    for _ in 0..opts.starts.max(1) {
        let cand = random_lhd(n_d, rng);
        let d = min_pair_sq(&cand);
        if best.as_ref().is_none_or(|(bd, _)| d > *bd) {
            best = Some((d, cand));
        }
    }
    let mut pts = best.unwrap().1;
    let mut nn = Neighbours::build(&pts);

    for _ in 0..opts.swaps {
        let (cur_min, worst) = nn.min();
        let i = if rng.random::<bool>() { worst } else { nn.idx[worst] };
        let mut j = rng.random_range(0..n_d - 1);
        if j >= i {
            j += 1;
        }
        let k = rng.random_range(0..2);
        let (vi, vj) = (pts[i][k], pts[j][k]);
        pts[i][k] = vj;
        pts[j][k] = vi;

        let mut dist = nn.dist.clone();
        let mut idx = nn.idx.clone();
        (dist[i], idx[i]) = Neighbours::nearest(&pts, i);
        (dist[j], idx[j]) = Neighbours::nearest(&pts, j);
        for p in 0..n_d {
            if p == i || p == j {
                continue;
            }
            if idx[p] == i || idx[p] == j {
                (dist[p], idx[p]) = Neighbours::nearest(&pts, p);
            } else {
                for q in [i, j] {
                    let d = dist_sq(&pts[p], &pts[q]);
                    if d < dist[p] {
                        dist[p] = d;
                        idx[p] = q;
                    }
                }
            }
        }
        let new_min = dist.iter().copied().fold(f64::INFINITY, f64::min);
        if new_min >= cur_min {
            nn = Neighbours { dist, idx };
        } else {
            pts[i][k] = vi;
            pts[j][k] = vj;
        }
    }

    let points = pts
        .iter()
        .map(|u| {
            [
                bounds[0].0 + u[0] * (bounds[0].1 - bounds[0].0),
                bounds[1].0 + u[1] * (bounds[1].1 - bounds[1].0),
            ]
        })
        .collect();
    Ok(Design { points, bounds })
}

/// Training data for the emulator at one census time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSet {
    pub t: f64,
    pub points: Vec<Point>,
    /// Empirical logits of the simulated dead fractions.
    pub targets: Vec<f64>,
    pub p_hat: Vec<f64>,
    pub n: u32,
    /// Row of each retained point in the parent design.
    pub retained_idx: Vec<usize>,
}

impl TrainingSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.points.len();
        if self.targets.len() != n || self.p_hat.len() != n {
            return Err(invalid("training set columns differ in length"));
        }
        if self.n == 0 {
            return Err(invalid("training replicate count must be positive"));
        }
        if !self.targets.iter().chain(self.points.iter().flatten()).all(|v| v.is_finite()) {
            return Err(invalid("training set holds non-finite values"));
        }
        if self.p_hat.iter().any(|&p| !(p > 0.0 && p < 1.0)) {
            return Err(invalid("training proportions must lie strictly inside (0, 1)"));
        }
        Ok(())
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["design_idx", "log_lambda", "log_mu", "p_hat", "x"])?;
        for i in 0..self.len() {
            w.write_record([
                self.retained_idx.get(i).map_or(String::new(), |v| v.to_string()),
                self.points[i][0].to_string(),
                self.points[i][1].to_string(),
                self.p_hat[i].to_string(),
                self.targets[i].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// How extreme design points are dropped across census times.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FilterMode {
    /// Each time keeps the points that are non-extreme at that time.
    #[default]
    PerTime,
    /// A point extreme at any time is dropped everywhere.
    Global,
}

/// Simulated dead counts at every design point and census time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignRuns {
    pub times: Vec<f64>,
    pub n: u32,
    /// `dead[i][b]`: dead cells out of `n` at design point `i`, time `times[b]`.
    pub dead: Vec<Vec<u32>>,
}

/// Runs `n` cells at every design point, sharing each point's cohort across
/// the census times. Point `i` draws from substream `(seed, TrainingPoint, i)`.
pub fn simulate_design(
    design: &Design,
    times: &[f64],
    x0: u32,
    n: u32,
    seed: u64,
    workers: usize,
) -> Result<DesignRuns> {
    simulate_points(&design.points, times, x0, n, seed, Purpose::TrainingPoint, workers)
}

pub(crate) fn simulate_points(
    points: &[Point],
    times: &[f64],
    x0: u32,
    n: u32,
    seed: u64,
    purpose: Purpose,
    workers: usize,
) -> Result<DesignRuns> {
    if n == 0 {
        return Err(invalid("replicate count must be at least 1"));
    }
    let dead = parallel::try_map(workers, points.len(), |i| {
        let params = BirthDeathParams::from_log(points[i][0], points[i][1], x0)?;
        let mut r = rng::substream(seed, purpose, i as u64);
        let est = estimate_proportions(&params, n, times, &mut r)?;
        Ok(est.iter().map(|e| (e.p_hat * f64::from(n)).round() as u32).collect())
    })?;
    Ok(DesignRuns { times: times.to_vec(), n, dead })
}

impl DesignRuns {
    fn keep(&self, i: usize, b: usize) -> bool {
        let p = f64::from(self.dead[i][b]) / f64::from(self.n);
        p > RETAIN_RANGE.0 && p < RETAIN_RANGE.1
    }

    /// Retained training set at census index `b`.
    pub fn training_set(&self, design: &Design, b: usize, mode: FilterMode) -> Result<TrainingSet> {
        let t = self.times[b];
        let retained: Vec<usize> = (0..self.dead.len())
            .filter(|&i| match mode {
                FilterMode::PerTime => self.keep(i, b),
                FilterMode::Global => (0..self.times.len()).all(|c| self.keep(i, c)),
            })
            .collect();
        if retained.len() < MIN_RETAINED {
            return Err(Error::InsufficientDesign { t, retained: retained.len(), required: MIN_RETAINED });
        }
        let n = self.n;
        let p_hat: Vec<f64> = retained.iter().map(|&i| f64::from(self.dead[i][b]) / f64::from(n)).collect();
        Ok(TrainingSet {
            t,
            points: retained.iter().map(|&i| design.points[i]).collect(),
            targets: p_hat.iter().map(|&p| crate::model::elogit(p, n)).collect(),
            p_hat,
            n,
            retained_idx: retained,
        })
    }
}

/// Simulates every design point at time `t` and keeps the non-extreme ones.
pub fn build_training_set(design: &Design, t: f64, x0: u32, n: u32, seed: u64) -> Result<TrainingSet> {
    simulate_design(design, &[t], x0, n, seed, 1)?.training_set(design, 0, FilterMode::PerTime)
}
