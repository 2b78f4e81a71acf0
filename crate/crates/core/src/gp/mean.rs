//! Quadratic mean surface in `(log lambda, log mu)`, fitted by least squares.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::design::Point;
use crate::error::{invalid, Error, Result};

/// Coefficients of `1, l, m, l^2, m^2, l m` with `l = log lambda`, `m = log mu`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MeanCoefficients(pub [f64; 6]);

pub fn basis(p: &Point) -> [f64; 6] {
    let (l, m) = (p[0], p[1]);
    [1.0, l, m, l * l, m * m, l * m]
}

impl MeanCoefficients {
    pub fn eval(&self, p: &Point) -> f64 {
        basis(p).iter().zip(&self.0).map(|(b, c)| b * c).sum()
    }
}

/// Least-squares fit through a thin QR factorization of the basis matrix.
pub fn fit_mean(points: &[Point], targets: &[f64]) -> Result<MeanCoefficients> {
    let n = points.len();
    if n != targets.len() {
        return Err(invalid("points and targets differ in length"));
    }
    if n < 6 {
        return Err(invalid(format!("quadratic mean needs at least 6 points, got {n}")));
    }
    let x = DMatrix::from_fn(n, 6, |i, j| basis(&points[i])[j]);
    let qr = x.qr();
    let r = qr.r();
    let scale = r.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if r.diagonal().iter().any(|v| v.abs() <= 1e-10 * scale) {
        return Err(Error::RankDeficient);
    }
    let qty = qr.q().transpose() * DVector::from_column_slice(targets);
    let b = r.solve_upper_triangular(&qty).ok_or(Error::RankDeficient)?;
    Ok(MeanCoefficients([b[0], b[1], b[2], b[3], b[4], b[5]]))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_points() -> Vec<Point> {
        let mut pts = Vec::new();
        for i in 0..5 {
            for j in 0..4 {
                pts.push([-1.0 + 0.45 * i as f64 + 0.03 * j as f64, -0.8 + 0.5 * j as f64 + 0.07 * i as f64]);
            }
        }
        pts
    }

    #[test]
    fn exact_quadratic_is_reproduced() {
        let truth = MeanCoefficients([0.3, -1.2, 2.0, 0.5, -0.25, 0.75]);
        let pts = grid_points();
        let y: Vec<f64> = pts.iter().map(|p| truth.eval(p)).collect();
        let fit = fit_mean(&pts, &y).unwrap();
        for p in &pts {
            assert!((fit.eval(p) - truth.eval(p)).abs() < 1e-9);
        }
    }

    #[test]
    fn constant_targets() {
        let pts = grid_points();
        let fit = fit_mean(&pts, &vec![-2.5; pts.len()]).unwrap();
        assert!((fit.0[0] + 2.5).abs() < 1e-10);
        assert!(fit.0[1..].iter().all(|c| c.abs() < 1e-10));
    }

    #[test]
    fn matches_normal_equations_and_centres_residuals() {
        let pts = grid_points();
        let y: Vec<f64> = pts.iter().enumerate().map(|(i, p)| (p[0] * 3.1).sin() + (i as f64 * 0.7).cos()).collect();
        let fit = fit_mean(&pts, &y).unwrap();
        // Normal equations X^T X b = X^T y solved independently.
        let x = DMatrix::from_fn(pts.len(), 6, |i, j| basis(&pts[i])[j]);
        let xtx = x.transpose() * &x;
        let xty = x.transpose() * DVector::from_vec(y.clone());
        let b = xtx.lu().solve(&xty).unwrap();
        for k in 0..6 {
            assert!((fit.0[k] - b[k]).abs() < 1e-8);
        }
        let resid: f64 = pts.iter().zip(&y).map(|(p, y)| y - fit.eval(p)).sum();
        assert!(resid.abs() / (pts.len() as f64) < 1e-10);
    }

    #[test]
    fn collinear_inputs_are_rank_deficient() {
        let pts: Vec<Point> = (0..10).map(|i| [i as f64 * 0.1, 0.5]).collect();
        assert!(matches!(fit_mean(&pts, &[1.0; 10]), Err(Error::RankDeficient)));
        assert!(fit_mean(&pts[..5], &[1.0; 5]).is_err());
    }
}
