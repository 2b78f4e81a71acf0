//! Rough cpu-unit accounting for simulator-based versus emulator-based inference.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// `tau` is the cpu cost per unit of simulated time for one replicate, so a
/// realisation on `(0, horizon)` costs `tau * horizon`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostModelInputs {
    pub n_d: f64,
    pub n: f64,
    pub tau: f64,
    pub horizon: f64,
    /// Iterations of the simulator-based sampler.
    pub n_iter: f64,
    /// Iterations used to fit each emulator's hyperparameters.
    pub n_iter_gp: f64,
    /// Iterations of the emulator-based sampler.
    pub n_iter_gpfit: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub inputs: CostModelInputs,
    /// `n tau T N_iter`.
    pub simulator_cpu: f64,
    /// `T n_d {n tau + n_d^2 (N_gp + N_gpfit)}`.
    pub emulator_cpu: f64,
    /// `n_d^3 (N_gp + N_iter)`.
    pub lhs: f64,
    /// `n tau (N_iter - n_d)`.
    pub rhs: f64,
    pub emulator_more_efficient: bool,
    /// Smallest `tau` for which the emulator wins, when one exists.
    pub breakeven_tau: Option<f64>,
}

impl CostModelInputs {
    pub fn validate(&self) -> Result<()> {
        let all = [self.n_d, self.n, self.tau, self.horizon, self.n_iter, self.n_iter_gp, self.n_iter_gpfit];
        if all.iter().all(|v| *v > 0.0 && v.is_finite()) {
            Ok(())
        } else {
            Err(invalid("cost model inputs must all be positive and finite"))
        }
    }

    pub fn evaluate(&self) -> Result<CostReport> {
        self.validate()?;
        let simulator_cpu = self.n * self.tau * self.horizon * self.n_iter;
        let emulator_cpu = self.horizon
            * self.n_d
            * (self.n * self.tau + self.n_d * self.n_d * (self.n_iter_gp + self.n_iter_gpfit));
        let lhs = self.n_d.powi(3) * (self.n_iter_gp + self.n_iter);
        let rhs = self.n * self.tau * (self.n_iter - self.n_d);
        let breakeven_tau = (self.n_iter > self.n_d).then(|| lhs / (self.n * (self.n_iter - self.n_d)));
        Ok(CostReport {
            inputs: *self,
            simulator_cpu,
            emulator_cpu,
            lhs,
            rhs,
            emulator_more_efficient: lhs < rhs,
            breakeven_tau,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example(tau: f64) -> CostModelInputs {
        CostModelInputs {
            n_d: 150.0,
            n: 1000.0,
            tau,
            horizon: 10.0,
            n_iter: 1e4,
            n_iter_gp: 5000.0,
            n_iter_gpfit: 1e4,
        }
    }

    #[test]
    fn breakeven_for_the_worked_example() {
        let r = example(1.0).evaluate().unwrap();
        let be = r.breakeven_tau.unwrap();
        // 150^3 * 15000 / (1000 * 9850)
        assert!((be - 3_375_000.0 * 15_000.0 / 9_850_000.0).abs() < 1e-9);
        assert!((be - 5138.0).abs() < 2.0);
        assert!(!example(be * 0.999).evaluate().unwrap().emulator_more_efficient);
        assert!(example(be * 1.001).evaluate().unwrap().emulator_more_efficient);
    }

    #[test]
    fn no_gain_when_iterations_equal_design_size() {
        let mut i = example(1e12);
        i.n_iter = i.n_d;
        let r = i.evaluate().unwrap();
        assert_eq!(r.rhs, 0.0);
        assert!(!r.emulator_more_efficient);
        assert!(r.breakeven_tau.is_none());
    }

    #[test]
    fn cubic_scaling_and_totals() {
        let a = example(10.0).evaluate().unwrap();
        let mut i = example(10.0);
        i.n_d *= 2.0;
        let b = i.evaluate().unwrap();
        assert!((b.lhs / a.lhs - 8.0).abs() < 1e-12);
        assert_eq!(a.simulator_cpu, 1000.0 * 10.0 * 10.0 * 1e4);
        assert_eq!(a.emulator_cpu, 10.0 * 150.0 * (1000.0 * 10.0 + 22_500.0 * 15_000.0));
        // Verdict agrees with the totals when the two samplers run equally long.
        for tau in [100.0, 1e4, 1e6] {
            let r = example(tau).evaluate().unwrap();
            assert_eq!(r.emulator_more_efficient, r.emulator_cpu < r.simulator_cpu);
        }
        assert!(CostModelInputs { n: 0.0, ..example(1.0) }.evaluate().is_err());
    }
}
