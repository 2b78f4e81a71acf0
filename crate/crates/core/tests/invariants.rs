use bdgp::design::{maximin_lhd, simulate_design, MaximinOptions};
use bdgp::diagnostics::{diagnose, DiagnosticMode, ValidationSet};
use bdgp::gp::{fit_emulator, prediction_nugget, EmulatorConfig, Emulator, HyperMcmc};
use bdgp::model::{eexpit, elogit, logit};
use bdgp::observation::{bin_death_times, generate_proportion_data, ExactDeathTimes, TimeGrid};
use bdgp::rng::{substream, Purpose};
use bdgp::stats;
use bdgp::BirthDeathParams;
use proptest::prelude::*;

fn p0(lambda: f64, mu: f64, t: f64) -> f64 {
    BirthDeathParams::new(lambda, mu, 10).unwrap().extinction_prob(t).unwrap()
}

#[test]
fn derivative_matches_density_on_grid() {
    let mut worst: f64 = 0.0;
    for i in 0..20 {
        for j in 0..20 {
            let lambda = 0.2 + 1.8 * i as f64 / 19.0;
            let mu = 0.2 + 1.8 * j as f64 / 19.0 + 0.013;
            let p = BirthDeathParams::new(lambda, mu, 10).unwrap();
            for t in [0.5, 2.0, 4.5, 7.0, 10.0] {
                let h = 1e-3 * t;
                let f = |s: f64| p.extinction_prob(s).unwrap();
                let fd = (f(t - 2.0 * h) - 8.0 * f(t - h) + 8.0 * f(t + h) - f(t + 2.0 * h)) / (12.0 * h);
                let d = p.extinction_density(t).unwrap();
                if d > 1e-12 {
                    worst = worst.max(((fd - d) / d).abs());
                }
            }
        }
    }
    assert!(worst < 1e-5, "{worst}");
}

#[test]
fn extinction_probability_is_monotone_on_grid() {
    let vals: Vec<f64> = (0..20).map(|i| 0.2 + 1.8 * i as f64 / 19.0).collect();
    let times = [0.5, 2.0, 4.5, 7.0, 10.0];
    for &l in &vals {
        for &m in &vals {
            for w in times.windows(2) {
                assert!(p0(l, m, w[0]) <= p0(l, m, w[1]) + 1e-15);
            }
        }
    }
    for &t in &times {
        for w in vals.windows(2) {
            for &x in &vals {
                assert!(p0(w[1], x, t) <= p0(w[0], x, t) + 1e-15, "lambda {w:?} mu {x} t {t}");
                assert!(p0(x, w[0], t) <= p0(x, w[1], t) + 1e-15, "lambda {x} mu {w:?} t {t}");
            }
        }
    }
}

#[test]
fn long_run_limit() {
    for (l, m) in [(0.6f64, 1.0f64), (1.5, 1.0), (1.0, 1.2), (0.3, 2.0), (2.0, 0.5)] {
        let want = (m / l).powi(10).min(1.0);
        assert!((p0(l, m, 1e6) - want).abs() < 1e-9, "{l} {m}");
    }
}

#[test]
fn proportion_residuals_are_normal_with_sigma() {
    let p = BirthDeathParams::new(0.6, 1.0, 10).unwrap();
    let grid = TimeGrid::uniform(10).unwrap();
    let sigma = 0.5;
    let mut r = substream(3, Purpose::Dataset, 0);
    let mut res = Vec::new();
    while res.len() < 10_000 {
        let obs = generate_proportion_data(&p, &grid, sigma, &mut r).unwrap();
        for (y, &t) in obs.y.iter().zip(grid.times()) {
            res.push(y - logit(p.extinction_prob(t).unwrap()));
        }
    }
    let n = res.len() as f64;
    let mean = stats::mean(&res);
    let var = stats::sd(&res).powi(2);
    assert!(mean.abs() < 3.0 * sigma / n.sqrt(), "{mean}");
    // Var of the sample variance is about 2 sigma^4 / n.
    assert!((var - sigma * sigma).abs() < 3.0 * (2.0f64).sqrt() * sigma * sigma / n.sqrt(), "{var}");
}

#[test]
fn filtering_differs_between_times() {
    let bounds = [(-3.0, 2.0), (-2.5, 2.5)];
    let mut r = substream(5, Purpose::Design, 0);
    let d = maximin_lhd(300, bounds, MaximinOptions::default(), &mut r).unwrap();
    let runs = simulate_design(&d, &[2.0, 11.0], 10, 200, 5, 1).unwrap();
    let a = runs.training_set(&d, 0, Default::default()).unwrap();
    let b = runs.training_set(&d, 1, Default::default()).unwrap();
    assert_ne!(a.retained_idx, b.retained_idx);
    for ts in [&a, &b] {
        assert!(ts.p_hat.iter().all(|&p| p > 0.005 && p < 0.995));
    }
}

#[test]
fn predictive_variance_is_bounded() {
    let bounds = [(-3.0, 2.0), (-2.5, 2.5)];
    let mut r = substream(6, Purpose::Design, 0);
    let d = maximin_lhd(150, bounds, MaximinOptions::default(), &mut r).unwrap();
    let runs = simulate_design(&d, &[4.0], 10, 500, 6, 1).unwrap();
    let cfg = EmulatorConfig { mcmc: HyperMcmc { iterations: 1500, burnin: 300, ..Default::default() }, ..Default::default() };
    let em = fit_emulator(&d, &runs, 0, &cfg, 6).unwrap();
    // The nugget peaks where the clamped proportion is most extreme.
    let max_nugget = prediction_nugget(50.0, 500);
    let mut r = substream(6, Purpose::Validation, 0);
    let probes = maximin_lhd(200, [(-4.0, 3.0), (-3.5, 3.5)], MaximinOptions::default(), &mut r).unwrap();
    for p in &probes.points {
        let v = em.predict(p).unwrap().var;
        assert!(v >= 0.0 && v <= em.variance() + max_nugget + 1e-8, "{v}");
    }
}

#[test]
fn reports_are_deterministic_and_pit_is_normal_cdf() {
    let bounds = [(-3.0, 2.0), (-2.5, 2.5)];
    let mut r = substream(7, Purpose::Design, 0);
    let d = maximin_lhd(150, bounds, MaximinOptions::default(), &mut r).unwrap();
    let runs = simulate_design(&d, &[6.0], 10, 500, 7, 1).unwrap();
    let cfg = EmulatorConfig { mcmc: HyperMcmc { iterations: 1000, burnin: 200, ..Default::default() }, ..Default::default() };
    let em = fit_emulator(&d, &runs, 0, &cfg, 7).unwrap();
    let (vd, vr) = bdgp::diagnostics::simulate_validation(bounds, 100, &[6.0], 10, 500, 7, 1).unwrap();
    let val = ValidationSet::from_runs(&vd, &vr, 0, 30).unwrap();
    for mode in [DiagnosticMode::Literal, DiagnosticMode::Predictive] {
        let a = diagnose(&em, &val, mode).unwrap();
        let b = diagnose(&em, &val, mode).unwrap();
        assert_eq!(a, b);
        for (d, u) in a.ipe.iter().zip(&a.pit) {
            assert_eq!(*u, stats::normal_cdf(*d));
        }
    }
}

proptest! {
    #[test]
    fn elogit_round_trip(k in 0u32..=1000, n in 1u32..5000) {
        let n = n.max(k);
        let p = f64::from(k) / f64::from(n);
        prop_assert!((eexpit(elogit(p, n), n) - p).abs() < 1e-12);
    }

    #[test]
    fn binning_is_exhaustive_and_order_free(times in prop::collection::vec(0.001f64..30.0, 1..200), bins in 1usize..60, rot in 0usize..200) {
        let grid = TimeGrid::uniform(bins).unwrap();
        let a = bin_death_times(&ExactDeathTimes::new(times.clone()).unwrap(), &grid);
        let mut shuffled = times.clone();
        let len = shuffled.len();
        shuffled.rotate_left(rot % len);
        shuffled.reverse();
        let b = bin_death_times(&ExactDeathTimes::new(shuffled).unwrap(), &grid);
        prop_assert_eq!(a.total(), times.len() as u64);
        prop_assert_eq!(a.counts, b.counts);
    }

    #[test]
    fn latin_hypercube_strata(n in 2usize..60, seed in 0u64..500) {
        let mut r = substream(seed, Purpose::Design, 0);
        let d = maximin_lhd(n, [(-1.0, 3.0), (0.5, 0.75)], MaximinOptions { starts: 2, swaps: 50 }, &mut r).unwrap();
        for k in 0..2 {
            let mut seen = vec![false; n];
            for p in &d.points {
                let s = ((d.to_unit(p)[k] * n as f64).floor() as usize).min(n - 1);
                prop_assert!(!seen[s]);
                seen[s] = true;
            }
        }
    }

    #[test]
    fn extinction_probability_is_a_probability(l in 0.05f64..3.0, m in 0.05f64..3.0, t in 0.0f64..50.0, x0 in 1u32..30) {
        let p = BirthDeathParams::new(l, m, x0).unwrap();
        let v = p.extinction_prob(t).unwrap();
        prop_assert!((0.0..=1.0).contains(&v));
        prop_assert!(v <= p.ultimate_extinction() + 1e-12);
    }
}
