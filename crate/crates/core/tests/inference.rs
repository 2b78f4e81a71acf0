use bdgp::gp::EmulatorModel;
use bdgp::mcmc::MCMCConfig;
use bdgp::observation::{generate_proportion_data, ObservedDataset, TimeGrid};
use bdgp::posterior::{run_posterior, PosteriorSetup, Priors, Scenario};
use bdgp::rng::{substream, Purpose};
use bdgp::stats::wasserstein1;
use bdgp::BirthDeathParams;

fn dataset() -> ObservedDataset {
    let p = BirthDeathParams::new(0.6, 1.0, 10).unwrap();
    let mut r = substream(1, Purpose::Dataset, 0);
    ObservedDataset::Proportions(generate_proportion_data(&p, &TimeGrid::uniform(10).unwrap(), 0.5, &mut r).unwrap())
}

fn chain(scenario: Scenario, data: &ObservedDataset, replicates: u32, iterations: usize, seed: u64) -> Vec<Vec<f64>> {
    let setup = PosteriorSetup::<EmulatorModel> {
        scenario,
        data,
        priors: Priors::default(),
        x0: 10,
        replicates,
        emulators: None,
        init: None,
    };
    let cfg = MCMCConfig::new(iterations, 500, 2, vec![0.25; 3]).unwrap();
    let t = run_posterior(&setup, &cfg, seed).unwrap();
    (0..3).map(|j| t.column(j)).collect()
}

#[test]
fn simulated_posterior_approaches_exact_as_cohort_grows() {
    let data = dataset();
    let exact = chain(Scenario::ProportionsExact, &data, 0, 200_000, 99);
    let mut dist = [0.0; 2];
    for seed in 1..=5 {
        for (k, n) in [100u32, 10_000].into_iter().enumerate() {
            let s = chain(Scenario::ProportionsSimulated, &data, n, 1500, seed);
            dist[k] += (0..3).map(|j| wasserstein1(&s[j], &exact[j])).sum::<f64>() / 5.0;
        }
    }
    assert!(dist[1] < dist[0], "{dist:?}");
}

#[test]
fn simulated_likelihood_chain_is_reproducible() {
    let data = dataset();
    let a = chain(Scenario::ProportionsSimulated, &data, 200, 800, 4);
    let b = chain(Scenario::ProportionsSimulated, &data, 200, 800, 4);
    assert_eq!(a, b);
}
