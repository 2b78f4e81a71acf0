//! One function per subcommand. Each reads its inputs, writes into `out`
//! and returns a short human-readable report.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context};
use bdgp::design::{maximin_lhd, prior_central_bounds, simulate_design, Design, MaximinOptions};
use bdgp::diagnostics::{diagnose, simulate_validation, DiagnosticsSummary, ValidationSet};
use bdgp::gp::{train_emulators, CovarianceKind, Emulator, EmulatorModel};
use bdgp::mcmc::{MCMCConfig, Trace};
use bdgp::observation::{
    bin_death_times, generate_exact_times, generate_proportion_data, CensusCounts, ExactDeathTimes,
    ObservedDataset, ProportionObservations, TimeGrid,
};
use bdgp::posterior::{run_posterior, PosteriorSetup, Scenario};
use bdgp::rng::{substream, Purpose};
use bdgp::BirthDeathParams;
use serde::{Deserialize, Serialize};

use crate::compare::compare;
use crate::spec::{DataKind, RunSpec};
use crate::{read_json, write_json};

fn prepare(out: &Path, spec: &RunSpec) -> anyhow::Result<()> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    spec.echo(out)
}

#[derive(Debug, Serialize)]
struct DatasetSidecar {
    scenario: DataKind,
    seed: u64,
    lambda: f64,
    mu: f64,
    x0: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    cells: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    horizon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    census_times: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    sigma: Option<f64>,
}

/// Builds the dataset described by `spec.generate`. Scenarios a and b share
/// the same underlying death times for a given seed.
pub fn build_dataset(spec: &RunSpec) -> anyhow::Result<ObservedDataset> {
    let t = &spec.truth;
    let g = &spec.generate;
    let params = BirthDeathParams::new(t.lambda, t.mu, t.x0)?;
    let mut r = substream(spec.seed, Purpose::Dataset, 0);
    Ok(match g.scenario {
        DataKind::A => ObservedDataset::Exact(generate_exact_times(&params, g.cells, g.horizon, &mut r)?),
        DataKind::B => {
            let times = generate_exact_times(&params, g.cells, g.horizon, &mut r)?;
            ObservedDataset::Census(bin_death_times(&times, &TimeGrid::uniform(g.bins)?))
        }
        DataKind::C => {
            ObservedDataset::Proportions(generate_proportion_data(&params, &TimeGrid::uniform(g.bins)?, t.sigma, &mut r)?)
        }
    })
}

pub fn generate(spec: &RunSpec, out: &Path) -> anyhow::Result<String> {
    prepare(out, spec)?;
    let data = build_dataset(spec)?;
    let path = out.join("data.csv");
    let t = &spec.truth;
    let g = &spec.generate;
    let mut sidecar = DatasetSidecar {
        scenario: g.scenario,
        seed: spec.seed,
        lambda: t.lambda,
        mu: t.mu,
        x0: t.x0,
        cells: None,
        horizon: None,
        census_times: None,
        sigma: None,
    };
    let mut msg = String::new();
    match &data {
        ObservedDataset::Exact(d) => {
            d.write_csv(&path)?;
            sidecar.cells = Some(g.cells);
            sidecar.horizon = Some(g.horizon);
            let mean = d.times.iter().sum::<f64>() / d.times.len() as f64;
            writeln!(msg, "scenario a: {} death times, mean {mean:.4}", d.times.len())?;
        }
        ObservedDataset::Census(d) => {
            d.write_csv(&path)?;
            sidecar.cells = Some(g.cells);
            sidecar.horizon = Some(g.horizon);
            sidecar.census_times = Some(d.grid.times().to_vec());
            writeln!(msg, "scenario b: {} cells in {} bins, counts {:?}", d.total(), d.counts.len(), d.counts)?;
        }
        ObservedDataset::Proportions(d) => {
            d.write_csv(&path)?;
            sidecar.census_times = Some(d.grid.times().to_vec());
            sidecar.sigma = Some(t.sigma);
            writeln!(msg, "scenario c: {} logit proportions, sigma {}", d.y.len(), t.sigma)?;
        }
    }
    write_json(&out.join("data.json"), &sidecar)?;
    write!(msg, "wrote {}", path.display())?;
    Ok(msg)
}

/// Reads a dataset in the layout the scenario expects.
pub fn read_dataset(path: &Path, scenario: Scenario) -> anyhow::Result<ObservedDataset> {
    let ctx = || format!("reading dataset {}", path.display());
    Ok(match scenario {
        Scenario::ExactTimes => ObservedDataset::Exact(ExactDeathTimes::read_csv(path).with_context(ctx)?),
        Scenario::Census => ObservedDataset::Census(CensusCounts::read_csv(path).with_context(ctx)?),
        _ => ObservedDataset::Proportions(ProportionObservations::read_csv(path).with_context(ctx)?),
    })
}

/// Index written by `train-emulators` next to the emulator files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmulatorManifest {
    pub kind: String,
    pub seed: u64,
    pub x0: u32,
    pub replicates: u32,
    pub bounds: [(f64, f64); 2],
    pub times: Vec<f64>,
    pub files: Vec<String>,
}

pub fn load_emulators(dir: &Path) -> anyhow::Result<(EmulatorManifest, Vec<EmulatorModel>)> {
    let manifest: EmulatorManifest = read_json(&dir.join("emulators.json"))?;
    ensure!(manifest.files.len() == manifest.times.len(), "emulator manifest lists {} files for {} times", manifest.files.len(), manifest.times.len());
    let ems = manifest
        .files
        .iter()
        .map(|f| EmulatorModel::read_json(&dir.join(f)).with_context(|| format!("loading emulator {f}")))
        .collect::<anyhow::Result<Vec<_>>>()?;
    Ok((manifest, ems))
}

#[derive(Debug, Serialize)]
struct ParamReport {
    name: String,
    mean: f64,
    sd: f64,
    q025: f64,
    q975: f64,
    /// The same quantities for the exponentiated parameter.
    natural_mean: f64,
    natural_q025: f64,
    natural_q975: f64,
}

fn param_reports(trace: &Trace) -> Vec<ParamReport> {
    trace
        .summary()
        .into_iter()
        .enumerate()
        .map(|(j, s)| {
            let nat: Vec<f64> = trace.column(j).iter().map(|v| v.exp()).collect();
            ParamReport {
                natural_mean: nat.iter().sum::<f64>() / nat.len() as f64,
                natural_q025: s.q025.exp(),
                natural_q975: s.q975.exp(),
                name: s.name,
                mean: s.mean,
                sd: s.sd,
                q025: s.q025,
                q975: s.q975,
            }
        })
        .collect()
}

#[derive(Debug, Serialize)]
struct FitSummary<'a> {
    scenario: Scenario,
    seed: u64,
    x0: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    replicates: Option<u32>,
    priors: &'a bdgp::posterior::Priors,
    iterations: usize,
    burnin: usize,
    thin: usize,
    step_sd: f64,
    kept: usize,
    acceptance_rate: f64,
    parameters: Vec<ParamReport>,
}

pub fn fit(spec: &RunSpec, out: &Path) -> anyhow::Result<String> {
    let f = &spec.fit;
    let scenario = f.scenario.context("no scenario given; use --scenario")?;
    let data_path = f.data.as_deref().context("no dataset given; use --data")?;
    let data = read_dataset(data_path, scenario)?;
    let emulators = match (scenario, &f.emulators) {
        (Scenario::ProportionsEmulated, Some(dir)) => Some(load_emulators(dir)?.1),
        (Scenario::ProportionsEmulated, None) => bail!("scenario c-emulated needs --emulators <dir>"),
        _ => None,
    };
    prepare(out, spec)?;
    let dim = scenario.param_names().len();
    let config = MCMCConfig::new(f.iterations, f.burnin, f.thin, vec![f.step_sd; dim])?;
    let setup = PosteriorSetup {
        scenario,
        data: &data,
        priors: spec.priors,
        x0: spec.truth.x0,
        replicates: f.replicates,
        emulators: emulators.as_deref(),
        init: None,
    };
    let trace = run_posterior(&setup, &config, spec.seed)?;
    trace.write_csv(&out.join("trace.csv"))?;
    let simulated = matches!(scenario, Scenario::ProportionsSimulated | Scenario::ProportionsInflated);
    let summary = FitSummary {
        scenario,
        seed: spec.seed,
        x0: spec.truth.x0,
        replicates: simulated.then_some(f.replicates),
        priors: &spec.priors,
        iterations: f.iterations,
        burnin: f.burnin,
        thin: f.thin,
        step_sd: f.step_sd,
        kept: trace.len(),
        acceptance_rate: trace.acceptance_rate,
        parameters: param_reports(&trace),
    };
    write_json(&out.join("summary.json"), &summary)?;
    let mut msg = format!(
        "scenario {scenario}: {} samples kept, acceptance {:.3}\n",
        trace.len(),
        trace.acceptance_rate
    );
    msg.push_str(&summary_table(&summary.parameters));
    Ok(msg)
}

fn summary_table(rows: &[ParamReport]) -> String {
    let mut s = format!("{:<12} {:>10} {:>10} {:>10} {:>10}\n", "parameter", "mean", "sd", "q025", "q975");
    for r in rows {
        let _ = writeln!(s, "{:<12} {:>10.4} {:>10.4} {:>10.4} {:>10.4}", r.name, r.mean, r.sd, r.q025, r.q975);
    }
    s
}

#[derive(Debug, Serialize)]
struct DesignSidecar {
    seed: u64,
    points: usize,
    prior_mass: f64,
    bounds: [(f64, f64); 2],
    min_distance: f64,
}

#[derive(Debug, Serialize)]
struct TrainingSidecar<'a> {
    t: f64,
    n: u32,
    seed: u64,
    retained: usize,
    retained_idx: &'a [usize],
}

/// The design both training and validation share: bounds from the central
/// prior mass of each rate, a maximin LHD from substream `(seed, Design, 0)`.
pub fn training_design(spec: &RunSpec) -> anyhow::Result<Design> {
    let tr = &spec.training;
    let b = prior_central_bounds(&[spec.priors.lambda, spec.priors.mu], tr.prior_mass)?;
    let mut r = substream(spec.seed, Purpose::Design, 0);
    Ok(maximin_lhd(tr.design_points, [b[0], b[1]], MaximinOptions::default(), &mut r)?)
}

pub fn train(spec: &RunSpec, out: &Path) -> anyhow::Result<String> {
    prepare(out, spec)?;
    let tr = &spec.training;
    let grid = TimeGrid::uniform(tr.bins)?;
    let design = training_design(spec)?;
    design.write_csv(&out.join("design.csv"))?;
    write_json(
        &out.join("design.json"),
        &DesignSidecar {
            seed: spec.seed,
            points: design.len(),
            prior_mass: tr.prior_mass,
            bounds: design.bounds,
            min_distance: design.min_distance(),
        },
    )?;
    let runs = simulate_design(&design, grid.times(), spec.truth.x0, tr.replicates, spec.seed, spec.workers)?;
    let ems = train_emulators(&design, &runs, &tr.emulator, spec.seed, spec.workers)?;
    let mut files = Vec::new();
    let mut msg = String::new();
    for (b, em) in ems.iter().enumerate() {
        let ts = em.training();
        ts.write_csv(&out.join(format!("training_{b:02}.csv")))?;
        write_json(
            &out.join(format!("training_{b:02}.json")),
            &TrainingSidecar { t: ts.t, n: ts.n, seed: spec.seed, retained: ts.len(), retained_idx: &ts.retained_idx },
        )?;
        let name = format!("emulator_{b:02}.json");
        em.write_json(&out.join(&name))?;
        files.push(name);
        writeln!(msg, "t = {:>6.3}: {} emulator on {} retained points", ts.t, em.kind(), ts.len())?;
    }
    let kind = match tr.emulator.covariance {
        CovarianceKind::Dense => "dense",
        CovarianceKind::Sparse { .. } => "sparse",
    };
    write_json(
        &out.join("emulators.json"),
        &EmulatorManifest {
            kind: kind.into(),
            seed: spec.seed,
            x0: spec.truth.x0,
            replicates: tr.replicates,
            bounds: design.bounds,
            times: grid.times().to_vec(),
            files,
        },
    )?;
    write!(msg, "wrote {} emulators to {}", ems.len(), out.display())?;
    Ok(msg)
}

/// Validation sets for every emulator time, from a fresh design.
pub fn validation_sets<E: Emulator>(
    spec: &RunSpec,
    bounds: [(f64, f64); 2],
    x0: u32,
    ems: &[E],
) -> anyhow::Result<Vec<ValidationSet>> {
    let d = &spec.diagnose;
    let times: Vec<f64> = ems.iter().map(|e| e.time()).collect();
    let n = ems.first().context("no emulators")?.training().n;
    let (design, runs) = simulate_validation(bounds, d.pool, &times, x0, n, spec.seed, spec.workers)?;
    (0..times.len())
        .map(|b| Ok(ValidationSet::from_runs(&design, &runs, b, d.points)?))
        .collect()
}

pub fn run_diagnostics(spec: &RunSpec, out: &Path) -> anyhow::Result<String> {
    let dir = spec.diagnose.emulators.as_deref().context("no emulator directory given; use --emulators")?;
    let (manifest, ems) = load_emulators(dir)?;
    prepare(out, spec)?;
    let sets = validation_sets(spec, manifest.bounds, manifest.x0, &ems)?;
    let mut rows: Vec<DiagnosticsSummary> = Vec::new();
    for (b, (em, val)) in ems.iter().zip(&sets).enumerate() {
        let report = diagnose(em, val, spec.diagnose.mode)?;
        report.write_csv(&out.join(format!("diagnostics_{b:02}.csv")))?;
        report.write_histogram_csv(&out.join(format!("histogram_{b:02}.csv")))?;
        let s = report.summary();
        write_json(&out.join(format!("diagnostics_{b:02}.json")), &s)?;
        rows.push(s);
    }
    let mut w = csv::Writer::from_path(out.join("summary.csv"))?;
    w.write_record([
        "t", "mode", "points", "md2", "df", "chi2_lo", "chi2_hi", "md2_inside", "ipe_inside_fraction", "pit_ks_p_value",
    ])?;
    let mut msg = format!(
        "{:>7} {:>10} {:>21} {:>6} {:>8}\n",
        "t", "md2", "interval", "pass", "ipe_in"
    );
    for s in &rows {
        w.write_record([
            s.t.to_string(),
            s.mode.to_string(),
            s.points.to_string(),
            s.md2.to_string(),
            s.df.to_string(),
            s.chi2_interval.0.to_string(),
            s.chi2_interval.1.to_string(),
            s.md2_inside.to_string(),
            s.ipe_inside_fraction.to_string(),
            s.pit_ks_p_value.to_string(),
        ])?;
        writeln!(
            msg,
            "{:>7.3} {:>10.2} [{:>8.2}, {:>8.2}] {:>6} {:>8.3}",
            s.t, s.md2, s.chi2_interval.0, s.chi2_interval.1, s.md2_inside, s.ipe_inside_fraction
        )?;
    }
    w.flush()?;
    let passed = rows.iter().filter(|s| s.md2_inside).count();
    write!(msg, "{passed} of {} emulators have MD2 inside the interval", rows.len())?;
    Ok(msg)
}

pub fn cost_model(spec: &RunSpec, out: &Path) -> anyhow::Result<String> {
    let report = spec.cost.evaluate()?;
    prepare(out, spec)?;
    write_json(&out.join("cost.json"), &report)?;
    let mut msg = String::new();
    writeln!(msg, "simulator-based cpu units: {:.6e}", report.simulator_cpu)?;
    writeln!(msg, "emulator-based cpu units:  {:.6e}", report.emulator_cpu)?;
    writeln!(msg, "n_d^3 (N_gp + N_iter) = {:.6e}", report.lhs)?;
    writeln!(msg, "n tau (N_iter - n_d)  = {:.6e}", report.rhs)?;
    writeln!(msg, "emulator more efficient: {}", report.emulator_more_efficient)?;
    match report.breakeven_tau {
        Some(t) => write!(msg, "breakeven tau: {t:.2}")?,
        None => write!(msg, "breakeven tau: none (N_iter <= n_d)")?,
    }
    Ok(msg)
}

fn default_labels(paths: &[PathBuf]) -> Vec<String> {
    paths
        .iter()
        .enumerate()
        .map(|(i, p)| {
            p.parent()
                .and_then(|d| d.file_name())
                .map(|s| s.to_string_lossy().into_owned())
                .filter(|s| !s.is_empty())
                .unwrap_or_else(|| format!("trace{}", i + 1))
        })
        .collect()
}

pub fn run_compare(spec: &RunSpec, out: &Path) -> anyhow::Result<String> {
    let c = &spec.compare;
    ensure!(c.traces.len() >= 2, "compare needs at least two --trace files");
    let labels = if c.labels.is_empty() { default_labels(&c.traces) } else { c.labels.clone() };
    let traces = c
        .traces
        .iter()
        .map(|p| Trace::read_csv(p).with_context(|| format!("reading trace {}", p.display())))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let cmp = compare(&traces, &labels)?;
    prepare(out, spec)?;
    cmp.write_summary_csv(&out.join("comparison.csv"))?;
    cmp.write_differences_csv(&out.join("differences.csv"))?;
    let mut msg = format!("{:<14} {:<14} {:<12} {:>10} {:>10}\n", "first", "second", "parameter", "diff", "pooled_sd");
    for d in &cmp.differences {
        writeln!(msg, "{:<14} {:<14} {:<12} {:>10.4} {:>10.3}", d.first, d.second, d.parameter, d.mean_difference, d.standardized)?;
    }
    write!(msg, "largest difference: {:.3} pooled sd", cmp.max_standardized())?;
    Ok(msg)
}

pub fn summarize(spec: &RunSpec, out: &Path) -> anyhow::Result<String> {
    let path = spec.summarize.trace.as_deref().context("no trace given; use --trace")?;
    let trace = Trace::read_csv(path).with_context(|| format!("reading trace {}", path.display()))?;
    ensure!(!trace.is_empty(), "trace {} has no samples", path.display());
    prepare(out, spec)?;
    let rows = param_reports(&trace);
    let mut w = csv::Writer::from_path(out.join("trace_summary.csv"))?;
    w.write_record(["parameter", "mean", "sd", "q025", "q975", "natural_mean", "natural_q025", "natural_q975"])?;
    for r in &rows {
        w.write_record([
            r.name.clone(),
            r.mean.to_string(),
            r.sd.to_string(),
            r.q025.to_string(),
            r.q975.to_string(),
            r.natural_mean.to_string(),
            r.natural_q025.to_string(),
            r.natural_q975.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(format!("{} samples\n{}", trace.len(), summary_table(&rows).trim_end()))
}
