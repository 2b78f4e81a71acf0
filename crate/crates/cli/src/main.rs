use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use bdgp::diagnostics::DiagnosticMode;
use bdgp::gp::CovarianceKind;
use bdgp::posterior::Scenario;
use bdgp_cli::commands;
use bdgp_cli::spec::{DataKind, RunSpec};
use clap::{Args, Parser, Subcommand};

/// Birth-death inference from sparse cell-death data, with simulator and
/// Gaussian-process emulator likelihoods.
#[derive(Parser)]
#[command(name = "bdgp", version)]
struct Cli {
    /// Master seed; every random stream is derived from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "bdgp-out")]
    out: PathBuf,
    /// JSON run specification; flags override its fields.
    #[arg(long, global = true)]
    spec: Option<PathBuf>,
    /// Worker threads. Outputs do not depend on this.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a dataset for scenario a, b or c.
    Generate(GenerateArgs),
    /// Sample a posterior by MCMC.
    Fit(FitArgs),
    /// Build a design, simulate it and fit one emulator per census time.
    TrainEmulators(TrainArgs),
    /// Validate fitted emulators against fresh simulator runs.
    Diagnose(DiagnoseArgs),
    /// Compare the cpu cost of simulator- and emulator-based inference.
    CostModel(CostArgs),
    /// Tabulate posterior summaries of several traces and their differences.
    Compare(CompareArgs),
    /// Summarize a single trace.
    Summarize(SummarizeArgs),
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, value_enum)]
    scenario: Option<DataKind>,
    #[arg(long)]
    cells: Option<usize>,
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long)]
    bins: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    x0: Option<u32>,
    #[arg(long)]
    sigma: Option<f64>,
}

#[derive(Args)]
struct FitArgs {
    /// a, b, c-exact, c-sim, c-inflated or c-emulated.
    #[arg(long)]
    scenario: Option<Scenario>,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Directory written by train-emulators.
    #[arg(long)]
    emulators: Option<PathBuf>,
    #[arg(long)]
    replicates: Option<u32>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    burnin: Option<usize>,
    #[arg(long)]
    thin: Option<usize>,
    #[arg(long)]
    step_sd: Option<f64>,
    #[arg(long)]
    x0: Option<u32>,
    /// Use the long published run lengths instead of the desk defaults.
    #[arg(long)]
    full_scale: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    design_points: Option<usize>,
    #[arg(long)]
    prior_mass: Option<f64>,
    #[arg(long)]
    replicates: Option<u32>,
    #[arg(long)]
    bins: Option<usize>,
    #[arg(long)]
    x0: Option<u32>,
    /// Hyperparameter MCMC iterations.
    #[arg(long)]
    hyper_iterations: Option<usize>,
    #[arg(long)]
    hyper_burnin: Option<usize>,
    /// Compactly supported covariance instead of the Gaussian one.
    #[arg(long)]
    sparse: bool,
    /// Target fraction of zero covariances; implies --sparse.
    #[arg(long)]
    sparsity: Option<f64>,
}

#[derive(Args)]
struct DiagnoseArgs {
    #[arg(long)]
    emulators: Option<PathBuf>,
    /// Validation points per census time.
    #[arg(long)]
    points: Option<usize>,
    /// Size of the validation design before filtering.
    #[arg(long)]
    pool: Option<usize>,
    #[arg(long)]
    mode: Option<DiagnosticMode>,
}

#[derive(Args)]
struct CostArgs {
    #[arg(long)]
    n_d: Option<f64>,
    #[arg(long)]
    n: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long)]
    n_iter: Option<f64>,
    #[arg(long)]
    n_iter_gp: Option<f64>,
    #[arg(long)]
    n_iter_gpfit: Option<f64>,
}

#[derive(Args)]
struct CompareArgs {
    /// Trace CSV; give at least two.
    #[arg(long = "trace")]
    traces: Vec<PathBuf>,
    /// Label for each trace, in order.
    #[arg(long = "label")]
    labels: Vec<String>,
}

#[derive(Args)]
struct SummarizeArgs {
    #[arg(long)]
    trace: Option<PathBuf>,
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn run(cli: Cli) -> anyhow::Result<String> {
    let mut spec = RunSpec::load(cli.spec.as_deref())?;
    set(&mut spec.seed, cli.seed);
    set(&mut spec.workers, cli.workers);
    anyhow::ensure!(spec.workers >= 1, "--workers must be at least 1");
    let out = cli.out;
    match cli.command {
        Command::Generate(a) => {
            set(&mut spec.generate.scenario, a.scenario);
            set(&mut spec.generate.cells, a.cells);
            set(&mut spec.generate.horizon, a.horizon);
            set(&mut spec.generate.bins, a.bins);
            set(&mut spec.truth.lambda, a.lambda);
            set(&mut spec.truth.mu, a.mu);
            set(&mut spec.truth.x0, a.x0);
            set(&mut spec.truth.sigma, a.sigma);
            commands::generate(&spec, &out)
        }
        Command::Fit(a) => {
            let f = &mut spec.fit;
            if a.scenario.is_some() {
                f.scenario = a.scenario;
            }
            if f.scenario.is_none() {
                f.scenario = Some(match spec.generate.scenario {
                    DataKind::A => Scenario::ExactTimes,
                    DataKind::B => Scenario::Census,
                    DataKind::C => Scenario::ProportionsExact,
                });
            }
            if a.data.is_some() {
                f.data = a.data;
            }
            if a.emulators.is_some() {
                f.emulators = a.emulators;
            }
            if a.full_scale {
                f.full_scale(f.scenario.expect("set above"));
            }
            set(&mut f.replicates, a.replicates);
            set(&mut f.iterations, a.iterations);
            set(&mut f.burnin, a.burnin);
            set(&mut f.thin, a.thin);
            set(&mut f.step_sd, a.step_sd);
            set(&mut spec.truth.x0, a.x0);
            commands::fit(&spec, &out)
        }
        Command::TrainEmulators(a) => {
            let t = &mut spec.training;
            set(&mut t.design_points, a.design_points);
            set(&mut t.prior_mass, a.prior_mass);
            set(&mut t.replicates, a.replicates);
            set(&mut t.bins, a.bins);
            set(&mut t.emulator.mcmc.iterations, a.hyper_iterations);
            set(&mut t.emulator.mcmc.burnin, a.hyper_burnin);
            set(&mut spec.truth.x0, a.x0);
            if let Some(s) = a.sparsity {
                t.emulator.covariance = CovarianceKind::Sparse { sparsity: s };
            } else if a.sparse && t.emulator.covariance == CovarianceKind::Dense {
                t.emulator.covariance = CovarianceKind::Sparse { sparsity: 0.9 };
            }
            commands::train(&spec, &out)
        }
        Command::Diagnose(a) => {
            let d = &mut spec.diagnose;
            if a.emulators.is_some() {
                d.emulators = a.emulators;
            }
            set(&mut d.points, a.points);
            set(&mut d.pool, a.pool);
            set(&mut d.mode, a.mode);
            commands::run_diagnostics(&spec, &out)
        }
        Command::CostModel(a) => {
            let c = &mut spec.cost;
            set(&mut c.n_d, a.n_d);
            set(&mut c.n, a.n);
            set(&mut c.tau, a.tau);
            set(&mut c.horizon, a.horizon);
            set(&mut c.n_iter, a.n_iter);
            set(&mut c.n_iter_gp, a.n_iter_gp);
            set(&mut c.n_iter_gpfit, a.n_iter_gpfit);
            commands::cost_model(&spec, &out)
        }
        Command::Compare(a) => {
            if !a.traces.is_empty() {
                spec.compare.traces = a.traces;
            }
            if !a.labels.is_empty() {
                spec.compare.labels = a.labels;
            }
            commands::run_compare(&spec, &out)
        }
        Command::Summarize(a) => {
            if a.trace.is_some() {
                spec.summarize.trace = a.trace;
            }
            commands::summarize(&spec, &out)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(msg) => {
            // A closed pipe (e.g. `| head`) is not an error.
            let _ = writeln!(std::io::stdout(), "{msg}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
