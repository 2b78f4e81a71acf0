//! Run configuration: a JSON file whose fields are overridden by flags.

use std::path::{Path, PathBuf};

use anyhow::Context;
use bdgp::cost::CostModelInputs;
use bdgp::diagnostics::DiagnosticMode;
use bdgp::gp::EmulatorConfig;
use bdgp::posterior::{Priors, Scenario, DEFAULT_STEP_SD};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSpec {
    pub seed: u64,
    /// Worker threads. Results do not depend on it, so it is not echoed.
    #[serde(skip_serializing)]
    pub workers: usize,
    pub truth: Truth,
    pub priors: Priors,
    pub generate: GenerateSpec,
    pub fit: FitSpec,
    pub training: TrainingSpec,
    pub diagnose: DiagnoseSpec,
    pub cost: CostModelInputs,
    pub compare: CompareSpec,
    pub summarize: SummarizeSpec,
}

impl Default for RunSpec {
    fn default() -> Self {
        Self {
            seed: 1,
            workers: 1,
            truth: Truth::default(),
            priors: Priors::default(),
            generate: GenerateSpec::default(),
            fit: FitSpec::default(),
            training: TrainingSpec::default(),
            diagnose: DiagnoseSpec::default(),
            cost: CostModelInputs {
                n_d: 150.0,
                n: 1000.0,
                tau: 1.0,
                horizon: 10.0,
                n_iter: 1e4,
                n_iter_gp: 5000.0,
                n_iter_gpfit: 1e4,
            },
            compare: CompareSpec::default(),
            summarize: SummarizeSpec::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Truth {
    pub lambda: f64,
    pub mu: f64,
    pub x0: u32,
    pub sigma: f64,
}

impl Default for Truth {
    fn default() -> Self {
        Self { lambda: 0.6, mu: 1.0, x0: 10, sigma: 0.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum DataKind {
    A,
    B,
    C,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateSpec {
    pub scenario: DataKind,
    /// Number of cells with recorded death times (scenarios a and b).
    pub cells: usize,
    /// Simulation horizon for death times; later deaths are resampled.
    pub horizon: f64,
    /// Census bins on `(1, 11]` (scenarios b and c).
    pub bins: usize,
}

impl Default for GenerateSpec {
    fn default() -> Self {
        Self { scenario: DataKind::A, cells: 1000, horizon: 100.0, bins: 10 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitSpec {
    pub scenario: Option<Scenario>,
    pub data: Option<PathBuf>,
    pub emulators: Option<PathBuf>,
    /// Cohort size for simulator-based likelihoods.
    pub replicates: u32,
    pub iterations: usize,
    pub burnin: usize,
    pub thin: usize,
    pub step_sd: f64,
}

impl Default for FitSpec {
    fn default() -> Self {
        Self {
            scenario: None,
            data: None,
            emulators: None,
            replicates: 1000,
            iterations: 200_000,
            burnin: 1000,
            thin: 200,
            step_sd: DEFAULT_STEP_SD,
        }
    }
}

impl FitSpec {
    /// Run lengths used for the published figures: 100 burn-in iterations then
    /// `10^6` thinned by 1000 for the exact likelihoods, and 1000 burn-in then
    /// `10^4` thinned by 10 for simulator and emulator likelihoods.
    pub fn full_scale(&mut self, scenario: Scenario) {
        let (burnin, kept, thin) = match scenario {
            Scenario::ExactTimes | Scenario::Census | Scenario::ProportionsExact => (100, 1_000_000, 1000),
            _ => (1000, 10_000, 10),
        };
        self.burnin = burnin;
        self.iterations = burnin + kept;
        self.thin = thin;
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSpec {
    pub design_points: usize,
    /// Prior mass of the per-dimension central interval spanned by the design.
    pub prior_mass: f64,
    pub replicates: u32,
    pub bins: usize,
    pub emulator: EmulatorConfig,
}

impl Default for TrainingSpec {
    fn default() -> Self {
        Self { design_points: 2000, prior_mass: 0.95, replicates: 1000, bins: 10, emulator: EmulatorConfig::default() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnoseSpec {
    pub emulators: Option<PathBuf>,
    /// Validation points kept per census time.
    pub points: usize,
    /// Size of the fresh design the validation points are drawn from.
    pub pool: usize,
    pub mode: DiagnosticMode,
}

impl Default for DiagnoseSpec {
    fn default() -> Self {
        Self { emulators: None, points: 75, pool: 2000, mode: DiagnosticMode::Predictive }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareSpec {
    pub traces: Vec<PathBuf>,
    pub labels: Vec<String>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SummarizeSpec {
    pub trace: Option<PathBuf>,
}

impl RunSpec {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let s = std::fs::read_to_string(p).with_context(|| format!("reading spec {}", p.display()))?;
                serde_json::from_str(&s).with_context(|| format!("parsing spec {}", p.display()))
            }
        }
    }

    /// Writes the resolved spec into the output directory.
    pub fn echo(&self, out: &Path) -> anyhow::Result<()> {
        crate::write_json(&out.join("spec.json"), self)
    }
}
