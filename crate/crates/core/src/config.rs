//! Experiment configuration files.
//!
//! A config is a TOML document naming one experiment. Keys missing from the
//! file take that experiment's defaults, so the smallest valid file is the
//! single line `experiment = "<name>"`.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Activation;
use crate::objectives::ModulusMode;
use crate::orthogonalization::GsVariant;
use crate::solver::{EpochsAfter, LrDecay, SolveSchedule};

pub const SCHEMA_VERSION: &str = "eigennet-run/1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentName {
    #[serde(rename = "fourier-1d")]
    Fourier1d,
    SemicircleBasis,
    GalerkinHeat,
    UqElasticity,
    VectorLaplaceCheck,
    DonutParametric,
    PlaplaceDuel,
    HighdimFirst,
    HighdimSecond,
}

impl ExperimentName {
    pub const ALL: [ExperimentName; 9] = [
        ExperimentName::Fourier1d,
        ExperimentName::SemicircleBasis,
        ExperimentName::GalerkinHeat,
        ExperimentName::UqElasticity,
        ExperimentName::VectorLaplaceCheck,
        ExperimentName::DonutParametric,
        ExperimentName::PlaplaceDuel,
        ExperimentName::HighdimFirst,
        ExperimentName::HighdimSecond,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ExperimentName::Fourier1d => "fourier-1d",
            ExperimentName::SemicircleBasis => "semicircle-basis",
            ExperimentName::GalerkinHeat => "galerkin-heat",
            ExperimentName::UqElasticity => "uq-elasticity",
            ExperimentName::VectorLaplaceCheck => "vector-laplace-check",
            ExperimentName::DonutParametric => "donut-parametric",
            ExperimentName::PlaplaceDuel => "plaplace-duel",
            ExperimentName::HighdimFirst => "highdim-first",
            ExperimentName::HighdimSecond => "highdim-second",
        }
    }
}

impl fmt::Display for ExperimentName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExperimentName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|n| n.as_str() == s)
            .ok_or_else(|| Error::UnknownName(s.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub lr: f64,
    /// Multiply the learning rate by `lr_decay_factor` every
    /// `lr_decay_every` epochs; 0 disables decay.
    pub lr_decay_factor: f64,
    pub lr_decay_every: usize,
    /// `inf` starts the fixed budget at epoch 0 for every eigenpair.
    pub threshold: f64,
    pub epochs_after_base: usize,
    pub epochs_after_per_index: usize,
    pub max_epochs: usize,
    pub beta: f64,
    /// Tail-average window for Monte Carlo runs; 0 for none.
    pub tail_window: usize,
    pub gs_variant: GsVariant,
    /// Fresh initializations per eigenpair; the lowest final quotient is kept.
    pub restarts: usize,
}

impl ScheduleConfig {
    pub fn to_schedule(&self) -> SolveSchedule {
        SolveSchedule {
            base_lr: self.lr,
            lr_decay: (self.lr_decay_every > 0).then_some(LrDecay {
                factor: self.lr_decay_factor,
                every: self.lr_decay_every,
            }),
            threshold: self.threshold,
            epochs_after: EpochsAfter { base: self.epochs_after_base, per_index: self.epochs_after_per_index },
            max_epochs: self.max_epochs,
            beta_penalty: self.beta,
            tail_window: (self.tail_window > 0).then_some(self.tail_window),
            gs_variant: self.gs_variant,
            restarts: self.restarts,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Fourier1dParams {
    pub grid_points: usize,
    /// Eigenpairs that enter the gated metrics.
    pub n_eigen: usize,
    /// Eigenpairs actually solved; extra ones are reported only.
    pub n_solve: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SemicircleParams {
    pub n_eigen: usize,
    /// Cells along x₁ and x₂ of the masked grid over [−1,1]×[0,1].
    pub grid_cells: [usize; 2],
    /// Radial finite-difference resolution of the reference solver.
    pub oracle_radial_nodes: usize,
    /// Lattice spacing for the cross-check and the eigenfunction error.
    pub oracle_lattice_h: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GalerkinParams {
    pub basis: SemicircleParams,
    pub n_basis: usize,
    pub samples: usize,
    /// Reuse a basis saved by an earlier run instead of training one.
    pub basis_path: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ElasticityParams {
    pub e0: f64,
    pub e1: f64,
    pub nu: f64,
    pub q: f64,
    pub modulus_mode: ModulusMode,
    pub grid_per_dim: usize,
    /// Trapezoid nodes in `a` used for training.
    pub train_nodes: usize,
    /// Interface positions checked against the reference solver.
    pub test_parameters: Vec<f64>,
    /// Trapezoid nodes for the moments of the trained curve.
    pub moment_nodes: usize,
    pub oracle_h: f64,
    /// Also compute reference moments under the other modulus mode.
    pub report_other_mode: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VectorLaplaceParams {
    pub grid_per_dim: usize,
    /// When > 0, also train a parametric two-material model on this many
    /// interface positions and report the end-point eigenvalues.
    pub parametric_nodes: usize,
    pub e0: f64,
    pub e1: f64,
    pub q: f64,
    pub modulus_mode: ModulusMode,
    pub parametric_hidden: Vec<usize>,
    pub parametric_lr: f64,
    pub parametric_grid_per_dim: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DonutParams {
    pub inner_radii: Vec<f64>,
    pub probabilities: Vec<f64>,
    pub n_eigen: usize,
    pub radial_cells: usize,
    pub angular_cells: usize,
    pub oracle_radial_nodes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DuelParams {
    pub p: f64,
    pub epochs: usize,
    pub grid_per_dim: usize,
    pub max_frequency: usize,
    pub fourier_sigma: f64,
    /// Epochs of the linear-case (p = 2) sanity duel; 0 skips it.
    pub linear_check_epochs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HighdimFirstParams {
    pub dims: Vec<usize>,
    pub batch_base: usize,
    pub batch_per_dim: usize,
    pub epochs_base: usize,
    pub epochs_per_dim: usize,
}

impl HighdimFirstParams {
    pub fn batch(&self, d: usize) -> usize {
        self.batch_base + self.batch_per_dim * (d - 1)
    }

    pub fn epochs(&self, d: usize) -> usize {
        self.epochs_base + self.epochs_per_dim * (d - 1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HighdimSecondParams {
    pub dim: usize,
    pub batch: usize,
    pub epochs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProblemParams {
    Fourier1d(Fourier1dParams),
    Semicircle(SemicircleParams),
    Galerkin(GalerkinParams),
    Elasticity(ElasticityParams),
    VectorLaplace(VectorLaplaceParams),
    Donut(DonutParams),
    Duel(DuelParams),
    HighdimFirst(HighdimFirstParams),
    HighdimSecond(HighdimSecondParams),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub experiment: ExperimentName,
    pub seed: u64,
    /// Artifact directory; defaults to `<output root>/<experiment>`.
    pub output_dir: Option<PathBuf>,
    pub network: NetworkConfig,
    pub schedule: ScheduleConfig,
    pub problem: ProblemParams,
}

/// One problem found in a config, with the line it points at when known.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    pub line: Option<usize>,
    pub key: String,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}: {}", self.key, self.message),
            None => write!(f, "{}: {}", self.key, self.message),
        }
    }
}

fn semicircle_defaults() -> SemicircleParams {
    SemicircleParams { n_eigen: 9, grid_cells: [80, 40], oracle_radial_nodes: 400, oracle_lattice_h: 1.0 / 80.0 }
}

fn schedule(lr: f64, threshold: f64, base: usize, per_index: usize, max_epochs: usize, beta: f64) -> ScheduleConfig {
    ScheduleConfig {
        lr,
        lr_decay_factor: 1.0,
        lr_decay_every: 0,
        threshold,
        epochs_after_base: base,
        epochs_after_per_index: per_index,
        max_epochs,
        beta,
        tail_window: 0,
        gs_variant: GsVariant::Classical,
        restarts: 1,
    }
}

impl ExperimentConfig {
    /// The shipped defaults for `name`.
    pub fn default_for(name: ExperimentName) -> Self {
        use ExperimentName as E;
        let net = |hidden: &[usize], activation| NetworkConfig { hidden: hidden.to_vec(), activation };
        let (network, schedule, problem) = match name {
            E::Fourier1d => (
                net(&[20], Activation::Tanh),
                ScheduleConfig {
                    lr_decay_factor: 0.95,
                    lr_decay_every: 1000,
                    restarts: 3,
                    ..schedule(5e-3, 300.0, 10_000, 2000, 200_000, 1.0)
                },
                ProblemParams::Fourier1d(Fourier1dParams { grid_points: 250, n_eigen: 10, n_solve: 14 }),
            ),
            E::SemicircleBasis => (
                net(&[10, 10], Activation::Sigmoid),
                schedule(5e-3, 25.0, 5000, 1000, 60_000, 0.0),
                ProblemParams::Semicircle(semicircle_defaults()),
            ),
            E::GalerkinHeat => (
                net(&[10, 10], Activation::Sigmoid),
                schedule(5e-3, 25.0, 5000, 1000, 60_000, 0.0),
                ProblemParams::Galerkin(GalerkinParams {
                    basis: SemicircleParams { n_eigen: 15, ..semicircle_defaults() },
                    n_basis: 15,
                    samples: 100,
                    basis_path: None,
                }),
            ),
            E::UqElasticity => (
                net(&[15, 15], Activation::Tanh),
                schedule(1e-2, 200.0, 3000, 0, 3000, 0.0),
                ProblemParams::Elasticity(ElasticityParams {
                    e0: 1.0,
                    e1: 5.0,
                    nu: 0.25,
                    q: 50.0,
                    modulus_mode: ModulusMode::MidpointCorrected,
                    grid_per_dim: 75,
                    train_nodes: 25,
                    test_parameters: (0..10).map(|k| 0.05 + 0.1 * k as f64).collect(),
                    moment_nodes: 101,
                    oracle_h: 1.0 / 32.0,
                    report_other_mode: true,
                }),
            ),
            E::VectorLaplaceCheck => (
                net(&[10, 10], Activation::Tanh),
                schedule(5e-3, 200.0, 5000, 0, 5000, 0.0),
                ProblemParams::VectorLaplace(VectorLaplaceParams {
                    grid_per_dim: 50,
                    parametric_nodes: 0,
                    e0: 1.0,
                    e1: 2.0,
                    q: 50.0,
                    modulus_mode: ModulusMode::MidpointCorrected,
                    parametric_hidden: vec![15, 15],
                    parametric_lr: 1e-2,
                    parametric_grid_per_dim: 75,
                }),
            ),
            E::DonutParametric => (
                net(&[10, 10], Activation::Tanh),
                schedule(1e-2, 200.0, 5000, 1000, 60_000, 0.0),
                ProblemParams::Donut(DonutParams {
                    inner_radii: vec![0.25, 0.5],
                    probabilities: vec![0.5, 0.5],
                    n_eigen: 9,
                    radial_cells: 39,
                    angular_cells: 159,
                    oracle_radial_nodes: 400,
                }),
            ),
            E::PlaplaceDuel => (
                net(&[7, 7], Activation::Tanh),
                schedule(1e-2, f64::INFINITY, 30_000, 0, 30_000, 0.0),
                ProblemParams::Duel(DuelParams {
                    p: 5.0,
                    epochs: 30_000,
                    grid_per_dim: 75,
                    max_frequency: 10,
                    fourier_sigma: 1e-3,
                    linear_check_epochs: 5000,
                }),
            ),
            E::HighdimFirst => (
                net(&[6, 6], Activation::Tanh),
                ScheduleConfig {
                    lr_decay_factor: 0.95,
                    lr_decay_every: 1000,
                    tail_window: 5000,
                    ..schedule(2e-3, f64::INFINITY, 0, 0, 0, 0.0)
                },
                ProblemParams::HighdimFirst(HighdimFirstParams {
                    dims: (1..=9).collect(),
                    batch_base: 1000,
                    batch_per_dim: 2000,
                    epochs_base: 5000,
                    epochs_per_dim: 1500,
                }),
            ),
            E::HighdimSecond => (
                net(&[6, 6], Activation::Tanh),
                ScheduleConfig {
                    lr_decay_factor: 0.95,
                    lr_decay_every: 1000,
                    tail_window: 5000,
                    ..schedule(2e-3, f64::INFINITY, 25_000, 0, 25_000, 0.0)
                },
                ProblemParams::HighdimSecond(HighdimSecondParams { dim: 10, batch: 5000, epochs: 25_000 }),
            ),
        };
        Self { experiment: name, seed: 0, output_dir: None, network, schedule, problem }
    }

    /// Parses a config, reporting every problem found.
    pub fn parse(text: &str) -> std::result::Result<Self, Vec<Diagnostic>> {
        let user: toml::Table = match text.parse() {
            Ok(t) => t,
            Err(e) => {
                let line = e.span().map(|s| line_of_offset(text, s.start));
                return Err(vec![Diagnostic { line, key: String::new(), message: e.message().to_string() }]);
            }
        };
        let name = match user.get("experiment") {
            Some(toml::Value::String(s)) => match s.parse::<ExperimentName>() {
                Ok(n) => n,
                Err(_) => {
                    let names: Vec<&str> = ExperimentName::ALL.iter().map(|n| n.as_str()).collect();
                    return Err(vec![diag(text, "experiment", format!("unknown experiment {s:?}; expected one of {}", names.join(", ")))]);
                }
            },
            _ => return Err(vec![diag(text, "experiment", "missing string key `experiment`".into())]),
        };
        let defaults = toml::Table::try_from(Self::default_for(name)).expect("defaults serialize");
        let mut user = user;
        let mut diags = Vec::new();
        check_known_keys(text, &mut user, &defaults, "", &mut diags);
        let mut merged = defaults;
        merge(&mut merged, user);
        let cfg = match Self::from_table(name, merged) {
            Ok(c) => c,
            Err(e) => {
                diags.push(Diagnostic { line: None, key: String::new(), message: e.to_string() });
                return Err(diags);
            }
        };
        diags.extend(cfg.check().into_iter().map(|(key, message)| diag(text, &key, message)));
        if diags.is_empty() {
            Ok(cfg)
        } else {
            Err(diags)
        }
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text).map_err(|d| {
            Error::Config(d.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("\n"))
        })
    }

    fn from_table(name: ExperimentName, mut t: toml::Table) -> std::result::Result<Self, toml::de::Error> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Common {
            experiment: ExperimentName,
            seed: u64,
            output_dir: Option<PathBuf>,
            network: NetworkConfig,
            schedule: ScheduleConfig,
        }
        let problem = toml::Value::Table(match t.remove("problem") {
            Some(toml::Value::Table(p)) => p,
            _ => toml::Table::new(),
        });
        let common: Common = toml::Value::Table(t).try_into()?;
        use ExperimentName as E;
        let problem = match name {
            E::Fourier1d => ProblemParams::Fourier1d(problem.try_into()?),
            E::SemicircleBasis => ProblemParams::Semicircle(problem.try_into()?),
            E::GalerkinHeat => ProblemParams::Galerkin(problem.try_into()?),
            E::UqElasticity => ProblemParams::Elasticity(problem.try_into()?),
            E::VectorLaplaceCheck => ProblemParams::VectorLaplace(problem.try_into()?),
            E::DonutParametric => ProblemParams::Donut(problem.try_into()?),
            E::PlaplaceDuel => ProblemParams::Duel(problem.try_into()?),
            E::HighdimFirst => ProblemParams::HighdimFirst(problem.try_into()?),
            E::HighdimSecond => ProblemParams::HighdimSecond(problem.try_into()?),
        };
        Ok(Self {
            experiment: common.experiment,
            seed: common.seed,
            output_dir: common.output_dir,
            network: common.network,
            schedule: common.schedule,
            problem,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Semantic checks as `(key, message)` pairs; empty when valid.
    pub fn check(&self) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> = Vec::new();
        let mut bad = |k: &str, m: String| out.push((k.to_string(), m));
        if self.network.hidden.is_empty() || self.network.hidden.contains(&0) {
            bad("network.hidden", "need at least one hidden layer, all widths >= 1".into());
        }
        let s = &self.schedule;
        if !(s.lr > 0.0 && s.lr.is_finite()) {
            bad("schedule.lr", format!("learning rate must be positive, got {}", s.lr));
        }
        if s.restarts == 0 {
            bad("schedule.restarts", "restarts must be >= 1".into());
        }
        if !(s.threshold > 0.0) {
            bad("schedule.threshold", format!("threshold must be positive, got {}", s.threshold));
        }
        if !(s.beta >= 0.0) {
            bad("schedule.beta", format!("penalty weight must be >= 0, got {}", s.beta));
        }
        if s.lr_decay_every > 0 && !(s.lr_decay_factor > 0.0 && s.lr_decay_factor <= 1.0) {
            bad("schedule.lr_decay_factor", "decay factor must lie in (0, 1]".into());
        }
        let uses_cap = !matches!(self.problem, ProblemParams::HighdimFirst(_));
        let max_index = self.max_index();
        if uses_cap && s.max_epochs < s.epochs_after_base + s.epochs_after_per_index * max_index {
            bad(
                "schedule.max_epochs",
                format!(
                    "cap {} is below the post-threshold budget {} of eigenpair {max_index}",
                    s.max_epochs,
                    s.epochs_after_base + s.epochs_after_per_index * max_index
                ),
            );
        }
        match &self.problem {
            ProblemParams::Fourier1d(p) => {
                if p.grid_points < 2 {
                    bad("problem.grid_points", "need at least 2 grid points".into());
                }
                if p.n_eigen == 0 || p.n_solve < p.n_eigen {
                    bad("problem.n_solve", "need 1 <= n_eigen <= n_solve".into());
                }
            }
            ProblemParams::Semicircle(p) => check_semicircle(p, "problem", &mut bad),
            ProblemParams::Galerkin(p) => {
                check_semicircle(&p.basis, "problem.basis", &mut bad);
                if p.n_basis == 0 || (p.basis_path.is_none() && p.n_basis > p.basis.n_eigen) {
                    bad("problem.n_basis", "basis size must be >= 1 and not exceed the trained basis".into());
                }
                if p.samples == 0 {
                    bad("problem.samples", "need at least one manufactured sample".into());
                }
            }
            ProblemParams::Elasticity(p) => {
                if !(p.e0 > 0.0 && p.e1 > 0.0 && p.q > 0.0) {
                    bad("problem.e0", "moduli and sharpness must be positive".into());
                }
                if !(0.0..0.5).contains(&p.nu) {
                    bad("problem.nu", format!("Poisson ratio must lie in [0, 0.5), got {}", p.nu));
                }
                if p.train_nodes < 2 || p.moment_nodes < 2 {
                    bad("problem.train_nodes", "need at least 2 nodes in the parameter".into());
                }
                if p.grid_per_dim < 2 {
                    bad("problem.grid_per_dim", "grid too coarse".into());
                }
                if p.test_parameters.iter().any(|a| !(0.0..=1.0).contains(a)) {
                    bad("problem.test_parameters", "interface positions must lie in [0, 1]".into());
                }
                if !(p.oracle_h > 0.0 && p.oracle_h < 0.5) {
                    bad("problem.oracle_h", "spacing must lie in (0, 0.5)".into());
                }
            }
            ProblemParams::VectorLaplace(p) => {
                if p.grid_per_dim < 2 {
                    bad("problem.grid_per_dim", "grid too coarse".into());
                }
                if p.parametric_nodes == 1 {
                    bad("problem.parametric_nodes", "use 0 to skip or >= 2 nodes".into());
                }
                if !(p.e0 > 0.0 && p.e1 > 0.0 && p.q > 0.0) {
                    bad("problem.e0", "moduli and sharpness must be positive".into());
                }
            }
            ProblemParams::Donut(p) => {
                if p.inner_radii.is_empty() || p.inner_radii.iter().any(|a| !(*a > 0.0 && *a < 1.0)) {
                    bad("problem.inner_radii", "inner radii must lie in (0, 1)".into());
                }
                let total: f64 = p.probabilities.iter().sum();
                if p.probabilities.len() != p.inner_radii.len() || (total - 1.0).abs() > 1e-12 || p.probabilities.iter().any(|w| *w < 0.0) {
                    bad("problem.probabilities", "one nonnegative probability per radius, summing to 1".into());
                }
                if p.n_eigen == 0 || p.radial_cells == 0 || p.angular_cells == 0 {
                    bad("problem.n_eigen", "counts must be >= 1".into());
                }
            }
            ProblemParams::Duel(p) => {
                if !(p.p >= 1.0) {
                    bad("problem.p", format!("need p >= 1, got {}", p.p));
                }
                if p.max_frequency == 0 || !(p.fourier_sigma > 0.0) {
                    bad("problem.max_frequency", "need M >= 1 and sigma > 0".into());
                }
                if p.epochs == 0 || p.grid_per_dim < 2 {
                    bad("problem.epochs", "need epochs >= 1 and a grid".into());
                }
            }
            ProblemParams::HighdimFirst(p) => {
                if p.dims.is_empty() || p.dims.contains(&0) {
                    bad("problem.dims", "hypercube dimension must be >= 1".into());
                }
                if p.batch_base == 0 {
                    bad("problem.batch_base", "batch must be >= 1".into());
                }
                if s.tail_window == 0 {
                    bad("schedule.tail_window", "Monte Carlo runs need a tail window".into());
                }
            }
            ProblemParams::HighdimSecond(p) => {
                if p.dim == 0 {
                    bad("problem.dim", "hypercube dimension must be >= 1".into());
                }
                if p.batch == 0 || p.epochs == 0 {
                    bad("problem.batch", "batch and epochs must be >= 1".into());
                }
                if s.tail_window == 0 || s.tail_window > p.epochs {
                    bad("schedule.tail_window", "tail window must lie in 1..=epochs".into());
                }
            }
        }
        out
    }

    fn max_index(&self) -> usize {
        match &self.problem {
            ProblemParams::Fourier1d(p) => p.n_solve,
            ProblemParams::Semicircle(p) => p.n_eigen,
            ProblemParams::Galerkin(p) => p.basis.n_eigen,
            ProblemParams::Donut(p) => p.n_eigen,
            ProblemParams::HighdimSecond(_) => 2,
            _ => 1,
        }
    }
}

fn check_semicircle(p: &SemicircleParams, prefix: &str, bad: &mut impl FnMut(&str, String)) {
    if p.n_eigen == 0 {
        bad(&format!("{prefix}.n_eigen"), "need at least one eigenpair".into());
    }
    if p.grid_cells.contains(&0) {
        bad(&format!("{prefix}.grid_cells"), "grid counts must be >= 1".into());
    }
    if p.oracle_radial_nodes < 10 {
        bad(&format!("{prefix}.oracle_radial_nodes"), "need at least 10 radial nodes".into());
    }
    if !(p.oracle_lattice_h > 0.0 && p.oracle_lattice_h < 0.5) {
        bad(&format!("{prefix}.oracle_lattice_h"), "spacing must lie in (0, 0.5)".into());
    }
}

/// Diagnostics for keys that do not exist in the experiment's schema.
/// Reports keys absent from `schema` and drops them from `user`, so the
/// remaining settings can still be checked.
fn check_known_keys(text: &str, user: &mut toml::Table, schema: &toml::Table, prefix: &str, out: &mut Vec<Diagnostic>) {
    let mut unknown = Vec::new();
    for (k, v) in user.iter_mut() {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        if k == "output_dir" && prefix.is_empty() {
            continue;
        }
        if prefix == "problem" && k == "basis_path" {
            continue;
        }
        match (schema.get(k), v) {
            (None, _) => {
                out.push(diag(text, &path, "unknown key for this experiment".into()));
                unknown.push(k.clone());
            }
            (Some(toml::Value::Table(s)), toml::Value::Table(u)) => check_known_keys(text, u, s, &path, out),
            _ => {}
        }
    }
    for k in unknown {
        user.remove(&k);
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn line_of_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Locates the line defining `key` (dotted path) in the source, if present.
fn find_key_line(text: &str, key: &str) -> Option<usize> {
    let (section, leaf) = match key.rfind('.') {
        Some(i) => (&key[..i], &key[i + 1..]),
        None => ("", key),
    };
    let mut current = String::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.starts_with('[') && line.ends_with(']') {
            current = line.trim_matches(|c| c == '[' || c == ']').trim().to_string();
            continue;
        }
        let Some((k, _)) = line.split_once('=') else { continue };
        let k = k.trim();
        let full = if current.is_empty() { k.to_string() } else { format!("{current}.{k}") };
        if full == key || (current == section && k == leaf) {
            return Some(n + 1);
        }
    }
    None
}

fn diag(text: &str, key: &str, message: String) -> Diagnostic {
    Diagnostic { line: find_key_line(text, key), key: key.to_string(), message }
}

/// Diagnostics for a config text; empty when valid.
pub fn validate(text: &str) -> Vec<Diagnostic> {
    match ExperimentConfig::parse(text) {
        Ok(_) => Vec::new(),
        Err(d) => d,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_defaults_are_valid_and_round_trip() {
        for name in ExperimentName::ALL {
            let cfg = ExperimentConfig::default_for(name);
            assert!(cfg.check().is_empty(), "{name}: {:?}", cfg.check());
            let text = cfg.to_toml();
            let back = ExperimentConfig::parse(&text).unwrap_or_else(|d| panic!("{name}: {d:?}"));
            assert_eq!(back, cfg);
            let minimal = format!("experiment = \"{name}\"\n");
            assert!(validate(&minimal).is_empty());
        }
    }

    #[test]
    fn overrides_merge_over_defaults() {
        let cfg = ExperimentConfig::parse("experiment = \"fourier-1d\"\nseed = 7\n[schedule]\nlr = 0.001\n").unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.schedule.lr, 1e-3);
        assert_eq!(cfg.schedule.threshold, 300.0);
    }

    #[test]
    fn negative_beta_is_reported_with_line() {
        let d = validate("experiment = \"semicircle-basis\"\n\n[schedule]\nbeta = -1.0\n");
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].key, "schedule.beta");
        assert_eq!(d[0].line, Some(4));
    }

    #[test]
    fn zero_dimension_and_unknown_keys() {
        let d = validate("experiment = \"highdim-first\"\n[problem]\ndims = [0, 2]\n");
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].line, Some(3));
        let d = validate("experiment = \"highdim-second\"\n[problem]\ndim = 0\n");
        assert_eq!(d[0].key, "problem.dim");
        let d = validate("experiment = \"fourier-1d\"\n[problem]\nwidth = 3\n");
        assert_eq!(d[0].key, "problem.width");
        assert_eq!(d[0].line, Some(3));
        assert!(!validate("experiment = \"nope\"").is_empty());
        assert!(!validate("seed = 1").is_empty());
        let syntax = validate("experiment = \"fourier-1d\"\nseed = = 2\n");
        assert_eq!(syntax[0].line, Some(2));
    }

    #[test]
    fn schedule_conversion() {
        let cfg = ExperimentConfig::default_for(ExperimentName::HighdimFirst);
        let s = cfg.schedule.to_schedule();
        assert_eq!(s.lr_decay, Some(LrDecay { factor: 0.95, every: 1000 }));
        assert_eq!(s.tail_window, Some(5000));
        let s = ExperimentConfig::default_for(ExperimentName::Fourier1d).schedule.to_schedule();
        assert_eq!(s.lr_decay, Some(LrDecay { factor: 0.95, every: 1000 }));
        assert_eq!(s.epochs_after.at(3), 16_000);
        assert_eq!(s.restarts, 3);
        let s = ExperimentConfig::default_for(ExperimentName::SemicircleBasis).schedule.to_schedule();
        assert_eq!(s.lr_decay, None);
    }
}
