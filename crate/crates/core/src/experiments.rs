//! The named experiments: each trains, scores against its reference and
//! writes CSV/JSON artifacts into one directory.

use std::f64::consts::PI;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::ansatz::{LevelSet, LevelSetAnsatz, TrialFunction};
use crate::config::{
    DonutParams, DuelParams, ElasticityParams, ExperimentConfig, ExperimentName, Fourier1dParams, GalerkinParams,
    HighdimFirstParams, HighdimSecondParams, ProblemParams, SemicircleParams, VectorLaplaceParams, SCHEMA_VERSION,
};
use crate::error::{Error, Result};
use crate::fourier::{duel_trials, plaplace_duel, DuelSettings};
use crate::galerkin::{energy_error, mean_relative_error, sample_manufactured, GalerkinScore};
use crate::nn::{MlpSpec, ParamVector};
use crate::objectives::{ModulusField, ModulusMode, RayleighKind};
use crate::oracle::{
    fd_eigs, fd_eigs_vector_elasticity, radial_eigs, richardson, ElasticLaw, RadialDomain, RadialMode,
};
use crate::orthogonalization::{max_off_diagonal, orthogonality_report, EigenBasis, GridSamples, Representation};
use crate::quadrature::{annulus_polar_grid, interval_grid, masked_box_grid, masked_square_grid, DomainSpec, QuadratureGrid};
use crate::solver::{
    eigencurve_eval, solve_parametric_spectrum, solve_spectrum, EigenProblem, EigenReport, Integration, Slice,
    SolveSchedule, Spectrum,
};
use crate::uq::{moments, DensitySpec, Moments};

/// Environment variable naming the default artifact root.
pub const OUTPUT_ROOT_VAR: &str = "EIGENNET_OUT";

pub fn default_output_root() -> PathBuf {
    std::env::var_os(OUTPUT_ROOT_VAR).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"))
}

/// `--out` beats the config's `output_dir`, which beats `<root>/<name>`.
pub fn resolve_output_dir(cfg: &ExperimentConfig, cli_out: Option<&Path>) -> PathBuf {
    cli_out
        .map(Path::to_path_buf)
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| default_output_root().join(cfg.experiment.as_str()))
}

/// Per-eigenpair comparison with a reference value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EigenpairMetric {
    pub index: usize,
    pub eigenvalue: f64,
    pub reference: f64,
    pub relative_error: f64,
    /// `∫(û − u)²` against the normalized reference eigenfunction, sign aligned.
    pub function_error: Option<f64>,
    pub epochs: usize,
    pub converged: bool,
    /// Final quotient of each restart; the smallest was kept.
    pub restart_eigenvalues: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fourier1dResult {
    pub pairs: Vec<EigenpairMetric>,
    pub n_eigen: usize,
    /// Mean eigenvalue and eigenfunction errors over the first `n_eigen`.
    pub e_lambda: f64,
    pub e_u: f64,
    /// The same means over every solved eigenpair.
    pub e_lambda_all: f64,
    pub e_u_all: f64,
    pub raw_norms: Vec<f64>,
    pub ordering_violations: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SemicircleResult {
    pub pairs: Vec<EigenpairMetric>,
    pub max_relative_error: f64,
    pub max_function_error: f64,
    /// Relative error of the first eigenvalue against `j₁,₁²`.
    pub first_vs_bessel: f64,
    pub ordering_violations: Vec<usize>,
    pub max_orthogonality_defect: f64,
    /// Staircase-lattice eigenvalues at the configured spacing.
    pub lattice_eigenvalues: Vec<f64>,
    pub grid_points: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GalerkinResult {
    pub basis: SemicircleResult,
    pub n_basis: usize,
    pub score: GalerkinScore,
    /// 95% normal-approximation interval for the mean error.
    pub ci95: (f64, f64),
    /// Energy-norm error of the first manufactured sample for N = 1..n_basis.
    pub energy_errors: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveCheck {
    pub parameter: f64,
    pub trained: f64,
    pub reference: f64,
    pub relative_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElasticityResult {
    pub modulus_mode: ModulusMode,
    pub checks: Vec<CurveCheck>,
    pub average_relative_error: f64,
    pub moments: Moments,
    /// Moments of the reference curve sampled at the check points plus the ends.
    pub reference_moments: Option<Moments>,
    pub other_mode: Option<OtherModeReport>,
    pub expected_quotient: f64,
    pub epochs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OtherModeReport {
    pub modulus_mode: ModulusMode,
    pub modulus_min: f64,
    pub modulus_max: f64,
    /// Reference eigenvalue at each check point, or the solver's complaint.
    pub reference: Vec<std::result::Result<f64, String>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VectorLaplaceResult {
    pub eigenvalue: f64,
    pub exact: f64,
    pub relative_error: f64,
    pub epochs: usize,
    pub parametric: Option<Vec<CurveCheck>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DonutSliceResult {
    pub inner_radius: f64,
    pub pairs: Vec<EigenpairMetric>,
    pub ordering_violations: Vec<usize>,
    pub max_orthogonality_defect: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DonutResult {
    pub slices: Vec<DonutSliceResult>,
    pub average_relative_error: f64,
    pub max_relative_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearCheck {
    pub exact: f64,
    pub network: f64,
    pub fourier: f64,
    pub network_error: f64,
    pub fourier_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DuelSummary {
    pub p: f64,
    pub epochs: usize,
    pub network_params: usize,
    pub fourier_params: usize,
    pub network_initial: f64,
    pub fourier_initial: f64,
    pub network_final: f64,
    pub fourier_final: f64,
    pub network_wins: bool,
    pub fourier_starts_higher: bool,
    pub linear_check: Option<LinearCheck>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HighdimEstimate {
    pub dim: usize,
    pub index: usize,
    pub batch: usize,
    pub epochs: usize,
    pub params: usize,
    pub tail_mean: f64,
    pub exact: f64,
    pub relative_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HighdimFirstResult {
    pub dims: Vec<HighdimEstimate>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HighdimSecondResult {
    pub first: HighdimEstimate,
    pub second: HighdimEstimate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "experiment", rename_all = "kebab-case")]
pub enum ExperimentResult {
    #[serde(rename = "fourier-1d")]
    Fourier1d(Fourier1dResult),
    SemicircleBasis(SemicircleResult),
    GalerkinHeat(GalerkinResult),
    UqElasticity(ElasticityResult),
    VectorLaplaceCheck(VectorLaplaceResult),
    DonutParametric(DonutResult),
    PlaplaceDuel(DuelSummary),
    HighdimFirst(HighdimFirstResult),
    HighdimSecond(HighdimSecondResult),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub schema_version: String,
    pub seed: u64,
    /// `ok`, or `partial` when some eigenpair failed or did not converge.
    pub status: String,
    pub failures: Vec<String>,
    pub result: ExperimentResult,
}

struct Outcome {
    result: ExperimentResult,
    failures: Vec<String>,
}

/// Runs `cfg`, writing artifacts into `out`.
pub fn run(cfg: &ExperimentConfig, out: &Path) -> Result<RunSummary> {
    let problems = cfg.check();
    if !problems.is_empty() {
        let msg: Vec<String> = problems.iter().map(|(k, m)| format!("{k}: {m}")).collect();
        return Err(Error::Config(msg.join("\n")));
    }
    fs::create_dir_all(out)?;
    fs::write(out.join("config.toml"), cfg.to_toml())?;
    log::info!("running {} (seed {}) into {}", cfg.experiment, cfg.seed, out.display());
    let outcome = match &cfg.problem {
        ProblemParams::Fourier1d(p) => fourier_1d(cfg, p, out)?,
        ProblemParams::Semicircle(p) => {
            let (r, failures, _) = semicircle(cfg, p, out)?;
            Outcome { result: ExperimentResult::SemicircleBasis(r), failures }
        }
        ProblemParams::Galerkin(p) => galerkin_heat(cfg, p, out)?,
        ProblemParams::Elasticity(p) => uq_elasticity(cfg, p, out)?,
        ProblemParams::VectorLaplace(p) => vector_laplace(cfg, p, out)?,
        ProblemParams::Donut(p) => donut(cfg, p, out)?,
        ProblemParams::Duel(p) => duel(cfg, p, out)?,
        ProblemParams::HighdimFirst(p) => highdim_first(cfg, p, out)?,
        ProblemParams::HighdimSecond(p) => highdim_second(cfg, p, out)?,
    };
    let summary = RunSummary {
        schema_version: SCHEMA_VERSION.to_string(),
        seed: cfg.seed,
        status: if outcome.failures.is_empty() { "ok" } else { "partial" }.to_string(),
        failures: outcome.failures,
        result: outcome.result,
    };
    write_summary(&summary, out)?;
    Ok(summary)
}

pub fn write_summary(summary: &RunSummary, out: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(summary)?;
    text.push('\n');
    fs::write(out.join("summary.json"), text)?;
    Ok(())
}

pub fn read_summary(out: &Path) -> Result<RunSummary> {
    Ok(serde_json::from_str(&fs::read_to_string(out.join("summary.json"))?)?)
}

// ---------------------------------------------------------------------------
// Shared helpers

fn mlp(cfg: &ExperimentConfig, input: usize, output: usize) -> Result<MlpSpec> {
    MlpSpec::new(input, cfg.network.hidden.clone(), output, cfg.network.activation)
}

fn write_rows(path: &Path, header: &str, rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(f, "{header}")?;
    for r in rows {
        writeln!(f, "{}", r.join(","))?;
    }
    f.flush()?;
    Ok(())
}

fn num(v: f64) -> String {
    format!("{v:.17e}")
}

fn write_histories(reports: &[EigenReport], out: &Path, suffix: &str) -> Result<()> {
    for r in reports {
        r.write_history_csv(&out.join(format!("convergence_{}{suffix}.csv", r.index)))?;
    }
    Ok(())
}

/// `eigenvalues.csv`: one row per eigenpair and slice.
fn write_eigen_table(out: &Path, rows: &[(usize, Option<usize>, Option<f64>, &EigenpairMetric)]) -> Result<()> {
    write_rows(
        &out.join("eigenvalues.csv"),
        "index,slice,parameter,eigenvalue,reference,relative_error",
        rows.iter().map(|(i, s, a, m)| {
            vec![
                i.to_string(),
                s.map(|s| s.to_string()).unwrap_or_default(),
                a.map(num).unwrap_or_default(),
                num(m.eigenvalue),
                num(m.reference),
                num(m.relative_error),
            ]
        }),
    )
}

fn spectrum_failures(spec: &Spectrum, wanted: usize) -> Vec<String> {
    let mut f: Vec<String> = spec
        .reports
        .iter()
        .filter(|r| !r.converged)
        .map(|r| format!("eigenpair {} did not reach its threshold", r.index))
        .collect();
    if let Some(e) = &spec.failure {
        f.push(format!("eigenpair {} failed: {e}", spec.reports.len() + 1));
    } else if spec.reports.len() < wanted {
        f.push(format!("only {} of {wanted} eigenpairs solved", spec.reports.len()));
    }
    f
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

/// Sign-aligned `Σ w (û − u)²` with `u` normalized on the same grid.
fn aligned_l2_error(samples: &GridSamples, reference: &[f64], grid: &QuadratureGrid) -> f64 {
    let norm: f64 = reference.iter().zip(grid.weights.iter()).map(|(u, w)| w * u * u).sum::<f64>().sqrt();
    let (mut plus, mut minus) = (0.0, 0.0);
    for (i, w) in grid.weights.iter().enumerate() {
        let u = reference[i] / norm;
        let v = samples.values[[i, 0]];
        plus += w * (v - u) * (v - u);
        minus += w * (v + u) * (v + u);
    }
    plus.min(minus)
}

fn mean(v: impl IntoIterator<Item = f64>) -> f64 {
    let (s, n) = v.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

fn grid_samples(basis: &EigenBasis) -> Vec<&GridSamples> {
    basis
        .entries
        .iter()
        .filter_map(|e| match &e.repr {
            Representation::Grid(s) => Some(s),
            Representation::Snapshot { .. } => None,
        })
        .collect()
}

// ---------------------------------------------------------------------------
// fourier-1d

fn fourier_1d(cfg: &ExperimentConfig, p: &Fourier1dParams, out: &Path) -> Result<Outcome> {
    let trial = LevelSetAnsatz::new(mlp(cfg, 1, 1)?, LevelSet::Interval)?;
    let grid = interval_grid(p.grid_points)?;
    let problem = EigenProblem {
        trial: &trial,
        integration: Integration::Grid(vec![Slice {
            grid: grid.clone(),
            kind: RayleighKind::ScalarLaplace,
            weight: 1.0,
            parameter: None,
        }]),
    };
    let spec = solve_spectrum(&problem, p.n_solve, None, &cfg.schedule.to_schedule(), cfg.seed)?;
    let basis = &spec.bases[0];
    let samples = grid_samples(basis);
    let pairs: Vec<EigenpairMetric> = spec
        .reports
        .iter()
        .zip(&samples)
        .map(|(r, s)| {
            let k = r.index as f64 * PI;
            let exact: Vec<f64> = grid.points.column(0).iter().map(|x| 2f64.sqrt() * (k * x).sin()).collect();
            EigenpairMetric {
                index: r.index,
                eigenvalue: r.eigenvalue,
                reference: k * k,
                relative_error: rel(r.eigenvalue, k * k),
                function_error: Some(aligned_l2_error(s, &exact, &grid)),
                epochs: r.epochs,
                converged: r.converged,
                restart_eigenvalues: r.restart_eigenvalues.clone(),
            }
        })
        .collect();
    let gated = &pairs[..p.n_eigen.min(pairs.len())];
    let result = Fourier1dResult {
        n_eigen: p.n_eigen,
        e_lambda: mean(gated.iter().map(|m| m.relative_error)),
        e_u: mean(gated.iter().map(|m| m.function_error.unwrap())),
        e_lambda_all: mean(pairs.iter().map(|m| m.relative_error)),
        e_u_all: mean(pairs.iter().map(|m| m.function_error.unwrap())),
        raw_norms: spec.reports.iter().map(|r| r.raw_norm).collect(),
        ordering_violations: basis.ordering_violations(),
        pairs,
    };
    write_eigen_table(out, &result.pairs.iter().map(|m| (m.index, None, None, m)).collect::<Vec<_>>())?;
    write_histories(&spec.reports, out, "")?;
    basis.write_samples_csv(&grid, &out.join("fields.csv"))?;
    let failures = spectrum_failures(&spec, p.n_solve);
    Ok(Outcome { result: ExperimentResult::Fourier1d(result), failures })
}

// ---------------------------------------------------------------------------
// semicircle-basis and galerkin-heat

fn semicircle_grid(p: &SemicircleParams) -> Result<QuadratureGrid> {
    masked_box_grid(&p.grid_cells, &LevelSet::Semicircle)
}

/// Scores a semicircle basis against the separable reference.
pub fn score_semicircle(
    basis: &EigenBasis,
    reports: &[EigenReport],
    grid: &QuadratureGrid,
    p: &SemicircleParams,
) -> Result<SemicircleResult> {
    let n = basis.len();
    let modes: Vec<RadialMode> = radial_eigs(RadialDomain::HalfDisk, n.max(1), p.oracle_radial_nodes)?;
    let samples = grid_samples(basis);
    let pairs: Vec<EigenpairMetric> = basis
        .entries
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let mode = &modes[i];
            let exact: Vec<f64> = grid.points.outer_iter().map(|x| mode.half_disk_value(&[x[0], x[1]])).collect();
            let report = reports.get(i);
            EigenpairMetric {
                index: i + 1,
                eigenvalue: e.eigenvalue,
                reference: mode.eigenvalue,
                relative_error: rel(e.eigenvalue, mode.eigenvalue),
                function_error: samples.get(i).map(|s| aligned_l2_error(s, &exact, grid)),
                epochs: report.map_or(0, |r| r.epochs),
                converged: report.is_none_or(|r| r.converged),
                restart_eigenvalues: report.map_or_else(Vec::new, |r| r.restart_eigenvalues.clone()),
            }
        })
        .collect();
    let lattice = fd_eigs(&DomainSpec::Semicircle, p.oracle_lattice_h, n.max(1))?.eigenvalues;
    let j11_sq = 3.831_705_970_207_512_f64.powi(2);
    Ok(SemicircleResult {
        max_relative_error: pairs.iter().map(|m| m.relative_error).fold(0.0, f64::max),
        max_function_error: pairs.iter().filter_map(|m| m.function_error).fold(0.0, f64::max),
        first_vs_bessel: pairs.first().map_or(f64::NAN, |m| rel(m.eigenvalue, j11_sq)),
        ordering_violations: basis.ordering_violations(),
        max_orthogonality_defect: max_off_diagonal(&orthogonality_report(basis, grid)?),
        lattice_eigenvalues: lattice,
        grid_points: grid.len(),
        pairs,
    })
}

fn semicircle_spectrum(cfg: &ExperimentConfig, p: &SemicircleParams) -> Result<(Spectrum, QuadratureGrid)> {
    let trial = LevelSetAnsatz::new(mlp(cfg, 2, 1)?, LevelSet::Semicircle)?;
    let grid = semicircle_grid(p)?;
    let problem = EigenProblem {
        trial: &trial,
        integration: Integration::Grid(vec![Slice {
            grid: grid.clone(),
            kind: RayleighKind::ScalarLaplace,
            weight: 1.0,
            parameter: None,
        }]),
    };
    let spec = solve_spectrum(&problem, p.n_eigen, None, &cfg.schedule.to_schedule(), cfg.seed)?;
    Ok((spec, grid))
}

fn semicircle(
    cfg: &ExperimentConfig,
    p: &SemicircleParams,
    out: &Path,
) -> Result<(SemicircleResult, Vec<String>, (EigenBasis, QuadratureGrid))> {
    let (spec, grid) = semicircle_spectrum(cfg, p)?;
    let basis = spec.bases[0].clone();
    let result = score_semicircle(&basis, &spec.reports, &grid, p)?;
    write_eigen_table(out, &result.pairs.iter().map(|m| (m.index, None, None, m)).collect::<Vec<_>>())?;
    write_histories(&spec.reports, out, "")?;
    basis.write_samples_csv(&grid, &out.join("fields.csv"))?;
    basis.save_json(&out.join("basis.json"))?;
    let failures = spectrum_failures(&spec, p.n_eigen);
    Ok((result, failures, (basis, grid)))
}

fn galerkin_heat(cfg: &ExperimentConfig, p: &GalerkinParams, out: &Path) -> Result<Outcome> {
    let (basis_result, failures, basis, grid) = match &p.basis_path {
        Some(path) => {
            let basis = EigenBasis::load_json(path)?;
            let grid = semicircle_grid(&p.basis)?;
            let r = score_semicircle(&basis, &[], &grid, &p.basis)?;
            (r, Vec::new(), basis, grid)
        }
        None => {
            let (r, f, (b, g)) = semicircle(cfg, &p.basis, out)?;
            (r, f, b, g)
        }
    };
    if basis.len() < p.n_basis {
        return Err(Error::InvalidArgument(format!("basis has {} entries, {} requested", basis.len(), p.n_basis)));
    }
    let ls = LevelSet::Semicircle;
    let score = mean_relative_error(&basis, p.n_basis, &grid, &ls, p.samples, cfg.seed)?;
    let first = sample_manufactured(&ls, cfg.seed);
    let energy_errors = (1..=p.n_basis)
        .map(|n| energy_error(&basis, n, &first, &grid))
        .collect::<Result<Vec<f64>>>()?;
    write_rows(
        &out.join("galerkin_samples.csv"),
        "sample,seed,relative_error",
        score
            .per_sample
            .iter()
            .enumerate()
            .map(|(j, e)| vec![j.to_string(), cfg.seed.wrapping_add(j as u64).to_string(), num(*e)]),
    )?;
    let half = 1.96 * score.std_error;
    let result = GalerkinResult {
        basis: basis_result,
        n_basis: p.n_basis,
        ci95: (score.mean - half, score.mean + half),
        score,
        energy_errors,
    };
    Ok(Outcome { result: ExperimentResult::GalerkinHeat(result), failures })
}

// ---------------------------------------------------------------------------
// uq-elasticity and vector-laplace-check

fn elastic_reference(law: &ElasticLaw, h: f64) -> Result<f64> {
    let coarse = fd_eigs_vector_elasticity(law, h, 1)?.eigenvalues[0];
    let fine = fd_eigs_vector_elasticity(law, h / 2.0, 1)?.eigenvalues[0];
    Ok(richardson(coarse, fine))
}

fn modulus_range(field: &ModulusField) -> (f64, f64) {
    let lo = crate::objectives::modulus(&ModulusField { a: 0.5, ..field.clone() }, -1e3);
    let hi = crate::objectives::modulus(&ModulusField { a: 0.5, ..field.clone() }, 1e3);
    (lo.min(hi), lo.max(hi))
}

/// Trains a two-material parametric model and returns the trained curve
/// sampled at `parameters`.
#[allow(clippy::too_many_arguments)]
fn train_parametric_curve(
    trial: &LevelSetAnsatz,
    kind: &RayleighKind,
    grid: &QuadratureGrid,
    train_nodes: usize,
    schedule: &SolveSchedule,
    seed: u64,
    parameters: &[f64],
    out: &Path,
) -> Result<(Vec<f64>, f64, usize, Vec<String>, ParamVector)> {
    let density = DensitySpec::Uniform { lo: 0.0, hi: 1.0, nodes: train_nodes };
    let slices: Vec<Slice> = density
        .nodes()?
        .into_iter()
        .map(|(a, w)| Slice { grid: grid.with_parameter(a), kind: kind.with_parameter(a), weight: w, parameter: Some(a) })
        .collect();
    let spec = solve_parametric_spectrum(trial, slices, 1, schedule, seed)?;
    let failures = spectrum_failures(&spec, 1);
    let report = spec
        .reports
        .first()
        .ok_or(Error::NoConvergence(1))?;
    write_histories(&spec.reports, out, "")?;
    let curve = eigencurve_eval(trial, &report.params, kind, (0.0, 1.0), parameters, |a| Ok(grid.with_parameter(a)))?;
    Ok((curve.iter().map(|c| c.eigenvalue).collect(), report.eigenvalue, report.epochs, failures, report.params.clone()))
}

fn write_parametric_fields(
    trial: &LevelSetAnsatz,
    params: &ParamVector,
    grid: &QuadratureGrid,
    parameters: &[f64],
    path: &Path,
) -> Result<()> {
    let mut rows = Vec::new();
    for &a in parameters {
        let g = grid.with_parameter(a);
        let b = trial.eval(params, g.points.view())?;
        for i in 0..g.len() {
            let mut row: Vec<String> = g.points.row(i).iter().map(|v| num(*v)).collect();
            row.push(num(g.weights[i]));
            row.extend(b.values.row(i).iter().map(|v| num(*v)));
            rows.push(row);
        }
    }
    write_rows(path, "x1,x2,a,weight,u1,u2", rows)
}

fn write_curve(path: &Path, parameters: &[f64], values: &[f64]) -> Result<()> {
    write_rows(
        path,
        "parameter,eigenvalue",
        parameters.iter().zip(values).map(|(a, l)| vec![num(*a), num(*l)]),
    )
}

fn uq_elasticity(cfg: &ExperimentConfig, p: &ElasticityParams, out: &Path) -> Result<Outcome> {
    let field = ModulusField { e0: p.e0, e1: p.e1, q: p.q, a: 0.5, mode: p.modulus_mode };
    let kind = RayleighKind::PlaneStress { modulus: field.clone(), nu: p.nu };
    let trial = LevelSetAnsatz::new(mlp(cfg, 3, 2)?, LevelSet::Square)?;
    let grid = masked_square_grid(p.grid_per_dim, &LevelSet::Square)?;
    let density = DensitySpec::Uniform { lo: 0.0, hi: 1.0, nodes: p.moment_nodes };
    let moment_params: Vec<f64> = density.nodes()?.iter().map(|n| n.0).collect();
    let mut wanted = moment_params.clone();
    wanted.extend(&p.test_parameters);
    let (curve, expected, epochs, failures, params) = train_parametric_curve(
        &trial,
        &kind,
        &grid,
        p.train_nodes,
        &cfg.schedule.to_schedule(),
        cfg.seed,
        &wanted,
        out,
    )?;
    let (on_nodes, on_tests) = curve.split_at(moment_params.len());
    let samples: Vec<(f64, f64)> = moment_params.iter().copied().zip(on_nodes.iter().copied()).collect();
    let trained_moments = moments(&samples, &density)?;

    let law = |a: f64, mode| ElasticLaw::PlaneStress { modulus: ModulusField { a, mode, ..field.clone() }, nu: p.nu };
    let mut checks = Vec::new();
    for (&a, &l) in p.test_parameters.iter().zip(on_tests) {
        let reference = elastic_reference(&law(a, p.modulus_mode), p.oracle_h)?;
        checks.push(CurveCheck { parameter: a, trained: l, reference, relative_error: rel(l, reference) });
    }
    let average_relative_error = mean(checks.iter().map(|c| c.relative_error));

    // Reference moments on an evenly spaced set of nodes in [0, 1].
    let ref_density = DensitySpec::Uniform { lo: 0.0, hi: 1.0, nodes: 11 };
    let reference_moments = ref_density
        .nodes()?
        .iter()
        .map(|(a, _)| elastic_reference(&law(*a, p.modulus_mode), p.oracle_h).map(|l| (*a, l)))
        .collect::<Result<Vec<_>>>()
        .and_then(|s| moments(&s, &ref_density))
        .ok();

    let other_mode = if p.report_other_mode {
        let mode = match p.modulus_mode {
            ModulusMode::AsPrinted => ModulusMode::MidpointCorrected,
            ModulusMode::MidpointCorrected => ModulusMode::AsPrinted,
        };
        let (lo, hi) = modulus_range(&ModulusField { mode, ..field.clone() });
        let reference = p
            .test_parameters
            .iter()
            .map(|&a| elastic_reference(&law(a, mode), p.oracle_h).map_err(|e| e.to_string()))
            .collect();
        Some(OtherModeReport { modulus_mode: mode, modulus_min: lo, modulus_max: hi, reference })
    } else {
        None
    };

    write_curve(&out.join("curve.csv"), &moment_params, on_nodes)?;
    write_rows(
        &out.join("eigenvalues.csv"),
        "index,slice,parameter,eigenvalue,reference,relative_error",
        checks.iter().map(|c| {
            vec!["1".into(), String::new(), num(c.parameter), num(c.trained), num(c.reference), num(c.relative_error)]
        }),
    )?;
    write_parametric_fields(&trial, &params, &grid, &[0.25, 0.5, 0.75], &out.join("fields.csv"))?;
    let result = ElasticityResult {
        modulus_mode: p.modulus_mode,
        checks,
        average_relative_error,
        moments: trained_moments,
        reference_moments,
        other_mode,
        expected_quotient: expected,
        epochs,
    };
    Ok(Outcome { result: ExperimentResult::UqElasticity(result), failures })
}

fn vector_laplace(cfg: &ExperimentConfig, p: &VectorLaplaceParams, out: &Path) -> Result<Outcome> {
    let trial = LevelSetAnsatz::new(mlp(cfg, 2, 2)?, LevelSet::Square)?;
    let grid = masked_square_grid(p.grid_per_dim, &LevelSet::Square)?;
    let problem = EigenProblem {
        trial: &trial,
        integration: Integration::Grid(vec![Slice {
            grid: grid.clone(),
            kind: RayleighKind::VectorLaplace { modulus: None },
            weight: 1.0,
            parameter: None,
        }]),
    };
    let spec = solve_spectrum(&problem, 1, None, &cfg.schedule.to_schedule(), cfg.seed)?;
    let mut failures = spectrum_failures(&spec, 1);
    let report = spec.reports.first().ok_or(Error::NoConvergence(1))?;
    let exact = 2.0 * PI * PI;
    let metric = EigenpairMetric {
        index: 1,
        eigenvalue: report.eigenvalue,
        reference: exact,
        relative_error: rel(report.eigenvalue, exact),
        function_error: None,
        epochs: report.epochs,
        converged: report.converged,
        restart_eigenvalues: report.restart_eigenvalues.clone(),
    };
    write_eigen_table(out, &[(1, None, None, &metric)])?;
    write_histories(&spec.reports, out, "")?;
    spec.bases[0].write_samples_csv(&grid, &out.join("fields.csv"))?;

    let parametric = if p.parametric_nodes >= 2 {
        let field = ModulusField { e0: p.e0, e1: p.e1, q: p.q, a: 0.5, mode: p.modulus_mode };
        let kind = RayleighKind::VectorLaplace { modulus: Some(field.clone()) };
        let spec_net = MlpSpec::new(3, p.parametric_hidden.clone(), 2, cfg.network.activation)?;
        let ptrial = LevelSetAnsatz::new(spec_net, LevelSet::Square)?;
        let pgrid = masked_square_grid(p.parametric_grid_per_dim, &LevelSet::Square)?;
        let schedule = SolveSchedule { base_lr: p.parametric_lr, ..cfg.schedule.to_schedule() };
        let sub = out.join("parametric");
        fs::create_dir_all(&sub)?;
        let ends = [0.0, 0.5, 1.0];
        let (curve, _, _, f, _) =
            train_parametric_curve(&ptrial, &kind, &pgrid, p.parametric_nodes, &schedule, cfg.seed, &ends, &sub)?;
        failures.extend(f);
        let checks = ends
            .iter()
            .zip(&curve)
            .map(|(&a, &l)| {
                let law = ElasticLaw::VectorLaplace { modulus: Some(field.with_interface(a)) };
                let reference = elastic_reference(&law, 1.0 / 32.0)?;
                Ok(CurveCheck { parameter: a, trained: l, reference, relative_error: rel(l, reference) })
            })
            .collect::<Result<Vec<_>>>()?;
        Some(checks)
    } else {
        None
    };
    let result = VectorLaplaceResult {
        eigenvalue: metric.eigenvalue,
        exact,
        relative_error: metric.relative_error,
        epochs: metric.epochs,
        parametric,
    };
    Ok(Outcome { result: ExperimentResult::VectorLaplaceCheck(result), failures })
}

// ---------------------------------------------------------------------------
// donut-parametric

fn donut(cfg: &ExperimentConfig, p: &DonutParams, out: &Path) -> Result<Outcome> {
    let trial = LevelSetAnsatz::new(mlp(cfg, 3, 1)?, LevelSet::Annulus { inner: None })?;
    let slices: Vec<Slice> = p
        .inner_radii
        .iter()
        .zip(&p.probabilities)
        .map(|(&a, &w)| {
            Ok(Slice {
                grid: annulus_polar_grid(a, p.radial_cells, p.angular_cells)?.with_parameter(a),
                kind: RayleighKind::ScalarLaplace,
                weight: w,
                parameter: Some(a),
            })
        })
        .collect::<Result<_>>()?;
    let grids: Vec<QuadratureGrid> = slices.iter().map(|s| s.grid.clone()).collect();
    let spec = solve_parametric_spectrum(&trial, slices, p.n_eigen, &cfg.schedule.to_schedule(), cfg.seed)?;
    let mut slice_results = Vec::new();
    let mut rows = Vec::new();
    for (k, (&a, basis)) in p.inner_radii.iter().zip(&spec.bases).enumerate() {
        let modes = radial_eigs(RadialDomain::Annulus { inner: a }, p.n_eigen, p.oracle_radial_nodes)?;
        let pairs: Vec<EigenpairMetric> = basis
            .entries
            .iter()
            .zip(&spec.reports)
            .zip(&modes)
            .map(|((e, r), m)| EigenpairMetric {
                index: r.index,
                eigenvalue: e.eigenvalue,
                reference: m.eigenvalue,
                relative_error: rel(e.eigenvalue, m.eigenvalue),
                function_error: None,
                epochs: r.epochs,
                converged: r.converged,
                restart_eigenvalues: r.restart_eigenvalues.clone(),
            })
            .collect();
        basis.write_samples_csv(&grids[k], &out.join(format!("fields_slice{k}.csv")))?;
        slice_results.push(DonutSliceResult {
            inner_radius: a,
            ordering_violations: basis.ordering_violations(),
            max_orthogonality_defect: max_off_diagonal(&orthogonality_report(basis, &grids[k])?),
            pairs,
        });
    }
    for (k, s) in slice_results.iter().enumerate() {
        for m in &s.pairs {
            rows.push((m.index, Some(k), Some(s.inner_radius), m));
        }
    }
    write_eigen_table(out, &rows)?;
    write_histories(&spec.reports, out, "")?;
    let all: Vec<f64> = slice_results.iter().flat_map(|s| s.pairs.iter().map(|m| m.relative_error)).collect();
    let result = DonutResult {
        average_relative_error: mean(all.iter().copied()),
        max_relative_error: all.iter().copied().fold(0.0, f64::max),
        slices: slice_results,
    };
    let failures = spectrum_failures(&spec, p.n_eigen);
    Ok(Outcome { result: ExperimentResult::DonutParametric(result), failures })
}

// ---------------------------------------------------------------------------
// plaplace-duel

fn duel(cfg: &ExperimentConfig, p: &DuelParams, out: &Path) -> Result<Outcome> {
    let grid = masked_square_grid(p.grid_per_dim, &LevelSet::Square)?;
    let settings = DuelSettings {
        p: p.p,
        epochs: p.epochs,
        lr: cfg.schedule.lr,
        hidden_widths: cfg.network.hidden.clone(),
        max_frequency: p.max_frequency,
        fourier_sigma: p.fourier_sigma,
        seed: cfg.seed,
    };
    let r = plaplace_duel(&settings, &grid)?;
    let (net, fourier) = duel_trials(&settings)?;
    let write_history = |name: &str, h: &[crate::solver::HistoryEntry]| {
        write_rows(
            &out.join(format!("convergence_1_{name}.csv")),
            "epoch,rayleigh,penalty,lr",
            h.iter().map(|e| vec![e.epoch.to_string(), num(e.rayleigh), num(e.penalty), num(e.lr)]),
        )
    };
    write_history("network", &r.network)?;
    write_history("fourier", &r.fourier)?;
    let nb = net.eval(&r.network_params, grid.points.view())?;
    let fb = fourier.eval(&r.fourier_params, grid.points.view())?;
    write_rows(
        &out.join("fields.csv"),
        "x1,x2,weight,network,fourier",
        (0..grid.len()).map(|i| {
            vec![
                num(grid.points[[i, 0]]),
                num(grid.points[[i, 1]]),
                num(grid.weights[i]),
                num(nb.values[[i, 0]]),
                num(fb.values[[i, 0]]),
            ]
        }),
    )?;
    let linear_check = if p.linear_check_epochs > 0 {
        let lin = plaplace_duel(&DuelSettings { p: 2.0, epochs: p.linear_check_epochs, ..settings.clone() }, &grid)?;
        write_history("network_p2", &lin.network)?;
        write_history("fourier_p2", &lin.fourier)?;
        let exact = 2.0 * PI * PI;
        Some(LinearCheck {
            exact,
            network: lin.network_final,
            fourier: lin.fourier_final,
            network_error: rel(lin.network_final, exact),
            fourier_error: rel(lin.fourier_final, exact),
        })
    } else {
        None
    };
    let row = |name: &str, v: f64| vec![name.to_string(), String::new(), String::new(), num(v), String::new(), String::new()];
    write_rows(
        &out.join("eigenvalues.csv"),
        "index,slice,parameter,eigenvalue,reference,relative_error",
        [row("network", r.network_final), row("fourier", r.fourier_final)],
    )?;
    let summary = DuelSummary {
        p: p.p,
        epochs: p.epochs,
        network_params: net.n_params(),
        fourier_params: fourier.n_params(),
        network_initial: r.network[0].rayleigh,
        fourier_initial: r.fourier[0].rayleigh,
        network_final: r.network_final,
        fourier_final: r.fourier_final,
        network_wins: r.network_final <= r.fourier_final,
        fourier_starts_higher: r.fourier[0].rayleigh > r.network[0].rayleigh,
        linear_check,
    };
    Ok(Outcome { result: ExperimentResult::PlaplaceDuel(summary), failures: Vec::new() })
}

// ---------------------------------------------------------------------------
// highdim-first and highdim-second

fn hypercube_trial(cfg: &ExperimentConfig, d: usize) -> Result<LevelSetAnsatz> {
    LevelSetAnsatz::new(mlp(cfg, d, 1)?, LevelSet::HypercubeSkewed { dim: d })
}

fn mc_problem(trial: &LevelSetAnsatz, d: usize, batch: usize) -> EigenProblem<'_> {
    EigenProblem { trial, integration: Integration::MonteCarlo { kind: RayleighKind::DDimLaplace { dim: d }, dim: d, batch } }
}

/// Values of MC snapshots on the `x₁–x₂` plane through the cube centre.
fn write_cube_slice(basis: &EigenBasis, d: usize, path: &Path) -> Result<()> {
    let n = 21;
    let mut pts = Array2::from_elem((n * n, d), 0.5);
    for i in 0..n {
        for j in 0..n {
            pts[[i * n + j, 0]] = i as f64 / (n - 1) as f64;
            if d > 1 {
                pts[[i * n + j, 1]] = j as f64 / (n - 1) as f64;
            }
        }
    }
    let values: Vec<Array1<f64>> = basis
        .entries
        .iter()
        .map(|e| Ok(e.samples_at(pts.view())?.values.column(0).to_owned()))
        .collect::<Result<_>>()?;
    let mut header = "x1,x2".to_string();
    for k in 1..=values.len() {
        header.push_str(&format!(",u{k}"));
    }
    write_rows(
        path,
        &header,
        (0..n * n).map(|r| {
            let mut row = vec![num(pts[[r, 0]]), num(if d > 1 { pts[[r, 1]] } else { 0.5 })];
            row.extend(values.iter().map(|v| num(v[r])));
            row
        }),
    )
}

/// Seed for the dimension-`d` run so that sub-runs are independent of
/// which other dimensions are requested.
pub fn dimension_seed(seed: u64, d: usize) -> u64 {
    seed.wrapping_add(1000 * d as u64)
}

fn highdim_first(cfg: &ExperimentConfig, p: &HighdimFirstParams, out: &Path) -> Result<Outcome> {
    let mut dims = Vec::new();
    let mut failures = Vec::new();
    let mut rows = Vec::new();
    for &d in &p.dims {
        let trial = hypercube_trial(cfg, d)?;
        let epochs = p.epochs(d);
        let batch = p.batch(d);
        let schedule = SolveSchedule {
            threshold: f64::MAX,
            epochs_after: crate::solver::EpochsAfter { base: epochs, per_index: 0 },
            max_epochs: epochs,
            ..cfg.schedule.to_schedule()
        };
        let spec = solve_spectrum(&mc_problem(&trial, d, batch), 1, None, &schedule, dimension_seed(cfg.seed, d))?;
        failures.extend(spectrum_failures(&spec, 1).into_iter().map(|f| format!("d={d}: {f}")));
        let Some(report) = spec.reports.first() else { continue };
        write_histories(&spec.reports, out, &format!("_d{d}"))?;
        write_cube_slice(&spec.bases[0], d, &out.join(format!("fields_d{d}.csv")))?;
        let exact = d as f64 * PI * PI;
        dims.push(HighdimEstimate {
            dim: d,
            index: 1,
            batch,
            epochs: report.epochs,
            params: trial.n_params(),
            tail_mean: report.eigenvalue,
            exact,
            relative_error: rel(report.eigenvalue, exact),
        });
        log::info!("d={d}: tail mean {:.5} ({:.3}% error)", report.eigenvalue, 100.0 * rel(report.eigenvalue, exact));
    }
    for e in &dims {
        rows.push(vec![
            e.index.to_string(),
            String::new(),
            e.dim.to_string(),
            num(e.tail_mean),
            num(e.exact),
            num(e.relative_error),
        ]);
    }
    write_rows(&out.join("eigenvalues.csv"), "index,slice,parameter,eigenvalue,reference,relative_error", rows)?;
    Ok(Outcome { result: ExperimentResult::HighdimFirst(HighdimFirstResult { dims }), failures })
}

/// Combines per-dimension sub-run summaries into one summary for `out`.
pub fn merge_highdim_first(cfg: &ExperimentConfig, parts: &[RunSummary], out: &Path) -> Result<RunSummary> {
    let mut dims = Vec::new();
    let mut failures = Vec::new();
    for s in parts {
        match &s.result {
            ExperimentResult::HighdimFirst(r) => dims.extend(r.dims.iter().cloned()),
            _ => return Err(Error::InvalidArgument("sub-run is not a highdim-first run".into())),
        }
        failures.extend(s.failures.iter().cloned());
    }
    dims.sort_by_key(|e| e.dim);
    write_rows(
        &out.join("eigenvalues.csv"),
        "index,slice,parameter,eigenvalue,reference,relative_error",
        dims.iter().map(|e| {
            vec![e.index.to_string(), String::new(), e.dim.to_string(), num(e.tail_mean), num(e.exact), num(e.relative_error)]
        }),
    )?;
    fs::write(out.join("config.toml"), cfg.to_toml())?;
    let summary = RunSummary {
        schema_version: SCHEMA_VERSION.to_string(),
        seed: cfg.seed,
        status: if failures.is_empty() { "ok" } else { "partial" }.to_string(),
        failures,
        result: ExperimentResult::HighdimFirst(HighdimFirstResult { dims }),
    };
    write_summary(&summary, out)?;
    Ok(summary)
}

fn highdim_second(cfg: &ExperimentConfig, p: &HighdimSecondParams, out: &Path) -> Result<Outcome> {
    let d = p.dim;
    let trial = hypercube_trial(cfg, d)?;
    let schedule = SolveSchedule {
        threshold: f64::MAX,
        epochs_after: crate::solver::EpochsAfter { base: p.epochs, per_index: 0 },
        max_epochs: p.epochs,
        ..cfg.schedule.to_schedule()
    };
    let spec = solve_spectrum(&mc_problem(&trial, d, p.batch), 2, None, &schedule, cfg.seed)?;
    let failures = spectrum_failures(&spec, 2);
    if spec.reports.len() < 2 {
        return Err(spec.failure.unwrap_or(Error::NoConvergence(2)));
    }
    write_histories(&spec.reports, out, "")?;
    write_cube_slice(&spec.bases[0], d, &out.join("fields.csv"))?;
    let est = |r: &EigenReport, exact: f64| HighdimEstimate {
        dim: d,
        index: r.index,
        batch: p.batch,
        epochs: r.epochs,
        params: trial.n_params(),
        tail_mean: r.eigenvalue,
        exact,
        relative_error: rel(r.eigenvalue, exact),
    };
    let first = est(&spec.reports[0], d as f64 * PI * PI);
    let second = est(&spec.reports[1], (d as f64 + 3.0) * PI * PI);
    write_rows(
        &out.join("eigenvalues.csv"),
        "index,slice,parameter,eigenvalue,reference,relative_error",
        [&first, &second].iter().map(|e| {
            vec![e.index.to_string(), String::new(), String::new(), num(e.tail_mean), num(e.exact), num(e.relative_error)]
        }),
    )?;
    Ok(Outcome { result: ExperimentResult::HighdimSecond(HighdimSecondResult { first, second }), failures })
}

/// Sub-configs that can run as independent processes, one per dimension of
/// a highdim-first run; empty for experiments without independent parts.
pub fn split_independent(cfg: &ExperimentConfig) -> Vec<(String, ExperimentConfig)> {
    match &cfg.problem {
        ProblemParams::HighdimFirst(p) if p.dims.len() > 1 => p
            .dims
            .iter()
            .map(|&d| {
                let mut sub = cfg.clone();
                sub.problem = ProblemParams::HighdimFirst(HighdimFirstParams { dims: vec![d], ..p.clone() });
                (format!("d{d}"), sub)
            })
            .collect(),
        _ => Vec::new(),
    }
}

impl ExperimentResult {
    pub fn name(&self) -> ExperimentName {
        match self {
            ExperimentResult::Fourier1d(_) => ExperimentName::Fourier1d,
            ExperimentResult::SemicircleBasis(_) => ExperimentName::SemicircleBasis,
            ExperimentResult::GalerkinHeat(_) => ExperimentName::GalerkinHeat,
            ExperimentResult::UqElasticity(_) => ExperimentName::UqElasticity,
            ExperimentResult::VectorLaplaceCheck(_) => ExperimentName::VectorLaplaceCheck,
            ExperimentResult::DonutParametric(_) => ExperimentName::DonutParametric,
            ExperimentResult::PlaplaceDuel(_) => ExperimentName::PlaplaceDuel,
            ExperimentResult::HighdimFirst(_) => ExperimentName::HighdimFirst,
            ExperimentResult::HighdimSecond(_) => ExperimentName::HighdimSecond,
        }
    }
}
