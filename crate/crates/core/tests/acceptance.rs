//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.
//!
//! Select a subset with numeric arguments:
//! `cargo test --release --test acceptance -- 2 10`.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use eigennet::ansatz::{LevelSet, LevelSetAnsatz, TrialFunction};
use eigennet::config::{ExperimentConfig, ExperimentName};
use eigennet::diagnostics::objective_gradient_error;
use eigennet::experiments::{self, ExperimentResult, RunSummary};
use eigennet::fourier::FourierAnsatz;
use eigennet::nn::{Activation, EvalBundle, MlpSpec};
use eigennet::objectives::{rayleigh, ModulusField, ModulusMode, RayleighKind};
use eigennet::oracle::fd_eigs;
use eigennet::orthogonalization::{Deflator, GridSamples, GsVariant};
use eigennet::quadrature::{hypercube_mc_batch, interval_grid, masked_square_grid, DomainSpec, QuadratureGrid};

struct Verdict {
    pass: bool,
    detail: String,
}

impl Verdict {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Verdict { pass, detail: detail.into() }
    }
}

type Check = fn(&mut Runs) -> Result<Verdict, String>;

/// Experiment runs keyed by name, so criteria sharing a run train it once.
struct Runs {
    root: PathBuf,
    done: HashMap<ExperimentName, RunSummary>,
}

impl Runs {
    fn get(&mut self, name: ExperimentName) -> Result<&RunSummary, String> {
        if !self.done.contains_key(&name) {
            let cfg = ExperimentConfig::default_for(name);
            let dir = self.root.join(name.as_str());
            let summary = experiments::run(&cfg, &dir).map_err(|e| format!("{name} run failed: {e}"))?;
            self.done.insert(name, summary);
        }
        Ok(&self.done[&name])
    }
}

fn within(value: f64, target: f64, rel: f64) -> bool {
    ((value - target) / target).abs() <= rel
}

fn fourier_recovery(runs: &mut Runs) -> Result<Verdict, String> {
    let ExperimentResult::Fourier1d(r) = &runs.get(ExperimentName::Fourier1d)?.result else {
        return Err("unexpected result kind".into());
    };
    let pass = r.e_lambda <= 1e-2 && r.e_u <= 1e-3;
    Ok(Verdict::new(
        pass,
        format!(
            "N={}: E_lambda={:.2e} (<=1e-2), E_u={:.2e} (<=1e-3); N={} reported: E_lambda={:.2e}, E_u={:.2e}",
            r.n_eigen,
            r.e_lambda,
            r.e_u,
            r.pairs.len(),
            r.e_lambda_all,
            r.e_u_all
        ),
    ))
}

fn vector_laplace(runs: &mut Runs) -> Result<Verdict, String> {
    let ExperimentResult::VectorLaplaceCheck(r) = &runs.get(ExperimentName::VectorLaplaceCheck)?.result else {
        return Err("unexpected result kind".into());
    };
    Ok(Verdict::new(
        r.relative_error <= 5e-3,
        format!("lambda1={:.4} vs 2pi^2={:.4}, rel err {:.2e} (<=5e-3)", r.eigenvalue, r.exact, r.relative_error),
    ))
}

const SEMICIRCLE_N: usize = 9;

fn semicircle(runs: &mut Runs) -> Result<Verdict, String> {
    let ExperimentResult::GalerkinHeat(g) = &runs.get(ExperimentName::GalerkinHeat)?.result else {
        return Err("unexpected result kind".into());
    };
    let pairs = &g.basis.pairs[..SEMICIRCLE_N.min(g.basis.pairs.len())];
    if pairs.len() < SEMICIRCLE_N {
        return Ok(Verdict::new(false, format!("only {} eigenpairs trained", pairs.len())));
    }
    let worst = pairs.iter().map(|p| p.relative_error).fold(0.0, f64::max);
    let ordered = pairs.windows(2).all(|w| w[1].eigenvalue >= w[0].eigenvalue);
    let bessel = g.basis.first_vs_bessel;
    Ok(Verdict::new(
        worst <= 2e-2 && ordered && bessel <= 2e-2,
        format!(
            "N={SEMICIRCLE_N}: max rel err vs lattice {worst:.2e} (<=2e-2), nondecreasing={ordered}, lambda1={:.4} vs j11^2 rel err {bessel:.2e} (<=2e-2)",
            pairs[0].eigenvalue
        ),
    ))
}

fn galerkin(runs: &mut Runs) -> Result<Verdict, String> {
    let ExperimentResult::GalerkinHeat(g) = &runs.get(ExperimentName::GalerkinHeat)?.result else {
        return Err("unexpected result kind".into());
    };
    let s = &g.score;
    Ok(Verdict::new(
        g.n_basis == 15 && s.mean <= 2e-2,
        format!(
            "N={} S={}: mean rel err {:.2e} (<=2e-2), 95% CI [{:.2e}, {:.2e}]",
            g.n_basis,
            s.per_sample.len(),
            s.mean,
            g.ci95.0,
            g.ci95.1
        ),
    ))
}

fn elasticity(runs: &mut Runs) -> Result<Verdict, String> {
    let ExperimentResult::UqElasticity(r) = &runs.get(ExperimentName::UqElasticity)?.result else {
        return Err("unexpected result kind".into());
    };
    let m = &r.moments;
    let pass = r.modulus_mode == ModulusMode::MidpointCorrected
        && r.average_relative_error <= 5e-2
        && within(m.mean, 29.42, 0.1)
        && within(m.std, 14.25, 0.1);
    let other = match &r.other_mode {
        Some(o) => format!(
            "; {:?} mode: modulus range [{:.3}, {:.3}], reference solved at {}/{} points",
            o.modulus_mode,
            o.modulus_min,
            o.modulus_max,
            o.reference.iter().filter(|v| v.is_ok()).count(),
            o.reference.len()
        ),
        None => String::new(),
    };
    Ok(Verdict::new(
        pass,
        format!(
            "avg rel err vs FD {:.2e} (<=5e-2) at {} points, mean {:.3} (29.42 +-10%), std {:.3} (14.25 +-10%){other}",
            r.average_relative_error,
            r.checks.len(),
            m.mean,
            m.std
        ),
    ))
}

fn donut(runs: &mut Runs) -> Result<Verdict, String> {
    let ExperimentResult::DonutParametric(r) = &runs.get(ExperimentName::DonutParametric)?.result else {
        return Err("unexpected result kind".into());
    };
    let ordered = r.slices.iter().all(|s| s.ordering_violations.is_empty());
    let counts: Vec<usize> = r.slices.iter().map(|s| s.pairs.len()).collect();
    // each inversion as slice:i>i+1 with its relative size, marked when the references coincide
    let mut inversions = Vec::new();
    for (k, s) in r.slices.iter().enumerate() {
        for &i in &s.ordering_violations {
            let (a, b) = (&s.pairs[i], &s.pairs[i + 1]);
            let tied = (b.reference - a.reference).abs() <= 1e-9 * a.reference;
            inversions.push(format!(
                "{k}:{}>{} by {:.1e}{}",
                a.index,
                b.index,
                (a.eigenvalue - b.eigenvalue) / a.eigenvalue,
                if tied { " (tied reference)" } else { "" }
            ));
        }
    }
    let inversions = if inversions.is_empty() { String::new() } else { format!(" [{}]", inversions.join(", ")) };
    Ok(Verdict::new(
        r.average_relative_error <= 1e-2 && ordered && counts.iter().all(|&c| c == 9),
        format!(
            "avg rel err {:.2e} (<=1e-2), max {:.2e}, per-slice ordering={ordered}{inversions}, pairs per slice {counts:?}",
            r.average_relative_error, r.max_relative_error
        ),
    ))
}

fn duel(runs: &mut Runs) -> Result<Verdict, String> {
    let ExperimentResult::PlaplaceDuel(d) = &runs.get(ExperimentName::PlaplaceDuel)?.result else {
        return Err("unexpected result kind".into());
    };
    let lin = d.linear_check.as_ref().ok_or("linear check missing")?;
    let pass = d.network_final <= d.fourier_final
        && d.fourier_initial > d.network_initial
        && lin.network_error <= 1e-2
        && lin.fourier_error <= 1e-2;
    Ok(Verdict::new(
        pass,
        format!(
            "p={}: final NN {:.4} vs Fourier {:.4}; initial NN {:.3e} vs Fourier {:.3e}; p=2 errors NN {:.2e}, Fourier {:.2e} (<=1e-2)",
            d.p, d.network_final, d.fourier_final, d.network_initial, d.fourier_initial, lin.network_error, lin.fourier_error
        ),
    ))
}

fn highdim_first(runs: &mut Runs) -> Result<Verdict, String> {
    let ExperimentResult::HighdimFirst(r) = &runs.get(ExperimentName::HighdimFirst)?.result else {
        return Err("unexpected result kind".into());
    };
    let dims: Vec<usize> = r.dims.iter().map(|e| e.dim).collect();
    let mut pass = dims == (1..=9).collect::<Vec<_>>();
    let mut parts = Vec::new();
    for e in &r.dims {
        let params_ok = e.params == 60 + 6 * (e.dim - 1);
        pass &= params_ok && e.relative_error <= 3e-2;
        parts.push(format!("d{}:{:.2}%{}", e.dim, 100.0 * e.relative_error, if params_ok { "" } else { "(params!)" }));
    }
    Ok(Verdict::new(pass, format!("errors (<=3%) {}", parts.join(" "))))
}

fn highdim_second(runs: &mut Runs) -> Result<Verdict, String> {
    let ExperimentResult::HighdimSecond(r) = &runs.get(ExperimentName::HighdimSecond)?.result else {
        return Err("unexpected result kind".into());
    };
    Ok(Verdict::new(
        r.first.relative_error <= 5e-2 && r.second.relative_error <= 8e-2,
        format!(
            "d=10: lambda1 {:.3} err {:.2}% (<=5%), lambda2 {:.3} err {:.2}% (<=8%)",
            r.first.tail_mean,
            100.0 * r.first.relative_error,
            r.second.tail_mean,
            100.0 * r.second.relative_error
        ),
    ))
}

fn random_samples(n: usize, g: usize, rng: &mut ChaCha8Rng) -> GridSamples {
    GridSamples {
        values: Array2::from_shape_fn((n, 1), |_| rng.gen_range(-1.0..1.0)),
        grads: Array3::from_shape_fn((n, 1, g), |_| rng.gen_range(-1.0..1.0)),
    }
}

/// Largest normalized inner product between the projected candidate and
/// each basis function.
fn projection_residual(grid: &QuadratureGrid, basis: &[GridSamples], defl: &Deflator, cand: &GridSamples) -> Result<f64, String> {
    let w = grid.weights.view();
    let p = GridSamples::from_bundle(&defl.project(&cand.to_bundle()).map_err(|e| e.to_string())?);
    let cn = cand.norm_sq(w).sqrt();
    let mut worst: f64 = 0.0;
    for s in basis {
        let inner: f64 = (0..grid.len()).map(|i| w[i] * p.values[[i, 0]] * s.values[[i, 0]]).sum();
        worst = worst.max(inner.abs() / (cn * s.norm_sq(w).sqrt()));
    }
    Ok(worst)
}

fn gradient_checks() -> Result<(f64, Vec<String>), String> {
    let e = |err: eigennet::Error| err.to_string();
    let square = masked_square_grid(12, &LevelSet::Square).map_err(e)?;
    let line = interval_grid(40).map_err(e)?;
    let scalar = LevelSetAnsatz::new(MlpSpec::new(2, vec![5, 5], 1, Activation::Tanh).map_err(e)?, LevelSet::Square).map_err(e)?;
    let sigmoid = LevelSetAnsatz::new(MlpSpec::new(2, vec![4, 4], 1, Activation::Sigmoid).map_err(e)?, LevelSet::Square).map_err(e)?;
    let vector = LevelSetAnsatz::new(MlpSpec::new(2, vec![5, 5], 2, Activation::Tanh).map_err(e)?, LevelSet::Square).map_err(e)?;
    let one_d = LevelSetAnsatz::new(MlpSpec::new(1, vec![20], 1, Activation::Tanh).map_err(e)?, LevelSet::Interval).map_err(e)?;
    let fourier = FourierAnsatz::new(4, 0.1).map_err(e)?;
    let field = ModulusField { e0: 1.0, e1: 5.0, q: 50.0, a: 0.4, mode: ModulusMode::MidpointCorrected };
    let cases: Vec<(&str, RayleighKind, &dyn TrialFunction, &QuadratureGrid, f64)> = vec![
        ("laplace-1d", RayleighKind::ScalarLaplace, &one_d, &line, 1.0),
        ("laplace", RayleighKind::ScalarLaplace, &scalar, &square, 0.0),
        ("laplace-sigmoid", RayleighKind::ScalarLaplace, &sigmoid, &square, 1.0),
        ("p-laplace", RayleighKind::PLaplace { p: 5.0 }, &scalar, &square, 0.0),
        ("p-laplace-fourier", RayleighKind::PLaplace { p: 5.0 }, &fourier, &square, 0.0),
        ("vector-laplace", RayleighKind::VectorLaplace { modulus: None }, &vector, &square, 0.5),
        ("vector-laplace-modulus", RayleighKind::VectorLaplace { modulus: Some(field.clone()) }, &vector, &square, 0.0),
        ("plane-stress", RayleighKind::PlaneStress { modulus: field, nu: 0.25 }, &vector, &square, 0.0),
    ];
    let mut worst: f64 = 0.0;
    let mut notes = Vec::new();
    for (label, kind, trial, grid, beta) in cases {
        let params = trial.init_params(11);
        let err = objective_gradient_error(&kind, trial, &params, grid, beta).map_err(e)?;
        if err > 1e-5 {
            notes.push(format!("{label}={err:.1e}"));
        }
        worst = worst.max(err);
    }
    Ok((worst, notes))
}

fn gram_schmidt_residuals() -> Result<(f64, f64), String> {
    let e = |err: eigennet::Error| err.to_string();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let grid = interval_grid(64).map_err(e)?;
    let w = grid.weights.view();
    let mut grid_worst: f64 = 0.0;
    for variant in [GsVariant::Classical, GsVariant::Modified] {
        for _ in 0..20 {
            // orthonormalize a random set so it resembles a converged basis
            let mut basis: Vec<GridSamples> = Vec::new();
            for _ in 0..rng.gen_range(1..8) {
                let raw = random_samples(grid.len(), 1, &mut rng);
                let defl = Deflator::new(variant, w, basis.clone(), false).map_err(e)?;
                let mut s = GridSamples::from_bundle(&defl.project(&raw.to_bundle()).map_err(e)?);
                s.normalize(w).map_err(e)?;
                basis.push(s);
            }
            let defl = Deflator::new(variant, w, basis.clone(), false).map_err(e)?;
            let cand = random_samples(grid.len(), 1, &mut rng);
            grid_worst = grid_worst.max(projection_residual(&grid, &basis, &defl, &cand)?);
        }
    }
    let mut mc_worst: f64 = 0.0;
    for _ in 0..20 {
        let batch = hypercube_mc_batch(3, 200, &mut rng).map_err(e)?;
        // samples that are not orthogonal on this batch
        let basis: Vec<GridSamples> = (0..rng.gen_range(1..5)).map(|_| random_samples(batch.len(), 3, &mut rng)).collect();
        let defl = Deflator::new(GsVariant::Classical, batch.weights.view(), basis.clone(), true).map_err(e)?;
        let cand = random_samples(batch.len(), 3, &mut rng);
        mc_worst = mc_worst.max(projection_residual(&batch, &basis, &defl, &cand)?);
    }
    Ok((grid_worst, mc_worst))
}

fn scale_invariance() -> Result<f64, String> {
    let e = |err: eigennet::Error| err.to_string();
    let grid = masked_square_grid(20, &LevelSet::Square).map_err(e)?;
    let vector = LevelSetAnsatz::new(MlpSpec::new(2, vec![6], 2, Activation::Tanh).map_err(e)?, LevelSet::Square).map_err(e)?;
    let scalar = LevelSetAnsatz::new(MlpSpec::new(2, vec![6], 1, Activation::Tanh).map_err(e)?, LevelSet::Square).map_err(e)?;
    let field = ModulusField { e0: 1.0, e1: 3.0, q: 50.0, a: 0.3, mode: ModulusMode::MidpointCorrected };
    let sb = scalar.eval(&scalar.init_params(2), grid.points.view()).map_err(e)?;
    let vb = vector.eval(&vector.init_params(3), grid.points.view()).map_err(e)?;
    let cases: Vec<(RayleighKind, &EvalBundle)> = vec![
        (RayleighKind::ScalarLaplace, &sb),
        (RayleighKind::PLaplace { p: 3.0 }, &sb),
        (RayleighKind::VectorLaplace { modulus: Some(field.clone()) }, &vb),
        (RayleighKind::PlaneStress { modulus: field, nu: 0.3 }, &vb),
    ];
    let mut worst: f64 = 0.0;
    for (kind, b) in cases {
        let base = rayleigh(&kind, b, &grid).map_err(e)?.rayleigh;
        for alpha in [1e-3, 0.37, -2.0, 1e3] {
            let scaled = EvalBundle::detached(&b.values * alpha, &b.spatial_grads * alpha);
            let r = rayleigh(&kind, &scaled, &grid).map_err(e)?.rayleigh;
            worst = worst.max((r - base).abs() / base.abs());
        }
    }
    Ok(worst)
}

fn lattice_order() -> Result<(f64, Vec<f64>), String> {
    let exact = 2.0 * std::f64::consts::PI.powi(2);
    let errors: Vec<f64> = [8.0, 16.0, 32.0]
        .iter()
        .map(|n| fd_eigs(&DomainSpec::UnitSquare, 1.0 / n, 1).map(|s| (s.eigenvalues[0] - exact).abs()))
        .collect::<eigennet::Result<_>>()
        .map_err(|e| e.to_string())?;
    let order = (errors[1] / errors[2]).log2();
    Ok((order, errors))
}

fn file_bytes(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).map_err(|e| e.to_string())? {
        let path = entry.map_err(|e| e.to_string())?.path();
        if path.is_file() {
            let name = path.file_name().unwrap().to_string_lossy().into_owned();
            out.insert(name, std::fs::read(&path).map_err(|e| e.to_string())?);
        }
    }
    Ok(out)
}

/// Runs a shortened config twice into fresh directories and compares every
/// artifact byte for byte.
fn rerun_identical(root: &Path, label: &str, toml: &str) -> Result<bool, String> {
    let cfg = ExperimentConfig::parse(toml).map_err(|d| format!("{d:?}"))?;
    let mut artifacts = Vec::new();
    for k in 0..2 {
        let dir = root.join(format!("determinism-{label}-{k}"));
        let _ = std::fs::remove_dir_all(&dir);
        experiments::run(&cfg, &dir).map_err(|e| e.to_string())?;
        artifacts.push(file_bytes(&dir)?);
    }
    Ok(!artifacts[0].is_empty() && artifacts[0] == artifacts[1])
}

fn properties(runs: &mut Runs) -> Result<Verdict, String> {
    let (grad, offenders) = gradient_checks()?;
    let (gs_grid, gs_mc) = gram_schmidt_residuals()?;
    let scale = scale_invariance()?;
    let (order, _) = lattice_order()?;
    let grid_run = rerun_identical(
        &runs.root,
        "grid",
        "experiment = \"fourier-1d\"\n[schedule]\nepochs_after_base = 200\nepochs_after_per_index = 50\n[problem]\nn_eigen = 3\nn_solve = 3\n",
    )?;
    let mc_run = rerun_identical(
        &runs.root,
        "mc",
        "experiment = \"highdim-second\"\n[schedule]\ntail_window = 100\n[problem]\ndim = 3\nbatch = 200\nepochs = 300\n",
    )?;
    let pass = grad <= 1e-5 && gs_grid <= 1e-10 && gs_mc <= 1e-10 && scale <= 1e-12 && (1.8..=2.2).contains(&order) && grid_run && mc_run;
    let mut detail = format!(
        "grad rel err {grad:.1e} (<=1e-5), GS residual grid {gs_grid:.1e} / batch {gs_mc:.1e} (<=1e-10), scale invariance {scale:.1e} (<=1e-12), lattice order {order:.2}, byte-identical reruns grid={grid_run} mc={mc_run}"
    );
    if !offenders.is_empty() {
        detail.push_str(&format!(" [gradient offenders: {}]", offenders.join(", ")));
    }
    Ok(Verdict::new(pass, detail))
}

const CRITERIA: [(usize, &str, f64, Check); 10] = [
    (1, "1D Fourier recovery", 10.0, fourier_recovery),
    (2, "vector-Laplace verification", 5.0, vector_laplace),
    (3, "semicircle spectrum", 30.0, semicircle),
    (4, "Galerkin heat conduction", 10.0, galerkin),
    (5, "elasticity UQ", 45.0, elasticity),
    (6, "parametric annulus", 60.0, donut),
    (7, "p-Laplace duel", 20.0, duel),
    (8, "high-dim first eigenvalue", 90.0, highdim_first),
    (9, "high-dim second eigenvalue", 40.0, highdim_second),
    (10, "property suites", 5.0, properties),
];

fn main() {
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let root = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    let mut runs = Runs { root, done: HashMap::new() };
    let mut failed = 0;
    for (id, title, budget_min, check) in CRITERIA {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let verdict = check(&mut runs).unwrap_or_else(|msg| Verdict::new(false, format!("error: {msg}")));
        let minutes = start.elapsed().as_secs_f64() / 60.0;
        if !verdict.pass {
            failed += 1;
        }
        println!(
            "criterion {id:>2} {}: {title}: {} [{minutes:.1} min, budget {budget_min} min]",
            if verdict.pass { "PASS" } else { "FAIL" },
            verdict.detail
        );
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}
