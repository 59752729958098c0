//! Sequential eigenpair solver: ADAM on the deflated Rayleigh quotient with a
//! threshold-then-fixed-budget stopping rule.

use std::io::Write;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::ansatz::{LevelSetAnsatz, TrialFunction};
use crate::error::{Error, Result};
use crate::nn::ParamVector;
use crate::objectives::{check_density_weights, objective_with_cotangent, rayleigh, RayleighKind};
use crate::orthogonalization::{BasisEntry, Deflator, EigenBasis, GridSamples, GsVariant, Representation};
use crate::quadrature::{hypercube_mc_batch, QuadratureGrid};

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.m
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.v
    }
}

/// One bias-corrected ADAM update, in place.
pub fn adam_step(state: &mut AdamState, params: &mut ParamVector, grad: &ParamVector, lr: f64) -> Result<()> {
    if params.len() != state.m.len() || grad.len() != state.m.len() {
        return Err(Error::Shape(format!(
            "optimizer sized for {}, params {}, grad {}",
            state.m.len(),
            params.len(),
            grad.len()
        )));
    }
    if !grad.is_finite() {
        return Err(Error::NonFiniteGradient { epoch: state.step as usize });
    }
    state.step += 1;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(state.step as i32);
    let c2 = 1.0 - b2.powi(state.step as i32);
    for k in 0..params.len() {
        let g = grad.0[k];
        state.m[k] = b1 * state.m[k] + (1.0 - b1) * g;
        state.v[k] = b2 * state.v[k] + (1.0 - b2) * g * g;
        let mhat = state.m[k] / c1;
        let vhat = state.v[k] / c2;
        params.0[k] -= lr * mhat / (vhat.sqrt() + state.epsilon);
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrDecay {
    pub factor: f64,
    pub every: usize,
}

/// Epochs run after the threshold is met: `base + per_index · i`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochsAfter {
    pub base: usize,
    #[serde(default)]
    pub per_index: usize,
}

impl EpochsAfter {
    pub fn at(&self, index: usize) -> usize {
        self.base + self.per_index * index
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveSchedule {
    pub base_lr: f64,
    #[serde(default)]
    pub lr_decay: Option<LrDecay>,
    /// Distance above the previous eigenvalue that starts the fixed budget.
    pub threshold: f64,
    pub epochs_after: EpochsAfter,
    pub max_epochs: usize,
    #[serde(default)]
    pub beta_penalty: f64,
    /// Monte Carlo eigenvalue = mean of this many trailing quotients.
    #[serde(default)]
    pub tail_window: Option<usize>,
    #[serde(default)]
    pub gs_variant: GsVariant,
    /// Independent initializations per eigenpair; the lowest final quotient wins.
    #[serde(default = "one")]
    pub restarts: usize,
}

fn one() -> usize {
    1
}

/// Seed offset between restarts of the same eigenpair, large enough that
/// restart seeds never coincide with another eigenpair's first seed.
const RESTART_STRIDE: u64 = 1_000_033;

impl SolveSchedule {
    pub fn validate(&self, max_index: usize) -> Result<()> {
        if !(self.base_lr > 0.0) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.base_lr)));
        }
        if !(self.threshold > 0.0) {
            return Err(Error::Config(format!("threshold must be positive, got {}", self.threshold)));
        }
        if !(self.beta_penalty >= 0.0) {
            return Err(Error::Config("penalty weight must be >= 0".into()));
        }
        if let Some(d) = self.lr_decay {
            if !(d.factor > 0.0) || d.every == 0 {
                return Err(Error::Config("learning-rate decay needs factor > 0 and every >= 1".into()));
            }
        }
        if self.restarts == 0 {
            return Err(Error::Config("restarts must be >= 1".into()));
        }
        if self.tail_window == Some(0) {
            return Err(Error::Config("tail window must be >= 1".into()));
        }
        let need = self.epochs_after.at(max_index);
        if self.max_epochs < need {
            return Err(Error::Config(format!(
                "epoch cap {} below the post-threshold budget {need} of eigenpair {max_index}",
                self.max_epochs
            )));
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        match self.lr_decay {
            Some(d) => self.base_lr * d.factor.powi((epoch / d.every) as i32),
            None => self.base_lr,
        }
    }
}

/// One parameter setting of a (possibly parametric) grid problem.
#[derive(Clone, Debug)]
pub struct Slice {
    /// Points include the parameter column for parametric problems.
    pub grid: QuadratureGrid,
    pub kind: RayleighKind,
    /// Density weight; weights over all slices sum to one.
    pub weight: f64,
    pub parameter: Option<f64>,
}

#[derive(Clone, Debug)]
pub enum Integration {
    Grid(Vec<Slice>),
    /// Fresh uniform batch on the unit hypercube every epoch.
    MonteCarlo { kind: RayleighKind, dim: usize, batch: usize },
}

pub struct EigenProblem<'a> {
    pub trial: &'a dyn TrialFunction,
    pub integration: Integration,
}

impl EigenProblem<'_> {
    pub fn n_slices(&self) -> usize {
        match &self.integration {
            Integration::Grid(s) => s.len(),
            Integration::MonteCarlo { .. } => 1,
        }
    }

    fn validate(&self) -> Result<()> {
        match &self.integration {
            Integration::Grid(slices) => {
                if slices.is_empty() {
                    return Err(Error::Config("no integration slices".into()));
                }
                let w: Vec<f64> = slices.iter().map(|s| s.weight).collect();
                check_density_weights(&w)?;
                for s in slices {
                    s.kind.validate()?;
                    if s.grid.dim() != self.trial.input_dim() {
                        return Err(Error::Shape(format!(
                            "grid has {} columns, trial function takes {}",
                            s.grid.dim(),
                            self.trial.input_dim()
                        )));
                    }
                }
            }
            Integration::MonteCarlo { kind, dim, batch } => {
                kind.validate()?;
                if *batch == 0 || *dim != self.trial.input_dim() {
                    return Err(Error::Config("Monte Carlo batch/dimension mismatch".into()));
                }
                if self.trial.as_level_set_ansatz().is_none() {
                    return Err(Error::Config("Monte Carlo deflation needs a snapshot-able ansatz".into()));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub epoch: usize,
    pub rayleigh: f64,
    pub penalty: f64,
    pub lr: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EigenReport {
    /// 1-based eigen-index.
    pub index: usize,
    pub eigenvalue: f64,
    /// Per-slice quotients at convergence (one entry for non-parametric runs).
    pub slice_eigenvalues: Vec<f64>,
    pub history: Vec<HistoryEntry>,
    pub epochs: usize,
    /// Epoch at which the threshold test first passed.
    pub threshold_epoch: Option<usize>,
    pub converged: bool,
    pub seed: u64,
    pub params: ParamVector,
    /// Weighted L² norm of the deflated eigenfunction before normalization.
    pub raw_norm: f64,
    /// Final quotient of every restart, in seed order; the smallest was kept.
    #[serde(default)]
    pub restart_eigenvalues: Vec<f64>,
}

impl EigenReport {
    pub fn write_history_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "epoch,rayleigh,penalty,lr")?;
        for h in &self.history {
            writeln!(f, "{},{:.17e},{:.17e},{:.6e}", h.epoch, h.rayleigh, h.penalty, h.lr)?;
        }
        Ok(())
    }
}

/// Result of a sequential solve. On failure the bases and reports hold
/// everything that converged before it.
#[derive(Debug)]
pub struct Spectrum {
    /// One basis per slice (a single snapshot basis in Monte Carlo mode).
    pub bases: Vec<EigenBasis>,
    pub reports: Vec<EigenReport>,
    pub failure: Option<Error>,
}

impl Spectrum {
    pub fn eigenvalues(&self) -> Vec<f64> {
        self.reports.iter().map(|r| r.eigenvalue).collect()
    }

    pub fn into_result(self) -> Result<Self> {
        match self.failure {
            Some(e) => Err(e),
            None => Ok(self),
        }
    }
}

struct EpochOutcome {
    rayleigh: f64,
    penalty: f64,
    grad: ParamVector,
}

fn grid_epoch(
    trial: &dyn TrialFunction,
    params: &ParamVector,
    slices: &[Slice],
    deflators: &[Deflator],
    beta: f64,
) -> Result<EpochOutcome> {
    let mut grad = ParamVector::zeros(trial.n_params());
    let (mut rq, mut pen) = (0.0, 0.0);
    for (s, d) in slices.iter().zip(deflators) {
        let raw = trial.eval(params, s.grid.points.view())?;
        let projected = d.project(&raw)?;
        let (val, mut cot) = objective_with_cotangent(&s.kind, &projected, &s.grid, beta)?;
        rq += s.weight * val.rayleigh;
        pen += s.weight * val.penalty;
        cot.scale(s.weight);
        let cot = d.pullback(&cot)?;
        let g = trial.pullback(&raw, cot.values.view(), cot.grads.view())?;
        grad.axpy(1.0, &g);
    }
    Ok(EpochOutcome { rayleigh: rq, penalty: pen, grad })
}

/// Minimizes the `index`-th deflated problem. `bases` holds the converged
/// entries per slice; `previous` is the last converged eigenvalue.
pub fn solve_eigenpair(
    problem: &EigenProblem<'_>,
    index: usize,
    bases: &[EigenBasis],
    previous: Option<f64>,
    schedule: &SolveSchedule,
    seed: u64,
) -> Result<(EigenReport, Vec<BasisEntry>)> {
    problem.validate()?;
    schedule.validate(index)?;
    if bases.len() != problem.n_slices() {
        return Err(Error::Shape(format!("{} bases for {} slices", bases.len(), problem.n_slices())));
    }
    let trial = problem.trial;
    let mut params = trial.init_params(seed);
    let mut adam = AdamState::new(params.len());
    let beta = schedule.beta_penalty;
    let after = schedule.epochs_after.at(index);
    let target = previous.map(|p| p + schedule.threshold);

    let grid_deflators = match &problem.integration {
        Integration::Grid(slices) => slices
            .iter()
            .zip(bases)
            .map(|(s, b)| {
                let refs: Vec<&BasisEntry> = b.entries.iter().collect();
                Deflator::for_grid(&refs, &s.grid, schedule.gs_variant)
            })
            .collect::<Result<Vec<_>>>()?,
        Integration::MonteCarlo { .. } => Vec::new(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);

    let mut history = Vec::new();
    let mut threshold_epoch: Option<usize> = None;
    let mut stop_at = schedule.max_epochs;
    let mut epoch = 0;
    while epoch < stop_at {
        let lr = schedule.lr_at(epoch);
        let out = match &problem.integration {
            Integration::Grid(slices) => grid_epoch(trial, &params, slices, &grid_deflators, beta)?,
            Integration::MonteCarlo { kind, dim, batch } => {
                let pts = hypercube_mc_batch(*dim, *batch, &mut rng)?;
                let refs: Vec<&BasisEntry> = bases[0].entries.iter().collect();
                let d = Deflator::for_batch(&refs, &pts, schedule.gs_variant)?;
                let slice = Slice { grid: pts, kind: kind.clone(), weight: 1.0, parameter: None };
                grid_epoch(trial, &params, std::slice::from_ref(&slice), std::slice::from_ref(&d), beta)?
            }
        };
        history.push(HistoryEntry { epoch, rayleigh: out.rayleigh, penalty: out.penalty, lr });
        if threshold_epoch.is_none() && target.is_none_or(|t| out.rayleigh <= t) {
            threshold_epoch = Some(epoch);
            stop_at = (epoch + after).min(schedule.max_epochs);
            log::debug!("eigenpair {index}: threshold met at epoch {epoch}, stopping at {stop_at}");
        }
        if !out.grad.is_finite() {
            return Err(Error::NonFiniteGradient { epoch });
        }
        adam_step(&mut adam, &mut params, &out.grad, lr)?;
        epoch += 1;
        if epoch % 1000 == 0 {
            log::debug!("eigenpair {index} epoch {epoch}: quotient {:.6}", out.rayleigh);
        }
    }
    let converged = threshold_epoch.is_some();
    if !converged {
        log::warn!("eigenpair {index}: threshold not met within {} epochs", schedule.max_epochs);
    }

    // Final extraction.
    let mut entries = Vec::new();
    let (eigenvalue, slice_eigenvalues, raw_norm) = match &problem.integration {
        Integration::Grid(slices) => {
            let mut total = 0.0;
            let mut per_slice = Vec::new();
            let mut norm_sq = 0.0;
            for (k, (s, d)) in slices.iter().zip(&grid_deflators).enumerate() {
                let raw = trial.eval(&params, s.grid.points.view())?;
                let projected = d.project(&raw)?;
                let val = rayleigh(&s.kind, &projected, &s.grid)?;
                total += s.weight * val.rayleigh;
                per_slice.push(val.rayleigh);
                norm_sq += s.weight * val.norm_sq;
                let mut samples = GridSamples::from_bundle(&projected);
                samples.normalize(s.grid.weights.view()).map_err(|_| Error::ZeroNormBasis(index))?;
                entries.push(BasisEntry {
                    eigenvalue: val.rayleigh,
                    repr: Representation::Grid(samples),
                    slice: if slices.len() > 1 { Some(k) } else { None },
                });
            }
            (total, per_slice, norm_sq.sqrt())
        }
        Integration::MonteCarlo { .. } => {
            let window = schedule.tail_window.unwrap_or(1).min(history.len()).max(1);
            let tail = &history[history.len() - window..];
            let mean = tail.iter().map(|h| h.rayleigh).sum::<f64>() / window as f64;
            let ansatz: LevelSetAnsatz = trial.as_level_set_ansatz().expect("validated").clone();
            entries.push(BasisEntry {
                eigenvalue: mean,
                repr: Representation::Snapshot { ansatz, params: params.clone() },
                slice: None,
            });
            (mean, vec![mean], f64::NAN)
        }
    };
    let report = EigenReport {
        index,
        eigenvalue,
        slice_eigenvalues,
        epochs: history.len(),
        history,
        threshold_epoch,
        converged,
        seed,
        params,
        raw_norm,
        restart_eigenvalues: vec![eigenvalue],
    };
    Ok((report, entries))
}

/// Solves eigenpairs `start+1 ..= start+n` sequentially, where `start` is the
/// size of the initial bases. Eigenpair `i` uses seed `seed + i`, and restart
/// `r` adds `r · RESTART_STRIDE` to it.
pub fn solve_spectrum(
    problem: &EigenProblem<'_>,
    n: usize,
    initial: Option<Vec<EigenBasis>>,
    schedule: &SolveSchedule,
    seed: u64,
) -> Result<Spectrum> {
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one eigenpair".into()));
    }
    problem.validate()?;
    let mut bases = initial.unwrap_or_else(|| vec![EigenBasis::new(); problem.n_slices()]);
    if bases.len() != problem.n_slices() {
        return Err(Error::Shape("initial bases do not match slice count".into()));
    }
    let start = bases[0].len();
    schedule.validate(start + n)?;
    let mut previous = bases[0].entries.last().map(|_| {
        // the expected eigenvalue across slices is the comparison target
        match &problem.integration {
            Integration::Grid(slices) => slices
                .iter()
                .zip(&bases)
                .map(|(s, b)| s.weight * b.entries.last().unwrap().eigenvalue)
                .sum(),
            Integration::MonteCarlo { .. } => bases[0].entries.last().unwrap().eigenvalue,
        }
    });
    let mut reports = Vec::with_capacity(n);
    for i in start + 1..=start + n {
        let mut best: Option<(EigenReport, Vec<BasisEntry>)> = None;
        let mut tried = Vec::with_capacity(schedule.restarts);
        let mut last_err = None;
        for r in 0..schedule.restarts {
            let s = seed.wrapping_add(i as u64).wrapping_add(RESTART_STRIDE.wrapping_mul(r as u64));
            match solve_eigenpair(problem, i, &bases, previous, schedule, s) {
                Ok(found) => {
                    tried.push(found.0.eigenvalue);
                    if schedule.restarts > 1 {
                        log::info!("eigenpair {i} restart {r}: {:.6}", found.0.eigenvalue);
                    }
                    if best.as_ref().is_none_or(|b| found.0.eigenvalue < b.0.eigenvalue) {
                        best = Some(found);
                    }
                }
                Err(e) => {
                    log::warn!("eigenpair {i} restart {r} failed: {e}");
                    last_err = Some(e);
                }
            }
        }
        let outcome = match best {
            Some((mut report, entries)) => {
                report.restart_eigenvalues = tried;
                Ok((report, entries))
            }
            None => Err(last_err.expect("at least one restart ran")),
        };
        match outcome {
            Ok((report, entries)) => {
                log::info!("eigenpair {i}: {:.6} after {} epochs", report.eigenvalue, report.epochs);
                for (b, e) in bases.iter_mut().zip(entries) {
                    b.push(e);
                }
                previous = Some(report.eigenvalue);
                reports.push(report);
            }
            Err(e) => {
                return Ok(Spectrum { bases, reports, failure: Some(e) });
            }
        }
    }
    Ok(Spectrum { bases, reports, failure: None })
}

/// Parametric solve over density-weighted slices; identical machinery with
/// per-slice bases.
pub fn solve_parametric_spectrum(
    trial: &dyn TrialFunction,
    slices: Vec<Slice>,
    n: usize,
    schedule: &SolveSchedule,
    seed: u64,
) -> Result<Spectrum> {
    let problem = EigenProblem { trial, integration: Integration::Grid(slices) };
    solve_spectrum(&problem, n, None, schedule, seed)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub parameter: f64,
    pub eigenvalue: f64,
    /// Outside the parameter range seen in training.
    pub extrapolated: bool,
}

/// Quotient of the trained (undeflated) ansatz at each parameter value, on
/// the grid produced by `grid_for`. Meant for the first eigenpair.
pub fn eigencurve_eval<F>(
    trial: &dyn TrialFunction,
    params: &ParamVector,
    kind: &RayleighKind,
    trained_range: (f64, f64),
    parameters: &[f64],
    grid_for: F,
) -> Result<Vec<CurvePoint>>
where
    F: Fn(f64) -> Result<QuadratureGrid>,
{
    parameters
        .iter()
        .map(|&a| {
            let grid = grid_for(a)?;
            let b = trial.eval(params, grid.points.view())?;
            let r = rayleigh(&kind.with_parameter(a), &b, &grid)?;
            Ok(CurvePoint {
                parameter: a,
                eigenvalue: r.rayleigh,
                extrapolated: a < trained_range.0 || a > trained_range.1,
            })
        })
        .collect()
}
