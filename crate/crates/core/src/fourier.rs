//! Tensor-product sine series on the unit square, used as a linear baseline
//! against the network ansatz.

use ndarray::{Array2, Array3, ArrayView2, ArrayView3};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::ansatz::{LevelSet, LevelSetAnsatz, TrialFunction};
use crate::error::{Error, Result};
use crate::nn::{normal_coefficients, Activation, EvalBundle, MlpSpec, ParamVector};
use crate::objectives::RayleighKind;
use crate::orthogonalization::{EigenBasis, GsVariant};
use crate::quadrature::QuadratureGrid;
use crate::solver::{solve_eigenpair, EigenProblem, EpochsAfter, HistoryEntry, Integration, Slice, SolveSchedule};

/// `Σ_{i,j=1..M} θ_ij sin(iπx₁) sin(jπx₂)`, parameters stored row-major in
/// `(i, j)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FourierAnsatz {
    pub max_frequency: usize,
    /// Standard deviation of the normal initial coefficients.
    pub init_sigma: f64,
}

struct SineTape {
    /// Per point: `sin(iπx₁)`, `iπcos(iπx₁)`, `sin(jπx₂)`, `jπcos(jπx₂)`.
    tables: Vec<f64>,
}

impl FourierAnsatz {
    pub fn new(max_frequency: usize, init_sigma: f64) -> Result<Self> {
        if max_frequency == 0 || !(init_sigma > 0.0) {
            return Err(Error::InvalidArgument("need M >= 1 and sigma > 0".into()));
        }
        Ok(Self { max_frequency, init_sigma })
    }

    fn tables(&self, x: f64, y: f64, out: &mut [f64]) {
        let m = self.max_frequency;
        for k in 0..m {
            let f = (k + 1) as f64 * PI;
            let (sx, cx) = crate::sin_cos(f * x);
            let (sy, cy) = crate::sin_cos(f * y);
            out[k] = sx;
            out[m + k] = f * cx;
            out[2 * m + k] = sy;
            out[3 * m + k] = f * cy;
        }
    }
}

impl TrialFunction for FourierAnsatz {
    fn n_params(&self) -> usize {
        self.max_frequency * self.max_frequency
    }

    fn input_dim(&self) -> usize {
        2
    }

    fn output_dim(&self) -> usize {
        1
    }

    fn grad_dim(&self) -> usize {
        2
    }

    fn init_params(&self, seed: u64) -> ParamVector {
        ParamVector(normal_coefficients(self.n_params(), self.init_sigma, seed).expect("validated sigma"))
    }

    fn eval(&self, params: &ParamVector, points: ArrayView2<f64>) -> Result<EvalBundle> {
        if params.len() != self.n_params() || points.ncols() != 2 {
            return Err(Error::Shape("Fourier ansatz: parameter or point shape mismatch".into()));
        }
        let m = self.max_frequency;
        let n = points.nrows();
        let mut tables = vec![0.0; n * 4 * m];
        let mut values = Array2::zeros((n, 1));
        let mut grads = Array3::zeros((n, 1, 2));
        let th = params.as_slice();
        for i in 0..n {
            let t = &mut tables[i * 4 * m..(i + 1) * 4 * m];
            self.tables(points[[i, 0]], points[[i, 1]], t);
            let (sx, rest) = t.split_at(m);
            let (cx, rest) = rest.split_at(m);
            let (sy, cy) = rest.split_at(m);
            let (mut u, mut gx, mut gy) = (0.0, 0.0, 0.0);
            for a in 0..m {
                let row = &th[a * m..(a + 1) * m];
                let rs: f64 = row.iter().zip(sy).map(|(p, q)| p * q).sum();
                let rc: f64 = row.iter().zip(cy).map(|(p, q)| p * q).sum();
                u += sx[a] * rs;
                gx += cx[a] * rs;
                gy += sx[a] * rc;
            }
            values[[i, 0]] = u;
            grads[[i, 0, 0]] = gx;
            grads[[i, 0, 1]] = gy;
        }
        Ok(EvalBundle {
            values,
            spatial_grads: grads,
            tape: Some(Box::new(SineTape { tables })),
        })
    }

    fn pullback(
        &self,
        bundle: &EvalBundle,
        cot_values: ArrayView2<f64>,
        cot_grads: ArrayView3<f64>,
    ) -> Result<ParamVector> {
        let tape: &SineTape = bundle.tape()?;
        let m = self.max_frequency;
        let n = bundle.n_points();
        if cot_values.dim() != (n, 1) || cot_grads.dim() != (n, 1, 2) {
            return Err(Error::Shape("cotangent shape does not match bundle".into()));
        }
        let mut g = vec![0.0; m * m];
        for i in 0..n {
            let t = &tape.tables[i * 4 * m..(i + 1) * 4 * m];
            let (sx, rest) = t.split_at(m);
            let (cx, rest) = rest.split_at(m);
            let (sy, cy) = rest.split_at(m);
            let (cv, c0, c1) = (cot_values[[i, 0]], cot_grads[[i, 0, 0]], cot_grads[[i, 0, 1]]);
            for a in 0..m {
                let ka = cv * sx[a] + c0 * cx[a];
                let kb = c1 * sx[a];
                let row = &mut g[a * m..(a + 1) * m];
                for b in 0..m {
                    row[b] += ka * sy[b] + kb * cy[b];
                }
            }
        }
        Ok(ParamVector(g))
    }
}

/// Paired training histories of the network and sine-series arms.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DuelResult {
    pub p: f64,
    pub network: Vec<HistoryEntry>,
    pub fourier: Vec<HistoryEntry>,
    pub network_final: f64,
    pub fourier_final: f64,
    pub network_params: ParamVector,
    pub fourier_params: ParamVector,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DuelSettings {
    pub p: f64,
    pub epochs: usize,
    pub lr: f64,
    pub hidden_widths: Vec<usize>,
    pub max_frequency: usize,
    pub fourier_sigma: f64,
    pub seed: u64,
}

impl Default for DuelSettings {
    fn default() -> Self {
        Self {
            p: 5.0,
            epochs: 30_000,
            lr: 1e-2,
            hidden_widths: vec![7, 7],
            max_frequency: 10,
            fourier_sigma: 1e-3,
            seed: 0,
        }
    }
}

/// The network and sine-series trial functions of a duel.
pub fn duel_trials(settings: &DuelSettings) -> Result<(LevelSetAnsatz, FourierAnsatz)> {
    let net = LevelSetAnsatz::new(
        MlpSpec::new(2, settings.hidden_widths.clone(), 1, Activation::Tanh)?,
        LevelSet::Square,
    )?;
    Ok((net, FourierAnsatz::new(settings.max_frequency, settings.fourier_sigma)?))
}

/// Trains both discretizations on the same grid with matched epochs and
/// learning rate; each arm draws from its own seed stream.
pub fn plaplace_duel(settings: &DuelSettings, grid: &QuadratureGrid) -> Result<DuelResult> {
    let kind = RayleighKind::PLaplace { p: settings.p };
    let schedule = SolveSchedule {
        base_lr: settings.lr,
        lr_decay: None,
        threshold: f64::MAX,
        epochs_after: EpochsAfter { base: settings.epochs, per_index: 0 },
        max_epochs: settings.epochs,
        beta_penalty: 0.0,
        tail_window: None,
        gs_variant: GsVariant::Classical,
        restarts: 1,
    };
    let (net, fourier) = duel_trials(settings)?;
    let run = |trial: &dyn TrialFunction, seed: u64| {
        let problem = EigenProblem {
            trial,
            integration: Integration::Grid(vec![Slice {
                grid: grid.clone(),
                kind: kind.clone(),
                weight: 1.0,
                parameter: None,
            }]),
        };
        solve_eigenpair(&problem, 1, &[EigenBasis::new()], None, &schedule, seed)
    };
    let (nn, _) = run(&net, settings.seed)?;
    let (ff, _) = run(&fourier, settings.seed.wrapping_add(1_000_003))?;
    Ok(DuelResult {
        p: settings.p,
        network_final: nn.eigenvalue,
        fourier_final: ff.eigenvalue,
        network: nn.history,
        fourier: ff.history,
        network_params: nn.params,
        fourier_params: ff.params,
    })
}
