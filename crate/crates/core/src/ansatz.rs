//! Boundary-conforming trial functions `û = D(x)·Û(x;θ) + G(x)`.
//!
//! `D` is a closed-form level-set factor vanishing on the Dirichlet boundary
//! and `G` a lift carrying the boundary data. Parametric problems append the
//! parameter to the network input; `D` may depend on it too.

use std::str::FromStr;

use ndarray::{Array2, Array3, ArrayView2, ArrayView3};
use serde::{Deserialize, Serialize};

use crate::dual::Scalar;
use crate::error::{Error, Result};
use crate::nn::{self, EvalBundle, MlpSpec, ParamVector};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "kebab-case")]
pub enum LevelSet {
    /// `x(1−x)` on (0,1).
    Interval,
    /// `x₁(1−x₁)x₂(1−x₂)` on the unit square.
    Square,
    /// `x₂(1−x₁²−x₂²)` on the upper unit half-disk.
    Semicircle,
    /// `(1−r²)(r²−a²)` on `a < r < 1`. With `inner = None` the inner radius
    /// is read from the third input column.
    Annulus { inner: Option<f64> },
    /// `Π x_i(1−x_i⁴)` on the unit hypercube.
    HypercubeSkewed { dim: usize },
}

impl FromStr for LevelSet {
    type Err = Error;

    /// Accepts `interval`, `square`, `semicircle`, `annulus`, `annulus(a)`,
    /// `hypercube-skewed(d)`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (name, arg) = match s.find('(') {
            Some(open) if s.ends_with(')') => (&s[..open], Some(&s[open + 1..s.len() - 1])),
            _ => (s, None),
        };
        let bad = || Error::UnknownName(s.to_string());
        match (name, arg) {
            ("interval", None) => Ok(LevelSet::Interval),
            ("square", None) => Ok(LevelSet::Square),
            ("semicircle", None) => Ok(LevelSet::Semicircle),
            ("annulus", None) => Ok(LevelSet::Annulus { inner: None }),
            ("annulus", Some(a)) => {
                let a: f64 = a.trim().parse().map_err(|_| bad())?;
                if !(a > 0.0 && a < 1.0) {
                    return Err(Error::InvalidArgument(format!("annulus inner radius {a} not in (0,1)")));
                }
                Ok(LevelSet::Annulus { inner: Some(a) })
            }
            ("hypercube-skewed", Some(d)) => {
                let dim: usize = d.trim().parse().map_err(|_| bad())?;
                if dim == 0 {
                    return Err(Error::InvalidArgument("hypercube dimension must be >= 1".into()));
                }
                Ok(LevelSet::HypercubeSkewed { dim })
            }
            _ => Err(bad()),
        }
    }
}

/// Looks up one of the built-in level-set factors by name.
pub fn builtin_levelsets(name: &str) -> Result<LevelSet> {
    name.parse()
}

impl LevelSet {
    pub fn spatial_dim(&self) -> usize {
        match self {
            LevelSet::Interval => 1,
            LevelSet::Square | LevelSet::Semicircle | LevelSet::Annulus { .. } => 2,
            LevelSet::HypercubeSkewed { dim } => *dim,
        }
    }

    /// Number of trailing input columns holding geometry parameters.
    pub fn param_dim(&self) -> usize {
        match self {
            LevelSet::Annulus { inner: None } => 1,
            _ => 0,
        }
    }

    pub fn bounding_box(&self) -> (Vec<f64>, Vec<f64>) {
        match self {
            LevelSet::Interval => (vec![0.0], vec![1.0]),
            LevelSet::Square => (vec![0.0, 0.0], vec![1.0, 1.0]),
            LevelSet::Semicircle => (vec![-1.0, 0.0], vec![1.0, 1.0]),
            LevelSet::Annulus { .. } => (vec![-1.0, -1.0], vec![1.0, 1.0]),
            LevelSet::HypercubeSkewed { dim } => (vec![0.0; *dim], vec![1.0; *dim]),
        }
    }

    fn inner_radius(&self, x: &[f64]) -> f64 {
        match self {
            LevelSet::Annulus { inner: Some(a) } => *a,
            _ => x[2],
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            LevelSet::Interval => x[0] * (1.0 - x[0]),
            LevelSet::Square => x[0] * (1.0 - x[0]) * x[1] * (1.0 - x[1]),
            LevelSet::Semicircle => x[1] * (1.0 - x[0] * x[0] - x[1] * x[1]),
            LevelSet::Annulus { .. } => {
                let a = self.inner_radius(x);
                let r2 = x[0] * x[0] + x[1] * x[1];
                (1.0 - r2) * (r2 - a * a)
            }
            LevelSet::HypercubeSkewed { dim } => {
                x[..*dim].iter().map(|&v| v * (1.0 - v.powi(4))).product()
            }
        }
    }

    /// Spatial gradient written into `out` (length `spatial_dim`).
    pub fn gradient(&self, x: &[f64], out: &mut [f64]) {
        match self {
            LevelSet::Interval => out[0] = 1.0 - 2.0 * x[0],
            LevelSet::Square => {
                let (f1, f2) = (x[0] * (1.0 - x[0]), x[1] * (1.0 - x[1]));
                out[0] = (1.0 - 2.0 * x[0]) * f2;
                out[1] = f1 * (1.0 - 2.0 * x[1]);
            }
            LevelSet::Semicircle => {
                out[0] = -2.0 * x[0] * x[1];
                out[1] = 1.0 - x[0] * x[0] - 3.0 * x[1] * x[1];
            }
            LevelSet::Annulus { .. } => {
                let a = self.inner_radius(x);
                let r2 = x[0] * x[0] + x[1] * x[1];
                let c = 2.0 * (1.0 + a * a - 2.0 * r2);
                out[0] = c * x[0];
                out[1] = c * x[1];
            }
            LevelSet::HypercubeSkewed { dim } => {
                let d = *dim;
                // prefix/suffix products keep this exact when a factor is zero
                let f: Vec<f64> = x[..d].iter().map(|&v| v * (1.0 - v.powi(4))).collect();
                let mut prefix = 1.0;
                for k in 0..d {
                    out[k] = prefix * (1.0 - 5.0 * x[k].powi(4));
                    prefix *= f[k];
                }
                let mut suffix = 1.0;
                for k in (0..d).rev() {
                    out[k] *= suffix;
                    suffix *= f[k];
                }
            }
        }
    }

    /// Same closed form evaluated over any [`Scalar`], e.g. nested duals.
    pub fn value_generic<S: Scalar>(&self, x: &[S], param: Option<f64>) -> S {
        let one = S::cst(1.0);
        match self {
            LevelSet::Interval => x[0] * (one - x[0]),
            LevelSet::Square => x[0] * (one - x[0]) * x[1] * (one - x[1]),
            LevelSet::Semicircle => x[1] * (one - x[0] * x[0] - x[1] * x[1]),
            LevelSet::Annulus { inner } => {
                let a = inner.or(param).unwrap_or(0.5);
                let r2 = x[0] * x[0] + x[1] * x[1];
                (one - r2) * (r2 - S::cst(a * a))
            }
            LevelSet::HypercubeSkewed { dim } => x[..*dim]
                .iter()
                .fold(one, |acc, &v| acc * v * (one - v.powi(4))),
        }
    }

    /// Strictly inside the domain.
    pub fn contains(&self, x: &[f64]) -> bool {
        self.value(x) > 0.0
    }
}

/// Dirichlet lift `G`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Lift {
    #[default]
    Zero,
    /// `G(x) = c0 + c·x`
    Affine { c0: f64, c: Vec<f64> },
}

impl Lift {
    fn eval(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        match self {
            Lift::Zero => {
                grad.fill(0.0);
                0.0
            }
            Lift::Affine { c0, c } => {
                grad.copy_from_slice(&c[..grad.len()]);
                c0 + c.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
            }
        }
    }
}

/// A parameterised trial function with batched spatial derivatives and a
/// parameter pullback.
pub trait TrialFunction: Send + Sync {
    fn n_params(&self) -> usize;
    /// Columns expected in the point matrix.
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    /// Leading input columns that are differentiated.
    fn grad_dim(&self) -> usize;
    fn init_params(&self, seed: u64) -> ParamVector;
    fn eval(&self, params: &ParamVector, points: ArrayView2<f64>) -> Result<EvalBundle>;
    fn pullback(
        &self,
        bundle: &EvalBundle,
        cot_values: ArrayView2<f64>,
        cot_grads: ArrayView3<f64>,
    ) -> Result<ParamVector>;

    /// Serializable descriptor, when the trial function has one.
    fn as_level_set_ansatz(&self) -> Option<&LevelSetAnsatz> {
        None
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelSetAnsatz {
    pub mlp: MlpSpec,
    pub level_set: LevelSet,
    #[serde(default)]
    pub lift: Lift,
}

struct ConstrainedTape {
    raw: EvalBundle,
    d: Vec<f64>,
    grad_d: Vec<f64>,
}

impl LevelSetAnsatz {
    pub fn new(mlp: MlpSpec, level_set: LevelSet) -> Result<Self> {
        let ansatz = Self {
            mlp,
            level_set,
            lift: Lift::Zero,
        };
        ansatz.validate()?;
        Ok(ansatz)
    }

    pub fn with_lift(mut self, lift: Lift) -> Result<Self> {
        if let Lift::Affine { c, .. } = &lift {
            if c.len() < self.spatial_dim() {
                return Err(Error::Shape("lift gradient shorter than spatial dimension".into()));
            }
        }
        self.lift = lift;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        self.mlp.validate()?;
        let ls_inputs = self.level_set.spatial_dim() + self.level_set.param_dim();
        if self.mlp.input_dim < ls_inputs {
            return Err(Error::Shape(format!(
                "network takes {} inputs, level set needs {ls_inputs}",
                self.mlp.input_dim
            )));
        }
        Ok(())
    }

    pub fn spatial_dim(&self) -> usize {
        self.level_set.spatial_dim()
    }

    /// Evaluates the constrained function; see [`TrialFunction::eval`].
    pub fn constrained_eval(&self, params: &ParamVector, points: ArrayView2<f64>) -> Result<EvalBundle> {
        let g = self.spatial_dim();
        let raw = nn::forward_with_grad_dims(&self.mlp, params, points, g)?;
        let n = points.nrows();
        let m = self.mlp.output_dim;
        let mut values = Array2::zeros((n, m));
        let mut grads = Array3::zeros((n, m, g));
        let mut d = vec![0.0; n];
        let mut grad_d = vec![0.0; n * g];
        let mut grad_lift = vec![0.0; g];
        for (i, x) in points.outer_iter().enumerate() {
            let x = x.to_vec();
            let di = self.level_set.value(&x);
            let gd = &mut grad_d[i * g..(i + 1) * g];
            self.level_set.gradient(&x, gd);
            let lift = self.lift.eval(&x[..g], &mut grad_lift);
            d[i] = di;
            for o in 0..m {
                let u = raw.values[[i, o]];
                values[[i, o]] = di * u + lift;
                for j in 0..g {
                    grads[[i, o, j]] = gd[j] * u + di * raw.spatial_grads[[i, o, j]] + grad_lift[j];
                }
            }
        }
        Ok(EvalBundle {
            values,
            spatial_grads: grads,
            tape: Some(Box::new(ConstrainedTape { raw, d, grad_d })),
        })
    }
}

impl TrialFunction for LevelSetAnsatz {
    fn n_params(&self) -> usize {
        self.mlp.param_count()
    }

    fn input_dim(&self) -> usize {
        self.mlp.input_dim
    }

    fn output_dim(&self) -> usize {
        self.mlp.output_dim
    }

    fn grad_dim(&self) -> usize {
        self.spatial_dim()
    }

    fn init_params(&self, seed: u64) -> ParamVector {
        nn::init_xavier(&self.mlp, seed)
    }

    fn eval(&self, params: &ParamVector, points: ArrayView2<f64>) -> Result<EvalBundle> {
        self.constrained_eval(params, points)
    }

    fn pullback(
        &self,
        bundle: &EvalBundle,
        cot_values: ArrayView2<f64>,
        cot_grads: ArrayView3<f64>,
    ) -> Result<ParamVector> {
        let tape: &ConstrainedTape = bundle.tape()?;
        if cot_values.dim() != bundle.values.dim() || cot_grads.dim() != bundle.spatial_grads.dim() {
            return Err(Error::Shape("cotangent shape does not match bundle".into()));
        }
        let (n, m, g) = bundle.spatial_grads.dim();
        let mut raw_cv = Array2::zeros((n, m));
        let mut raw_cg = Array3::zeros((n, m, g));
        for i in 0..n {
            let di = tape.d[i];
            let gd = &tape.grad_d[i * g..(i + 1) * g];
            for o in 0..m {
                let mut acc = cot_values[[i, o]] * di;
                for j in 0..g {
                    let c = cot_grads[[i, o, j]];
                    acc += c * gd[j];
                    raw_cg[[i, o, j]] = di * c;
                }
                raw_cv[[i, o]] = acc;
            }
        }
        nn::param_pullback(&tape.raw, raw_cv.view(), raw_cg.view())
    }

    fn as_level_set_ansatz(&self) -> Option<&LevelSetAnsatz> {
        Some(self)
    }
}

/// The raw network as a trial function, differentiated in every input.
impl TrialFunction for MlpSpec {
    fn n_params(&self) -> usize {
        self.param_count()
    }

    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn output_dim(&self) -> usize {
        self.output_dim
    }

    fn grad_dim(&self) -> usize {
        self.input_dim
    }

    fn init_params(&self, seed: u64) -> ParamVector {
        nn::init_xavier(self, seed)
    }

    fn eval(&self, params: &ParamVector, points: ArrayView2<f64>) -> Result<EvalBundle> {
        nn::forward_with_spatial_grad(self, params, points)
    }

    fn pullback(
        &self,
        bundle: &EvalBundle,
        cot_values: ArrayView2<f64>,
        cot_grads: ArrayView3<f64>,
    ) -> Result<ParamVector> {
        nn::param_pullback(bundle, cot_values, cot_grads)
    }
}
