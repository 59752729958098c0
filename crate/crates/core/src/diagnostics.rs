//! Central-difference checks of analytic derivatives.

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ansatz::TrialFunction;
use crate::error::Result;
use crate::nn::ParamVector;
use crate::objectives::{objective, objective_with_cotangent, RayleighKind};
use crate::quadrature::QuadratureGrid;

pub fn random_points(n: usize, dim: usize, lo: f64, hi: f64, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((n, dim), |_| rng.gen_range(lo..hi))
}

/// Largest relative error between the reported spatial gradients and central
/// differences of the values.
pub fn spatial_grad_error(trial: &dyn TrialFunction, params: &ParamVector, points: &Array2<f64>) -> Result<f64> {
    let h = 1e-6;
    let b = trial.eval(params, points.view())?;
    let (n, m, g) = b.spatial_grads.dim();
    let mut worst: f64 = 0.0;
    for j in 0..g {
        let mut plus = points.clone();
        let mut minus = points.clone();
        plus.column_mut(j).mapv_inplace(|v| v + h);
        minus.column_mut(j).mapv_inplace(|v| v - h);
        let vp = trial.eval(params, plus.view())?.values;
        let vm = trial.eval(params, minus.view())?.values;
        for i in 0..n {
            for o in 0..m {
                let fd = (vp[[i, o]] - vm[[i, o]]) / (2.0 * h);
                let e = (fd - b.spatial_grads[[i, o, j]]).abs() / b.spatial_grads[[i, o, j]].abs().max(1e-3);
                worst = worst.max(e);
            }
        }
    }
    Ok(worst)
}

/// Checks the parameter pullback of a random linear functional of values and
/// spatial gradients against central differences in every parameter.
pub fn pullback_error(trial: &dyn TrialFunction, params: &ParamVector, points: &Array2<f64>, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b = trial.eval(params, points.view())?;
    let (n, m, g) = b.spatial_grads.dim();
    let cv = Array2::from_shape_fn((n, m), |_| rng.gen_range(-1.0..1.0));
    let cg = Array3::from_shape_fn((n, m, g), |_| rng.gen_range(-1.0..1.0));
    let functional = |p: &ParamVector| -> Result<f64> {
        let e = trial.eval(p, points.view())?;
        Ok((&e.values * &cv).sum() + (&e.spatial_grads * &cg).sum())
    };
    let grad = trial.pullback(&b, cv.view(), cg.view())?;
    let h = 1e-6;
    let mut scale: f64 = 0.0;
    let mut worst: f64 = 0.0;
    for k in 0..params.len() {
        let mut p = params.clone();
        p.0[k] += h;
        let fp = functional(&p)?;
        p.0[k] -= 2.0 * h;
        let fm = functional(&p)?;
        let fd = (fp - fm) / (2.0 * h);
        scale = scale.max(fd.abs());
        worst = worst.max((fd - grad.0[k]).abs());
    }
    Ok(worst / scale.max(1e-12))
}

/// Relative error of the analytic objective gradient (quotient plus `β`
/// penalty) against central differences, taken over all parameters and
/// scaled by the largest difference quotient.
pub fn objective_gradient_error(
    kind: &RayleighKind,
    trial: &dyn TrialFunction,
    params: &ParamVector,
    grid: &QuadratureGrid,
    beta: f64,
) -> Result<f64> {
    let b = trial.eval(params, grid.points.view())?;
    let (_, cot) = objective_with_cotangent(kind, &b, grid, beta)?;
    let grad = trial.pullback(&b, cot.values.view(), cot.grads.view())?;
    let f = |q: &ParamVector| -> Result<f64> {
        let e = trial.eval(q, grid.points.view())?;
        Ok(objective(kind, &e, grid, beta)?.total)
    };
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for k in 0..params.len() {
        let mut q = params.clone();
        q.0[k] += h;
        let fp = f(&q)?;
        q.0[k] -= 2.0 * h;
        let fd = (fp - f(&q)?) / (2.0 * h);
        scale = scale.max(fd.abs());
        worst = worst.max((fd - grad.0[k]).abs());
    }
    Ok(worst / scale.max(1e-12))
}
