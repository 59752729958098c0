//! Discretised Rayleigh quotients and their cotangents with respect to the
//! sampled values and spatial gradients.

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::EvalBundle;
use crate::quadrature::QuadratureGrid;

const MIN_DENOMINATOR: f64 = 1e-200;

/// How the two-material modulus profile is evaluated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModulusMode {
    /// `E0 + (E1−E0)/2 · tanh(q(x₁−a))`, which spans `E0 ± (E1−E0)/2`.
    AsPrinted,
    /// `(E0+E1)/2 + (E1−E0)/2 · tanh(q(x₁−a))`, which spans `[E0, E1]`.
    #[default]
    MidpointCorrected,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModulusField {
    pub e0: f64,
    pub e1: f64,
    /// Interface sharpness.
    pub q: f64,
    /// Interface position along x₁.
    pub a: f64,
    #[serde(default)]
    pub mode: ModulusMode,
}

impl ModulusField {
    pub fn validate(&self) -> Result<()> {
        if !(self.e0 > 0.0 && self.e1 > 0.0 && self.q > 0.0) {
            return Err(Error::InvalidArgument("moduli and sharpness must be positive".into()));
        }
        Ok(())
    }

    pub fn with_interface(&self, a: f64) -> Self {
        Self { a, ..self.clone() }
    }
}

pub fn modulus(field: &ModulusField, x1: f64) -> f64 {
    let half_jump = 0.5 * (field.e1 - field.e0);
    let step = (field.q * (x1 - field.a)).tanh();
    match field.mode {
        ModulusMode::AsPrinted => half_jump * step + field.e0,
        ModulusMode::MidpointCorrected => 0.5 * (field.e0 + field.e1) + half_jump * step,
    }
}

/// Plane-stress constitutive matrix in Voigt notation.
pub fn plane_stress_matrix(e: f64, nu: f64) -> Result<[[f64; 3]; 3]> {
    if !(0.0..0.5).contains(&nu) {
        return Err(Error::InvalidArgument(format!("Poisson ratio {nu} not in [0, 0.5)")));
    }
    let c = e / (1.0 - nu * nu);
    Ok([
        [c, c * nu, 0.0],
        [c * nu, c, 0.0],
        [0.0, 0.0, c * 0.5 * (1.0 - nu)],
    ])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum RayleighKind {
    ScalarLaplace,
    /// `∫E|∇u|² / ∫|u|²` for two components; a unit modulus when absent.
    VectorLaplace {
        #[serde(default)]
        modulus: Option<ModulusField>,
    },
    PlaneStress { modulus: ModulusField, nu: f64 },
    PLaplace { p: f64 },
    DDimLaplace { dim: usize },
}

impl RayleighKind {
    pub fn validate(&self) -> Result<()> {
        match self {
            RayleighKind::PLaplace { p } if !(*p >= 1.0) => {
                Err(Error::InvalidArgument(format!("p-Laplace needs p >= 1, got {p}")))
            }
            RayleighKind::PlaneStress { modulus, nu } => {
                modulus.validate()?;
                plane_stress_matrix(1.0, *nu).map(|_| ())
            }
            RayleighKind::VectorLaplace { modulus: Some(m) } => m.validate(),
            RayleighKind::DDimLaplace { dim: 0 } => {
                Err(Error::InvalidArgument("dimension must be >= 1".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            RayleighKind::VectorLaplace { .. } | RayleighKind::PlaneStress { .. } => 2,
            _ => 1,
        }
    }

    /// Binds a stochastic parameter (the interface position for plane stress).
    pub fn with_parameter(&self, a: f64) -> Self {
        match self {
            RayleighKind::PlaneStress { modulus, nu } => RayleighKind::PlaneStress {
                modulus: modulus.with_interface(a),
                nu: *nu,
            },
            RayleighKind::VectorLaplace { modulus: Some(m) } => RayleighKind::VectorLaplace {
                modulus: Some(m.with_interface(a)),
            },
            other => other.clone(),
        }
    }

    fn check(&self, bundle: &EvalBundle) -> Result<()> {
        self.validate()?;
        let m = bundle.output_dim();
        if m != self.output_dim() {
            return Err(Error::Shape(format!(
                "{self:?} needs {} output components, bundle has {m}",
                self.output_dim()
            )));
        }
        let g = bundle.grad_dim();
        let ok = match self {
            RayleighKind::PlaneStress { .. } | RayleighKind::VectorLaplace { .. } => g == 2,
            RayleighKind::DDimLaplace { dim } => g == *dim,
            _ => g >= 1,
        };
        if !ok {
            return Err(Error::Shape(format!("{self:?} incompatible with {g} spatial dims")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveValue {
    pub rayleigh: f64,
    pub penalty: f64,
    pub total: f64,
    pub numerator: f64,
    pub denominator: f64,
    /// `Σ w‖û‖²`, the weighted L² norm squared.
    pub norm_sq: f64,
}

/// `∂(objective)/∂values` and `∂(objective)/∂spatial_grads`.
#[derive(Clone, Debug)]
pub struct Cotangent {
    pub values: Array2<f64>,
    pub grads: Array3<f64>,
}

impl Cotangent {
    pub fn zeros(n: usize, m: usize, g: usize) -> Self {
        Self {
            values: Array2::zeros((n, m)),
            grads: Array3::zeros((n, m, g)),
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.values *= s;
        self.grads *= s;
    }
}

/// Quotient without penalty.
pub fn rayleigh(kind: &RayleighKind, bundle: &EvalBundle, grid: &QuadratureGrid) -> Result<ObjectiveValue> {
    assemble(kind, bundle, grid, 0.0, false).map(|(v, _)| v)
}

/// Quotient plus `β(‖û‖² − 1)²`.
pub fn objective(
    kind: &RayleighKind,
    bundle: &EvalBundle,
    grid: &QuadratureGrid,
    beta: f64,
) -> Result<ObjectiveValue> {
    assemble(kind, bundle, grid, beta, false).map(|(v, _)| v)
}

pub fn objective_with_cotangent(
    kind: &RayleighKind,
    bundle: &EvalBundle,
    grid: &QuadratureGrid,
    beta: f64,
) -> Result<(ObjectiveValue, Cotangent)> {
    assemble(kind, bundle, grid, beta, true).map(|(v, c)| (v, c.expect("requested")))
}

pub fn norm_penalty(bundle: &EvalBundle, grid: &QuadratureGrid, beta: f64) -> Result<f64> {
    if !(beta >= 0.0) {
        return Err(Error::InvalidArgument(format!("penalty weight {beta} < 0")));
    }
    check_grid(bundle, grid)?;
    let s = weighted_norm_sq(bundle, grid);
    Ok(beta * (s - 1.0).powi(2))
}

fn weighted_norm_sq(bundle: &EvalBundle, grid: &QuadratureGrid) -> f64 {
    bundle
        .values
        .outer_iter()
        .zip(grid.weights.iter())
        .map(|(v, w)| w * v.iter().map(|x| x * x).sum::<f64>())
        .sum()
}

fn check_grid(bundle: &EvalBundle, grid: &QuadratureGrid) -> Result<()> {
    if bundle.n_points() != grid.len() {
        return Err(Error::Shape(format!(
            "bundle has {} points, grid has {}",
            bundle.n_points(),
            grid.len()
        )));
    }
    Ok(())
}

fn assemble(
    kind: &RayleighKind,
    bundle: &EvalBundle,
    grid: &QuadratureGrid,
    beta: f64,
    want_cotangent: bool,
) -> Result<(ObjectiveValue, Option<Cotangent>)> {
    kind.check(bundle)?;
    check_grid(bundle, grid)?;
    if !(beta >= 0.0) {
        return Err(Error::InvalidArgument(format!("penalty weight {beta} < 0")));
    }
    let (n, m, g) = bundle.spatial_grads.dim();
    let values = bundle.values.as_standard_layout();
    let grads = bundle.spatial_grads.as_standard_layout();
    let vals = values.as_slice().unwrap();
    let grs = grads.as_slice().unwrap();
    let weights = grid.weights.as_slice().unwrap();

    let stress = match kind {
        RayleighKind::PlaneStress { modulus, nu } => Some((modulus, *nu)),
        _ => None,
    };
    let coefficient = |i: usize| match kind {
        RayleighKind::VectorLaplace { modulus: Some(f) } => modulus(f, grid.points[[i, 0]]),
        _ => 1.0,
    };

    // First pass: integrals.
    let mut num = 0.0;
    let mut den = 0.0;
    let mut norm_sq = 0.0;
    for i in 0..n {
        let w = weights[i];
        let v = &vals[i * m..(i + 1) * m];
        let gr = &grs[i * m * g..(i + 1) * m * g];
        let v2: f64 = v.iter().map(|x| x * x).sum();
        norm_sq += w * v2;
        match kind {
            RayleighKind::PLaplace { p } => {
                let s: f64 = gr.iter().map(|x| x * x).sum();
                num += w * s.powf(0.5 * p);
                den += w * v2.powf(0.5 * p);
            }
            RayleighKind::PlaneStress { .. } => {
                let (field, nu) = stress.unwrap();
                let c = plane_stress_matrix(modulus(field, grid.points[[i, 0]]), nu)?;
                let eps = [gr[0], gr[3], gr[1] + gr[2]];
                let mut e = 0.0;
                for r in 0..3 {
                    for s in 0..3 {
                        e += eps[r] * c[r][s] * eps[s];
                    }
                }
                num += w * e;
                den += w * v2;
            }
            _ => {
                num += w * coefficient(i) * gr.iter().map(|x| x * x).sum::<f64>();
                den += w * v2;
            }
        }
    }
    if !(den > MIN_DENOMINATOR) || !den.is_finite() {
        return Err(Error::CollapsedDenominator(den));
    }
    let rq = num / den;
    let penalty = beta * (norm_sq - 1.0).powi(2);
    let value = ObjectiveValue {
        rayleigh: rq,
        penalty,
        total: rq + penalty,
        numerator: num,
        denominator: den,
        norm_sq,
    };
    if !want_cotangent {
        return Ok((value, None));
    }

    // Second pass: cotangents.
    let mut cv = vec![0.0; n * m];
    let mut cg = vec![0.0; n * m * g];
    let inv_den = 1.0 / den;
    let ratio = num / (den * den);
    let pen_slope = 4.0 * beta * (norm_sq - 1.0);
    for i in 0..n {
        let w = weights[i];
        let v = &vals[i * m..(i + 1) * m];
        let gr = &grs[i * m * g..(i + 1) * m * g];
        let cvi = &mut cv[i * m..(i + 1) * m];
        let cgi = &mut cg[i * m * g..(i + 1) * m * g];
        match kind {
            RayleighKind::PLaplace { p } => {
                let s: f64 = gr.iter().map(|x| x * x).sum();
                let v2: f64 = v.iter().map(|x| x * x).sum();
                let ds = if s > 0.0 { p * s.powf(0.5 * p - 1.0) } else { 0.0 };
                let dv = if v2 > 0.0 { p * v2.powf(0.5 * p - 1.0) } else { 0.0 };
                for (c, x) in cgi.iter_mut().zip(gr) {
                    *c = w * inv_den * ds * x;
                }
                for (c, x) in cvi.iter_mut().zip(v) {
                    *c = -w * ratio * dv * x;
                }
            }
            RayleighKind::PlaneStress { .. } => {
                let (field, nu) = stress.unwrap();
                let c = plane_stress_matrix(modulus(field, grid.points[[i, 0]]), nu)?;
                let eps = [gr[0], gr[3], gr[1] + gr[2]];
                let mut sig = [0.0; 3];
                for r in 0..3 {
                    sig[r] = c[r][0] * eps[0] + c[r][1] * eps[1] + c[r][2] * eps[2];
                }
                let k = 2.0 * w * inv_den;
                cgi[0] = k * sig[0];
                cgi[3] = k * sig[1];
                cgi[1] = k * sig[2];
                cgi[2] = k * sig[2];
                for (c, x) in cvi.iter_mut().zip(v) {
                    *c = -2.0 * w * ratio * x;
                }
            }
            _ => {
                let k = 2.0 * w * inv_den * coefficient(i);
                for (c, x) in cgi.iter_mut().zip(gr) {
                    *c = k * x;
                }
                for (c, x) in cvi.iter_mut().zip(v) {
                    *c = -2.0 * w * ratio * x;
                }
            }
        }
        if beta > 0.0 {
            for (c, x) in cvi.iter_mut().zip(v) {
                *c += pen_slope * w * x;
            }
        }
    }
    Ok((
        value,
        Some(Cotangent {
            values: Array2::from_shape_vec((n, m), cv).expect("shape"),
            grads: Array3::from_shape_vec((n, m, g), cg).expect("shape"),
        }),
    ))
}

/// One parameter sample of an expected quotient.
pub struct SliceTerm<'a> {
    pub kind: &'a RayleighKind,
    pub bundle: &'a EvalBundle,
    pub grid: &'a QuadratureGrid,
    /// Discrete probability (or quadrature-weighted density) of this sample.
    pub weight: f64,
}

pub fn check_density_weights(weights: &[f64]) -> Result<()> {
    if weights.is_empty() || weights.iter().any(|w| !(*w >= 0.0)) {
        return Err(Error::InvalidArgument("density weights must be non-negative".into()));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidArgument(format!("density weights sum to {total}, not 1")));
    }
    Ok(())
}

/// `Σ_k ρ_k · R_k`, each term on its own grid.
pub fn expected_rayleigh(terms: &[SliceTerm<'_>]) -> Result<f64> {
    let weights: Vec<f64> = terms.iter().map(|t| t.weight).collect();
    check_density_weights(&weights)?;
    let mut total = 0.0;
    for t in terms {
        total += t.weight * rayleigh(t.kind, t.bundle, t.grid)?.rayleigh;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::{interval_grid, masked_square_grid};
    use crate::ansatz::{LevelSet, LevelSetAnsatz};
    use std::f64::consts::PI;

    fn sine_bundle(grid: &QuadratureGrid, k: f64, amp: f64) -> EvalBundle {
        let n = grid.len();
        let mut v = Array2::zeros((n, 1));
        let mut g = Array3::zeros((n, 1, 1));
        for i in 0..n {
            let x = grid.points[[i, 0]];
            v[[i, 0]] = amp * (k * PI * x).sin();
            g[[i, 0, 0]] = amp * k * PI * (k * PI * x).cos();
        }
        EvalBundle::detached(v, g)
    }

    #[test]
    fn exact_eigenfunction_quotient() {
        let grid = interval_grid(250).unwrap();
        let b = sine_bundle(&grid, 1.0, 2f64.sqrt());
        let r = rayleigh(&RayleighKind::ScalarLaplace, &b, &grid).unwrap();
        assert!((r.rayleigh - PI * PI).abs() / (PI * PI) < 1e-3);
        assert!(norm_penalty(&b, &grid, 1.0).unwrap() < 1e-8);
    }

    #[test]
    fn vector_mode_on_square() {
        let grid = masked_square_grid(50, &LevelSet::Square).unwrap();
        let n = grid.len();
        let mut v = Array2::zeros((n, 2));
        let mut g = Array3::zeros((n, 2, 2));
        for i in 0..n {
            let (x, y) = (grid.points[[i, 0]], grid.points[[i, 1]]);
            let u = 2.0 * (PI * x).sin() * (PI * y).sin();
            let ux = 2.0 * PI * (PI * x).cos() * (PI * y).sin();
            let uy = 2.0 * PI * (PI * x).sin() * (PI * y).cos();
            for c in 0..2 {
                v[[i, c]] = u;
                g[[i, c, 0]] = ux;
                g[[i, c, 1]] = uy;
            }
        }
        let b = EvalBundle::detached(v, g);
        let r = rayleigh(&RayleighKind::VectorLaplace { modulus: None }, &b, &grid).unwrap();
        assert!((r.rayleigh - 19.739).abs() / 19.739 < 1e-3, "{}", r.rayleigh);
    }

    #[test]
    fn p2_matches_laplace_exactly() {
        let grid = interval_grid(64).unwrap();
        let b = sine_bundle(&grid, 2.0, 0.3);
        let a = objective_with_cotangent(&RayleighKind::ScalarLaplace, &b, &grid, 0.0).unwrap();
        let p = objective_with_cotangent(&RayleighKind::PLaplace { p: 2.0 }, &b, &grid, 0.0).unwrap();
        assert_eq!(a.0.rayleigh, p.0.rayleigh);
        assert_eq!(a.1.values, p.1.values);
        assert_eq!(a.1.grads, p.1.grads);
    }

    #[test]
    fn stiffness_matrix_cases() {
        let c = plane_stress_matrix(1.0, 0.0).unwrap();
        assert_eq!(c, [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 0.5]]);
        let c = plane_stress_matrix(1.0, 0.25).unwrap();
        assert!((c[0][0] - 16.0 / 15.0).abs() < 1e-15);
        assert!((c[0][1] - 4.0 / 15.0).abs() < 1e-15);
        for r in 0..3 {
            for s in 0..3 {
                assert_eq!(c[r][s], c[s][r]);
            }
        }
        assert!(plane_stress_matrix(1.0, 0.5).is_err());
        assert!(plane_stress_matrix(1.0, -0.1).is_err());
    }

    #[test]
    fn modulus_profiles() {
        let f = ModulusField { e0: 1.0, e1: 5.0, q: 50.0, a: 0.5, mode: ModulusMode::AsPrinted };
        assert_eq!(modulus(&f, 0.5), 1.0);
        assert!((modulus(&f, 0.6) - (1.0 + 2.0 * 5f64.tanh())).abs() < 1e-14);
        let sharp = ModulusField { q: 1e6, ..f.clone() };
        assert!((modulus(&sharp, 0.9) - 3.0).abs() < 1e-12);
        let mid = ModulusField { mode: ModulusMode::MidpointCorrected, ..sharp };
        assert!((modulus(&mid, 0.9) - 5.0).abs() < 1e-12);
        assert!((modulus(&mid, 0.1) - 1.0).abs() < 1e-12);
        assert_eq!(modulus(&mid, 0.5), 3.0);
    }

    #[test]
    fn penalty_cases() {
        let grid = interval_grid(100).unwrap();
        let b = sine_bundle(&grid, 1.0, 2.0); // ‖û‖² = 2
        assert!((norm_penalty(&b, &grid, 1.0).unwrap() - 1.0).abs() < 1e-10);
        assert_eq!(norm_penalty(&b, &grid, 0.0).unwrap(), 0.0);
        assert!(norm_penalty(&b, &grid, -1.0).is_err());
    }

    #[test]
    fn collapsed_denominator() {
        let grid = interval_grid(10).unwrap();
        let b = EvalBundle::detached(Array2::zeros((10, 1)), Array3::zeros((10, 1, 1)));
        assert!(matches!(
            rayleigh(&RayleighKind::ScalarLaplace, &b, &grid),
            Err(Error::CollapsedDenominator(_))
        ));
    }

    #[test]
    fn expected_quotient_cases() {
        let grid = interval_grid(100).unwrap();
        let b1 = sine_bundle(&grid, 1.0, 1.0);
        let b2 = sine_bundle(&grid, 2.0, 1.0);
        let k = RayleighKind::ScalarLaplace;
        let r1 = rayleigh(&k, &b1, &grid).unwrap().rayleigh;
        let r2 = rayleigh(&k, &b2, &grid).unwrap().rayleigh;
        let single = expected_rayleigh(&[SliceTerm { kind: &k, bundle: &b1, grid: &grid, weight: 1.0 }]).unwrap();
        assert_eq!(single, r1);
        let two = expected_rayleigh(&[
            SliceTerm { kind: &k, bundle: &b1, grid: &grid, weight: 0.5 },
            SliceTerm { kind: &k, bundle: &b2, grid: &grid, weight: 0.5 },
        ])
        .unwrap();
        assert!((two - 0.5 * (r1 + r2)).abs() < 1e-12);
        let terms: Vec<SliceTerm> = (0..20)
            .map(|_| SliceTerm { kind: &k, bundle: &b1, grid: &grid, weight: 0.05 })
            .collect();
        assert!((expected_rayleigh(&terms).unwrap() - r1).abs() < 1e-10);
        assert!(expected_rayleigh(&[SliceTerm { kind: &k, bundle: &b1, grid: &grid, weight: 0.9 }]).is_err());
    }

    fn objective_gradient_error(kind: &RayleighKind, ansatz: &LevelSetAnsatz, grid: &QuadratureGrid, beta: f64) -> f64 {
        use crate::ansatz::TrialFunction;
        crate::diagnostics::objective_gradient_error(kind, ansatz, &ansatz.init_params(4), grid, beta).unwrap()
    }

    #[test]
    fn cotangents_match_finite_differences() {
        use crate::nn::{Activation, MlpSpec};
        let sq = masked_square_grid(12, &LevelSet::Square).unwrap();
        let scalar = LevelSetAnsatz::new(MlpSpec::new(2, vec![5, 5], 1, Activation::Tanh).unwrap(), LevelSet::Square).unwrap();
        let vector = LevelSetAnsatz::new(MlpSpec::new(2, vec![5, 5], 2, Activation::Tanh).unwrap(), LevelSet::Square).unwrap();
        let field = ModulusField { e0: 1.0, e1: 5.0, q: 50.0, a: 0.4, mode: ModulusMode::MidpointCorrected };
        let cases: Vec<(RayleighKind, &LevelSetAnsatz, f64)> = vec![
            (RayleighKind::ScalarLaplace, &scalar, 0.0),
            (RayleighKind::ScalarLaplace, &scalar, 1.0),
            (RayleighKind::PLaplace { p: 5.0 }, &scalar, 0.0),
            (RayleighKind::PLaplace { p: 3.0 }, &scalar, 2.0),
            (RayleighKind::VectorLaplace { modulus: None }, &vector, 0.5),
            (RayleighKind::VectorLaplace { modulus: Some(field.clone()) }, &vector, 0.0),
            (RayleighKind::PlaneStress { modulus: field, nu: 0.25 }, &vector, 0.0),
        ];
        for (kind, a, beta) in cases {
            let e = objective_gradient_error(&kind, a, &sq, beta);
            assert!(e < 1e-6, "{kind:?} beta={beta}: {e}");
        }
        let iv = interval_grid(40).unwrap();
        let line = LevelSetAnsatz::new(MlpSpec::new(1, vec![20], 1, Activation::Tanh).unwrap(), LevelSet::Interval).unwrap();
        assert!(objective_gradient_error(&RayleighKind::ScalarLaplace, &line, &iv, 1.0) < 1e-6);
    }

    #[test]
    fn vector_numerator_is_sum_of_components() {
        use crate::nn::{Activation, MlpSpec};
        use crate::ansatz::TrialFunction;
        let grid = masked_square_grid(20, &LevelSet::Square).unwrap();
        let a = LevelSetAnsatz::new(MlpSpec::new(2, vec![6], 2, Activation::Tanh).unwrap(), LevelSet::Square).unwrap();
        let b = a.eval(&a.init_params(1), grid.points.view()).unwrap();
        let v = rayleigh(&RayleighKind::VectorLaplace { modulus: None }, &b, &grid).unwrap();
        let mut num = 0.0;
        let mut den = 0.0;
        for c in 0..2 {
            let comp = EvalBundle::detached(
                b.values.slice(ndarray::s![.., c..c + 1]).to_owned(),
                b.spatial_grads.slice(ndarray::s![.., c..c + 1, ..]).to_owned(),
            );
            let r = rayleigh(&RayleighKind::ScalarLaplace, &comp, &grid).unwrap();
            num += r.numerator;
            den += r.denominator;
        }
        assert!((v.numerator - num).abs() < 1e-12 * num);
        assert!((v.denominator - den).abs() < 1e-12 * den);
    }
}
