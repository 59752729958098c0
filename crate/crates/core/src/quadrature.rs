//! Integration grids for the supported domains.
//!
//! Deterministic rules are cell-centred (midpoint) lattices, so no point sits
//! on the boundary where a conforming ansatz vanishes identically.

use std::f64::consts::PI;
use std::io::Write;

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::ansatz::LevelSet;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GridKind {
    Deterministic,
    MonteCarlo,
}

#[derive(Clone, Debug)]
pub struct QuadratureGrid {
    /// `[n × d]`
    pub points: Array2<f64>,
    pub weights: Array1<f64>,
    pub kind: GridKind,
}

impl QuadratureGrid {
    pub fn new(points: Array2<f64>, weights: Array1<f64>, kind: GridKind) -> Result<Self> {
        if points.nrows() != weights.len() {
            return Err(Error::Shape(format!(
                "{} points but {} weights",
                points.nrows(),
                weights.len()
            )));
        }
        if points.nrows() == 0 {
            return Err(Error::EmptyGrid("no points".into()));
        }
        if weights.iter().any(|w| !(*w > 0.0)) {
            return Err(Error::InvalidArgument("quadrature weights must be positive".into()));
        }
        Ok(Self {
            points,
            weights,
            kind,
        })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    /// Total weight, the discrete measure of the domain.
    pub fn measure(&self) -> f64 {
        self.weights.sum()
    }

    pub fn integrate<F: Fn(&[f64]) -> f64>(&self, f: F) -> f64 {
        self.points
            .outer_iter()
            .zip(self.weights.iter())
            .map(|(x, w)| w * f(x.as_slice().expect("row-major points")))
            .sum()
    }

    /// Same grid with a constant parameter column appended to every point.
    pub fn with_parameter(&self, a: f64) -> Self {
        let (n, d) = self.points.dim();
        let mut points = Array2::zeros((n, d + 1));
        points.slice_mut(ndarray::s![.., ..d]).assign(&self.points);
        points.column_mut(d).fill(a);
        Self {
            points,
            weights: self.weights.clone(),
            kind: self.kind,
        }
    }

    /// One row per point: coordinates followed by the weight.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let header: Vec<String> = (0..self.dim())
            .map(|k| format!("x{}", k + 1))
            .chain(std::iter::once("weight".to_string()))
            .collect();
        writeln!(out, "{}", header.join(","))?;
        for (x, w) in self.points.outer_iter().zip(self.weights.iter()) {
            let row: Vec<String> = x.iter().chain(std::iter::once(w)).map(|v| format!("{v:.17e}")).collect();
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Midpoint rule on (0,1) with `n` cells.
pub fn interval_grid(n: usize) -> Result<QuadratureGrid> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("interval grid needs n >= 2, got {n}")));
    }
    let h = 1.0 / n as f64;
    let points = Array2::from_shape_fn((n, 1), |(i, _)| (i as f64 + 0.5) * h);
    QuadratureGrid::new(points, Array1::from_elem(n, h), GridKind::Deterministic)
}

/// Cell-centred lattice with `n_per_dim` cells along every axis of the level
/// set's bounding box, keeping cells whose centre lies strictly inside.
pub fn masked_square_grid(n_per_dim: usize, mask: &LevelSet) -> Result<QuadratureGrid> {
    let counts = vec![n_per_dim; mask.spatial_dim()];
    masked_box_grid(&counts, mask)
}

/// As [`masked_square_grid`] with a separate cell count per axis.
pub fn masked_box_grid(counts: &[usize], mask: &LevelSet) -> Result<QuadratureGrid> {
    let (lo, hi) = mask.bounding_box();
    let d = lo.len();
    if counts.len() != d {
        return Err(Error::Shape(format!("{} cell counts for a {d}-D box", counts.len())));
    }
    if counts.iter().any(|&c| c < 2) {
        return Err(Error::InvalidArgument("grids need at least 2 cells per axis".into()));
    }
    if mask.param_dim() > 0 {
        return Err(Error::InvalidArgument(
            "a parametric level set has no fixed mask; bind the parameter first".into(),
        ));
    }
    let h: Vec<f64> = (0..d).map(|k| (hi[k] - lo[k]) / counts[k] as f64).collect();
    let cell: f64 = h.iter().product();
    let total: usize = counts.iter().product();
    let mut pts = Vec::new();
    let mut x = vec![0.0; d];
    for flat in 0..total {
        // first axis varies slowest
        let mut rem = flat;
        for k in (0..d).rev() {
            let idx = rem % counts[k];
            rem /= counts[k];
            x[k] = lo[k] + (idx as f64 + 0.5) * h[k];
        }
        if mask.contains(&x) {
            pts.extend_from_slice(&x);
        }
    }
    let n = pts.len() / d;
    if n == 0 {
        return Err(Error::EmptyGrid("mask removed every lattice point".into()));
    }
    let points = Array2::from_shape_vec((n, d), pts).expect("shape");
    QuadratureGrid::new(points, Array1::from_elem(n, cell), GridKind::Deterministic)
}

/// Polar midpoint lattice on `r_i < r < 1` with weight `r·Δr·Δθ`.
pub fn annulus_polar_grid(r_i: f64, n_r: usize, n_t: usize) -> Result<QuadratureGrid> {
    if !(r_i > 0.0 && r_i < 1.0) {
        return Err(Error::InvalidArgument(format!("inner radius {r_i} not in (0,1)")));
    }
    if n_r == 0 || n_t == 0 {
        return Err(Error::InvalidArgument("polar grid needs n_r, n_t >= 1".into()));
    }
    let dr = (1.0 - r_i) / n_r as f64;
    let dt = 2.0 * PI / n_t as f64;
    let n = n_r * n_t;
    let mut points = Array2::zeros((n, 2));
    let mut weights = Array1::zeros(n);
    for ir in 0..n_r {
        let r = r_i + (ir as f64 + 0.5) * dr;
        for it in 0..n_t {
            let t = (it as f64 + 0.5) * dt;
            let k = ir * n_t + it;
            let (s, c) = crate::sin_cos(t);
            points[[k, 0]] = r * c;
            points[[k, 1]] = r * s;
            weights[k] = r * dr * dt;
        }
    }
    QuadratureGrid::new(points, weights, GridKind::Deterministic)
}

/// `b` i.i.d. uniform points in `[0,1]^d` with weights `1/b`.
pub fn hypercube_mc_batch<R: Rng + ?Sized>(d: usize, b: usize, rng: &mut R) -> Result<QuadratureGrid> {
    if d == 0 || b == 0 {
        return Err(Error::InvalidArgument("Monte Carlo batch needs d >= 1 and b >= 1".into()));
    }
    let points = Array2::from_shape_simple_fn((b, d), || rng.gen::<f64>());
    QuadratureGrid::new(points, Array1::from_elem(b, 1.0 / b as f64), GridKind::MonteCarlo)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "kebab-case")]
pub enum DomainSpec {
    Interval,
    UnitSquare,
    Semicircle,
    Annulus { inner: f64 },
    Hypercube { dim: usize },
}

impl DomainSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            DomainSpec::Annulus { inner } if !(*inner > 0.0 && *inner < 1.0) => Err(
                Error::InvalidArgument(format!("annulus requires 0 < r_i < 1, got {inner}")),
            ),
            DomainSpec::Hypercube { dim: 0 } => {
                Err(Error::InvalidArgument("hypercube dimension must be >= 1".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn level_set(&self) -> LevelSet {
        match self {
            DomainSpec::Interval => LevelSet::Interval,
            DomainSpec::UnitSquare => LevelSet::Square,
            DomainSpec::Semicircle => LevelSet::Semicircle,
            DomainSpec::Annulus { inner } => LevelSet::Annulus { inner: Some(*inner) },
            DomainSpec::Hypercube { dim } => LevelSet::HypercubeSkewed { dim: *dim },
        }
    }

    pub fn measure(&self) -> f64 {
        match self {
            DomainSpec::Interval | DomainSpec::UnitSquare | DomainSpec::Hypercube { .. } => 1.0,
            DomainSpec::Semicircle => PI / 2.0,
            DomainSpec::Annulus { inner } => PI * (1.0 - inner * inner),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn interval_weights_and_linear_exactness() {
        let g = interval_grid(250).unwrap();
        assert!((g.measure() - 1.0).abs() < 1e-12);
        assert!((g.integrate(|x| x[0]) - 0.5).abs() < 1e-5);
        let s = g.integrate(|x| (PI * x[0]).sin().powi(2));
        assert!((s - 0.5).abs() < 1e-4);
        assert!(interval_grid(1).is_err());
    }

    #[test]
    fn unit_square_75() {
        let g = masked_square_grid(75, &LevelSet::Square).unwrap();
        assert_eq!(g.len(), 5625);
        assert!((g.measure() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn semicircle_area_converges() {
        let errs: Vec<f64> = [50, 100, 200]
            .iter()
            .map(|&n| {
                let g = masked_square_grid(n, &LevelSet::Semicircle).unwrap();
                (g.measure() - PI / 2.0).abs() / (PI / 2.0)
            })
            .collect();
        assert!(errs[2] < 0.01, "{errs:?}");
        // cell-centre inclusion is erratic, so bound by an O(1/n) envelope
        for (e, n) in errs.iter().zip([50.0, 100.0, 200.0]) {
            assert!(*e < 0.5 / n, "{errs:?}");
        }
    }

    #[test]
    fn empty_mask_is_an_error() {
        // a 2×2 lattice puts every centre at r ≈ 0.71, inside the hole
        let ls = LevelSet::Annulus { inner: Some(0.99) };
        assert!(matches!(masked_square_grid(2, &ls), Err(Error::EmptyGrid(_))));
    }

    #[test]
    fn annulus_area() {
        for (a, n_r, n_t) in [(0.5, 39, 159), (0.25, 39, 159)] {
            let g = annulus_polar_grid(a, n_r, n_t).unwrap();
            assert_eq!(g.len(), 6201);
            let exact = PI * (1.0 - a * a);
            assert!((g.measure() - exact).abs() / exact < 5e-3);
        }
        assert!(annulus_polar_grid(1.0, 10, 10).is_err());
        assert!(annulus_polar_grid(0.0, 10, 10).is_err());
    }

    #[test]
    fn polar_measure_error_decreases() {
        // ∫ x₁² over the annulus; the area alone is integrated exactly at every level
        let mut prev = f64::INFINITY;
        for k in [8usize, 16, 32] {
            let g = annulus_polar_grid(0.5, k, 4 * k).unwrap();
            let err = (g.integrate(|x| x[0] * x[0]) - PI / 4.0 * (1.0 - 0.0625)).abs();
            assert!(err <= prev);
            prev = err;
        }
    }

    #[test]
    fn mc_batch_product_integral() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = hypercube_mc_batch(3, 100_000, &mut rng).unwrap();
        assert!((g.measure() - 1.0).abs() < 1e-9);
        let f = |x: &[f64]| x.iter().map(|v| (PI * v).sin().powi(2)).product::<f64>();
        let mean = g.integrate(f);
        let var = g.integrate(|x| f(x).powi(2)) - mean * mean;
        let se = (var / 100_000.0).sqrt();
        assert!((mean - 0.125).abs() < 3.0 * se, "mean {mean} se {se}");

        let g2 = hypercube_mc_batch(3, 10, &mut rng).unwrap();
        let g3 = hypercube_mc_batch(3, 10, &mut rng).unwrap();
        assert_ne!(g2.points, g3.points);
    }

    #[test]
    fn mc_batches_reproducible() {
        let mut a = ChaCha8Rng::seed_from_u64(11);
        let mut b = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..3 {
            assert_eq!(
                hypercube_mc_batch(4, 32, &mut a).unwrap().points,
                hypercube_mc_batch(4, 32, &mut b).unwrap().points
            );
        }
    }

    #[test]
    fn csv_export() {
        let g = interval_grid(4).unwrap();
        let mut buf = Vec::new();
        g.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("x1,weight\n"));
        assert_eq!(text.lines().count(), 5);
    }
}
