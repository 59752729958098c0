//! Gram–Schmidt deflation of a candidate against previously converged
//! eigenfunctions.
//!
//! The projection acts on values and spatial gradients with the same scalar
//! coefficients, using the weighted L² inner product of the values. For a
//! fixed basis it is a linear map of the candidate, so its pullback is the
//! adjoint of that map.

use std::io::Write;
use std::path::Path;

use ndarray::{Array2, Array3, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::ansatz::LevelSetAnsatz;
use crate::error::{Error, Result};
use crate::nn::{EvalBundle, ParamVector};
use crate::objectives::Cotangent;
use crate::quadrature::QuadratureGrid;

const MIN_NORM_SQ: f64 = 1e-200;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GsVariant {
    /// All coefficients taken against the original candidate.
    #[default]
    Classical,
    /// Coefficients taken against the running residual.
    Modified,
}

/// Values and spatial gradients of one function on a fixed point set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSamples {
    pub values: Array2<f64>,
    pub grads: Array3<f64>,
}

impl GridSamples {
    pub fn from_bundle(b: &EvalBundle) -> Self {
        Self {
            values: b.values.clone(),
            grads: b.spatial_grads.clone(),
        }
    }

    pub fn to_bundle(&self) -> EvalBundle {
        EvalBundle::detached(self.values.clone(), self.grads.clone())
    }

    pub fn n_points(&self) -> usize {
        self.values.nrows()
    }

    pub fn norm_sq(&self, weights: ArrayView1<f64>) -> f64 {
        weighted_inner(self.values.view(), self.values.view(), weights)
    }

    /// Scales to unit weighted norm and returns the norm before scaling.
    pub fn normalize(&mut self, weights: ArrayView1<f64>) -> Result<f64> {
        let n2 = self.norm_sq(weights);
        if !(n2 > MIN_NORM_SQ) {
            return Err(Error::ZeroNormBasis(0));
        }
        let s = 1.0 / n2.sqrt();
        self.values *= s;
        self.grads *= s;
        Ok(n2.sqrt())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "storage", rename_all = "kebab-case")]
pub enum Representation {
    Grid(GridSamples),
    /// Trained ansatz, re-evaluated wherever it is needed.
    Snapshot { ansatz: LevelSetAnsatz, params: ParamVector },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BasisEntry {
    pub eigenvalue: f64,
    pub repr: Representation,
    /// Parameter slice this entry belongs to, for parametric problems.
    #[serde(default)]
    pub slice: Option<usize>,
}

impl BasisEntry {
    /// Samples on `points`, evaluating the snapshot if necessary.
    pub fn samples_at(&self, points: ArrayView2<f64>) -> Result<GridSamples> {
        match &self.repr {
            Representation::Grid(s) => {
                if s.n_points() != points.nrows() {
                    return Err(Error::Shape(format!(
                        "basis entry sampled on {} points, asked for {}",
                        s.n_points(),
                        points.nrows()
                    )));
                }
                Ok(s.clone())
            }
            Representation::Snapshot { ansatz, params } => {
                Ok(GridSamples::from_bundle(&ansatz.constrained_eval(params, points)?))
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EigenBasis {
    pub entries: Vec<BasisEntry>,
}

impl EigenBasis {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn push(&mut self, entry: BasisEntry) {
        self.entries.push(entry);
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.eigenvalue).collect()
    }

    /// Indices `i` where `λ_{i+1} < λ_i`.
    pub fn ordering_violations(&self) -> Vec<usize> {
        self.entries
            .windows(2)
            .enumerate()
            .filter(|(_, w)| w[1].eigenvalue < w[0].eigenvalue)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(f, self)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        Ok(serde_json::from_reader(f)?)
    }

    /// One row per grid point: coordinates, weight, then every component
    /// of every entry (`u{j}_{c}`, 1-based entry index).
    pub fn write_samples_csv(&self, grid: &QuadratureGrid, path: &Path) -> Result<()> {
        let samples: Vec<GridSamples> = self
            .entries
            .iter()
            .map(|e| e.samples_at(grid.points.view()))
            .collect::<Result<_>>()?;
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        let mut header: Vec<String> = (1..=grid.dim()).map(|k| format!("x{k}")).collect();
        header.push("weight".into());
        for (j, s) in samples.iter().enumerate() {
            for c in 0..s.values.ncols() {
                header.push(format!("u{}_{}", j + 1, c + 1));
            }
        }
        writeln!(f, "{}", header.join(","))?;
        for i in 0..grid.len() {
            let mut row: Vec<String> = grid.points.row(i).iter().map(|v| format!("{v:.17e}")).collect();
            row.push(format!("{:.17e}", grid.weights[i]));
            for s in &samples {
                row.extend(s.values.row(i).iter().map(|v| format!("{v:.17e}")));
            }
            writeln!(f, "{}", row.join(","))?;
        }
        Ok(())
    }

    pub fn write_eigenvalues_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "index,slice,eigenvalue")?;
        for (i, e) in self.entries.iter().enumerate() {
            let slice = e.slice.map(|s| s.to_string()).unwrap_or_default();
            writeln!(f, "{},{},{:.17e}", i + 1, slice, e.eigenvalue)?;
        }
        Ok(())
    }
}

pub(crate) fn weighted_inner(a: ArrayView2<f64>, b: ArrayView2<f64>, w: ArrayView1<f64>) -> f64 {
    a.outer_iter()
        .zip(b.outer_iter())
        .zip(w.iter())
        .map(|((x, y), wi)| wi * x.iter().zip(y.iter()).map(|(p, q)| p * q).sum::<f64>())
        .sum()
}

struct Direction {
    values: Vec<f64>,
    grads: Vec<f64>,
    norm_sq: f64,
}

/// A Gram–Schmidt projector for one fixed point set and basis.
pub struct Deflator {
    variant: GsVariant,
    weights: Vec<f64>,
    n: usize,
    m: usize,
    g: usize,
    dirs: Vec<Direction>,
}

impl Deflator {
    /// `samples` in basis order. With `orthonormalize_basis` the samples are
    /// first orthonormalized among themselves on these points, which makes
    /// the projection exactly orthogonal to their span even when they are
    /// not mutually orthogonal here (as with snapshots on a fresh batch).
    pub fn new(
        variant: GsVariant,
        weights: ArrayView1<f64>,
        samples: Vec<GridSamples>,
        orthonormalize_basis: bool,
    ) -> Result<Self> {
        let n = weights.len();
        let (m, g) = match samples.first() {
            Some(s) => (s.values.ncols(), s.grads.dim().2),
            None => (0, 0),
        };
        let mut dirs = Vec::with_capacity(samples.len());
        for (j, s) in samples.into_iter().enumerate() {
            if s.values.dim() != (n, m) || s.grads.dim() != (n, m, g) {
                return Err(Error::Shape(format!("basis entry {j} has mismatched sample shape")));
            }
            let norm_sq = s.norm_sq(weights);
            if !(norm_sq > MIN_NORM_SQ) {
                return Err(Error::ZeroNormBasis(j));
            }
            dirs.push(Direction {
                values: s.values.as_standard_layout().iter().copied().collect(),
                grads: s.grads.as_standard_layout().iter().copied().collect(),
                norm_sq,
            });
        }
        let mut d = Self {
            variant,
            weights: weights.to_vec(),
            n,
            m,
            g,
            dirs,
        };
        if orthonormalize_basis {
            d.orthonormalize()?;
        }
        Ok(d)
    }

    /// Grid-mode projector: stored samples must live on `grid`.
    pub fn for_grid(basis: &[&BasisEntry], grid: &QuadratureGrid, variant: GsVariant) -> Result<Self> {
        let samples = basis
            .iter()
            .map(|e| e.samples_at(grid.points.view()))
            .collect::<Result<Vec<_>>>()?;
        Self::new(variant, grid.weights.view(), samples, false)
    }

    /// Monte Carlo projector: every entry is re-evaluated on `batch` and
    /// inner products become batch-weighted sums.
    pub fn for_batch(basis: &[&BasisEntry], batch: &QuadratureGrid, variant: GsVariant) -> Result<Self> {
        let samples = basis
            .iter()
            .map(|e| e.samples_at(batch.points.view()))
            .collect::<Result<Vec<_>>>()?;
        Self::new(variant, batch.weights.view(), samples, true)
    }

    pub fn len(&self) -> usize {
        self.dirs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dirs.is_empty()
    }

    fn inner(&self, values: &[f64], dir: &Direction) -> f64 {
        let m = self.m;
        let mut acc = 0.0;
        for i in 0..self.n {
            let mut s = 0.0;
            for o in 0..m {
                s += values[i * m + o] * dir.values[i * m + o];
            }
            acc += self.weights[i] * s;
        }
        acc
    }

    /// `Σ cv·û + Σ cg·∇û` without weights: the cotangent pairing.
    fn pairing(&self, cv: &[f64], cg: &[f64], dir: &Direction) -> f64 {
        crate::nn::dot(cv, &dir.values) + crate::nn::dot(cg, &dir.grads)
    }

    fn orthonormalize(&mut self) -> Result<()> {
        for j in 0..self.dirs.len() {
            let (done, rest) = self.dirs.split_at_mut(j);
            let cur = &mut rest[0];
            for prev in done.iter() {
                let mut c = 0.0;
                for i in 0..self.n {
                    let mut s = 0.0;
                    for o in 0..self.m {
                        s += cur.values[i * self.m + o] * prev.values[i * self.m + o];
                    }
                    c += self.weights[i] * s;
                }
                axpy(&mut cur.values, -c, &prev.values);
                axpy(&mut cur.grads, -c, &prev.grads);
            }
            let mut n2 = 0.0;
            for i in 0..self.n {
                let mut s = 0.0;
                for o in 0..self.m {
                    s += cur.values[i * self.m + o].powi(2);
                }
                n2 += self.weights[i] * s;
            }
            if !(n2 > MIN_NORM_SQ) {
                return Err(Error::ZeroNormBasis(j));
            }
            let s = 1.0 / n2.sqrt();
            cur.values.iter_mut().for_each(|v| *v *= s);
            cur.grads.iter_mut().for_each(|v| *v *= s);
            cur.norm_sq = 1.0;
        }
        Ok(())
    }

    fn check(&self, values: &Array2<f64>, grads: &Array3<f64>) -> Result<()> {
        if self.dirs.is_empty() {
            return Ok(());
        }
        if values.dim() != (self.n, self.m) || grads.dim() != (self.n, self.m, self.g) {
            return Err(Error::Shape(format!(
                "candidate shape {:?}/{:?} does not match basis ({}, {}, {})",
                values.dim(),
                grads.dim(),
                self.n,
                self.m,
                self.g
            )));
        }
        Ok(())
    }

    /// Deflated copy of the candidate (detached from its tape).
    pub fn project(&self, candidate: &EvalBundle) -> Result<EvalBundle> {
        self.check(&candidate.values, &candidate.spatial_grads)?;
        let mut v: Vec<f64> = candidate.values.as_standard_layout().iter().copied().collect();
        let mut gr: Vec<f64> = candidate.spatial_grads.as_standard_layout().iter().copied().collect();
        match self.variant {
            GsVariant::Classical => {
                let coeffs: Vec<f64> = self.dirs.iter().map(|d| self.inner(&v, d) / d.norm_sq).collect();
                for (d, c) in self.dirs.iter().zip(coeffs) {
                    axpy(&mut v, -c, &d.values);
                    axpy(&mut gr, -c, &d.grads);
                }
            }
            GsVariant::Modified => {
                for d in &self.dirs {
                    let c = self.inner(&v, d) / d.norm_sq;
                    axpy(&mut v, -c, &d.values);
                    axpy(&mut gr, -c, &d.grads);
                }
            }
        }
        let (n, m, g) = candidate.spatial_grads.dim();
        Ok(EvalBundle::detached(
            Array2::from_shape_vec((n, m), v).expect("shape"),
            Array3::from_shape_vec((n, m, g), gr).expect("shape"),
        ))
    }

    /// Maps a cotangent on the projected function back to one on the
    /// candidate. Gradient cotangents pass through; value cotangents pick up
    /// the coefficient sensitivities.
    pub fn pullback(&self, cot: &Cotangent) -> Result<Cotangent> {
        self.check(&cot.values, &cot.grads)?;
        if self.dirs.is_empty() {
            return Ok(cot.clone());
        }
        let mut cv: Vec<f64> = cot.values.as_standard_layout().iter().copied().collect();
        let cg: Vec<f64> = cot.grads.as_standard_layout().iter().copied().collect();
        let m = self.m;
        let scatter = |cv: &mut [f64], k: f64, d: &Direction| {
            for i in 0..self.n {
                let wk = k * self.weights[i];
                for o in 0..m {
                    cv[i * m + o] -= wk * d.values[i * m + o];
                }
            }
        };
        match self.variant {
            GsVariant::Classical => {
                let ks: Vec<f64> = self.dirs.iter().map(|d| self.pairing(&cv, &cg, d) / d.norm_sq).collect();
                for (d, k) in self.dirs.iter().zip(ks) {
                    scatter(&mut cv, k, d);
                }
            }
            GsVariant::Modified => {
                for d in self.dirs.iter().rev() {
                    let k = self.pairing(&cv, &cg, d) / d.norm_sq;
                    scatter(&mut cv, k, d);
                }
            }
        }
        Ok(Cotangent {
            values: Array2::from_shape_vec(cot.values.dim(), cv).expect("shape"),
            grads: cot.grads.clone(),
        })
    }
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Classical Gram–Schmidt of `candidate` against a grid-mode basis.
pub fn project_out(candidate: &EvalBundle, basis: &EigenBasis, grid: &QuadratureGrid) -> Result<EvalBundle> {
    let entries: Vec<&BasisEntry> = basis.entries.iter().collect();
    Deflator::for_grid(&entries, grid, GsVariant::Classical)?.project(candidate)
}

/// Projection with inner products replaced by means over `batch`.
pub fn project_out_mc(candidate: &EvalBundle, basis: &EigenBasis, batch: &QuadratureGrid) -> Result<EvalBundle> {
    let entries: Vec<&BasisEntry> = basis.entries.iter().collect();
    Deflator::for_batch(&entries, batch, GsVariant::Classical)?.project(candidate)
}

/// Normalized weighted inner products between all basis entries.
pub fn orthogonality_report(basis: &EigenBasis, grid: &QuadratureGrid) -> Result<Array2<f64>> {
    let samples = basis
        .entries
        .iter()
        .map(|e| e.samples_at(grid.points.view()))
        .collect::<Result<Vec<_>>>()?;
    let k = samples.len();
    let w = grid.weights.view();
    let norms: Vec<f64> = samples.iter().map(|s| s.norm_sq(w).sqrt()).collect();
    let mut out = Array2::zeros((k, k));
    for a in 0..k {
        for b in a..k {
            let v = weighted_inner(samples[a].values.view(), samples[b].values.view(), w) / (norms[a] * norms[b]);
            out[[a, b]] = v;
            out[[b, a]] = v;
        }
    }
    Ok(out)
}

/// Largest off-diagonal magnitude of an orthogonality report.
pub fn max_off_diagonal(report: &Array2<f64>) -> f64 {
    let mut worst: f64 = 0.0;
    for ((a, b), v) in report.indexed_iter() {
        if a != b {
            worst = worst.max(v.abs());
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::interval_grid;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn sine(grid: &QuadratureGrid, k: usize, amp: f64) -> GridSamples {
        let n = grid.len();
        let kk = k as f64 * PI;
        GridSamples {
            values: Array2::from_shape_fn((n, 1), |(i, _)| amp * (kk * grid.points[[i, 0]]).sin()),
            grads: Array3::from_shape_fn((n, 1, 1), |(i, _, _)| amp * kk * (kk * grid.points[[i, 0]]).cos()),
        }
    }

    fn grid_entry(s: GridSamples, lambda: f64) -> BasisEntry {
        BasisEntry { eigenvalue: lambda, repr: Representation::Grid(s), slice: None }
    }

    fn sine_basis(grid: &QuadratureGrid, k: usize) -> EigenBasis {
        EigenBasis {
            entries: (1..=k).map(|i| grid_entry(sine(grid, i, 2f64.sqrt()), (i * i) as f64 * PI * PI)).collect(),
        }
    }

    #[test]
    fn empty_basis_is_identity() {
        let grid = interval_grid(50).unwrap();
        let c = sine(&grid, 3, 1.0).to_bundle();
        let p = project_out(&c, &EigenBasis::new(), &grid).unwrap();
        assert_eq!(p.values, c.values);
        assert_eq!(p.spatial_grads, c.spatial_grads);
    }

    #[test]
    fn self_projection_vanishes() {
        let grid = interval_grid(250).unwrap();
        let basis = sine_basis(&grid, 1);
        let c = sine(&grid, 1, 2f64.sqrt()).to_bundle();
        let p = project_out(&c, &basis, &grid).unwrap();
        assert!(p.values.iter().all(|v| v.abs() <= 1e-10));
        assert!(p.spatial_grads.iter().all(|v| v.abs() <= 1e-9));
    }

    #[test]
    fn orthogonal_mode_unchanged() {
        let grid = interval_grid(250).unwrap();
        let basis = sine_basis(&grid, 1);
        let c = sine(&grid, 2, 1.0).to_bundle();
        let p = project_out(&c, &basis, &grid).unwrap();
        for (a, b) in p.values.iter().zip(c.values.iter()) {
            assert!((a - b).abs() <= 1e-6);
        }
    }

    #[test]
    fn analytic_basis_report() {
        let grid = interval_grid(250).unwrap();
        let r = orthogonality_report(&sine_basis(&grid, 5), &grid).unwrap();
        assert!(max_off_diagonal(&r) <= 1e-6);
        for i in 0..5 {
            assert!((r[[i, i]] - 1.0).abs() < 1e-12);
        }
        let single = orthogonality_report(&sine_basis(&grid, 1), &grid).unwrap();
        assert_eq!(single.dim(), (1, 1));
        assert!((single[[0, 0]] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_norm_entry_rejected() {
        let grid = interval_grid(20).unwrap();
        let mut basis = sine_basis(&grid, 1);
        basis.push(grid_entry(sine(&grid, 2, 0.0), 1.0));
        let c = sine(&grid, 3, 1.0).to_bundle();
        assert!(matches!(project_out(&c, &basis, &grid), Err(Error::ZeroNormBasis(1))));
    }

    #[test]
    fn ordering_check() {
        let grid = interval_grid(20).unwrap();
        let mut b = sine_basis(&grid, 3);
        assert!(b.ordering_violations().is_empty());
        b.entries[2].eigenvalue = 1.0;
        assert_eq!(b.ordering_violations(), vec![1]);
    }

    #[test]
    fn json_round_trip_and_csv() {
        let grid = interval_grid(10).unwrap();
        let b = sine_basis(&grid, 2);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("basis.json");
        b.save_json(&p).unwrap();
        assert_eq!(EigenBasis::load_json(&p).unwrap(), b);
        let c = dir.path().join("basis.csv");
        b.write_samples_csv(&grid, &c).unwrap();
        let text = std::fs::read_to_string(&c).unwrap();
        assert!(text.starts_with("x1,weight,u1_1,u2_1\n"));
        assert_eq!(text.lines().count(), 11);
        b.write_eigenvalues_csv(&dir.path().join("ev.csv")).unwrap();
    }

    /// Random functions on a small 1D grid, one output, one gradient dim.
    fn random_samples(n: usize) -> impl Strategy<Value = GridSamples> {
        (prop::collection::vec(-1.0f64..1.0, n), prop::collection::vec(-1.0f64..1.0, n)).prop_map(move |(v, g)| {
            GridSamples {
                values: Array2::from_shape_vec((n, 1), v).unwrap(),
                grads: Array3::from_shape_vec((n, 1, 1), g).unwrap(),
            }
        })
    }

    /// Builds a mutually orthogonal basis the way the solver does: each
    /// stored entry is the deflated version of a raw candidate.
    fn orthogonal_basis(raw: Vec<GridSamples>, grid: &QuadratureGrid) -> EigenBasis {
        let mut b = EigenBasis::new();
        for (j, s) in raw.into_iter().enumerate() {
            let mut p = GridSamples::from_bundle(&project_out(&s.to_bundle(), &b, grid).unwrap());
            p.normalize(grid.weights.view()).unwrap();
            b.push(grid_entry(p, j as f64));
        }
        b
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn projected_candidate_is_orthogonal(
            raw in prop::collection::vec(random_samples(16), 1..5),
            cand in random_samples(16),
            modified in any::<bool>(),
        ) {
            let grid = interval_grid(16).unwrap();
            let basis = orthogonal_basis(raw, &grid);
            let refs: Vec<&BasisEntry> = basis.entries.iter().collect();
            let variant = if modified { GsVariant::Modified } else { GsVariant::Classical };
            let defl = Deflator::for_grid(&refs, &grid, variant).unwrap();
            let c = cand.to_bundle();
            let p = defl.project(&c).unwrap();
            let w = grid.weights.view();
            let cn = GridSamples::from_bundle(&c).norm_sq(w).sqrt();
            for e in &basis.entries {
                let Representation::Grid(s) = &e.repr else { unreachable!() };
                let r = weighted_inner(p.values.view(), s.values.view(), w) / (cn * s.norm_sq(w).sqrt());
                prop_assert!(r.abs() <= 1e-10, "residual {r}");
            }
        }

        #[test]
        fn projection_is_linear(
            raw in prop::collection::vec(random_samples(12), 1..4),
            cand in random_samples(12),
            alpha in -5.0f64..5.0,
        ) {
            let grid = interval_grid(12).unwrap();
            let basis = orthogonal_basis(raw, &grid);
            let c = cand.to_bundle();
            let scaled = EvalBundle::detached(&c.values * alpha, &c.spatial_grads * alpha);
            let p1 = project_out(&c, &basis, &grid).unwrap();
            let p2 = project_out(&scaled, &basis, &grid).unwrap();
            for (a, b) in p1.values.iter().zip(p2.values.iter()) {
                prop_assert!((alpha * a - b).abs() <= 1e-12 * (1.0 + b.abs()));
            }
        }

        #[test]
        fn pullback_is_adjoint(
            raw in prop::collection::vec(random_samples(10), 1..4),
            x in random_samples(10),
            y in random_samples(10),
            modified in any::<bool>(),
            mc in any::<bool>(),
        ) {
            // ⟨P x, y⟩ = ⟨x, Pᵀ y⟩ in the plain (unweighted) pairing,
            // including for a non-orthogonal basis
            let grid = interval_grid(10).unwrap();
            let variant = if modified { GsVariant::Modified } else { GsVariant::Classical };
            let defl = Deflator::new(variant, grid.weights.view(), raw, mc).unwrap();
            let px = defl.project(&x.to_bundle()).unwrap();
            let pty = defl.pullback(&Cotangent { values: y.values.clone(), grads: y.grads.clone() }).unwrap();
            let lhs = (&px.values * &y.values).sum() + (&px.spatial_grads * &y.grads).sum();
            let rhs = (&x.values * &pty.values).sum() + (&x.grads * &pty.grads).sum();
            prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs()));
        }

        #[test]
        fn batch_projection_exactly_orthogonal(
            raw in prop::collection::vec(random_samples(20), 1..5),
            cand in random_samples(20),
        ) {
            // the batch basis need not be orthogonal on these points
            let grid = interval_grid(20).unwrap();
            let w = grid.weights.view();
            let defl = Deflator::new(GsVariant::Classical, w, raw.clone(), true).unwrap();
            let p = defl.project(&cand.to_bundle()).unwrap();
            let cn = cand.norm_sq(w).sqrt();
            for s in &raw {
                let r = weighted_inner(p.values.view(), s.values.view(), w) / (cn * s.norm_sq(w).sqrt());
                prop_assert!(r.abs() <= 1e-10, "residual {r}");
            }
        }
    }
}
