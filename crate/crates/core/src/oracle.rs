//! Reference spectra: closed forms where they exist, finite differences on
//! masked lattices otherwise, and separable radial problems for the
//! half-disk and annulus.
//!
//! Lattice problems are solved with shift-free inverse subspace iteration on
//! a banded Cholesky factor; the projected problems use cyclic Jacobi.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ansatz::LevelSet;
use crate::error::{Error, Result};
use crate::objectives::{modulus, plane_stress_matrix, ModulusField};
use crate::quadrature::DomainSpec;

/// Default cap on lattice unknowns.
pub const DEFAULT_UNKNOWN_BUDGET: usize = 250_000;

// ---------------------------------------------------------------------------
// Dense symmetric eigensolver

/// All eigenpairs of a symmetric matrix by cyclic Jacobi rotations.
/// Eigenvalues ascending; eigenvectors are the matching columns.
pub fn jacobi_eigen(a: &Array2<f64>) -> Result<(Vec<f64>, Array2<f64>)> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::Shape("Jacobi needs a square matrix".into()));
    }
    let mut m = a.clone();
    let mut v = Array2::<f64>::eye(n);
    let scale: f64 = m.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    let mut converged = n < 2;
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|p| (p + 1..n).map(move |q| (p, q)))
            .map(|(p, q)| m[[p, q]] * m[[p, q]])
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * scale {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[[p, q]];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let theta = (m[[q, q]] - m[[p, p]]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[[k, p]];
                    let mkq = m[[k, q]];
                    m[[k, p]] = c * mkp - s * mkq;
                    m[[k, q]] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[[p, k]];
                    let mqk = m[[q, k]];
                    m[[p, k]] = c * mpk - s * mqk;
                    m[[q, k]] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[[k, p]];
                    let vkq = v[[k, q]];
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
    }
    if !converged {
        return Err(Error::NoConvergence(100));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[[i, i]].total_cmp(&m[[j, j]]));
    let vals = order.iter().map(|&i| m[[i, i]]).collect();
    let vecs = Array2::from_shape_fn((n, n), |(r, c)| v[[r, order[c]]]);
    Ok((vals, vecs))
}

// ---------------------------------------------------------------------------
// Sparse symmetric matrices and banded Cholesky

/// Symmetric sparse matrix stored as full adjacency rows.
#[derive(Clone, Debug)]
pub struct SymSparse {
    rows: Vec<Vec<(usize, f64)>>,
}

impl SymSparse {
    pub fn new(n: usize) -> Self {
        Self { rows: vec![Vec::new(); n] }
    }

    pub fn dim(&self) -> usize {
        self.rows.len()
    }

    /// Adds `v` at `(i, j)` and, off the diagonal, at `(j, i)`.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        Self::add_one(&mut self.rows[i], j, v);
        if i != j {
            Self::add_one(&mut self.rows[j], i, v);
        }
    }

    fn add_one(row: &mut Vec<(usize, f64)>, j: usize, v: f64) {
        match row.iter_mut().find(|(c, _)| *c == j) {
            Some(e) => e.1 += v,
            None => row.push((j, v)),
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.rows[i].iter().find(|(c, _)| *c == j).map_or(0.0, |e| e.1)
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for (yi, row) in y.iter_mut().zip(&self.rows) {
            *yi = row.iter().map(|&(j, v)| v * x[j]).sum();
        }
    }

    pub fn bandwidth(&self) -> usize {
        self.rows
            .iter()
            .enumerate()
            .flat_map(|(i, r)| r.iter().map(move |&(j, _)| i.abs_diff(j)))
            .max()
            .unwrap_or(0)
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.rows
            .iter()
            .enumerate()
            .all(|(i, r)| r.iter().all(|&(j, v)| (self.get(j, i) - v).abs() <= tol))
    }

    /// `D A D` for a diagonal `D`.
    pub fn scale_symmetric(&mut self, d: &[f64]) {
        for (i, row) in self.rows.iter_mut().enumerate() {
            for (j, v) in row.iter_mut() {
                *v *= d[i] * d[*j];
            }
        }
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let n = self.dim();
        let mut a = Array2::zeros((n, n));
        for (i, r) in self.rows.iter().enumerate() {
            for &(j, v) in r {
                a[[i, j]] = v;
            }
        }
        a
    }
}

/// Lower-triangular banded Cholesky factor.
pub struct BandCholesky {
    n: usize,
    bw: usize,
    /// Row `i` holds `L[i][i-bw..=i]`.
    data: Vec<f64>,
}

impl BandCholesky {
    pub fn factor(a: &SymSparse) -> Result<Self> {
        let n = a.dim();
        let bw = a.bandwidth();
        let w = bw + 1;
        let mut data = vec![0.0; n * w];
        for (i, row) in a.rows.iter().enumerate() {
            for &(j, v) in row {
                if j <= i {
                    data[i * w + (j + bw - i)] = v;
                }
            }
        }
        for i in 0..n {
            let j0 = i.saturating_sub(bw);
            for j in j0..=i {
                // L[i][j] = (A[i][j] - Σ_k L[i][k] L[j][k]) / L[j][j]
                let k0 = j0.max(j.saturating_sub(bw));
                let mut s = data[i * w + (j + bw - i)];
                for k in k0..j {
                    s -= data[i * w + (k + bw - i)] * data[j * w + (k + bw - j)];
                }
                if j == i {
                    if !(s > 0.0) {
                        return Err(Error::Singular(i));
                    }
                    data[i * w + bw] = s.sqrt();
                } else {
                    data[i * w + (j + bw - i)] = s / data[j * w + bw];
                }
            }
        }
        Ok(Self { n, bw, data })
    }

    /// Solves `L Lᵀ x = b` in place.
    pub fn solve(&self, b: &mut [f64]) {
        let (n, bw, w) = (self.n, self.bw, self.bw + 1);
        for i in 0..n {
            let mut s = b[i];
            for k in i.saturating_sub(bw)..i {
                s -= self.data[i * w + (k + bw - i)] * b[k];
            }
            b[i] = s / self.data[i * w + bw];
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for k in i + 1..n.min(i + bw + 1) {
                s -= self.data[k * w + (i + bw - k)] * b[k];
            }
            b[i] = s / self.data[i * w + bw];
        }
    }
}

fn orthonormalize_columns(x: &mut [Vec<f64>]) {
    for j in 0..x.len() {
        let (done, rest) = x.split_at_mut(j);
        let cur = &mut rest[0];
        for _ in 0..2 {
            for prev in done.iter() {
                let c: f64 = cur.iter().zip(prev).map(|(a, b)| a * b).sum();
                for (a, b) in cur.iter_mut().zip(prev) {
                    *a -= c * b;
                }
            }
        }
        let n: f64 = cur.iter().map(|a| a * a).sum::<f64>().sqrt();
        for a in cur.iter_mut() {
            *a /= n;
        }
    }
}

/// The `k` smallest eigenpairs of a symmetric positive-definite sparse
/// matrix by inverse subspace iteration with Rayleigh–Ritz.
pub fn smallest_eigenpairs(a: &SymSparse, k: usize, seed: u64) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let n = a.dim();
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!("asked for {k} eigenpairs of a {n}×{n} matrix")));
    }
    if n <= 400 {
        let (vals, vecs) = jacobi_eigen(&a.to_dense())?;
        let cols = (0..k).map(|c| vecs.column(c).to_vec()).collect();
        return Ok((vals[..k].to_vec(), cols));
    }
    let p = (2 * k + 8).min(n);
    let chol = BandCholesky::factor(a)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x: Vec<Vec<f64>> = (0..p).map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    orthonormalize_columns(&mut x);
    let mut prev = vec![f64::INFINITY; k];
    let mut ax = vec![0.0; n];
    for it in 0..2000 {
        for col in x.iter_mut() {
            chol.solve(col);
        }
        orthonormalize_columns(&mut x);
        let mut h = Array2::zeros((p, p));
        let axs: Vec<Vec<f64>> = x
            .iter()
            .map(|c| {
                a.matvec(c, &mut ax);
                ax.clone()
            })
            .collect();
        for r in 0..p {
            for c in r..p {
                let v: f64 = x[r].iter().zip(&axs[c]).map(|(a, b)| a * b).sum();
                h[[r, c]] = v;
                h[[c, r]] = v;
            }
        }
        let (vals, vecs) = jacobi_eigen(&h)?;
        let mut rotated = vec![vec![0.0; n]; p];
        for (c, out) in rotated.iter_mut().enumerate() {
            for r in 0..p {
                let coef = vecs[[r, c]];
                for (o, xi) in out.iter_mut().zip(&x[r]) {
                    *o += coef * xi;
                }
            }
        }
        x = rotated;
        let done = vals[..k].iter().zip(&prev).all(|(v, p)| (v - p).abs() <= 1e-13 * v.abs());
        prev = vals[..k].to_vec();
        if done && it > 2 {
            return Ok((prev, x.into_iter().take(k).collect()));
        }
    }
    Err(Error::NoConvergence(2000))
}

// ---------------------------------------------------------------------------
// Lattice operators

/// A discrete generalized eigenproblem `K u = λ M u` with diagonal `M`.
pub struct FdOperator {
    /// Node coordinates, one row per lattice node (not per unknown).
    pub nodes: Array2<f64>,
    /// Unknowns per node.
    pub components: usize,
    pub stiffness: SymSparse,
    pub mass: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct FdSpectrum {
    pub eigenvalues: Vec<f64>,
    /// Eigenvectors, `[node × component]` flattened, unit `M`-norm.
    pub vectors: Vec<Vec<f64>>,
    pub nodes: Array2<f64>,
    pub components: usize,
}

impl FdOperator {
    pub fn unknowns(&self) -> usize {
        self.mass.len()
    }

    pub fn eigs(&self, k: usize) -> Result<FdSpectrum> {
        let d: Vec<f64> = self.mass.iter().map(|m| 1.0 / m.sqrt()).collect();
        let mut a = self.stiffness.clone();
        a.scale_symmetric(&d);
        let (vals, vecs) = smallest_eigenpairs(&a, k, 17)?;
        let vectors = vecs
            .into_iter()
            .map(|y| y.iter().zip(&d).map(|(v, s)| v * s).collect())
            .collect();
        Ok(FdSpectrum {
            eigenvalues: vals,
            vectors,
            nodes: self.nodes.clone(),
            components: self.components,
        })
    }
}

/// Interior lattice nodes of a 2D level set at spacing `h`, ordered so that
/// the shorter lattice direction runs fastest.
fn lattice_2d(ls: &LevelSet, h: f64) -> (Vec<[f64; 2]>, std::collections::HashMap<(i64, i64), usize>) {
    let (lo, hi) = ls.bounding_box();
    let nx = ((hi[0] - lo[0]) / h).round() as i64;
    let ny = ((hi[1] - lo[1]) / h).round() as i64;
    let mut nodes = Vec::new();
    let mut index = std::collections::HashMap::new();
    let mut visit = |i: i64, j: i64| {
        let p = [lo[0] + i as f64 * h, lo[1] + j as f64 * h];
        if ls.contains(&p) {
            index.insert((i, j), nodes.len());
            nodes.push(p);
        }
    };
    if ny <= nx {
        for i in 1..nx {
            for j in 1..ny {
                visit(i, j);
            }
        }
    } else {
        for j in 1..ny {
            for i in 1..nx {
                visit(i, j);
            }
        }
    }
    (nodes, index)
}

fn check_spacing(h: f64) -> Result<()> {
    if !(h > 0.0 && h < 0.5) {
        return Err(Error::InvalidArgument(format!("lattice spacing {h} not in (0, 0.5)")));
    }
    let n = 1.0 / h;
    if (n - n.round()).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!("1/h must be an integer, got {n}")));
    }
    Ok(())
}

/// Standard 3-point (1D) or 5-point (2D) Dirichlet Laplacian on the lattice
/// nodes strictly inside the domain; outside neighbours are eliminated.
pub fn fd_laplace_operator(domain: &DomainSpec, h: f64, budget: usize) -> Result<FdOperator> {
    domain.validate()?;
    check_spacing(h)?;
    let inv_h2 = 1.0 / (h * h);
    match domain {
        DomainSpec::Interval => {
            let n = (1.0 / h).round() as usize - 1;
            if n > budget {
                return Err(Error::BudgetExceeded { size: n, budget });
            }
            let mut k = SymSparse::new(n);
            for i in 0..n {
                k.add(i, i, 2.0 * inv_h2);
                if i + 1 < n {
                    k.add(i, i + 1, -inv_h2);
                }
            }
            let nodes = Array2::from_shape_fn((n, 1), |(i, _)| (i + 1) as f64 * h);
            Ok(FdOperator { nodes, components: 1, stiffness: k, mass: vec![1.0; n] })
        }
        DomainSpec::Hypercube { .. } => {
            Err(Error::InvalidArgument("lattice oracle supports 1D and 2D domains only".into()))
        }
        _ => {
            let (nodes, index) = lattice_2d(&domain.level_set(), h);
            let n = nodes.len();
            if n > budget {
                return Err(Error::BudgetExceeded { size: n, budget });
            }
            let mut k = SymSparse::new(n);
            for (&(i, j), &r) in &index {
                k.add(r, r, 4.0 * inv_h2);
                for nb in [(i + 1, j), (i, j + 1)] {
                    if let Some(&c) = index.get(&nb) {
                        k.add(r, c, -inv_h2);
                    }
                }
            }
            let arr = Array2::from_shape_fn((n, 2), |(r, c)| nodes[r][c]);
            Ok(FdOperator { nodes: arr, components: 1, stiffness: k, mass: vec![1.0; n] })
        }
    }
}

/// The `k` smallest lattice eigenpairs of the Dirichlet Laplacian.
pub fn fd_eigs(domain: &DomainSpec, h: f64, k: usize) -> Result<FdSpectrum> {
    if k > 50 {
        return Err(Error::InvalidArgument("at most 50 eigenpairs".into()));
    }
    fd_laplace_operator(domain, h, DEFAULT_UNKNOWN_BUDGET)?.eigs(k)
}

/// Material law for the two-component lattice operator on the unit square.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "kebab-case")]
pub enum ElasticLaw {
    /// Plane-stress energy `εᵀC(E)ε`.
    PlaneStress { modulus: ModulusField, nu: f64 },
    /// `E|∇u|²`; a unit modulus when absent.
    VectorLaplace { modulus: Option<ModulusField> },
}

impl ElasticLaw {
    /// Energy density matrix acting on `[u_x, u_y, v_x, v_y]` at `x1`.
    fn density(&self, x1: f64) -> Result<[[f64; 4]; 4]> {
        match self {
            ElasticLaw::VectorLaplace { modulus: m } => {
                let e = m.as_ref().map_or(1.0, |f| modulus(f, x1));
                let mut q = [[0.0; 4]; 4];
                for (i, row) in q.iter_mut().enumerate() {
                    row[i] = e;
                }
                Ok(q)
            }
            ElasticLaw::PlaneStress { modulus: m, nu } => {
                let c = plane_stress_matrix(modulus(m, x1), *nu)?;
                // ε = B g with ε = [u_x, v_y, u_y + v_x]
                let b = [[1.0, 0.0, 0.0, 0.0], [0.0, 0.0, 0.0, 1.0], [0.0, 1.0, 1.0, 0.0]];
                let mut q = [[0.0; 4]; 4];
                for r in 0..4 {
                    for s in 0..4 {
                        let mut acc = 0.0;
                        for a in 0..3 {
                            for bb in 0..3 {
                                acc += b[a][r] * c[a][bb] * b[bb][s];
                            }
                        }
                        q[r][s] = acc;
                    }
                }
                Ok(q)
            }
        }
    }
}

/// Two-component operator on the unit square built from a discrete energy:
/// every lattice cell is split into two triangles carrying one-sided
/// differences, the energy density is evaluated at each triangle centroid,
/// and the mass is lumped to `h²` per node. For a unit vector-Laplace law
/// this is the 5-point stencil on each component.
pub fn fd_elasticity_operator(law: &ElasticLaw, h: f64, budget: usize) -> Result<FdOperator> {
    check_spacing(h)?;
    let n = (1.0 / h).round() as usize;
    let m = n - 1;
    let unknowns = 2 * m * m;
    if unknowns > budget {
        return Err(Error::BudgetExceeded { size: unknowns, budget });
    }
    // interior node (i, j), 1 ≤ i, j ≤ n−1, x fastest; components interleaved
    let node = |i: usize, j: usize| -> Option<usize> {
        (i >= 1 && j >= 1 && i < n && j < n).then(|| (j - 1) * m + (i - 1))
    };
    let mut k = SymSparse::new(unknowns);
    let area = 0.5 * h * h;
    for ci in 0..n {
        for cj in 0..n {
            // lower-left triangle: base (ci, cj), steps +x and +y
            // upper-right triangle: base (ci+1, cj+1), steps −x and −y
            let tris = [
                ((ci, cj), (ci + 1, cj), (ci, cj + 1), 1.0, [(ci as f64 + 1.0 / 3.0) * h]),
                ((ci + 1, cj + 1), (ci, cj + 1), (ci + 1, cj), -1.0, [(ci as f64 + 2.0 / 3.0) * h]),
            ];
            for (base, xn, yn, sign, [xc]) in tris {
                let q = law.density(xc)?;
                // gradient of a P1 field: d/dx = sign·(u[xn] − u[base])/h,
                // d/dy = sign·(u[yn] − u[base])/h
                // g = [u_x, u_y, v_x, v_y] = Σ_t coeff · unknown
                let mut terms: Vec<(usize, usize, f64)> = Vec::with_capacity(6); // (g index, unknown, coeff)
                for comp in 0..2 {
                    for (dir, other) in [(0usize, xn), (1usize, yn)] {
                        let gi = 2 * comp + dir;
                        if let Some(id) = node(other.0, other.1) {
                            terms.push((gi, 2 * id + comp, sign / h));
                        }
                        if let Some(id) = node(base.0, base.1) {
                            terms.push((gi, 2 * id + comp, -sign / h));
                        }
                    }
                }
                for &(ga, ua, ca) in &terms {
                    for &(gb, ub, cb) in &terms {
                        if ub <= ua {
                            let v = area * ca * q[ga][gb] * cb;
                            if v != 0.0 {
                                if ua == ub {
                                    k.add(ua, ua, v);
                                } else {
                                    // each unordered pair is visited twice
                                    k.add(ua, ub, v);
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    let nodes = Array2::from_shape_fn((m * m, 2), |(r, c)| {
        let (i, j) = (r % m + 1, r / m + 1);
        if c == 0 { i as f64 * h } else { j as f64 * h }
    });
    Ok(FdOperator { nodes, components: 2, stiffness: k, mass: vec![h * h; unknowns] })
}

/// The `k` smallest eigenvalues of the two-component square operator.
pub fn fd_eigs_vector_elasticity(law: &ElasticLaw, h: f64, k: usize) -> Result<FdSpectrum> {
    fd_elasticity_operator(law, h, DEFAULT_UNKNOWN_BUDGET)?.eigs(k)
}

/// Second-order Richardson extrapolation from spacings `h` and `h/2`.
pub fn richardson(coarse: f64, fine: f64) -> f64 {
    (4.0 * fine - coarse) / 3.0
}

// ---------------------------------------------------------------------------
// Separable radial problems

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RadialDomain {
    /// Upper half of the unit disk: angular modes `sin(mθ)`, `m ≥ 1`.
    HalfDisk,
    /// `inner < r < 1`: modes `m = 0` once and `m ≥ 1` twice.
    Annulus { inner: f64 },
}

/// Eigenvalues of `−(r u')'/r + m²u/r² = λu` with Dirichlet ends, second
/// order finite differences on `n` intervals (ascending, first `count`).
fn radial_fd(inner: f64, m: usize, n: usize, count: usize) -> Vec<f64> {
    let h = (1.0 - inner) / n as f64;
    let dim = n - 1;
    let r = |i: f64| inner + i * h;
    let mut diag = vec![0.0; dim];
    let mut off = vec![0.0; dim.saturating_sub(1)];
    let m2 = (m * m) as f64;
    for i in 0..dim {
        let ri = r(i as f64 + 1.0);
        diag[i] = (r(i as f64 + 0.5) + r(i as f64 + 1.5)) / (h * h * ri) + m2 / (ri * ri);
        if i + 1 < dim {
            let rj = r(i as f64 + 2.0);
            off[i] = -r(i as f64 + 1.5) / (h * h * (ri * rj).sqrt());
        }
    }
    (0..count).map(|j| tridiagonal_eigenvalue(&diag, &off, j)).collect()
}

/// Number of eigenvalues below `x` (Sturm count).
fn sturm_count(diag: &[f64], off: &[f64], x: f64) -> usize {
    let mut count = 0;
    let mut q = 1.0;
    for i in 0..diag.len() {
        let b2 = if i == 0 { 0.0 } else { off[i - 1] * off[i - 1] };
        q = diag[i] - x - if i == 0 { 0.0 } else { b2 / q };
        if q == 0.0 {
            q = -1e-300;
        }
        if q < 0.0 {
            count += 1;
        }
    }
    count
}

/// `j`-th smallest (0-based) eigenvalue of a symmetric tridiagonal matrix
/// by bisection.
fn tridiagonal_eigenvalue(diag: &[f64], off: &[f64], j: usize) -> f64 {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..diag.len() {
        let r = off.get(i).map_or(0.0, |v| v.abs()) + if i > 0 { off[i - 1].abs() } else { 0.0 };
        lo = lo.min(diag[i] - r);
        hi = hi.max(diag[i] + r);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if sturm_count(diag, off, mid) > j {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 1e-14 * hi.abs() {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// One separable eigenvalue with its angular and radial indices.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadialMode {
    pub eigenvalue: f64,
    pub angular: usize,
    pub radial: usize,
}

impl RadialMode {
    /// `J_m(√λ r) sin(mθ)` on the half-disk (unnormalized).
    pub fn half_disk_value(&self, x: &[f64]) -> f64 {
        let r = x[0].hypot(x[1]);
        let theta = x[1].atan2(x[0]);
        bessel_j(self.angular, self.eigenvalue.sqrt() * r) * (self.angular as f64 * theta).sin()
    }
}

/// Bessel function of the first kind by its power series; accurate to
/// about 1e-11 absolute for `|x| ≤ 20`.
pub fn bessel_j(m: usize, x: f64) -> f64 {
    let half = 0.5 * x;
    let mut term = (1..=m).fold(1.0, |t, k| t * half / k as f64);
    let mut sum = term;
    for k in 1..200 {
        term *= -half * half / (k as f64 * (k + m) as f64);
        sum += term;
        if term.abs() < 1e-17 * sum.abs().max(1e-300) && k > 2 {
            break;
        }
    }
    sum
}

/// First `count` eigenvalues (with multiplicity) of a separable domain,
/// Richardson-extrapolated from radial grids of `n` and `2n` intervals.
pub fn radial_eigs(domain: RadialDomain, count: usize, n: usize) -> Result<Vec<RadialMode>> {
    let (inner, first_m, doubled) = match domain {
        RadialDomain::HalfDisk => (0.0, 1, false),
        RadialDomain::Annulus { inner } => {
            if !(inner > 0.0 && inner < 1.0) {
                return Err(Error::InvalidArgument(format!("inner radius {inner} not in (0,1)")));
            }
            (inner, 0, true)
        }
    };
    if n < 16 {
        return Err(Error::InvalidArgument("radial grid too coarse".into()));
    }
    let mut modes = Vec::new();
    let mut m = first_m;
    loop {
        let coarse = radial_fd(inner, m, n, count);
        let fine = radial_fd(inner, m, 2 * n, count);
        let vals: Vec<f64> = coarse.iter().zip(&fine).map(|(c, f)| richardson(*c, *f)).collect();
        // stop once this angular family starts above everything we need
        if modes.len() >= count {
            let mut sorted: Vec<f64> = modes.iter().map(|x: &RadialMode| x.eigenvalue).collect();
            sorted.sort_by(f64::total_cmp);
            if vals[0] > sorted[count - 1] {
                break;
            }
        }
        for (r, v) in vals.into_iter().enumerate() {
            let mode = RadialMode { eigenvalue: v, angular: m, radial: r + 1 };
            modes.push(mode);
            if doubled && m > 0 {
                modes.push(mode);
            }
        }
        m += 1;
        if m > 200 {
            return Err(Error::NoConvergence(m));
        }
    }
    modes.sort_by(|a, b| a.eigenvalue.total_cmp(&b.eigenvalue));
    modes.truncate(count);
    Ok(modes)
}

// ---------------------------------------------------------------------------
// Closed forms

/// Product-of-sines eigenfunction `Π √2 sin(n_k π x_k)` (per component).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalyticMode {
    pub eigenvalue: f64,
    pub frequencies: Vec<usize>,
    /// Non-zero component for vector problems.
    pub component: Option<usize>,
}

impl AnalyticMode {
    pub fn value(&self, x: &[f64]) -> f64 {
        self.frequencies
            .iter()
            .zip(x)
            .map(|(&n, &xi)| 2f64.sqrt() * (n as f64 * PI * xi).sin())
            .product()
    }
}

fn frequency_vectors(dim: usize, max_excess: usize) -> Vec<Vec<usize>> {
    // all n ∈ ℕ^dim with Σ(n_k² − 1) ≤ max_excess
    fn rec(dim: usize, budget: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == dim {
            out.push(cur.clone());
            return;
        }
        let mut n = 1;
        while n * n - 1 <= budget {
            cur.push(n);
            rec(dim, budget - (n * n - 1), cur, out);
            cur.pop();
            n += 1;
        }
    }
    let mut out = Vec::new();
    rec(dim, max_excess, &mut Vec::new(), &mut out);
    out
}

/// Exact Dirichlet eigenpairs on the interval, unit square (scalar, or
/// vector with `components = 2`) and unit hypercube, sorted with
/// multiplicity.
pub fn analytic_eigenpairs(domain: &DomainSpec, count: usize, components: usize) -> Result<Vec<AnalyticMode>> {
    let dim = match domain {
        DomainSpec::Interval => 1,
        DomainSpec::UnitSquare => 2,
        DomainSpec::Hypercube { dim } => *dim,
        other => return Err(Error::InvalidArgument(format!("no closed-form spectrum for {other:?}"))),
    };
    if !(components == 1 || (components == 2 && dim == 2)) {
        return Err(Error::InvalidArgument("vector spectra only on the unit square".into()));
    }
    let mut excess = 3;
    loop {
        let freqs = frequency_vectors(dim, excess);
        let mut modes: Vec<AnalyticMode> = Vec::new();
        for f in freqs {
            let lambda = f.iter().map(|n| (n * n) as f64).sum::<f64>() * PI * PI;
            for c in 0..components {
                modes.push(AnalyticMode {
                    eigenvalue: lambda,
                    frequencies: f.clone(),
                    component: (components > 1).then_some(c),
                });
            }
        }
        modes.sort_by(|a, b| a.eigenvalue.total_cmp(&b.eigenvalue));
        // complete only if everything up to the cut-off level is enumerated
        let level = (dim + excess) as f64 * PI * PI;
        let complete = modes.iter().filter(|m| m.eigenvalue <= level).count();
        if complete >= count {
            modes.truncate(count);
            return Ok(modes);
        }
        excess += 3;
        if excess > 400 {
            return Err(Error::NoConvergence(excess));
        }
    }
}

pub fn write_spectrum_csv(eigenvalues: &[f64], path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "index,eigenvalue")?;
    for (i, v) in eigenvalues.iter().enumerate() {
        writeln!(f, "{},{:.15e}", i + 1, v)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::ModulusMode;

    const J11_SQ: f64 = 3.831_705_970_207_512_3 * 3.831_705_970_207_512_3;

    #[test]
    fn jacobi_random_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 50;
        let mut a = Array2::zeros((n, n));
        for i in 0..n {
            for j in i..n {
                let v: f64 = rng.gen_range(-1.0..1.0);
                a[[i, j]] = v;
                a[[j, i]] = v;
            }
        }
        let (vals, vecs) = jacobi_eigen(&a).unwrap();
        for c in 0..n {
            let v = vecs.column(c);
            let av = a.dot(&v);
            let res = (&av - &(&v * vals[c])).iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!(res <= 1e-8, "pair {c}: residual {res}");
        }
        assert!(vals.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn banded_cholesky_solves() {
        let op = fd_laplace_operator(&DomainSpec::UnitSquare, 1.0 / 20.0, 10_000).unwrap();
        let chol = BandCholesky::factor(&op.stiffness).unwrap();
        let n = op.unknowns();
        let x: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut b = vec![0.0; n];
        op.stiffness.matvec(&x, &mut b);
        chol.solve(&mut b);
        assert!(x.iter().zip(&b).all(|(a, c)| (a - c).abs() < 1e-10));
    }

    #[test]
    fn square_converges_at_second_order() {
        let exact = 2.0 * PI * PI;
        let errs: Vec<f64> = [10.0, 20.0, 40.0]
            .iter()
            .map(|n| fd_eigs(&DomainSpec::UnitSquare, 1.0 / n, 1).unwrap().eigenvalues[0] - exact)
            .collect();
        for w in errs.windows(2) {
            let order = (w[0] / w[1]).abs().log2();
            assert!((1.7..=2.3).contains(&order), "order {order}");
        }
        // the 5-point Laplacian has the closed form (8/h²) sin²(πh/2)
        let h = 1.0 / 40.0;
        let closed = 8.0 / (h * h) * (PI * h / 2.0).sin().powi(2);
        assert!((errs[2] + exact - closed).abs() < 1e-9);
    }

    #[test]
    fn interval_lattice_matches_closed_form() {
        let s = fd_eigs(&DomainSpec::Interval, 0.01, 3).unwrap();
        for (i, v) in s.eigenvalues.iter().enumerate() {
            let k = (i + 1) as f64;
            let closed = 4.0 / 1e-4 * (k * PI * 0.01 / 2.0).sin().powi(2);
            assert!((v - closed).abs() < 1e-7 * closed);
        }
    }

    #[test]
    fn half_disk_lattice_near_bessel_zero() {
        let s = fd_eigs(&DomainSpec::Semicircle, 1.0 / 60.0, 1).unwrap();
        let rel = (s.eigenvalues[0] - J11_SQ).abs() / J11_SQ;
        assert!(rel < 0.01, "{} vs {J11_SQ}", s.eigenvalues[0]);
    }

    #[test]
    fn radial_half_disk_reproduces_bessel_zeros() {
        let modes = radial_eigs(RadialDomain::HalfDisk, 4, 2000).unwrap();
        // j_{1,1}, j_{2,1}, j_{3,1}, j_{1,2}
        let zeros = [3.831_705_970_207_512, 5.135_622_301_840_683, 6.380_161_895_923_984, 7.015_586_669_815_619];
        for (m, z) in modes.iter().zip(zeros) {
            assert!((m.eigenvalue - z * z).abs() < 1e-7 * z * z, "{m:?} vs {}", z * z);
        }
        assert_eq!((modes[3].angular, modes[3].radial), (1, 2));
    }

    #[test]
    fn annulus_multiplicities_and_lattice_agreement() {
        let modes = radial_eigs(RadialDomain::Annulus { inner: 0.5 }, 9, 1000).unwrap();
        assert_eq!(modes[0].angular, 0);
        assert_eq!(modes[1].eigenvalue, modes[2].eigenvalue);
        // the staircase lattice converges to the separable values at first
        // order in h
        let err = |n: f64| {
            let lat = fd_eigs(&DomainSpec::Annulus { inner: 0.5 }, 1.0 / n, 1).unwrap();
            (modes[0].eigenvalue - lat.eigenvalues[0]) / modes[0].eigenvalue
        };
        let (e40, e80) = (err(40.0), err(80.0));
        let order = (e40 / e80).log2();
        assert!(e80 > 0.0 && e80 < 0.04 && (0.8..=1.2).contains(&order), "{e40} {e80}");
    }

    #[test]
    fn analytic_spectra() {
        let iv = analytic_eigenpairs(&DomainSpec::Interval, 3, 1).unwrap();
        assert!((iv[2].eigenvalue - 9.0 * PI * PI).abs() < 1e-12);
        let sq = analytic_eigenpairs(&DomainSpec::UnitSquare, 4, 2).unwrap();
        assert!((sq[0].eigenvalue - 2.0 * PI * PI).abs() < 1e-12);
        assert_eq!(sq[1].eigenvalue, sq[0].eigenvalue);
        assert!((sq[2].eigenvalue - 5.0 * PI * PI).abs() < 1e-12);
        let hc = analytic_eigenpairs(&DomainSpec::Hypercube { dim: 10 }, 11, 1).unwrap();
        assert!((hc[0].eigenvalue - 10.0 * PI * PI).abs() < 1e-10);
        assert!(hc[1..].iter().all(|m| (m.eigenvalue - 13.0 * PI * PI).abs() < 1e-10));
        assert!(analytic_eigenpairs(&DomainSpec::Semicircle, 1, 1).is_err());
        let f = &iv[1];
        assert!((f.value(&[0.25]) - 2f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn unit_vector_law_is_two_decoupled_laplacians() {
        let h = 1.0 / 16.0;
        let law = ElasticLaw::VectorLaplace { modulus: None };
        let op = fd_elasticity_operator(&law, h, 10_000).unwrap();
        assert!(op.stiffness.is_symmetric(1e-12));
        let v = op.eigs(3).unwrap().eigenvalues;
        let scalar = fd_eigs(&DomainSpec::UnitSquare, h, 2).unwrap().eigenvalues;
        assert!((v[0] - scalar[0]).abs() < 1e-9 * scalar[0]);
        assert!((v[1] - scalar[0]).abs() < 1e-9 * scalar[0]);
        assert!((v[2] - scalar[1]).abs() < 1e-9 * scalar[1]);
    }

    #[test]
    fn modulated_endpoints_scale_with_modulus() {
        let h = 1.0 / 32.0;
        let field = |a| ModulusField { e0: 1.0, e1: 2.0, q: 50.0, a, mode: ModulusMode::MidpointCorrected };
        let scalar = fd_eigs(&DomainSpec::UnitSquare, h, 1).unwrap().eigenvalues[0];
        let left = fd_eigs_vector_elasticity(&ElasticLaw::VectorLaplace { modulus: Some(field(1.0)) }, h, 1).unwrap();
        let right = fd_eigs_vector_elasticity(&ElasticLaw::VectorLaplace { modulus: Some(field(0.0)) }, h, 1).unwrap();
        // with the interface at an edge the modulus is (almost) uniform
        assert!((left.eigenvalues[0] / scalar - 1.0).abs() < 0.02);
        assert!((right.eigenvalues[0] / scalar - 2.0).abs() < 0.04);
    }

    #[test]
    fn plane_stress_symmetric_and_positive() {
        let law = ElasticLaw::PlaneStress {
            modulus: ModulusField { e0: 1.0, e1: 5.0, q: 50.0, a: 0.5, mode: ModulusMode::MidpointCorrected },
            nu: 0.25,
        };
        let op = fd_elasticity_operator(&law, 1.0 / 16.0, 10_000).unwrap();
        assert!(op.stiffness.is_symmetric(1e-10));
        let s = op.eigs(2).unwrap();
        assert!(s.eigenvalues[0] > 0.0 && s.eigenvalues[0] <= s.eigenvalues[1]);
    }

    #[test]
    fn budget_enforced() {
        assert!(matches!(
            fd_laplace_operator(&DomainSpec::UnitSquare, 0.01, 100),
            Err(Error::BudgetExceeded { .. })
        ));
        assert!(fd_eigs(&DomainSpec::UnitSquare, 0.3, 1).is_err());
    }
    #[test]
    fn bessel_zeros_and_values() {
        assert!((bessel_j(0, 0.0) - 1.0).abs() < 1e-15);
        assert!((bessel_j(0, 1.0) - 0.765_197_686_557_966_6).abs() < 1e-14);
        assert!((bessel_j(1, 2.0) - 0.576_724_807_756_873_4).abs() < 1e-14);
        assert!(bessel_j(1, 3.831_705_970_207_512).abs() < 1e-12);
        assert!(bessel_j(3, 13.015_200_721_698_43).abs() < 1e-10);
        let modes = radial_eigs(RadialDomain::HalfDisk, 4, 200).unwrap();
        for m in &modes {
            assert!(m.half_disk_value(&[0.6, 0.8]).abs() < 1e-6);
            assert!(m.half_disk_value(&[-0.4, 0.0]).abs() < 1e-12);
        }
    }

}
