//! Galerkin solution of a Poisson problem in a learned eigenbasis, scored
//! against manufactured solutions.

use ndarray::{Array1, Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ansatz::LevelSet;
use crate::dual::{gradient, laplacian, Scalar};
use crate::error::{Error, Result};
use crate::orthogonalization::{EigenBasis, GridSamples};
use crate::quadrature::QuadratureGrid;

/// Monomial exponents `(i, j)` with `i + j ≤ 3`.
pub const MONOMIALS: [(u32, u32); 10] = [
    (0, 0),
    (1, 0),
    (0, 1),
    (2, 0),
    (1, 1),
    (0, 2),
    (3, 0),
    (2, 1),
    (1, 2),
    (0, 3),
];

/// `T(x) = D(x) · Σ t_ij x₁ⁱ x₂ʲ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManufacturedSolution {
    pub coefficients: [f64; 10],
    pub level_set: LevelSet,
}

impl ManufacturedSolution {
    pub fn eval_generic<S: Scalar>(&self, x: &[S]) -> S {
        let mut poly = S::cst(0.0);
        for (c, &(i, j)) in self.coefficients.iter().zip(MONOMIALS.iter()) {
            poly = poly + S::cst(*c) * x[0].powi(i) * x[1].powi(j);
        }
        self.level_set.value_generic(x, None) * poly
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.eval_generic(x)
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        gradient(|y| self.eval_generic(y), x)
    }

    /// `s = −∇²T` by nested dual numbers.
    pub fn source(&self, x: &[f64]) -> f64 {
        -laplacian(|y| self.eval_generic(y), x)
    }
}

/// Ten i.i.d. `U(0, 3)` coefficients.
pub fn sample_manufactured(level_set: &LevelSet, seed: u64) -> ManufacturedSolution {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut coefficients = [0.0; 10];
    for c in coefficients.iter_mut() {
        *c = rng.gen_range(0.0..3.0);
    }
    ManufacturedSolution { coefficients, level_set: level_set.clone() }
}

pub fn manufactured_source(t: &ManufacturedSolution, points: ArrayView2<f64>) -> Array1<f64> {
    points.outer_iter().map(|x| t.source(&[x[0], x[1]])).collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GalerkinSystem {
    pub stiffness: Array2<f64>,
    pub load: Array1<f64>,
    pub coefficients: Array1<f64>,
}

fn samples_of(basis: &EigenBasis, grid: &QuadratureGrid, n: usize) -> Result<Vec<GridSamples>> {
    if n == 0 || n > basis.len() {
        return Err(Error::InvalidArgument(format!("basis size {n} out of range 1..={}", basis.len())));
    }
    basis.entries[..n].iter().map(|e| e.samples_at(grid.points.view())).collect()
}

/// `K_kl = Σ w ∇û_k·∇û_l`.
pub fn stiffness(samples: &[GridSamples], grid: &QuadratureGrid) -> Array2<f64> {
    let n = samples.len();
    let mut k = Array2::zeros((n, n));
    for a in 0..n {
        for b in a..n {
            let ga = &samples[a].grads;
            let gb = &samples[b].grads;
            let mut s = 0.0;
            for (i, w) in grid.weights.iter().enumerate() {
                let mut d = 0.0;
                for o in 0..ga.dim().1 {
                    for j in 0..ga.dim().2 {
                        d += ga[[i, o, j]] * gb[[i, o, j]];
                    }
                }
                s += w * d;
            }
            k[[a, b]] = s;
            k[[b, a]] = s;
        }
    }
    k
}

/// `F_k = Σ w s û_k` (load without integration by parts).
pub fn strong_load(samples: &[GridSamples], source: &Array1<f64>, grid: &QuadratureGrid) -> Array1<f64> {
    samples
        .iter()
        .map(|s| {
            grid.weights
                .iter()
                .enumerate()
                .map(|(i, w)| w * source[i] * s.values[[i, 0]])
                .sum()
        })
        .collect()
}

/// `F_k = Σ w ∇T·∇û_k` (integrated-by-parts load).
pub fn weak_load(samples: &[GridSamples], t: &ManufacturedSolution, grid: &QuadratureGrid) -> Array1<f64> {
    let grads: Vec<Vec<f64>> = grid
        .points
        .outer_iter()
        .map(|x| t.gradient(&[x[0], x[1]]))
        .collect();
    samples
        .iter()
        .map(|s| {
            grid.weights
                .iter()
                .enumerate()
                .map(|(i, w)| w * (grads[i][0] * s.grads[[i, 0, 0]] + grads[i][1] * s.grads[[i, 0, 1]]))
                .sum()
        })
        .collect()
}

/// Dense solve by elimination with partial pivoting.
pub fn solve_system(k: &Array2<f64>, f: &Array1<f64>) -> Result<Array1<f64>> {
    let n = f.len();
    if k.dim() != (n, n) {
        return Err(Error::Shape("system matrix and load disagree".into()));
    }
    let mut a = k.clone();
    let mut b = f.clone();
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[[i, c]].abs().total_cmp(&a[[j, c]].abs())).unwrap();
        if a[[p, c]].abs() <= 1e-14 * scale {
            return Err(Error::Singular(c));
        }
        if p != c {
            for j in 0..n {
                a.swap([p, j], [c, j]);
            }
            b.swap(p, c);
        }
        for r in c + 1..n {
            let factor = a[[r, c]] / a[[c, c]];
            if factor != 0.0 {
                for j in c..n {
                    a[[r, j]] -= factor * a[[c, j]];
                }
                b[r] -= factor * b[c];
            }
        }
    }
    let mut x = Array1::zeros(n);
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|j| a[[r, j]] * x[j]).sum();
        x[r] = (b[r] - s) / a[[r, r]];
    }
    Ok(x)
}

/// Assembles and solves the strong-load system with the first `n` entries.
pub fn assemble(basis: &EigenBasis, n: usize, source: &Array1<f64>, grid: &QuadratureGrid) -> Result<GalerkinSystem> {
    let samples = samples_of(basis, grid, n)?;
    let stiffness = stiffness(&samples, grid);
    let load = strong_load(&samples, source, grid);
    let coefficients = solve_system(&stiffness, &load)?;
    Ok(GalerkinSystem { stiffness, load, coefficients })
}

/// `Σ w (T − Σ a_i û_i)² / Σ w T²`.
fn relative_error(samples: &[GridSamples], a: &Array1<f64>, t: &ManufacturedSolution, grid: &QuadratureGrid) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (i, x) in grid.points.outer_iter().enumerate() {
        let tv = t.value(&[x[0], x[1]]);
        let approx: f64 = samples.iter().zip(a.iter()).map(|(s, c)| c * s.values[[i, 0]]).sum();
        num += grid.weights[i] * (tv - approx).powi(2);
        den += grid.weights[i] * tv * tv;
    }
    num / den
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GalerkinScore {
    pub mean: f64,
    /// Standard error of the mean over samples.
    pub std_error: f64,
    pub per_sample: Vec<f64>,
    /// Largest `‖F_strong − F_weak‖ / ‖F_weak‖` over samples.
    pub load_discrepancy: f64,
    pub stiffness_condition: f64,
}

/// Mean relative error over `samples` manufactured solutions; sample `j`
/// uses seed `seed + j`.
pub fn mean_relative_error(
    basis: &EigenBasis,
    n: usize,
    grid: &QuadratureGrid,
    level_set: &LevelSet,
    samples: usize,
    seed: u64,
) -> Result<GalerkinScore> {
    if samples == 0 {
        return Err(Error::InvalidArgument("need at least one manufactured sample".into()));
    }
    let s = samples_of(basis, grid, n)?;
    let k = stiffness(&s, grid);
    let (eig, _) = crate::oracle::jacobi_eigen(&k)?;
    let cond = eig[eig.len() - 1] / eig[0];
    let mut per_sample = Vec::with_capacity(samples);
    let mut discrepancy: f64 = 0.0;
    for j in 0..samples {
        let t = sample_manufactured(level_set, seed.wrapping_add(j as u64));
        let src = manufactured_source(&t, grid.points.view());
        let f = strong_load(&s, &src, grid);
        let fw = weak_load(&s, &t, grid);
        let diff = (&f - &fw).mapv(|v| v * v).sum().sqrt() / fw.mapv(|v| v * v).sum().sqrt();
        discrepancy = discrepancy.max(diff);
        let a = solve_system(&k, &f)?;
        per_sample.push(relative_error(&s, &a, &t, grid));
    }
    let mean = per_sample.iter().sum::<f64>() / samples as f64;
    let var = if samples > 1 {
        per_sample.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (samples - 1) as f64
    } else {
        0.0
    };
    Ok(GalerkinScore {
        mean,
        std_error: (var / samples as f64).sqrt(),
        per_sample,
        load_discrepancy: discrepancy,
        stiffness_condition: cond,
    })
}

/// Energy-norm error `‖∇(T − Σ a û)‖²` of the integrated-by-parts Galerkin
/// solution with the first `n` entries; non-increasing in `n`.
pub fn energy_error(basis: &EigenBasis, n: usize, t: &ManufacturedSolution, grid: &QuadratureGrid) -> Result<f64> {
    let s = samples_of(basis, grid, n)?;
    let k = stiffness(&s, grid);
    let f = weak_load(&s, t, grid);
    let a = solve_system(&k, &f)?;
    let c: f64 = grid
        .points
        .outer_iter()
        .zip(grid.weights.iter())
        .map(|(x, w)| {
            let g = t.gradient(&[x[0], x[1]]);
            w * (g[0] * g[0] + g[1] * g[1])
        })
        .sum();
    Ok(c - 2.0 * a.dot(&f) + a.dot(&k.dot(&a)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::orthogonalization::{BasisEntry, Representation};
    use crate::quadrature::{interval_grid, masked_box_grid};
    use ndarray::{array, Array3};
    use std::f64::consts::PI;

    #[test]
    fn sampler_support_and_statistics() {
        let ls = LevelSet::Semicircle;
        let t = sample_manufactured(&ls, 5);
        assert!(t.coefficients.iter().all(|c| (0.0..=3.0).contains(c)));
        assert_eq!(t, sample_manufactured(&ls, 5));
        let n = 10_000;
        let mean = (0..n).map(|s| sample_manufactured(&ls, s).coefficients[0]).sum::<f64>() / n as f64;
        let se = 3.0 / 12f64.sqrt() / (n as f64).sqrt();
        assert!((mean - 1.5).abs() <= 3.0 * se);
    }

    #[test]
    fn source_of_constant_polynomial() {
        let mut c = [0.0; 10];
        c[0] = 2.0;
        let t = ManufacturedSolution { coefficients: c, level_set: LevelSet::Semicircle };
        let x = [0.3, 0.4];
        assert!((t.source(&x) - 8.0 * 2.0 * 0.4).abs() < 1e-13);
        let z = ManufacturedSolution { coefficients: [0.0; 10], level_set: LevelSet::Semicircle };
        assert_eq!(z.source(&x), 0.0);
    }

    #[test]
    fn source_matches_five_point_stencil() {
        let t = sample_manufactured(&LevelSet::Semicircle, 11);
        let grid = masked_box_grid(&[20, 10], &LevelSet::Semicircle).unwrap();
        let h = 1e-3;
        for x in grid.points.outer_iter().take(100) {
            let (a, b) = (x[0], x[1]);
            let fd = (t.value(&[a + h, b]) + t.value(&[a - h, b]) + t.value(&[a, b + h]) + t.value(&[a, b - h])
                - 4.0 * t.value(&[a, b]))
                / (h * h);
            let s = t.source(&[a, b]);
            assert!((s + fd).abs() <= 1e-4 * s.abs().max(1.0), "{s} vs {}", -fd);
        }
    }

    #[test]
    fn elimination_cases() {
        let k = Array2::eye(3);
        let f = array![1.0, -2.0, 3.0];
        assert_eq!(solve_system(&k, &f).unwrap(), f);
        let k = array![[2.0, 1.0], [1.0, 2.0]];
        let a = solve_system(&k, &array![3.0, 3.0]).unwrap();
        assert!((a[0] - 1.0).abs() < 1e-15 && (a[1] - 1.0).abs() < 1e-15);
        assert!(matches!(solve_system(&array![[1.0, 2.0], [2.0, 4.0]], &array![1.0, 1.0]), Err(Error::Singular(_))));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = Array2::from_shape_fn((15, 15), |_| rng.gen_range(-1.0..1.0));
        let spd = b.t().dot(&b) + Array2::<f64>::eye(15);
        let f = Array1::from_shape_fn(15, |_| rng.gen_range(-1.0..1.0));
        let a = solve_system(&spd, &f).unwrap();
        let r = (&spd.dot(&a) - &f).mapv(|v| v * v).sum().sqrt() / f.mapv(|v| v * v).sum().sqrt();
        assert!(r <= 1e-10);
    }

    #[test]
    fn exact_fourier_basis_diagonalizes_stiffness() {
        let grid = interval_grid(250).unwrap();
        let mut basis = EigenBasis::new();
        for k in 1..=4 {
            let kk = k as f64 * PI;
            let n = grid.len();
            let s = GridSamples {
                values: Array2::from_shape_fn((n, 1), |(i, _)| 2f64.sqrt() * (kk * grid.points[[i, 0]]).sin()),
                grads: Array3::from_shape_fn((n, 1, 1), |(i, _, _)| 2f64.sqrt() * kk * (kk * grid.points[[i, 0]]).cos()),
            };
            basis.push(BasisEntry { eigenvalue: kk * kk, repr: Representation::Grid(s), slice: None });
        }
        let s = samples_of(&basis, &grid, 4).unwrap();
        let k = stiffness(&s, &grid);
        for a in 0..4 {
            let l = ((a + 1) as f64 * PI).powi(2);
            assert!((k[[a, a]] - l).abs() / l < 1e-3);
            for b in 0..4 {
                if a != b {
                    assert!(k[[a, b]].abs() <= 1e-4);
                    assert_eq!(k[[a, b]], k[[b, a]]);
                }
            }
        }
        let one = assemble(&basis, 1, &Array1::from_elem(grid.len(), 1.0), &grid).unwrap();
        assert!((one.coefficients[0] - one.load[0] / one.stiffness[[0, 0]]).abs() < 1e-15);
    }

    #[test]
    fn manufactured_function_in_basis_is_recovered() {
        let ls = LevelSet::Semicircle;
        let grid = masked_box_grid(&[40, 20], &ls).unwrap();
        let t = sample_manufactured(&ls, 3);
        let n = grid.len();
        let s = GridSamples {
            values: Array2::from_shape_fn((n, 1), |(i, _)| t.value(&[grid.points[[i, 0]], grid.points[[i, 1]]])),
            grads: Array3::from_shape_fn((n, 1, 2), |(i, _, j)| t.gradient(&[grid.points[[i, 0]], grid.points[[i, 1]]])[j]),
        };
        let mut basis = EigenBasis::new();
        basis.push(BasisEntry { eigenvalue: 1.0, repr: Representation::Grid(s.clone()), slice: None });
        let k = stiffness(std::slice::from_ref(&s), &grid);
        let a = solve_system(&k, &weak_load(std::slice::from_ref(&s), &t, &grid)).unwrap();
        assert!(relative_error(&[s], &a, &t, &grid) <= 1e-10);
        assert!(energy_error(&basis, 1, &t, &grid).unwrap().abs() < 1e-10);
    }
}
