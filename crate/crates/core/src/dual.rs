//! Forward-mode dual numbers. Nesting `Dual<Dual<f64>>` gives exact second
//! derivatives along one direction.

use std::ops::{Add, Mul, Neg, Sub};

/// Field operations needed to evaluate closed-form expressions generically.
pub trait Scalar:
    Copy + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Neg<Output = Self>
{
    fn cst(v: f64) -> Self;
    fn real(self) -> f64;

    fn powi(self, n: u32) -> Self {
        let mut acc = Self::cst(1.0);
        for _ in 0..n {
            acc = acc * self;
        }
        acc
    }
}

impl Scalar for f64 {
    fn cst(v: f64) -> Self {
        v
    }

    fn real(self) -> f64 {
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dual<T> {
    pub re: T,
    pub eps: T,
}

impl<T: Scalar> Dual<T> {
    pub fn new(re: T, eps: T) -> Self {
        Self { re, eps }
    }

    pub fn var(re: T) -> Self {
        Self::new(re, T::cst(1.0))
    }

    pub fn constant(re: T) -> Self {
        Self::new(re, T::cst(0.0))
    }
}

impl<T: Scalar> Add for Dual<T> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.re + o.re, self.eps + o.eps)
    }
}

impl<T: Scalar> Sub for Dual<T> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.re - o.re, self.eps - o.eps)
    }
}

impl<T: Scalar> Mul for Dual<T> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        Self::new(self.re * o.re, self.re * o.eps + self.eps * o.re)
    }
}

impl<T: Scalar> Neg for Dual<T> {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.re, -self.eps)
    }
}

impl<T: Scalar> Scalar for Dual<T> {
    fn cst(v: f64) -> Self {
        Self::constant(T::cst(v))
    }

    fn real(self) -> f64 {
        self.re.real()
    }
}

pub type HyperDual = Dual<Dual<f64>>;

/// `Σ_k ∂²f/∂x_k²` at `x`, one nested dual pass per coordinate.
pub fn laplacian<F>(f: F, x: &[f64]) -> f64
where
    F: Fn(&[HyperDual]) -> HyperDual,
{
    let mut sum = 0.0;
    let mut args: Vec<HyperDual> = x.iter().map(|&v| HyperDual::cst(v)).collect();
    for k in 0..x.len() {
        args[k] = Dual::new(Dual::var(x[k]), Dual::constant(1.0));
        sum += f(&args).eps.eps;
        args[k] = HyperDual::cst(x[k]);
    }
    sum
}

/// Gradient of `f` at `x` via one dual pass per coordinate.
pub fn gradient<F>(f: F, x: &[f64]) -> Vec<f64>
where
    F: Fn(&[Dual<f64>]) -> Dual<f64>,
{
    let mut args: Vec<Dual<f64>> = x.iter().map(|&v| Dual::constant(v)).collect();
    (0..x.len())
        .map(|k| {
            args[k] = Dual::var(x[k]);
            let d = f(&args).eps;
            args[k] = Dual::constant(x[k]);
            d
        })
        .collect()
}
