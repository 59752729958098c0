//! Neural-network Rayleigh-quotient eigensolver with Gram–Schmidt deflation,
//! together with the reference solvers and post-processing used to check it.

// Negated float comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ansatz;
pub mod config;
pub mod diagnostics;
pub mod dual;
pub mod error;
pub mod experiments;
pub mod fourier;
pub mod galerkin;
pub mod nn;
pub mod objectives;
pub mod oracle;
pub mod orthogonalization;
pub mod quadrature;
pub mod solver;
pub mod uq;

pub use error::{Error, Result};

/// `(sin x, cos x)` as two separate libm calls. Left alone, LLVM may fuse the
/// pair into `sincos`, which rounds differently for some arguments, and the
/// choice depends on build flags. Keeping the calls apart makes results agree
/// across profiles.
pub(crate) fn sin_cos(x: f64) -> (f64, f64) {
    (x.sin(), std::hint::black_box(x).cos())
}
