//! Dense real linear-algebra kernels.
//!
//! Everything downstream (lifting, the consensus solver, the spectral
//! analyzer) works on [`Matrix`], a plain `nalgebra` dynamic matrix. The
//! decompositions themselves live here and are written against that type:
//!
//! - [`eigenvalues`]: balance, Householder Hessenberg reduction, then the
//!   implicit double-shift (Francis) QR iteration.
//! - [`symmetric_eigen`]: cyclic Jacobi rotations.
//! - [`svd`]: one-sided (Hestenes) Jacobi.
//! - [`pseudoinverse`] and [`psd_sqrt`] on top of the two above.
//!
//! Tolerances are relative to the Frobenius norm of the input so the kernels
//! are scale-free. All functions are pure.

mod eigen;
mod svd;
mod symmetric;

pub use eigen::{eigenvalues, eigenvalues_with_tol, Spectrum, DEFAULT_ZERO_TOL_FACTOR};
pub use svd::{default_rank_tol, pseudoinverse, svd, Svd};
pub use symmetric::{psd_sqrt, symmetric_eigen, SymmetricEigen};

use nalgebra::DMatrix;
use thiserror::Error;

/// Dense real matrix used throughout the crate.
pub type Matrix = DMatrix<f64>;

pub use num_complex::Complex64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("matrix contains non-finite entries")]
    NonFinite,
    #[error("{algorithm} did not converge within {budget} iterations")]
    NoConvergence {
        algorithm: &'static str,
        budget: usize,
    },
    #[error("matrix is not symmetric (asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },
    #[error("matrix is not positive semidefinite (eigenvalue {eigenvalue:e})")]
    NotPsd { eigenvalue: f64 },
}

pub type Result<T> = std::result::Result<T, LinalgError>;

/// `sqrt(trace(AᵀA))`.
pub fn frobenius_norm(a: &Matrix) -> f64 {
    sum_squares(a.as_slice().iter().copied()).sqrt()
}

/// Sum of squares with four independent accumulators so the loop vectorizes.
pub(crate) fn sum_squares(mut it: impl ExactSizeIterator<Item = f64>) -> f64 {
    let mut acc = [0.0f64; 4];
    while it.len() >= 4 {
        for a in &mut acc {
            let v = it.next().expect("length checked");
            *a += v * v;
        }
    }
    let tail: f64 = it.map(|v| v * v).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

pub(crate) fn ensure_finite(a: &Matrix) -> Result<()> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(LinalgError::NonFinite)
    }
}

/// Build a matrix from row-major data. Panics if the length is wrong.
pub fn from_rows(rows: usize, cols: usize, data: &[f64]) -> Matrix {
    assert_eq!(data.len(), rows * cols, "row-major data length mismatch");
    Matrix::from_row_slice(rows, cols, data)
}

/// Kronecker product `a ⊗ b`.
pub fn kron(a: &Matrix, b: &Matrix) -> Matrix {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    let mut out = Matrix::zeros(ar * br, ac * bc);
    for i in 0..ar {
        for j in 0..ac {
            let s = a[(i, j)];
            if s == 0.0 {
                continue;
            }
            for k in 0..br {
                for l in 0..bc {
                    out[(i * br + k, j * bc + l)] = s * b[(k, l)];
                }
            }
        }
    }
    out
}
