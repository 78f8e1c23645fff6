//! Dense double-precision linear algebra: products, Householder QR,
//! one-sided Jacobi SVD, symmetric eigendecomposition and PSD inverse
//! square roots.
//!
//! Everything here is a pure function over immutable inputs with a fixed
//! accumulation order, so identical input bits produce identical output bits.

mod eigen;
mod gemm;
mod matrix;
mod qr;
mod svd;

pub use eigen::{inv_sqrt_psd, pinv_psd, symmetric_eigen, SymmetricEigen};
pub use matrix::{axpy, dot, frobenius_norm, max_abs, norm2, Matrix};
pub use qr::householder_qr;
pub use svd::{jacobi_svd, SvdResult};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("invalid shape: {rows}x{cols} needs {} values, got {len}", rows * cols)]
    InvalidShape { rows: usize, cols: usize, len: usize },
    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    DimensionMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("{op} requires rows >= cols, got {rows}x{cols}")]
    TooFewRows {
        op: &'static str,
        rows: usize,
        cols: usize,
    },
    #[error("{op} did not converge after {sweeps} sweeps (residual {residual:e})")]
    NotConverged {
        op: &'static str,
        sweeps: usize,
        residual: f64,
    },
    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },
}

/// `‖QᵀQ − I‖_F`: how far the columns of `q` are from orthonormal.
pub fn orthonormality_error(q: &Matrix) -> f64 {
    let mut g = q.gram();
    for i in 0..g.rows() {
        let v = g.get(i, i) - 1.0;
        g.set(i, i, v);
    }
    g.frobenius_norm()
}
