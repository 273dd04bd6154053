//! Self-contained dense convex kernels for desk-scale problems: a
//! log-barrier Newton solver for convex QCQPs and an operator-splitting
//! solver for SDPs with trace-linear constraints.
//!
//! Complex Hermitian blocks are handled through the standard real symmetric
//! embedding `Q = X + iY ↦ [[X, −Y], [Y, X]]`, keeping both kernels in real
//! arithmetic.

mod qcqp;
mod sdp;

pub use qcqp::{solve_qcqp, QcqpProblem, QcqpSolution, QuadConstraint, SolveStatus};
pub use sdp::{
    solve_sdp, ConstraintKind, PreparedSdp, SdpConstraint, SdpProblem, SdpSolution, SdpWarmStart,
};

use nalgebra::DMatrix;
use thiserror::Error;

use crate::C64;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("matrix is not symmetric: max asymmetry {0:e}")]
    NotSymmetric(f64),
    #[error("problem dimensions are inconsistent: {0}")]
    BadProblem(String),
}

/// Frobenius-nearest positive semidefinite matrix: eigendecompose and clip
/// negative eigenvalues to zero. Idempotent.
pub fn psd_project(mat: &DMatrix<f64>) -> Result<DMatrix<f64>, SolverError> {
    let n = mat.nrows();
    if mat.ncols() != n {
        return Err(SolverError::BadProblem(format!("{}x{} is not square", n, mat.ncols())));
    }
    let mut asym = 0.0f64;
    for i in 0..n {
        for j in 0..i {
            asym = asym.max((mat[(i, j)] - mat[(j, i)]).abs());
        }
    }
    let scale = mat.iter().fold(0.0f64, |a, &v| a.max(v.abs())).max(1.0);
    if asym > 1e-10 * scale {
        return Err(SolverError::NotSymmetric(asym));
    }
    let eig = mat.clone().symmetric_eigen();
    let mut out = DMatrix::zeros(n, n);
    for k in 0..n {
        let lam = eig.eigenvalues[k];
        if lam > 0.0 {
            let v = eig.eigenvectors.column(k);
            for i in 0..n {
                for j in 0..n {
                    out[(i, j)] += lam * v[i] * v[j];
                }
            }
        }
    }
    Ok(out)
}

/// Real symmetric embedding of a Hermitian matrix.
///
/// `tr(embed(A) · embed(Q)) = 2 Re tr(A Q)`; PSD-ness is preserved both ways.
pub fn embed_hermitian(a: &DMatrix<C64>) -> DMatrix<f64> {
    let n = a.nrows();
    assert_eq!(a.ncols(), n);
    let mut out = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        for j in 0..n {
            let re = a[(i, j)].re;
            let im = a[(i, j)].im;
            out[(i, j)] = re;
            out[(n + i, n + j)] = re;
            out[(i, n + j)] = -im;
            out[(n + i, j)] = im;
        }
    }
    out
}

/// Inverse of [`embed_hermitian`], averaging the two copies to absorb any
/// numerical drift of the embedding structure.
pub fn extract_hermitian(s: &DMatrix<f64>) -> DMatrix<C64> {
    let n2 = s.nrows();
    assert_eq!(n2 % 2, 0);
    let n = n2 / 2;
    DMatrix::from_fn(n, n, |i, j| {
        let re = 0.5 * (s[(i, j)] + s[(n + i, n + j)]);
        let im = 0.5 * (s[(n + i, j)] - s[(i, n + j)]);
        C64::new(re, im)
    })
}

/// Length of the scaled upper-triangular vectorization of an `n × n`
/// symmetric matrix.
pub fn svec_len(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Scaled vectorization with `√2` on off-diagonals, so that
/// `svec(A)ᵀ svec(X) = tr(A X)`.
pub fn svec_into(mat: &DMatrix<f64>, out: &mut [f64]) {
    let n = mat.nrows();
    let sqrt2 = std::f64::consts::SQRT_2;
    let mut idx = 0;
    for j in 0..n {
        for i in 0..=j {
            out[idx] = if i == j { mat[(i, j)] } else { sqrt2 * mat[(i, j)] };
            idx += 1;
        }
    }
}

/// Inverse of [`svec_into`].
pub fn unsvec(v: &[f64], n: usize) -> DMatrix<f64> {
    let inv_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;
    let mut out = DMatrix::zeros(n, n);
    let mut idx = 0;
    for j in 0..n {
        for i in 0..=j {
            let val = if i == j { v[idx] } else { inv_sqrt2 * v[idx] };
            out[(i, j)] = val;
            out[(j, i)] = val;
            idx += 1;
        }
    }
    out
}
