//! Small numeric helpers shared by the group and filter code.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, Matrix3, Vector3};

use crate::error::{Error, Result};

/// Dense square matrix carrier for Ad, ad, J_r, P, Q and R.
pub type SquareMatrix = DMatrix<f64>;

#[inline]
pub fn sin(x: f64) -> f64 {
    libm::sin(x)
}

#[inline]
pub fn cos(x: f64) -> f64 {
    libm::cos(x)
}

#[inline]
pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[inline]
pub fn atan2(y: f64, x: f64) -> f64 {
    libm::atan2(y, x)
}

#[inline]
pub fn abs(x: f64) -> f64 {
    libm::fabs(x)
}

#[inline]
pub fn powi(x: f64, n: i32) -> f64 {
    libm::pow(x, n as f64)
}

/// Skew-symmetric matrix with `skew(a) * b == a.cross(b)`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Inverse of [`skew`]; reads the lower-triangle entries.
pub fn unskew(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |acc, x| if abs(*x) > acc { abs(*x) } else { acc })
}

pub fn is_finite(m: &DMatrix<f64>) -> bool {
    m.iter().all(|x| x.is_finite())
}

/// Largest absolute asymmetry `|m_ij - m_ji|`.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    max_abs(&(m - m.transpose()))
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    symmetrize(m).symmetric_eigenvalues().min()
}

/// Ratio of extreme eigenvalues of a symmetric matrix; infinite when the
/// smallest one is not positive.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let ev = symmetrize(m).symmetric_eigenvalues();
    let lo = ev.min();
    let hi = ev.max();
    if lo <= 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// Checks the covariance invariants: square, finite, symmetric to `1e-10`
/// and PSD to `-1e-10`.
pub fn validate_covariance(p: &DMatrix<f64>, dim: usize) -> Result<()> {
    if p.nrows() != dim || p.ncols() != dim {
        return Err(Error::DimensionMismatch { expected: dim, actual: p.nrows() });
    }
    if !is_finite(p) {
        return Err(Error::InvalidCovariance("non-finite entry"));
    }
    if asymmetry(p) > 1e-10 {
        return Err(Error::InvalidCovariance("not symmetric"));
    }
    if min_eigenvalue(p) < -1e-10 {
        return Err(Error::InvalidCovariance("not positive semi-definite"));
    }
    Ok(())
}

pub fn cholesky(m: &DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    Cholesky::new(symmetrize(m))
}

/// Solves `S x = b` for symmetric positive definite `S`.
pub fn spd_solve(s: &DMatrix<f64>, b: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    cholesky(s).map(|c| c.solve(b))
}

pub fn spd_solve_vec(s: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    cholesky(s).map(|c| c.solve(b))
}

/// Block-diagonal concatenation.
pub fn block_diag(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let n: usize = blocks.iter().map(|b| b.nrows()).sum();
    let m: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(n, m);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), (b.nrows(), b.ncols())).copy_from(*b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

pub fn set_block3(m: &mut DMatrix<f64>, row: usize, col: usize, b: &Matrix3<f64>) {
    m.fixed_view_mut::<3, 3>(row, col).copy_from(b);
}

pub fn block3(m: &DMatrix<f64>, row: usize, col: usize) -> Matrix3<f64> {
    m.fixed_view::<3, 3>(row, col).into_owned()
}

pub fn vec3(v: &DVector<f64>, offset: usize) -> Vector3<f64> {
    Vector3::new(v[offset], v[offset + 1], v[offset + 2])
}
