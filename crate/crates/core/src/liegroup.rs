//! Closed-form geometry of `SE_k(3)`: one rotation plus `k` translation-like
//! columns, with `k` chosen at runtime.
//!
//! Tangent coordinates are ordered `(phi, rho_1, .., rho_k)`, rotation first.
//! Coefficient functions such as `sin(x)/x` switch to their Taylor series
//! below [`SERIES_ANGLE`]; both branches agree to rounding at the switch.

use alloc::vec::Vec;
use core::ops::{Add, Mul, Neg, Sub};

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::math::{self, abs, atan2, cos, set_block3, sin, skew, sqrt};

/// Rotation angle below which coefficient functions use their series.
///
/// The closed forms lose about `eps / angle^2` of relative accuracy, so the
/// switch sits where that loss and the series truncation are both < 1e-14.
pub const SERIES_ANGLE: f64 = 0.1;

/// Switch for the right-Jacobian coefficients, whose closed forms divide by
/// up to `angle^5` and need a wider series region.
pub const JR_SERIES_ANGLE: f64 = 0.4;

/// `log` rejects rotations with `trace(R) <= -1 + PI_TRACE_MARGIN`.
pub const PI_TRACE_MARGIN: f64 = 1e-9;

/// Tolerance on `R R^T = I` and `det R = 1` for group elements.
pub const ORTHONORMAL_TOL: f64 = 1e-9;

const JR_INV_TERM_TOL: f64 = 1e-14;
const JR_INV_MAX_TERMS: usize = 160;
const JR_INV_CHECK_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct TangentVector {
    kappa: usize,
    coords: DVector<f64>,
}

impl TangentVector {
    pub fn zeros(kappa: usize) -> Self {
        Self { kappa, coords: DVector::zeros(3 + 3 * kappa) }
    }

    pub fn new(kappa: usize, coords: DVector<f64>) -> Result<Self> {
        let expected = 3 + 3 * kappa;
        if coords.len() != expected {
            return Err(Error::DimensionMismatch { expected, actual: coords.len() });
        }
        Ok(Self { kappa, coords })
    }

    pub fn from_slice(kappa: usize, coords: &[f64]) -> Result<Self> {
        Self::new(kappa, DVector::from_column_slice(coords))
    }

    pub fn from_parts(phi: Vector3<f64>, rhos: &[Vector3<f64>]) -> Self {
        let kappa = rhos.len();
        let mut coords = DVector::zeros(3 + 3 * kappa);
        coords.fixed_rows_mut::<3>(0).copy_from(&phi);
        for (i, r) in rhos.iter().enumerate() {
            coords.fixed_rows_mut::<3>(3 + 3 * i).copy_from(r);
        }
        Self { kappa, coords }
    }

    pub fn kappa(&self) -> usize {
        self.kappa
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn phi(&self) -> Vector3<f64> {
        math::vec3(&self.coords, 0)
    }

    pub fn rho(&self, i: usize) -> Vector3<f64> {
        math::vec3(&self.coords, 3 + 3 * i)
    }

    pub fn rhos(&self) -> Vec<Vector3<f64>> {
        (0..self.kappa).map(|i| self.rho(i)).collect()
    }

    /// Rotation angle `|phi|`.
    pub fn angle(&self) -> f64 {
        self.phi().norm()
    }

    pub fn coords(&self) -> &DVector<f64> {
        &self.coords
    }

    pub fn into_coords(self) -> DVector<f64> {
        self.coords
    }

    pub fn norm(&self) -> f64 {
        self.coords.norm()
    }

    pub fn scale(&self, s: f64) -> Self {
        Self { kappa: self.kappa, coords: &self.coords * s }
    }
}

impl Add for &TangentVector {
    type Output = TangentVector;
    fn add(self, rhs: Self) -> TangentVector {
        assert_eq!(self.kappa, rhs.kappa, "tangent kappa mismatch");
        TangentVector { kappa: self.kappa, coords: &self.coords + &rhs.coords }
    }
}

impl Sub for &TangentVector {
    type Output = TangentVector;
    fn sub(self, rhs: Self) -> TangentVector {
        assert_eq!(self.kappa, rhs.kappa, "tangent kappa mismatch");
        TangentVector { kappa: self.kappa, coords: &self.coords - &rhs.coords }
    }
}

impl Neg for &TangentVector {
    type Output = TangentVector;
    fn neg(self) -> TangentVector {
        self.scale(-1.0)
    }
}

impl Mul<f64> for &TangentVector {
    type Output = TangentVector;
    fn mul(self, s: f64) -> TangentVector {
        self.scale(s)
    }
}

/// Element of `SE_k(3)` stored as its rotation and `k` translation columns.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupElement {
    rotation: Matrix3<f64>,
    translations: Vec<Vector3<f64>>,
}

impl GroupElement {
    pub fn identity(kappa: usize) -> Self {
        Self { rotation: Matrix3::identity(), translations: alloc::vec![Vector3::zeros(); kappa] }
    }

    /// Builds an element, checking that `rotation` is a proper rotation.
    pub fn new(rotation: Matrix3<f64>, translations: Vec<Vector3<f64>>) -> Result<Self> {
        check_rotation(&rotation)?;
        if !translations.iter().all(|t| t.iter().all(|x| x.is_finite())) {
            return Err(Error::InvalidElement("non-finite translation"));
        }
        Ok(Self { rotation, translations })
    }

    /// Builds an element without validating the rotation.
    pub fn from_parts(rotation: Matrix3<f64>, translations: Vec<Vector3<f64>>) -> Self {
        Self { rotation, translations }
    }

    pub fn from_rotation(rotation: Matrix3<f64>, kappa: usize) -> Self {
        Self { rotation, translations: alloc::vec![Vector3::zeros(); kappa] }
    }

    /// SE(3) element from a rotation and a position.
    pub fn pose(rotation: Matrix3<f64>, position: Vector3<f64>) -> Self {
        Self { rotation, translations: alloc::vec![position] }
    }

    pub fn kappa(&self) -> usize {
        self.translations.len()
    }

    pub fn dof(&self) -> usize {
        3 + 3 * self.kappa()
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self, i: usize) -> &Vector3<f64> {
        &self.translations[i]
    }

    pub fn translations(&self) -> &[Vector3<f64>] {
        &self.translations
    }

    pub fn compose(&self, rhs: &Self) -> Self {
        assert_eq!(self.kappa(), rhs.kappa(), "group kappa mismatch");
        let translations = self
            .translations
            .iter()
            .zip(&rhs.translations)
            .map(|(p, q)| self.rotation * q + p)
            .collect();
        Self { rotation: self.rotation * rhs.rotation, translations }
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        let translations = self.translations.iter().map(|p| -(rt * p)).collect();
        Self { rotation: rt, translations }
    }

    /// Canonical `(k+3) x (k+3)` matrix form.
    pub fn to_matrix(&self) -> DMatrix<f64> {
        let n = self.kappa() + 3;
        let mut m = DMatrix::identity(n, n);
        set_block3(&mut m, 0, 0, &self.rotation);
        for (i, p) in self.translations.iter().enumerate() {
            m.fixed_view_mut::<3, 1>(0, 3 + i).copy_from(p);
        }
        m
    }

    pub fn from_matrix(m: &DMatrix<f64>) -> Result<Self> {
        let n = m.nrows();
        if n < 3 || m.ncols() != n {
            return Err(Error::InvalidElement("matrix must be square with size >= 3"));
        }
        let kappa = n - 3;
        let lower = m.view((3, 0), (kappa, n));
        for r in 0..kappa {
            for c in 0..n {
                let want = if c == r + 3 { 1.0 } else { 0.0 };
                if abs(lower[(r, c)] - want) > 1e-12 {
                    return Err(Error::InvalidElement("lower block must be [0 | I]"));
                }
            }
        }
        let rotation = math::block3(m, 0, 0);
        let translations = (0..kappa).map(|i| m.fixed_view::<3, 1>(0, 3 + i).into_owned()).collect();
        Self::new(rotation, translations)
    }

    /// `X^alpha = exp(alpha * log X)` on the principal branch.
    pub fn power(&self, alpha: f64) -> Result<Self> {
        Ok(exp_map(&log_map(self)?.scale(alpha)))
    }

    pub fn distance_to(&self, other: &Self) -> f64 {
        (self.to_matrix() - other.to_matrix()).norm()
    }
}

fn check_rotation(r: &Matrix3<f64>) -> Result<()> {
    if !r.iter().all(|x| x.is_finite()) {
        return Err(Error::InvalidElement("non-finite rotation"));
    }
    if (r * r.transpose() - Matrix3::identity()).norm() > ORTHONORMAL_TOL {
        return Err(Error::InvalidElement("rotation not orthonormal"));
    }
    if abs(r.determinant() - 1.0) > ORTHONORMAL_TOL {
        return Err(Error::InvalidElement("rotation determinant is not 1"));
    }
    Ok(())
}

// Coefficient functions with their small-angle series.

fn sinc(x: f64) -> f64 {
    if x < SERIES_ANGLE {
        let x2 = x * x;
        1.0 - x2 / 6.0 * (1.0 - x2 / 20.0 * (1.0 - x2 / 42.0 * (1.0 - x2 / 72.0)))
    } else {
        sin(x) / x
    }
}

/// `(1 - cos x) / x^2`
fn cosc(x: f64) -> f64 {
    if x < SERIES_ANGLE {
        let x2 = x * x;
        0.5 - x2 / 24.0 * (1.0 - x2 / 30.0 * (1.0 - x2 / 56.0 * (1.0 - x2 / 90.0)))
    } else {
        (1.0 - cos(x)) / (x * x)
    }
}

/// `(x - sin x) / x^3`
fn sinc3(x: f64) -> f64 {
    if x < SERIES_ANGLE {
        let x2 = x * x;
        1.0 / 6.0 - x2 / 120.0 * (1.0 - x2 / 42.0 * (1.0 - x2 / 72.0 * (1.0 - x2 / 110.0)))
    } else {
        (x - sin(x)) / (x * x * x)
    }
}

/// `1/x^2 - (1 + cos x) / (2 x sin x)`
fn vinv_coef(x: f64) -> f64 {
    if x < SERIES_ANGLE {
        let x2 = x * x;
        1.0 / 12.0 + x2 / 720.0 + x2 * x2 / 30240.0 + x2 * x2 * x2 / 1_209_600.0
    } else {
        1.0 / (x * x) - (1.0 + cos(x)) / (2.0 * x * sin(x))
    }
}

/// `x / sin x`
fn inv_sinc(x: f64) -> f64 {
    if x < SERIES_ANGLE {
        let x2 = x * x;
        let x4 = x2 * x2;
        1.0 + x2 / 6.0
            + 7.0 * x4 / 360.0
            + 31.0 * x4 * x2 / 15120.0
            + 127.0 * x4 * x4 / 604_800.0
            + 73.0 * x4 * x4 * x2 / 3_421_440.0
    } else {
        x / sin(x)
    }
}

/// Coefficients `(c1, c2, c3, c4)` of the right Jacobian
/// `I - c1 ad + c2 ad^2 - c3 ad^3 + c4 ad^4`.
fn jr_coefs(x: f64) -> [f64; 4] {
    if x < JR_SERIES_ANGLE {
        let x2 = x * x;
        let x4 = x2 * x2;
        let x6 = x4 * x2;
        let x8 = x4 * x4;
        let x10 = x8 * x2;
        [
            0.5 - x4 / 720.0 + x6 / 20160.0 - x8 / 1_209_600.0 + x10 / 119_750_400.0,
            1.0 / 6.0 - x4 / 5040.0 + x6 / 181_440.0 - x8 / 13_305_600.0 + x10 / 1_556_755_200.0,
            1.0 / 24.0 - x2 / 360.0 + x4 / 13440.0 - x6 / 907_200.0 + x8 / 95_800_320.0
                - x10 / 14_529_715_200.0,
            1.0 / 120.0 - x2 / 2520.0 + x4 / 120_960.0 - x6 / 9_979_200.0
                + x8 / 1_245_404_160.0
                - x10 / 217_945_728_000.0,
        ]
    } else {
        let (s, c) = (sin(x), cos(x));
        let x2 = x * x;
        [
            (4.0 - x * s - 4.0 * c) / (2.0 * x2),
            (4.0 * x - 5.0 * s + x * c) / (2.0 * x2 * x),
            (2.0 - x * s - 2.0 * c) / (2.0 * x2 * x2),
            (2.0 * x - 3.0 * s + x * c) / (2.0 * x2 * x2 * x),
        ]
    }
}

/// Rodrigues formula.
pub fn so3_exp(phi: &Vector3<f64>) -> Matrix3<f64> {
    let x = phi.norm();
    let k = skew(phi);
    Matrix3::identity() + k * sinc(x) + k * k * cosc(x)
}

/// Principal rotation vector with angle in `[0, pi)`.
pub fn so3_log(r: &Matrix3<f64>) -> Result<Vector3<f64>> {
    let tr = r.trace();
    if tr <= -1.0 + PI_TRACE_MARGIN {
        return Err(Error::AngleAtPi);
    }
    let w = math::unskew(&(r - r.transpose())) * 0.5;
    let c = ((tr - 1.0) * 0.5).clamp(-1.0, 1.0);
    let angle = atan2(w.norm(), c);
    Ok(w * inv_sinc(angle))
}

/// `V(phi) = sum [phi]x^n / (n+1)!`, the left Jacobian of SO(3).
pub fn v_matrix(phi: &Vector3<f64>) -> Matrix3<f64> {
    let x = phi.norm();
    let k = skew(phi);
    Matrix3::identity() + k * cosc(x) + k * k * sinc3(x)
}

pub fn v_matrix_inv(phi: &Vector3<f64>) -> Matrix3<f64> {
    let x = phi.norm();
    let k = skew(phi);
    Matrix3::identity() - k * 0.5 + k * k * vinv_coef(x)
}

/// Lie algebra matrix of `zeta`.
pub fn hat(zeta: &TangentVector) -> DMatrix<f64> {
    let n = zeta.kappa() + 3;
    let mut m = DMatrix::zeros(n, n);
    set_block3(&mut m, 0, 0, &skew(&zeta.phi()));
    for i in 0..zeta.kappa() {
        m.fixed_view_mut::<3, 1>(0, 3 + i).copy_from(&zeta.rho(i));
    }
    m
}

/// Inverse of [`hat`]; the input must be `(k+3) x (k+3)`.
pub fn vee(m: &DMatrix<f64>) -> Result<TangentVector> {
    let n = m.nrows();
    if n < 3 || m.ncols() != n {
        return Err(Error::InvalidElement("algebra matrix must be square with size >= 3"));
    }
    let phi = math::unskew(&math::block3(m, 0, 0));
    let rhos: Vec<_> = (0..n - 3).map(|i| m.fixed_view::<3, 1>(0, 3 + i).into_owned()).collect();
    Ok(TangentVector::from_parts(phi, &rhos))
}

pub fn exp_map(zeta: &TangentVector) -> GroupElement {
    let phi = zeta.phi();
    let v = v_matrix(&phi);
    let translations = (0..zeta.kappa()).map(|i| v * zeta.rho(i)).collect();
    GroupElement { rotation: so3_exp(&phi), translations }
}

pub fn log_map(x: &GroupElement) -> Result<TangentVector> {
    let phi = so3_log(x.rotation())?;
    let vinv = v_matrix_inv(&phi);
    let rhos: Vec<_> = x.translations().iter().map(|p| vinv * p).collect();
    Ok(TangentVector::from_parts(phi, &rhos))
}

/// Adjoint representation `Ad_X`, with `hat(Ad_X z) = X hat(z) X^-1`.
pub fn adjoint_rep(x: &GroupElement) -> DMatrix<f64> {
    let n = x.dof();
    let r = x.rotation();
    let mut m = DMatrix::zeros(n, n);
    set_block3(&mut m, 0, 0, r);
    for (i, p) in x.translations().iter().enumerate() {
        let o = 3 + 3 * i;
        set_block3(&mut m, o, o, r);
        set_block3(&mut m, o, 0, &(skew(p) * r));
    }
    m
}

/// Algebra adjoint `ad_z`, with `ad_z w = [z, w]`.
pub fn adjoint_alg(zeta: &TangentVector) -> DMatrix<f64> {
    let n = zeta.dim();
    let k = skew(&zeta.phi());
    let mut m = DMatrix::zeros(n, n);
    set_block3(&mut m, 0, 0, &k);
    for i in 0..zeta.kappa() {
        let o = 3 + 3 * i;
        set_block3(&mut m, o, o, &k);
        set_block3(&mut m, o, 0, &skew(&zeta.rho(i)));
    }
    m
}

/// Right Jacobian: `exp(z + e) ~ exp(z) exp(J_r(z) e)` for small `e`.
pub fn right_jacobian(zeta: &TangentVector) -> DMatrix<f64> {
    let n = zeta.dim();
    let ad = adjoint_alg(zeta);
    let ad2 = &ad * &ad;
    let ad3 = &ad2 * &ad;
    let ad4 = &ad2 * &ad2;
    let [c1, c2, c3, c4] = jr_coefs(zeta.angle());
    DMatrix::identity(n, n) - ad * c1 + ad2 * c2 - ad3 * c3 + ad4 * c4
}

/// `B_n / n!` for `n >= 2` even, from `B_2k = (-1)^(k+1) 2 (2k)! zeta(2k) / (2 pi)^2k`.
fn bernoulli_over_factorial(n: usize) -> f64 {
    debug_assert!(n >= 2 && n.is_multiple_of(2));
    let k = n / 2;
    let pi = core::f64::consts::PI;
    let zeta = match k {
        1 => pi * pi / 6.0,
        2 => math::powi(pi, 4) / 90.0,
        3 => math::powi(pi, 6) / 945.0,
        4 => math::powi(pi, 8) / 9450.0,
        5 => math::powi(pi, 10) / 93555.0,
        _ => (1..=64).map(|m| math::powi(m as f64, -(n as i32))).sum(),
    };
    let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
    sign * 2.0 * zeta / math::powi(2.0 * pi, n as i32)
}

/// Bernoulli series `sum B_n/n! (-ad)^n` truncated once an even term falls
/// below `term_tol` in max-norm, or after `max_terms` powers.
pub fn right_jacobian_inv_series(zeta: &TangentVector, max_terms: usize, term_tol: f64) -> DMatrix<f64> {
    let n = zeta.dim();
    let neg_ad = -adjoint_alg(zeta);
    let mut acc = DMatrix::identity(n, n) + &neg_ad * -0.5;
    let mut power = neg_ad.clone();
    for k in 2..=max_terms {
        power = &power * &neg_ad;
        if k % 2 == 1 {
            continue;
        }
        let term = &power * bernoulli_over_factorial(k);
        let size = math::max_abs(&term);
        acc += term;
        if size < term_tol {
            break;
        }
    }
    acc
}

/// Inverse right Jacobian from the Bernoulli series, validated against
/// `J_r`; falls back to direct inversion when the series check fails.
pub fn right_jacobian_inv(zeta: &TangentVector) -> Result<DMatrix<f64>> {
    if zeta.angle() >= core::f64::consts::PI {
        return Err(Error::AngleAtPi);
    }
    let n = zeta.dim();
    let jr = right_jacobian(zeta);
    let eye = DMatrix::<f64>::identity(n, n);
    let series = right_jacobian_inv_series(zeta, JR_INV_MAX_TERMS, JR_INV_TERM_TOL);
    if math::max_abs(&(&jr * &series - &eye)) <= JR_INV_CHECK_TOL {
        return Ok(series);
    }
    let direct = jr.clone().try_inverse().ok_or(Error::SingularJacobian)?;
    if math::max_abs(&(&jr * &direct - &eye)) <= JR_INV_CHECK_TOL {
        Ok(direct)
    } else {
        Err(Error::SingularJacobian)
    }
}

/// First-order BCH: `log(exp z exp e) ~ z + J_r^-1(z) e`.
pub fn bch_first_order(zeta: &TangentVector, eta: &TangentVector) -> Result<TangentVector> {
    if zeta.kappa() != eta.kappa() {
        return Err(Error::DimensionMismatch { expected: zeta.dim(), actual: eta.dim() });
    }
    let corr = right_jacobian_inv(zeta)? * eta.coords();
    Ok(TangentVector { kappa: zeta.kappa(), coords: zeta.coords() + corr })
}

/// Geodesic rotation angle between two rotations.
pub fn rotation_angle_between(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    let r = a.transpose() * b;
    let w = math::unskew(&(r - r.transpose())) * 0.5;
    atan2(w.norm(), ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0))
}

/// Unit rotation axis helper used by callers building test geometry.
pub fn rotation_about(axis: &Vector3<f64>, angle: f64) -> Matrix3<f64> {
    let n = sqrt(axis.norm_squared());
    so3_exp(&(axis * (angle / n)))
}
