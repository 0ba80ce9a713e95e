//! Block product groups for the robot state and its measurement.
//!
//! Both groups are block-diagonal pairs of `SE_k(3)` elements whose lower
//! block has its rotation pinned to the identity:
//!
//! * [`StateElement`]: upper `SE_2(3)` carrying `(R, p, v)`, lower block
//!   carrying the gyro and accelerometer biases; 10x10 embedding.
//! * [`MeasurementElement`]: upper `SE(3)` carrying `(R, p)`, lower block
//!   carrying the body velocity; 8x8 embedding.
//!
//! The public coordinates keep the lower block's three pinned rotation
//! slots so that vectors line up with 18x18 / 12x12 noise matrices. Those
//! slots are inert: `exp` ignores them, `log` returns zero there, and `Ad`,
//! `J_r`, `J_r^-1` act on them as the identity (`ad` as zero).
//!
//! State layout (18): `theta 0..3, p 3..6, v 6..9, pinned 9..12, b_g 12..15, b_a 15..18`.
//! Measurement layout (12): `theta 0..3, p 3..6, pinned 6..9, v 9..12`.

use alloc::vec;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use crate::error::Result;
use crate::group::LieGroup;
use crate::liegroup::{self, GroupElement, TangentVector};
use crate::math;

/// Offsets into the 18-dim state tangent.
pub mod state_index {
    pub const ROT: usize = 0;
    pub const POS: usize = 3;
    pub const VEL: usize = 6;
    pub const PINNED: usize = 9;
    pub const GYRO_BIAS: usize = 12;
    pub const ACCEL_BIAS: usize = 15;
    pub const DIM: usize = 18;
}

/// Offsets into the 12-dim measurement tangent.
pub mod meas_index {
    pub const ROT: usize = 0;
    pub const POS: usize = 3;
    pub const PINNED: usize = 6;
    pub const VEL: usize = 9;
    pub const DIM: usize = 12;
}

/// Product tangent `(xi1, xi2)`; `xi2.phi` is the pinned rotation and is
/// always zero.
#[derive(Clone, Debug, PartialEq)]
pub struct ProductTangent {
    pub xi1: TangentVector,
    pub xi2: TangentVector,
}

impl ProductTangent {
    pub fn from_coords(upper_kappa: usize, lower_kappa: usize, coords: &DVector<f64>) -> Self {
        let nu = 3 + 3 * upper_kappa;
        let nl = 3 + 3 * lower_kappa;
        assert_eq!(coords.len(), nu + nl, "product tangent length");
        let xi1 = TangentVector::new(upper_kappa, coords.rows(0, nu).into_owned()).unwrap();
        let mut lower = coords.rows(nu, nl).into_owned();
        lower.fixed_rows_mut::<3>(0).fill(0.0);
        let xi2 = TangentVector::new(lower_kappa, lower).unwrap();
        Self { xi1, xi2 }
    }

    pub fn to_coords(&self) -> DVector<f64> {
        let mut out = DVector::zeros(self.xi1.dim() + self.xi2.dim());
        out.rows_mut(0, self.xi1.dim()).copy_from(self.xi1.coords());
        out.rows_mut(self.xi1.dim(), self.xi2.dim()).copy_from(self.xi2.coords());
        out
    }
}

/// Upper/lower split shared by both product groups.
#[derive(Clone, Copy)]
struct Layout {
    upper_kappa: usize,
    lower_kappa: usize,
}

impl Layout {
    const STATE: Layout = Layout { upper_kappa: 2, lower_kappa: 2 };
    const MEAS: Layout = Layout { upper_kappa: 1, lower_kappa: 1 };

    fn upper_dim(self) -> usize {
        3 + 3 * self.upper_kappa
    }

    fn dim(self) -> usize {
        self.upper_dim() + 3 + 3 * self.lower_kappa
    }

    fn split(self, xi: &DVector<f64>) -> ProductTangent {
        ProductTangent::from_coords(self.upper_kappa, self.lower_kappa, xi)
    }

    /// Block-diagonal matrix with the lower block's pinned row and column
    /// replaced by `pinned_diag * I`.
    fn assemble(self, upper: DMatrix<f64>, mut lower: DMatrix<f64>, pinned_diag: f64) -> DMatrix<f64> {
        let nl = lower.nrows();
        lower.rows_mut(0, 3).fill(0.0);
        lower.columns_mut(0, 3).fill(0.0);
        for i in 0..3 {
            lower[(i, i)] = pinned_diag;
        }
        debug_assert_eq!(upper.nrows() + nl, self.dim());
        math::block_diag(&[&upper, &lower])
    }

    fn exp(self, xi: &DVector<f64>) -> (GroupElement, GroupElement) {
        let t = self.split(xi);
        (liegroup::exp_map(&t.xi1), liegroup::exp_map(&t.xi2))
    }

    fn log(self, upper: &GroupElement, lower: &GroupElement) -> Result<DVector<f64>> {
        let t = ProductTangent { xi1: liegroup::log_map(upper)?, xi2: liegroup::log_map(lower)? };
        Ok(self.split(&t.to_coords()).to_coords())
    }

    fn adjoint(self, upper: &GroupElement, lower: &GroupElement) -> DMatrix<f64> {
        self.assemble(liegroup::adjoint_rep(upper), liegroup::adjoint_rep(lower), 1.0)
    }

    fn ad(self, xi: &DVector<f64>) -> DMatrix<f64> {
        let t = self.split(xi);
        self.assemble(liegroup::adjoint_alg(&t.xi1), liegroup::adjoint_alg(&t.xi2), 0.0)
    }

    fn right_jacobian(self, xi: &DVector<f64>) -> DMatrix<f64> {
        let t = self.split(xi);
        self.assemble(liegroup::right_jacobian(&t.xi1), liegroup::right_jacobian(&t.xi2), 1.0)
    }

    fn right_jacobian_inv(self, xi: &DVector<f64>) -> Result<DMatrix<f64>> {
        let t = self.split(xi);
        Ok(self.assemble(
            liegroup::right_jacobian_inv(&t.xi1)?,
            liegroup::right_jacobian_inv(&t.xi2)?,
            1.0,
        ))
    }

    fn to_matrix(self, upper: &GroupElement, lower: &GroupElement) -> DMatrix<f64> {
        math::block_diag(&[&upper.to_matrix(), &lower.to_matrix()])
    }
}

/// Robot state on `SE_2(3) x R^3 x R^3`.
#[derive(Clone, Debug, PartialEq)]
pub struct StateElement {
    pub rotation: Matrix3<f64>,
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub gyro_bias: Vector3<f64>,
    pub accel_bias: Vector3<f64>,
}

impl StateElement {
    pub fn new(
        rotation: Matrix3<f64>,
        position: Vector3<f64>,
        velocity: Vector3<f64>,
        gyro_bias: Vector3<f64>,
        accel_bias: Vector3<f64>,
    ) -> Self {
        Self { rotation, position, velocity, gyro_bias, accel_bias }
    }

    pub fn upper(&self) -> GroupElement {
        GroupElement::from_parts(self.rotation, vec![self.position, self.velocity])
    }

    pub fn lower(&self) -> GroupElement {
        GroupElement::from_parts(Matrix3::identity(), vec![self.gyro_bias, self.accel_bias])
    }

    fn from_blocks(upper: &GroupElement, lower: &GroupElement) -> Self {
        Self {
            rotation: *upper.rotation(),
            position: *upper.translation(0),
            velocity: *upper.translation(1),
            gyro_bias: *lower.translation(0),
            accel_bias: *lower.translation(1),
        }
    }

    pub fn from_matrix(m: &DMatrix<f64>) -> Result<Self> {
        if m.nrows() != 10 || m.ncols() != 10 {
            return Err(crate::Error::InvalidElement("state embedding is 10x10"));
        }
        let upper = GroupElement::from_matrix(&m.view((0, 0), (5, 5)).into_owned())?;
        let lower = GroupElement::from_matrix(&m.view((5, 5), (5, 5)).into_owned())?;
        if (lower.rotation() - Matrix3::identity()).norm() > 1e-12 {
            return Err(crate::Error::InvalidElement("bias block rotation must be identity"));
        }
        if math::max_abs(&m.view((0, 5), (5, 5)).into_owned()) > 0.0
            || math::max_abs(&m.view((5, 0), (5, 5)).into_owned()) > 0.0
        {
            return Err(crate::Error::InvalidElement("state embedding must be block diagonal"));
        }
        Ok(Self::from_blocks(&upper, &lower))
    }

    /// The `SE(3)` part `(R, p)`.
    pub fn pose(&self) -> GroupElement {
        GroupElement::pose(self.rotation, self.position)
    }
}

impl LieGroup for StateElement {
    type Shape = ();

    fn shape(&self) {}

    fn dof_of(_: ()) -> usize {
        state_index::DIM
    }

    fn identity(_: ()) -> Self {
        Self::new(Matrix3::identity(), Vector3::zeros(), Vector3::zeros(), Vector3::zeros(), Vector3::zeros())
    }

    fn compose(&self, rhs: &Self) -> Self {
        Self {
            rotation: self.rotation * rhs.rotation,
            position: self.rotation * rhs.position + self.position,
            velocity: self.rotation * rhs.velocity + self.velocity,
            gyro_bias: self.gyro_bias + rhs.gyro_bias,
            accel_bias: self.accel_bias + rhs.accel_bias,
        }
    }

    fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            position: -(rt * self.position),
            velocity: -(rt * self.velocity),
            gyro_bias: -self.gyro_bias,
            accel_bias: -self.accel_bias,
        }
    }

    fn exp(_: (), xi: &DVector<f64>) -> Self {
        let (u, l) = Layout::STATE.exp(xi);
        Self::from_blocks(&u, &l)
    }

    fn log(&self) -> Result<DVector<f64>> {
        Layout::STATE.log(&self.upper(), &self.lower())
    }

    fn adjoint(&self) -> DMatrix<f64> {
        Layout::STATE.adjoint(&self.upper(), &self.lower())
    }

    fn ad(_: (), xi: &DVector<f64>) -> DMatrix<f64> {
        Layout::STATE.ad(xi)
    }

    fn right_jacobian(_: (), xi: &DVector<f64>) -> DMatrix<f64> {
        Layout::STATE.right_jacobian(xi)
    }

    fn right_jacobian_inv(_: (), xi: &DVector<f64>) -> Result<DMatrix<f64>> {
        Layout::STATE.right_jacobian_inv(xi)
    }

    fn to_matrix(&self) -> DMatrix<f64> {
        Layout::STATE.to_matrix(&self.upper(), &self.lower())
    }
}

/// Pose-plus-body-velocity measurement on `SE(3) x R^3`.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementElement {
    pub rotation: Matrix3<f64>,
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
}

impl MeasurementElement {
    pub fn new(rotation: Matrix3<f64>, position: Vector3<f64>, velocity: Vector3<f64>) -> Self {
        Self { rotation, position, velocity }
    }

    pub fn upper(&self) -> GroupElement {
        GroupElement::pose(self.rotation, self.position)
    }

    pub fn lower(&self) -> GroupElement {
        GroupElement::pose(Matrix3::identity(), self.velocity)
    }

    fn from_blocks(upper: &GroupElement, lower: &GroupElement) -> Self {
        Self { rotation: *upper.rotation(), position: *upper.translation(0), velocity: *lower.translation(0) }
    }
}

impl LieGroup for MeasurementElement {
    type Shape = ();

    fn shape(&self) {}

    fn dof_of(_: ()) -> usize {
        meas_index::DIM
    }

    fn identity(_: ()) -> Self {
        Self::new(Matrix3::identity(), Vector3::zeros(), Vector3::zeros())
    }

    fn compose(&self, rhs: &Self) -> Self {
        Self {
            rotation: self.rotation * rhs.rotation,
            position: self.rotation * rhs.position + self.position,
            velocity: self.velocity + rhs.velocity,
        }
    }

    fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self { rotation: rt, position: -(rt * self.position), velocity: -self.velocity }
    }

    fn exp(_: (), xi: &DVector<f64>) -> Self {
        let (u, l) = Layout::MEAS.exp(xi);
        Self::from_blocks(&u, &l)
    }

    fn log(&self) -> Result<DVector<f64>> {
        Layout::MEAS.log(&self.upper(), &self.lower())
    }

    fn adjoint(&self) -> DMatrix<f64> {
        Layout::MEAS.adjoint(&self.upper(), &self.lower())
    }

    fn ad(_: (), xi: &DVector<f64>) -> DMatrix<f64> {
        Layout::MEAS.ad(xi)
    }

    fn right_jacobian(_: (), xi: &DVector<f64>) -> DMatrix<f64> {
        Layout::MEAS.right_jacobian(xi)
    }

    fn right_jacobian_inv(_: (), xi: &DVector<f64>) -> Result<DMatrix<f64>> {
        Layout::MEAS.right_jacobian_inv(xi)
    }

    fn to_matrix(&self) -> DMatrix<f64> {
        Layout::MEAS.to_matrix(&self.upper(), &self.lower())
    }
}

/// The vector group `(R^3, +)`, used for velocity-only measurements.
#[derive(Clone, Debug, PartialEq)]
pub struct Translation3(pub Vector3<f64>);

impl LieGroup for Translation3 {
    type Shape = ();

    fn shape(&self) {}

    fn dof_of(_: ()) -> usize {
        3
    }

    fn identity(_: ()) -> Self {
        Self(Vector3::zeros())
    }

    fn compose(&self, rhs: &Self) -> Self {
        Self(self.0 + rhs.0)
    }

    fn inverse(&self) -> Self {
        Self(-self.0)
    }

    fn exp(_: (), xi: &DVector<f64>) -> Self {
        assert_eq!(xi.len(), 3, "translation tangent length");
        Self(math::vec3(xi, 0))
    }

    fn log(&self) -> Result<DVector<f64>> {
        Ok(DVector::from_column_slice(self.0.as_slice()))
    }

    fn adjoint(&self) -> DMatrix<f64> {
        DMatrix::identity(3, 3)
    }

    fn ad(_: (), _: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::zeros(3, 3)
    }

    fn right_jacobian(_: (), _: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::identity(3, 3)
    }

    fn right_jacobian_inv(_: (), _: &DVector<f64>) -> Result<DMatrix<f64>> {
        Ok(DMatrix::identity(3, 3))
    }

    fn to_matrix(&self) -> DMatrix<f64> {
        let mut m = DMatrix::identity(4, 4);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.0);
        m
    }
}
