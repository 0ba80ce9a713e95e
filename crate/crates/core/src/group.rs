//! Common interface over the supported matrix Lie groups.
//!
//! Tangent vectors cross this interface as plain `DVector`s in each group's
//! documented coordinate order.

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::liegroup::{self, GroupElement, TangentVector};

pub trait LieGroup: Clone + core::fmt::Debug {
    /// Runtime shape parameter (`kappa` for `SE_k(3)`, `()` for fixed groups).
    type Shape: Copy + PartialEq + core::fmt::Debug;

    fn shape(&self) -> Self::Shape;
    fn dof_of(shape: Self::Shape) -> usize;
    fn identity(shape: Self::Shape) -> Self;
    fn compose(&self, rhs: &Self) -> Self;
    fn inverse(&self) -> Self;
    /// Panics if `xi.len() != dof_of(shape)`.
    fn exp(shape: Self::Shape, xi: &DVector<f64>) -> Self;
    fn log(&self) -> Result<DVector<f64>>;
    fn adjoint(&self) -> DMatrix<f64>;
    fn ad(shape: Self::Shape, xi: &DVector<f64>) -> DMatrix<f64>;
    fn right_jacobian(shape: Self::Shape, xi: &DVector<f64>) -> DMatrix<f64>;
    fn right_jacobian_inv(shape: Self::Shape, xi: &DVector<f64>) -> Result<DMatrix<f64>>;
    fn to_matrix(&self) -> DMatrix<f64>;

    fn dof(&self) -> usize {
        Self::dof_of(self.shape())
    }

    /// `self * exp(xi)`
    fn retract(&self, xi: &DVector<f64>) -> Self {
        self.compose(&Self::exp(self.shape(), xi))
    }

    /// `log(self^-1 * other)`
    fn local(&self, other: &Self) -> Result<DVector<f64>> {
        self.inverse().compose(other).log()
    }

    /// Principal fractional power `exp(alpha log self)`.
    fn power(&self, alpha: f64) -> Result<Self> {
        Ok(Self::exp(self.shape(), &(self.log()? * alpha)))
    }
}

fn tangent(kappa: usize, xi: &DVector<f64>) -> TangentVector {
    TangentVector::new(kappa, xi.clone()).expect("tangent length must match the group")
}

impl LieGroup for GroupElement {
    type Shape = usize;

    fn shape(&self) -> usize {
        self.kappa()
    }

    fn dof_of(kappa: usize) -> usize {
        3 + 3 * kappa
    }

    fn identity(kappa: usize) -> Self {
        GroupElement::identity(kappa)
    }

    fn compose(&self, rhs: &Self) -> Self {
        GroupElement::compose(self, rhs)
    }

    fn inverse(&self) -> Self {
        GroupElement::inverse(self)
    }

    fn exp(kappa: usize, xi: &DVector<f64>) -> Self {
        liegroup::exp_map(&tangent(kappa, xi))
    }

    fn log(&self) -> Result<DVector<f64>> {
        Ok(liegroup::log_map(self)?.into_coords())
    }

    fn adjoint(&self) -> DMatrix<f64> {
        liegroup::adjoint_rep(self)
    }

    fn ad(kappa: usize, xi: &DVector<f64>) -> DMatrix<f64> {
        liegroup::adjoint_alg(&tangent(kappa, xi))
    }

    fn right_jacobian(kappa: usize, xi: &DVector<f64>) -> DMatrix<f64> {
        liegroup::right_jacobian(&tangent(kappa, xi))
    }

    fn right_jacobian_inv(kappa: usize, xi: &DVector<f64>) -> Result<DMatrix<f64>> {
        liegroup::right_jacobian_inv(&tangent(kappa, xi))
    }

    fn to_matrix(&self) -> DMatrix<f64> {
        GroupElement::to_matrix(self)
    }
}
