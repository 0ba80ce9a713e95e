//! Estimation on matrix Lie groups.
//!
//! Geometry of `SE_k(3)` (`k = 0` is SO(3), `k = 1` is SE(3), `k = 2` is
//! SE_2(3)), the block product groups used for an IMU-driven robot state and
//! its pose/velocity measurement, stochastic operations on right-perturbed
//! group elements, a generic EKF on Lie groups with Mahalanobis gating, and
//! the IMU, body-velocity and fiducial-marker models of a leader/follower
//! robot team.
//!
//! The crate is `no_std` with `alloc`. Build without default features and
//! with the `libm` feature for targets without `std`.

#![no_std]

extern crate alloc;
#[cfg(feature = "std")]
extern crate std;

pub mod ekf;
pub mod error;
pub mod group;
pub mod liegroup;
pub mod math;
pub mod models;
pub mod product;
pub mod stochastic;

pub use error::{Error, Result};
pub use group::LieGroup;
pub use liegroup::{GroupElement, TangentVector};
pub use product::{MeasurementElement, StateElement, Translation3};
pub use stochastic::{CorrelatedSet, LinearConstraint, StochasticElement};
