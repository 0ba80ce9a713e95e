use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use crate::ekf::{MeasurementModel, ProcessModel};
use crate::error::{Error, Result};
use crate::math::{set_block3, skew};
use crate::product::{meas_index as mi, state_index as si, MeasurementElement, StateElement, Translation3};

use super::defaults;

pub const MIN_CALIBRATION_SAMPLES: usize = 100;

/// Gyro rate (rad/s) and specific force (m/s^2) in the body frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImuSample {
    pub omega: Vector3<f64>,
    pub accel: Vector3<f64>,
    pub t: f64,
}

/// Body-frame velocity reading with its covariance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VelocitySample {
    pub v: Vector3<f64>,
    pub t: f64,
    pub cov: Matrix3<f64>,
}

/// Gravity in the odometry frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GravityModel {
    g: Vector3<f64>,
}

impl GravityModel {
    pub fn new(g: Vector3<f64>) -> Result<Self> {
        let n = g.norm();
        if !(9.7..=9.9).contains(&n) {
            return Err(Error::InvalidParameter("gravity magnitude must lie in [9.7, 9.9]"));
        }
        Ok(Self { g })
    }

    pub fn g(&self) -> &Vector3<f64> {
        &self.g
    }
}

impl Default for GravityModel {
    fn default() -> Self {
        Self { g: Vector3::new(0.0, 0.0, -defaults::GRAVITY) }
    }
}

/// `f(X, u) = (w - b_g, R^T v, a - b_a + R^T g, 0, 0, 0)`.
pub fn imu_process(x: &StateElement, sample: &ImuSample, gravity: &GravityModel) -> DVector<f64> {
    let rt = x.rotation.transpose();
    let mut f = DVector::zeros(si::DIM);
    f.fixed_rows_mut::<3>(si::ROT).copy_from(&(sample.omega - x.gyro_bias));
    f.fixed_rows_mut::<3>(si::POS).copy_from(&(rt * x.velocity));
    f.fixed_rows_mut::<3>(si::VEL).copy_from(&(sample.accel - x.accel_bias + rt * gravity.g()));
    f
}

/// Closed-form `d f(X exp e) / de`.
pub fn imu_jacobian(x: &StateElement, gravity: &GravityModel) -> DMatrix<f64> {
    let rt = x.rotation.transpose();
    let mut d = DMatrix::zeros(si::DIM, si::DIM);
    set_block3(&mut d, si::ROT, si::GYRO_BIAS, &-Matrix3::identity());
    set_block3(&mut d, si::POS, si::ROT, &skew(&(rt * x.velocity)));
    set_block3(&mut d, si::POS, si::VEL, &Matrix3::identity());
    set_block3(&mut d, si::VEL, si::ROT, &skew(&(rt * gravity.g())));
    set_block3(&mut d, si::VEL, si::ACCEL_BIAS, &-Matrix3::identity());
    d
}

#[derive(Clone, Debug)]
pub struct ImuProcessModel {
    pub q: DMatrix<f64>,
    pub gravity: GravityModel,
}

impl ImuProcessModel {
    /// `Q = diag(Q_g, 0, Q_a, 0, Q_bg, Q_ba)` from per-axis densities.
    pub fn new(gyro: f64, accel: f64, gyro_walk: f64, accel_walk: f64, gravity: GravityModel) -> Self {
        let mut diag = DVector::zeros(si::DIM);
        diag.fixed_rows_mut::<3>(si::ROT).fill(gyro);
        diag.fixed_rows_mut::<3>(si::VEL).fill(accel);
        diag.fixed_rows_mut::<3>(si::GYRO_BIAS).fill(gyro_walk);
        diag.fixed_rows_mut::<3>(si::ACCEL_BIAS).fill(accel_walk);
        Self { q: DMatrix::from_diagonal(&diag), gravity }
    }

    pub fn with_defaults(gravity: GravityModel) -> Self {
        Self::new(
            defaults::GYRO_NOISE,
            defaults::ACCEL_NOISE,
            defaults::GYRO_BIAS_WALK,
            defaults::ACCEL_BIAS_WALK,
            gravity,
        )
    }
}

impl ProcessModel<StateElement> for ImuProcessModel {
    type Input = ImuSample;

    fn velocity(&self, x: &StateElement, u: &ImuSample) -> DVector<f64> {
        imu_process(x, u, &self.gravity)
    }

    fn noise_density(&self) -> &DMatrix<f64> {
        &self.q
    }

    fn velocity_jacobian(&self, x: &StateElement, _u: &ImuSample) -> Option<DMatrix<f64>> {
        Some(imu_jacobian(x, &self.gravity))
    }
}

/// Noiseless body velocity `R^T v`.
pub fn velocity_measurement(x: &StateElement) -> Vector3<f64> {
    x.rotation.transpose() * x.velocity
}

/// Rows of `H` for the body velocity: `[R^T v]x` on rotation, `I` on velocity.
fn velocity_rows(x: &StateElement) -> DMatrix<f64> {
    let mut h = DMatrix::zeros(3, si::DIM);
    set_block3(&mut h, 0, si::ROT, &skew(&velocity_measurement(x)));
    set_block3(&mut h, 0, si::VEL, &Matrix3::identity());
    h
}

/// Velocity-only update on `R^3`.
#[derive(Clone, Debug)]
pub struct VelocityModel {
    pub r: DMatrix<f64>,
}

impl VelocityModel {
    pub fn new(cov: &Matrix3<f64>) -> Self {
        Self { r: DMatrix::from_iterator(3, 3, cov.iter().copied()) }
    }
}

impl MeasurementModel<StateElement> for VelocityModel {
    type Output = Translation3;

    fn predict(&self, x: &StateElement) -> Translation3 {
        Translation3(velocity_measurement(x))
    }

    fn noise(&self) -> &DMatrix<f64> {
        &self.r
    }

    fn jacobian(&self, x: &StateElement) -> Option<DMatrix<f64>> {
        Some(velocity_rows(x))
    }
}

/// Joint pose and body-velocity update on the measurement group.
#[derive(Clone, Debug)]
pub struct PoseVelocityModel {
    pub r: DMatrix<f64>,
}

impl MeasurementModel<StateElement> for PoseVelocityModel {
    type Output = MeasurementElement;

    fn predict(&self, x: &StateElement) -> MeasurementElement {
        MeasurementElement::new(x.rotation, x.position, velocity_measurement(x))
    }

    fn noise(&self) -> &DMatrix<f64> {
        &self.r
    }

    fn jacobian(&self, x: &StateElement) -> Option<DMatrix<f64>> {
        let mut h = DMatrix::zeros(mi::DIM, si::DIM);
        for i in 0..6 {
            h[(i, i)] = 1.0;
        }
        h.view_mut((mi::VEL, 0), (3, si::DIM)).copy_from(&velocity_rows(x));
        Some(h)
    }
}

/// Static bias calibration assuming a level robot (`R = I`).
pub fn calibrate_imu_bias(samples: &[ImuSample], gravity: &GravityModel) -> Result<(Vector3<f64>, Vector3<f64>)> {
    if samples.len() < MIN_CALIBRATION_SAMPLES {
        return Err(Error::InsufficientSamples { required: MIN_CALIBRATION_SAMPLES, actual: samples.len() });
    }
    let n = samples.len() as f64;
    let omega = samples.iter().fold(Vector3::zeros(), |acc, s| acc + s.omega) / n;
    let accel = samples.iter().fold(Vector3::zeros(), |acc, s| acc + s.accel) / n;
    Ok((omega, accel + gravity.g()))
}
