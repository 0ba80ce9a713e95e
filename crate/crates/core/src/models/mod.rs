//! Sensor and process models for an IMU-driven ground robot observing
//! fiducial markers.

mod imu;
mod markers;

pub use imu::{
    calibrate_imu_bias, imu_jacobian, imu_process, velocity_measurement, GravityModel, ImuProcessModel,
    ImuSample, PoseVelocityModel, VelocityModel, VelocitySample, MIN_CALIBRATION_SAMPLES,
};
pub use markers::{
    assemble_pose_velocity_measurement, follower1_pseudo_pose, follower2_pseudo_pose, follower_pseudo_pose,
    leader_pseudo_pose, observe_mobile_marker, observe_stationary_marker, pose_message, FrameExtrinsics, MarkerAnchor, MarkerObservation,
    PoseMessage, RobotFrames, RobotId,
};

/// Default tuning used by the simulations.
pub mod defaults {
    use nalgebra::{DMatrix, DVector};

    pub const GRAVITY: f64 = 9.80637;
    pub const GYRO_NOISE: f64 = 1e-6;
    pub const ACCEL_NOISE: f64 = 1.0;
    pub const GYRO_BIAS_WALK: f64 = 1e-6;
    pub const ACCEL_BIAS_WALK: f64 = 1.0;
    pub const VELOCITY_VAR: f64 = 1.5e-4;
    pub const LEADER_MARKER_ROT_VAR: f64 = 0.0075;
    pub const LEADER_MARKER_POS_VAR: f64 = 0.005;
    pub const FOLLOWER_MARKER_ROT_VAR: f64 = 0.0050;
    pub const FOLLOWER_MARKER_POS_VAR: f64 = 0.0016;
    pub const INITIAL_VAR: f64 = 1e-2;
    pub const GATE_THRESHOLD: f64 = 40.0;
    pub const EPSILON: f64 = 1e-6;
    pub const STALENESS_S: f64 = 0.5;

    /// 6x6 marker covariance `diag(rot * I3, pos * I3)`.
    pub fn marker_cov(rot: f64, pos: f64) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_row_slice(&[rot, rot, rot, pos, pos, pos]))
    }

    pub fn initial_cov() -> DMatrix<f64> {
        DMatrix::identity(18, 18) * INITIAL_VAR
    }
}
