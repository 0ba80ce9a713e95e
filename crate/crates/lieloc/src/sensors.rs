//! Sensor synthesis from ground truth: IMU, body velocity, marker poses,
//! static calibration data and filter initial errors.

use std::collections::BTreeMap;

use lieloc_core::liegroup::{rotation_about, so3_exp};
use lieloc_core::models::{
    observe_mobile_marker, observe_stationary_marker, FrameExtrinsics, ImuSample, MarkerAnchor,
    MarkerObservation, RobotFrames, VelocitySample,
};
use lieloc_core::{GroupElement, LieGroup, StateElement};
use nalgebra::{DVector, Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::config::{FaultMode, RobotSpec, Role, Scenario, SensorSpec};
use crate::error::{SimError, SimResult};
use crate::trajectory::{BodyTwist, RobotTruth};

/// Independent random streams of one robot.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Imu = 0,
    Velocity = 1,
    Marker = 2,
    Fault = 3,
    Initial = 4,
    Calibration = 5,
}

/// Generator keyed by `(seed, robot, stream)`. ChaCha is counter based, so
/// draws on one stream never shift another.
pub fn stream_rng(seed: u64, robot: u32, stream: Stream) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(((robot as u64) << 8) | stream as u64);
    r
}

fn normal3(rng: &mut ChaCha8Rng, std: f64) -> Vector3<f64> {
    let v = Vector3::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
    v * std
}

/// Gravity expressed in a robot's odometry frame.
pub fn gravity_in_odometry(sc: &Scenario, r: &RobotSpec) -> Vector3<f64> {
    let g_w = Vector3::new(0.0, 0.0, -sc.world.gravity_mps2);
    r.z_wo.to_element().rotation().transpose() * g_w
}

/// `w~ = w + b_g + n_g`, `a~ = a_body - R^T g + b_a + n_a`.
pub fn imu_sample(
    truth: &StateElement,
    twist: &BodyTwist,
    gravity: &Vector3<f64>,
    s: &SensorSpec,
    rng: &mut ChaCha8Rng,
    t: f64,
) -> ImuSample {
    let omega = twist.omega + Vector3::from(s.gyro_bias_radps) + normal3(rng, s.gyro_noise_std_radps);
    let specific = twist.accel - truth.rotation.transpose() * gravity;
    let accel = specific + Vector3::from(s.accel_bias_mps2) + normal3(rng, s.accel_noise_std_mps2);
    ImuSample { omega, accel, t }
}

pub fn velocity_sample(truth: &StateElement, s: &SensorSpec, filter_var: f64, rng: &mut ChaCha8Rng, t: f64) -> VelocitySample {
    let v = truth.rotation.transpose() * truth.velocity + normal3(rng, s.velocity_noise_std_mps);
    VelocitySample { v, t, cov: Matrix3::identity() * filter_var }
}

/// Static samples at the initial attitude, before motion starts.
pub fn calibration_samples(initial: &StateElement, gravity: &Vector3<f64>, s: &SensorSpec, rng: &mut ChaCha8Rng) -> Vec<ImuSample> {
    let rest = BodyTwist { omega: Vector3::zeros(), velocity: Vector3::zeros(), accel: Vector3::zeros() };
    let dt = 0.01;
    (0..s.calibration_samples)
        .map(|i| imu_sample(initial, &rest, gravity, s, rng, -((s.calibration_samples - i) as f64) * dt))
        .collect()
}

/// Right perturbation of a marker pose by `(rot, pos)` standard deviations.
pub fn perturb_pose(pose: &GroupElement, rot_std: f64, pos_std: f64, rng: &mut ChaCha8Rng) -> GroupElement {
    let mut n = DVector::zeros(6);
    n.fixed_rows_mut::<3>(0).copy_from(&normal3(rng, rot_std));
    n.fixed_rows_mut::<3>(3).copy_from(&normal3(rng, pos_std));
    pose.retract(&n)
}

/// Applies a geometric fault in the marker frame; noise inflation is
/// handled at sampling time and leaves the pose alone here.
pub fn apply_fault(pose: &GroupElement, mode: &FaultMode) -> GroupElement {
    match *mode {
        FaultMode::PositionJump { offset_m } => pose.compose(&GroupElement::pose(Matrix3::identity(), Vector3::from(offset_m))),
        FaultMode::RotationJump { angle_rad, axis } => {
            pose.compose(&GroupElement::pose(rotation_about(&Vector3::from(axis).normalize(), angle_rad), Vector3::zeros()))
        }
        FaultMode::NoiseInflation { .. } => pose.clone(),
    }
}

/// Frames and the marker registry of a scenario.
pub fn build_extrinsics(sc: &Scenario) -> FrameExtrinsics {
    let robots = sc
        .robots
        .iter()
        .map(|r| {
            (r.id, RobotFrames { z_wo: r.z_wo.to_element(), z_bc: r.z_bc.to_element(), z_mb: r.z_mb.map(|p| p.to_element()) })
        })
        .collect();
    let mut markers = BTreeMap::new();
    let m = &sc.markers;
    let n = sc.grid_side();
    // facing down
    let down = so3_exp(&Vector3::new(std::f64::consts::PI, 0.0, 0.0));
    for i in 0..n {
        for j in 0..n {
            let pos = Vector3::new(
                -m.grid_half_extent_m + i as f64 * m.grid_spacing_m,
                -m.grid_half_extent_m + j as f64 * m.grid_spacing_m,
                m.ceiling_height_m,
            );
            let id = m.grid_first_id + (i * n + j) as u32;
            markers.insert(id, MarkerAnchor::Stationary { z_um: GroupElement::pose(down, pos) });
        }
    }
    for s in &m.stationary {
        markers.insert(s.id, MarkerAnchor::Stationary { z_um: s.pose.to_element() });
    }
    for r in &sc.robots {
        if let Some(id) = r.marker_id {
            markers.insert(id, MarkerAnchor::Mobile { carrier: r.id });
        }
    }
    FrameExtrinsics { z_uw: sc.world.z_uw.to_element(), robots, markers }
}

/// Stationary marker closest to the observer's camera, measured in the map plane.
pub fn nearest_stationary(ext: &FrameExtrinsics, observer: u32, z_ob: &GroupElement) -> Option<u32> {
    let frames = ext.robots.get(&observer)?;
    let cam = ext.z_uw.compose(&frames.z_wo).compose(z_ob).compose(&frames.z_bc);
    let c = cam.translation(0);
    let mut best: Option<(f64, u32)> = None;
    for (id, a) in &ext.markers {
        if let MarkerAnchor::Stationary { z_um } = a {
            let d = z_um.translation(0).xy() - c.xy();
            let d2 = d.norm_squared();
            if best.is_none_or(|(b, _)| d2 < b) {
                best = Some((d2, *id));
            }
        }
    }
    best.map(|(_, id)| id)
}

/// One synthesized marker observation.
#[derive(Clone, Debug)]
pub struct MarkerEvent {
    pub tick: usize,
    pub obs: MarkerObservation,
    /// Clean `Z^{CM}` before noise and faults.
    pub nominal: GroupElement,
    pub faulted: bool,
}

#[derive(Clone, Debug)]
pub struct SensorStreams {
    pub id: u32,
    /// `imu[k]` drives the prediction from tick `k` to `k + 1`.
    pub imu: Vec<ImuSample>,
    pub velocity: BTreeMap<usize, VelocitySample>,
    pub markers: BTreeMap<usize, MarkerEvent>,
    pub calibration: Vec<ImuSample>,
    /// Draw from the prior on `(theta, p, v)`; zero when disabled.
    pub initial_error: DVector<f64>,
}

fn truth_index(sc: &Scenario, id: u32) -> usize {
    sc.robots.iter().position(|r| r.id == id).expect("validated robot id")
}

/// All sensor streams, indexed like `scenario.robots`. `seed` replaces the
/// scenario seed.
pub fn synthesize_sensors(sc: &Scenario, truths: &[RobotTruth], seed: u64) -> SimResult<Vec<SensorStreams>> {
    let ext = build_extrinsics(sc);
    let dt = sc.imu_dt();
    let n = sc.num_ticks();
    sc.robots
        .iter()
        .enumerate()
        .map(|(idx, r)| {
            let truth = &truths[idx];
            let s = &r.sensors;
            let g = gravity_in_odometry(sc, r);
            let mut imu_rng = stream_rng(seed, r.id, Stream::Imu);
            let imu = (0..n)
                .map(|k| imu_sample(&truth.states[k], &truth.twists[k], &g, s, &mut imu_rng, k as f64 * dt))
                .collect();

            let mut vel_rng = stream_rng(seed, r.id, Stream::Velocity);
            let velocity = (1..=n)
                    .filter(|k| k % sc.velocity_every() == 0)
                .map(|k| (k, velocity_sample(&truth.states[k], s, sc.filter.velocity_var, &mut vel_rng, k as f64 * dt)))
                .collect();

            let markers = marker_stream(sc, &ext, truths, idx, seed)?;

            let mut cal_rng = stream_rng(seed, r.id, Stream::Calibration);
            let calibration = calibration_samples(&truth.states[0], &g, s, &mut cal_rng);

            let mut init_rng = stream_rng(seed, r.id, Stream::Initial);
            let sd = sc.filter.initial_var.sqrt();
            let initial_error = if s.initial_error {
                DVector::from_fn(9, |_, _| sd * init_rng.sample::<f64, _>(StandardNormal))
            } else {
                DVector::zeros(9)
            };
            Ok(SensorStreams { id: r.id, imu, velocity, markers, calibration, initial_error })
        })
        .collect()
}

fn marker_stream(
    sc: &Scenario,
    ext: &FrameExtrinsics,
    truths: &[RobotTruth],
    idx: usize,
    seed: u64,
) -> SimResult<BTreeMap<usize, MarkerEvent>> {
    let r = &sc.robots[idx];
    let s = &r.sensors;
    let (rot_var, pos_var) = sc.filter.marker_vars(r.role);
    let rot_std = s.marker_rot_std_rad.unwrap_or(rot_var.sqrt());
    let pos_std = s.marker_pos_std_m.unwrap_or(pos_var.sqrt());
    let cov = lieloc_core::models::defaults::marker_cov(rot_var, pos_var);
    let faults: Vec<_> = sc.faults.iter().filter(|f| f.robot == r.id).collect();
    let mut noise_rng = stream_rng(seed, r.id, Stream::Marker);
    let mut fault_rng = stream_rng(seed, r.id, Stream::Fault);
    let dt = sc.imu_dt();
    let wrap = |e: lieloc_core::Error| SimError::Config(format!("robot {}: marker geometry: {e}", r.id));

    let mut out = BTreeMap::new();
    for k in (1..=sc.num_ticks()).filter(|k| k % sc.marker_every() == 0) {
        let t = k as f64 * dt;
        let z_ob = truths[idx].states[k].pose();
        let (marker_id, nominal) = match r.role {
            Role::Leader => match nearest_stationary(ext, r.id, &z_ob) {
                Some(m) => (m, observe_stationary_marker(&z_ob, m, r.id, ext).map_err(wrap)?),
                None => continue,
            },
            _ => {
                let nb = r.neighbor.expect("validated follower");
                let m = sc.robot(nb).and_then(|n| n.marker_id).expect("validated neighbour marker");
                let carrier = truths[truth_index(sc, nb)].states[k].pose();
                (m, observe_mobile_marker(&z_ob, &carrier, m, r.id, ext).map_err(wrap)?)
            }
        };
        let active: Vec<_> = faults
            .iter()
            .filter(|f| f.t_start_s <= t && t < f.t_end_s)
            .filter(|f| fault_rng.random::<f64>() < f.probability)
            .collect();
        let inflation: f64 = active
            .iter()
            .map(|f| match f.mode {
                FaultMode::NoiseInflation { factor } => factor,
                _ => 1.0,
            })
            .product();
        let mut rel = perturb_pose(&nominal, rot_std * inflation, pos_std * inflation, &mut noise_rng);
        for f in &active {
            rel = apply_fault(&rel, &f.mode);
        }
        let obs = MarkerObservation { marker_id, rel_pose: rel, cov: cov.clone(), t };
        out.insert(k, MarkerEvent { tick: k, obs, nominal, faulted: !active.is_empty() });
    }
    Ok(out)
}
