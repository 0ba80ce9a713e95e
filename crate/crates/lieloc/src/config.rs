//! Scenario files: TOML with units in the key names.

use std::collections::BTreeSet;
use std::path::Path;

use lieloc_core::liegroup::{so3_exp, so3_log};
use lieloc_core::models::defaults;
use lieloc_core::GroupElement;
use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{SimError, SimResult};

/// Rigid transform as a rotation vector and a translation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct PoseConfig {
    #[serde(default)]
    pub rotvec_rad: [f64; 3],
    #[serde(default)]
    pub translation_m: [f64; 3],
}

impl PoseConfig {
    pub fn new(rotvec_rad: [f64; 3], translation_m: [f64; 3]) -> Self {
        Self { rotvec_rad, translation_m }
    }

    pub fn to_element(&self) -> GroupElement {
        GroupElement::pose(so3_exp(&Vector3::from(self.rotvec_rad)), Vector3::from(self.translation_m))
    }

    fn is_finite(&self) -> bool {
        self.rotvec_rad.iter().chain(&self.translation_m).all(|x| x.is_finite())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Leader,
    Follower1,
    Follower2,
}

impl Role {
    pub fn as_str(&self) -> &'static str {
        match self {
            Role::Leader => "leader",
            Role::Follower1 => "follower1",
            Role::Follower2 => "follower2",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rates {
    pub imu_hz: f64,
    pub velocity_hz: f64,
    pub marker_hz: f64,
    pub message_hz: f64,
    #[serde(default)]
    pub message_latency_s: f64,
}

impl Default for Rates {
    fn default() -> Self {
        Self { imu_hz: 100.0, velocity_hz: 20.0, marker_hz: 10.0, message_hz: 20.0, message_latency_s: 0.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum TrajectorySpec {
    Circle { radius_m: f64, speed_mps: f64 },
    /// Square loop with rounded corners.
    Corner { leg_length_m: f64, speed_mps: f64, turn_radius_m: f64 },
    /// Closed polygon through the points, corners filleted at `turn_radius_m`.
    Waypoints { points_m: Vec<[f64; 2]>, speed_mps: f64, turn_radius_m: f64 },
}

impl TrajectorySpec {
    pub fn speed(&self) -> f64 {
        match self {
            TrajectorySpec::Circle { speed_mps, .. }
            | TrajectorySpec::Corner { speed_mps, .. }
            | TrajectorySpec::Waypoints { speed_mps, .. } => *speed_mps,
        }
    }

    pub fn speed_mut(&mut self) -> &mut f64 {
        match self {
            TrajectorySpec::Circle { speed_mps, .. }
            | TrajectorySpec::Corner { speed_mps, .. }
            | TrajectorySpec::Waypoints { speed_mps, .. } => speed_mps,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldSpec {
    #[serde(default = "default_gravity")]
    pub gravity_mps2: f64,
    /// World frame in the marker-map frame.
    #[serde(default)]
    pub z_uw: PoseConfig,
}

fn default_gravity() -> f64 {
    defaults::GRAVITY
}

impl Default for WorldSpec {
    fn default() -> Self {
        Self { gravity_mps2: defaults::GRAVITY, z_uw: PoseConfig::default() }
    }
}

/// Filter tuning shared by all robots.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterSpec {
    pub gate_threshold: f64,
    pub epsilon: f64,
    pub staleness_s: f64,
    pub gyro_noise: f64,
    pub accel_noise: f64,
    pub gyro_bias_walk: f64,
    pub accel_bias_walk: f64,
    pub velocity_var: f64,
    pub initial_var: f64,
    pub leader_marker_rot_var: f64,
    pub leader_marker_pos_var: f64,
    pub follower_marker_rot_var: f64,
    pub follower_marker_pos_var: f64,
}

impl Default for FilterSpec {
    fn default() -> Self {
        Self {
            gate_threshold: defaults::GATE_THRESHOLD,
            epsilon: defaults::EPSILON,
            staleness_s: defaults::STALENESS_S,
            gyro_noise: defaults::GYRO_NOISE,
            accel_noise: defaults::ACCEL_NOISE,
            gyro_bias_walk: defaults::GYRO_BIAS_WALK,
            accel_bias_walk: defaults::ACCEL_BIAS_WALK,
            velocity_var: defaults::VELOCITY_VAR,
            initial_var: defaults::INITIAL_VAR,
            leader_marker_rot_var: defaults::LEADER_MARKER_ROT_VAR,
            leader_marker_pos_var: defaults::LEADER_MARKER_POS_VAR,
            follower_marker_rot_var: defaults::FOLLOWER_MARKER_ROT_VAR,
            follower_marker_pos_var: defaults::FOLLOWER_MARKER_POS_VAR,
        }
    }
}

impl FilterSpec {
    pub fn marker_vars(&self, role: Role) -> (f64, f64) {
        match role {
            Role::Leader => (self.leader_marker_rot_var, self.leader_marker_pos_var),
            _ => (self.follower_marker_rot_var, self.follower_marker_pos_var),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StationaryMarkerSpec {
    pub id: u32,
    /// Marker pose in the marker-map frame.
    pub pose: PoseConfig,
}

/// Ceiling markers for the leader. A square grid is generated unless
/// `grid_spacing_m` is zero; explicit markers are added on top.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarkerSpec {
    pub grid_spacing_m: f64,
    pub grid_half_extent_m: f64,
    pub ceiling_height_m: f64,
    pub grid_first_id: u32,
    pub stationary: Vec<StationaryMarkerSpec>,
}

impl Default for MarkerSpec {
    fn default() -> Self {
        Self { grid_spacing_m: 0.5, grid_half_extent_m: 3.0, ceiling_height_m: 0.6, grid_first_id: 1000, stationary: Vec::new() }
    }
}

/// What a robot's sensors really do. The filter does not see these values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorSpec {
    pub gyro_noise_std_radps: f64,
    pub accel_noise_std_mps2: f64,
    pub velocity_noise_std_mps: f64,
    /// Defaults to the filter's marker variance for the robot's role.
    pub marker_rot_std_rad: Option<f64>,
    pub marker_pos_std_m: Option<f64>,
    pub gyro_bias_radps: [f64; 3],
    pub accel_bias_mps2: [f64; 3],
    pub calibration_samples: usize,
    /// Start the filter from a draw of its prior instead of the truth.
    pub initial_error: bool,
}

impl Default for SensorSpec {
    fn default() -> Self {
        Self {
            gyro_noise_std_radps: 0.005,
            accel_noise_std_mps2: 0.05,
            velocity_noise_std_mps: defaults::VELOCITY_VAR.sqrt(),
            marker_rot_std_rad: None,
            marker_pos_std_m: None,
            gyro_bias_radps: [0.002, -0.001, 0.0015],
            accel_bias_mps2: [0.05, -0.03, 0.02],
            calibration_samples: 200,
            initial_error: true,
        }
    }
}

impl SensorSpec {
    pub fn noiseless() -> Self {
        Self {
            gyro_noise_std_radps: 0.0,
            accel_noise_std_mps2: 0.0,
            velocity_noise_std_mps: 0.0,
            marker_rot_std_rad: Some(0.0),
            marker_pos_std_m: Some(0.0),
            gyro_bias_radps: [0.0; 3],
            accel_bias_mps2: [0.0; 3],
            calibration_samples: 200,
            initial_error: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotSpec {
    pub id: u32,
    pub role: Role,
    /// Robot whose marker this follower observes.
    #[serde(default)]
    pub neighbor: Option<u32>,
    /// Distance behind the path start, m.
    #[serde(default)]
    pub lag_m: f64,
    #[serde(default)]
    pub z_wo: PoseConfig,
    #[serde(default)]
    pub z_bc: PoseConfig,
    /// Body in the frame of the carried marker.
    #[serde(default)]
    pub z_mb: Option<PoseConfig>,
    #[serde(default)]
    pub marker_id: Option<u32>,
    #[serde(default)]
    pub sensors: SensorSpec,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FaultStream {
    Marker,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FaultMode {
    /// Translation of the observed marker, in the marker frame.
    PositionJump { offset_m: [f64; 3] },
    /// Rotation of the observed marker about `axis` in the marker frame.
    RotationJump { angle_rad: f64, axis: [f64; 3] },
    /// Scales the marker noise standard deviation.
    NoiseInflation { factor: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultSpec {
    pub robot: u32,
    #[serde(default = "default_stream")]
    pub stream: FaultStream,
    pub t_start_s: f64,
    pub t_end_s: f64,
    /// Chance that an observation inside the window is corrupted.
    #[serde(default = "one")]
    pub probability: f64,
    pub mode: FaultMode,
}

fn default_stream() -> FaultStream {
    FaultStream::Marker
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    pub duration_s: f64,
    #[serde(default)]
    pub rates: Rates,
    pub trajectory: TrajectorySpec,
    #[serde(default)]
    pub world: WorldSpec,
    #[serde(default)]
    pub filter: FilterSpec,
    #[serde(default)]
    pub markers: MarkerSpec,
    pub robots: Vec<RobotSpec>,
    #[serde(default)]
    pub faults: Vec<FaultSpec>,
}

/// Whole number of IMU ticks per period of `hz`, if it divides.
fn ticks_per(imu_hz: f64, hz: f64) -> Option<usize> {
    let r = imu_hz / hz;
    let n = r.round();
    ((r - n).abs() < 1e-9 && n >= 1.0).then_some(n as usize)
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> SimResult<()> {
    if cond {
        Ok(())
    } else {
        Err(SimError::Config(msg()))
    }
}

impl Scenario {
    pub fn from_toml_str(text: &str) -> SimResult<Self> {
        let sc: Scenario = toml::from_str(text).map_err(|e| SimError::Config(e.to_string()))?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn from_file(path: &Path) -> SimResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| SimError::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            SimError::Config(m) => SimError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> SimResult<String> {
        toml::to_string(self).map_err(|e| SimError::Config(e.to_string()))
    }

    pub fn imu_dt(&self) -> f64 {
        1.0 / self.rates.imu_hz
    }

    pub fn num_ticks(&self) -> usize {
        (self.duration_s * self.rates.imu_hz).round() as usize
    }

    pub fn velocity_every(&self) -> usize {
        ticks_per(self.rates.imu_hz, self.rates.velocity_hz).unwrap_or(1)
    }

    pub fn marker_every(&self) -> usize {
        ticks_per(self.rates.imu_hz, self.rates.marker_hz).unwrap_or(1)
    }

    pub fn message_every(&self) -> usize {
        ticks_per(self.rates.imu_hz, self.rates.message_hz).unwrap_or(1)
    }

    pub fn robot(&self, id: u32) -> Option<&RobotSpec> {
        self.robots.iter().find(|r| r.id == id)
    }

    /// Robots in processing order: leader, follower1, follower2, then id.
    pub fn robots_in_order(&self) -> Vec<&RobotSpec> {
        let mut v: Vec<_> = self.robots.iter().collect();
        v.sort_by_key(|r| (r.role, r.id));
        v
    }

    /// Same scenario with every sensor noise, bias, initial error and fault removed.
    pub fn noiseless(&self) -> Self {
        let mut sc = self.clone();
        for r in &mut sc.robots {
            r.sensors = SensorSpec { calibration_samples: r.sensors.calibration_samples, ..SensorSpec::noiseless() };
        }
        sc.faults.clear();
        sc
    }

    pub fn validate(&self) -> SimResult<()> {
        let r = &self.rates;
        check(self.duration_s.is_finite() && self.duration_s > 0.0, || "duration_s must be positive".into())?;
        for (name, v) in [("imu_hz", r.imu_hz), ("velocity_hz", r.velocity_hz), ("marker_hz", r.marker_hz), ("message_hz", r.message_hz)] {
            check(v.is_finite() && v > 0.0, || format!("rates.{name} must be positive"))?;
        }
        check(r.imu_hz >= r.velocity_hz && r.velocity_hz >= r.marker_hz, || {
            "rates must satisfy imu_hz >= velocity_hz >= marker_hz".into()
        })?;
        for (name, v) in [("velocity_hz", r.velocity_hz), ("marker_hz", r.marker_hz), ("message_hz", r.message_hz)] {
            check(ticks_per(r.imu_hz, v).is_some(), || format!("rates.{name} must divide imu_hz"))?;
        }
        check(self.marker_every().is_multiple_of(self.velocity_every()), || {
            "marker epochs must coincide with velocity epochs".into()
        })?;
        check(r.message_latency_s.is_finite() && r.message_latency_s >= 0.0, || {
            "rates.message_latency_s must be non-negative".into()
        })?;
        self.validate_trajectory()?;
        self.validate_filter()?;
        self.validate_robots()?;
        self.validate_faults()
    }

    fn validate_trajectory(&self) -> SimResult<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        let speed = self.trajectory.speed();
        check(speed.is_finite() && speed >= 0.0, || "trajectory.speed_mps must be non-negative".into())?;
        match &self.trajectory {
            TrajectorySpec::Circle { radius_m, .. } => {
                check(positive(*radius_m), || "trajectory.radius_m must be positive".into())
            }
            TrajectorySpec::Corner { leg_length_m, turn_radius_m, .. } => {
                check(positive(*turn_radius_m), || "trajectory.turn_radius_m must be positive".into())?;
                check(leg_length_m.is_finite() && *leg_length_m >= 2.0 * turn_radius_m, || {
                    "trajectory.leg_length_m must be at least twice turn_radius_m".into()
                })
            }
            TrajectorySpec::Waypoints { points_m, turn_radius_m, .. } => {
                check(positive(*turn_radius_m), || "trajectory.turn_radius_m must be positive".into())?;
                check(points_m.len() >= 3, || "trajectory.points_m needs at least 3 points".into())?;
                check(points_m.iter().flatten().all(|x| x.is_finite()), || "trajectory.points_m must be finite".into())
            }
        }
    }

    fn validate_filter(&self) -> SimResult<()> {
        let f = &self.filter;
        check(f.gate_threshold > 0.0, || "filter.gate_threshold must be positive".into())?;
        check(f.epsilon > 0.0, || "filter.epsilon must be positive".into())?;
        check(f.staleness_s >= 0.0, || "filter.staleness_s must be non-negative".into())?;
        check(f.velocity_var > 0.0 && f.initial_var > 0.0, || "filter variances must be positive".into())?;
        for v in [f.gyro_noise, f.accel_noise, f.gyro_bias_walk, f.accel_bias_walk] {
            check(v.is_finite() && v >= 0.0, || "filter noise densities must be non-negative".into())?;
        }
        for v in [f.leader_marker_rot_var, f.leader_marker_pos_var, f.follower_marker_rot_var, f.follower_marker_pos_var] {
            check(v.is_finite() && v > 0.0, || "filter marker variances must be positive".into())?;
        }
        check((9.7..=9.9).contains(&self.world.gravity_mps2), || "world.gravity_mps2 must lie in [9.7, 9.9]".into())?;
        check(self.world.z_uw.is_finite(), || "world.z_uw must be finite".into())
    }

    fn validate_robots(&self) -> SimResult<()> {
        check(!self.robots.is_empty(), || "at least one robot is required".into())?;
        let mut ids = BTreeSet::new();
        let mut marker_ids = BTreeSet::new();
        for s in &self.markers.stationary {
            check(marker_ids.insert(s.id), || format!("duplicate marker id {}", s.id))?;
        }
        for r in &self.robots {
            check(ids.insert(r.id), || format!("duplicate robot id {}", r.id))?;
            check(r.lag_m.is_finite() && r.lag_m >= 0.0, || format!("robot {}: lag_m must be non-negative", r.id))?;
            let poses = [Some(r.z_wo), Some(r.z_bc), r.z_mb];
            check(poses.iter().flatten().all(|p| p.is_finite()), || format!("robot {}: poses must be finite", r.id))?;
            check(r.z_wo.rotvec_rad[0] == 0.0 && r.z_wo.rotvec_rad[1] == 0.0, || {
                format!("robot {}: z_wo must be a pure yaw so that static calibration sees level gravity", r.id)
            })?;
            let s = &r.sensors;
            let stds = [s.gyro_noise_std_radps, s.accel_noise_std_mps2, s.velocity_noise_std_mps];
            let opt = [s.marker_rot_std_rad, s.marker_pos_std_m];
            check(stds.iter().chain(opt.iter().flatten()).all(|v| v.is_finite() && *v >= 0.0), || {
                format!("robot {}: noise standard deviations must be non-negative", r.id)
            })?;
            check(s.calibration_samples >= lieloc_core::models::MIN_CALIBRATION_SAMPLES, || {
                format!("robot {}: calibration_samples must be at least {}", r.id, lieloc_core::models::MIN_CALIBRATION_SAMPLES)
            })?;
            if let Some(m) = r.marker_id {
                check(r.z_mb.is_some(), || format!("robot {}: marker_id requires z_mb", r.id))?;
                check(marker_ids.insert(m), || format!("duplicate marker id {m}"))?;
            }
        }
        if self.markers.grid_spacing_m > 0.0 {
            let n = self.grid_side();
            let first = self.markers.grid_first_id as u64;
            for m in &marker_ids {
                check(!((*m as u64) >= first && (*m as u64) < first + (n * n) as u64), || {
                    format!("marker id {m} collides with the generated grid")
                })?;
            }
        }
        let has_leader = self.robots.iter().any(|r| r.role == Role::Leader);
        for r in &self.robots {
            match r.role {
                Role::Leader => check(r.neighbor.is_none(), || format!("robot {}: a leader has no neighbor", r.id))?,
                Role::Follower1 | Role::Follower2 => {
                    check(r.role != Role::Follower1 || has_leader, || "follower1 requires a leader".into())?;
                    let n = r.neighbor.ok_or_else(|| SimError::Config(format!("robot {}: follower needs a neighbor", r.id)))?;
                    let nb = self.robot(n).ok_or_else(|| SimError::Config(format!("robot {}: neighbor {n} does not exist", r.id)))?;
                    let want_ok = match r.role {
                        Role::Follower1 => nb.role == Role::Leader,
                        _ => nb.role != Role::Leader,
                    };
                    check(want_ok, || format!("robot {}: {} must observe a {}", r.id, r.role.as_str(), if r.role == Role::Follower1 { "leader" } else { "follower" }))?;
                    check(nb.marker_id.is_some(), || format!("robot {}: neighbor {n} carries no marker", r.id))?;
                }
            }
        }
        Ok(())
    }

    fn validate_faults(&self) -> SimResult<()> {
        for (i, f) in self.faults.iter().enumerate() {
            check(self.robot(f.robot).is_some(), || format!("faults[{i}]: robot {} does not exist", f.robot))?;
            check(f.t_start_s < f.t_end_s && f.t_end_s <= self.duration_s, || {
                format!("faults[{i}]: need t_start_s < t_end_s <= duration_s")
            })?;
            check((0.0..=1.0).contains(&f.probability), || format!("faults[{i}]: probability must lie in [0, 1]"))?;
            let ok = match f.mode {
                FaultMode::PositionJump { offset_m } => offset_m.iter().all(|x| x.is_finite()),
                FaultMode::RotationJump { angle_rad, axis } => {
                    angle_rad.is_finite() && Vector3::from(axis).norm() > 0.0
                }
                FaultMode::NoiseInflation { factor } => factor.is_finite() && factor >= 0.0,
            };
            check(ok, || format!("faults[{i}]: invalid mode parameters"))?;
        }
        Ok(())
    }

    /// Number of grid markers along one side.
    pub fn grid_side(&self) -> usize {
        let m = &self.markers;
        if m.grid_spacing_m <= 0.0 {
            return 0;
        }
        (2.0 * m.grid_half_extent_m / m.grid_spacing_m).floor() as usize + 1
    }
}

fn pose_from(rotation: Matrix3<f64>, translation: Vector3<f64>) -> PoseConfig {
    let rotvec = so3_log(&rotation).expect("mount rotations are away from pi");
    PoseConfig::new(rotvec.into(), translation.into())
}

fn robot(id: u32, role: Role, neighbor: Option<u32>, lag_m: f64) -> RobotSpec {
    let z_bc = match role {
        // leader camera looks straight up at the ceiling markers
        Role::Leader => PoseConfig::new([0.0; 3], [0.0, 0.0, 0.1]),
        // optical axis along body x, image x along body -y
        _ => pose_from(Matrix3::new(0.0, 0.0, 1.0, -1.0, 0.0, 0.0, 0.0, -1.0, 0.0), Vector3::new(0.1, 0.0, 0.1)),
    };
    // marker on the back of the robot, its normal along body -x
    let r_bm = Matrix3::new(0.0, 0.0, -1.0, 1.0, 0.0, 0.0, 0.0, -1.0, 0.0);
    let t_bm = Vector3::new(-0.1, 0.0, 0.1);
    RobotSpec {
        id,
        role,
        neighbor,
        lag_m,
        z_wo: PoseConfig::default(),
        z_bc,
        z_mb: Some(pose_from(r_bm.transpose(), -(r_bm.transpose() * t_bm))),
        marker_id: Some(100 + id),
        sensors: SensorSpec::default(),
    }
}

/// Leader plus two followers in a chain on one path, 1.2 m apart.
pub fn default_team() -> Vec<RobotSpec> {
    vec![
        robot(0, Role::Leader, None, 0.0),
        robot(1, Role::Follower1, Some(0), 1.2),
        robot(2, Role::Follower2, Some(1), 2.4),
    ]
}

/// A 60 s scenario with default tuning on the given path.
pub fn template(name: &str, trajectory: TrajectorySpec) -> Scenario {
    Scenario {
        name: name.into(),
        seed: 1,
        duration_s: 60.0,
        rates: Rates::default(),
        trajectory,
        world: WorldSpec::default(),
        filter: FilterSpec::default(),
        markers: MarkerSpec::default(),
        robots: default_team(),
        faults: Vec::new(),
    }
}

pub fn circle_template() -> Scenario {
    template("circle", TrajectorySpec::Circle { radius_m: 1.0, speed_mps: 0.1 })
}

pub fn corner_template() -> Scenario {
    template("corner", TrajectorySpec::Corner { leg_length_m: 2.0, speed_mps: 0.1, turn_radius_m: 0.4 })
}
