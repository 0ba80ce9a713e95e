//! Closed planar paths and ground truth integrated on the extended-pose group.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use lieloc_core::liegroup::so3_exp;
use lieloc_core::{LieGroup, StateElement};
use nalgebra::{DVector, Matrix3, Vector2, Vector3};

use crate::config::{RobotSpec, Scenario, TrajectorySpec};
use crate::error::{SimError, SimResult};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Segment {
    Straight { start: Vector2<f64>, heading: f64, length: f64 },
    /// Constant-curvature arc; `sweep > 0` turns left.
    Arc { center: Vector2<f64>, radius: f64, start_angle: f64, sweep: f64 },
}

impl Segment {
    pub fn length(&self) -> f64 {
        match *self {
            Segment::Straight { length, .. } => length,
            Segment::Arc { radius, sweep, .. } => radius * sweep.abs(),
        }
    }

    fn sample(&self, s: f64) -> PathPoint {
        match *self {
            Segment::Straight { start, heading, .. } => {
                let dir = Vector2::new(heading.cos(), heading.sin());
                PathPoint { position: start + dir * s, heading, curvature: 0.0 }
            }
            Segment::Arc { center, radius, start_angle, sweep } => {
                let sign = sweep.signum();
                let a = start_angle + sign * s / radius;
                PathPoint {
                    position: center + Vector2::new(a.cos(), a.sin()) * radius,
                    heading: a + sign * FRAC_PI_2,
                    curvature: sign / radius,
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PathPoint {
    pub position: Vector2<f64>,
    pub heading: f64,
    /// Signed curvature, 1/m.
    pub curvature: f64,
}

/// Closed loop parameterised by arc length.
#[derive(Clone, Debug, PartialEq)]
pub struct Path {
    segments: Vec<Segment>,
    length: f64,
}

impl Path {
    pub fn new(segments: Vec<Segment>) -> SimResult<Self> {
        let length: f64 = segments.iter().map(Segment::length).sum();
        if segments.is_empty() || !(length > 0.0) {
            return Err(SimError::config("trajectory has zero length"));
        }
        Ok(Self { segments, length })
    }

    pub fn from_spec(spec: &TrajectorySpec) -> SimResult<Self> {
        match spec {
            TrajectorySpec::Circle { radius_m, .. } => Self::new(vec![Segment::Arc {
                center: Vector2::zeros(),
                radius: *radius_m,
                start_angle: -FRAC_PI_2,
                sweep: TAU,
            }]),
            TrajectorySpec::Corner { leg_length_m, turn_radius_m, .. } => {
                let h = leg_length_m / 2.0;
                let pts = [[-h, -h], [h, -h], [h, h], [-h, h]];
                filleted_polygon(&pts, *turn_radius_m)
            }
            TrajectorySpec::Waypoints { points_m, turn_radius_m, .. } => filleted_polygon(points_m, *turn_radius_m),
        }
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    /// Point at arc length `s`, wrapped onto the loop.
    pub fn sample(&self, s: f64) -> PathPoint {
        let mut s = s.rem_euclid(self.length);
        for seg in &self.segments {
            let l = seg.length();
            if s < l {
                return seg.sample(s);
            }
            s -= l;
        }
        let last = self.segments.last().expect("non-empty");
        last.sample(last.length())
    }
}

/// Closed polygon with each corner replaced by a tangent arc of `radius`.
pub fn filleted_polygon(points: &[[f64; 2]], radius: f64) -> SimResult<Path> {
    let n = points.len();
    if n < 3 {
        return Err(SimError::config("a polygon path needs at least 3 points"));
    }
    let p: Vec<Vector2<f64>> = points.iter().map(|q| Vector2::new(q[0], q[1])).collect();
    // per corner: entry point, exit point, arc
    let mut corners = Vec::with_capacity(n);
    for i in 0..n {
        let prev = p[(i + n - 1) % n];
        let cur = p[i];
        let next = p[(i + 1) % n];
        let d_in = cur - prev;
        let d_out = next - cur;
        if d_in.norm() == 0.0 || d_out.norm() == 0.0 {
            return Err(SimError::config("repeated waypoint"));
        }
        let (u_in, u_out) = (d_in.normalize(), d_out.normalize());
        let turn = (u_in.perp(&u_out)).atan2(u_in.dot(&u_out));
        if turn.abs() > PI - 1e-6 {
            return Err(SimError::config("waypoint path reverses direction"));
        }
        let tangent = radius * (turn.abs() / 2.0).tan();
        let entry = cur - u_in * tangent;
        let exit = cur + u_out * tangent;
        let arc = if turn.abs() < 1e-12 {
            None
        } else {
            let sign = turn.signum();
            let normal = Vector2::new(-u_in.y, u_in.x) * sign;
            let center = entry + normal * radius;
            let r0 = entry - center;
            Some(Segment::Arc { center, radius, start_angle: r0.y.atan2(r0.x), sweep: turn })
        };
        corners.push((entry, exit, arc));
    }
    let mut segments = Vec::new();
    for i in 0..n {
        let (_, exit, _) = corners[i];
        let (entry_next, _, arc_next) = corners[(i + 1) % n];
        let d = entry_next - exit;
        let along = d.dot(&(p[(i + 1) % n] - p[i]).normalize());
        if along < -1e-9 {
            return Err(SimError::config("turn_radius_m too large for the waypoint spacing"));
        }
        if along > 1e-12 {
            segments.push(Segment::Straight { start: exit, heading: d.y.atan2(d.x), length: d.norm() });
        }
        if let Some(arc) = arc_next {
            segments.push(arc);
        }
    }
    // start the loop at the polygon's first straight
    Path::new(segments)
}

fn yaw(psi: f64) -> Matrix3<f64> {
    so3_exp(&Vector3::new(0.0, 0.0, psi))
}

/// Body-frame twist held over one tick: angular rate, body velocity and the
/// body acceleration term of `SE_2(3)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BodyTwist {
    pub omega: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub accel: Vector3<f64>,
}

impl BodyTwist {
    pub fn from_path(point: &PathPoint, speed: f64) -> Self {
        let omega = Vector3::new(0.0, 0.0, speed * point.curvature);
        let velocity = Vector3::new(speed, 0.0, 0.0);
        Self { omega, velocity, accel: omega.cross(&velocity) }
    }

    /// Tangent vector in state coordinates, biases untouched.
    pub fn to_state_tangent(&self, dt: f64) -> DVector<f64> {
        let mut xi = DVector::zeros(18);
        xi.fixed_rows_mut::<3>(0).copy_from(&(self.omega * dt));
        xi.fixed_rows_mut::<3>(3).copy_from(&(self.velocity * dt));
        xi.fixed_rows_mut::<3>(6).copy_from(&(self.accel * dt));
        xi
    }
}

/// Ground truth of one robot in its odometry frame, one entry per IMU tick.
#[derive(Clone, Debug)]
pub struct RobotTruth {
    pub id: u32,
    pub states: Vec<StateElement>,
    /// `twists[k]` carries the state from tick `k` to `k + 1`.
    pub twists: Vec<BodyTwist>,
}

/// Truth for every robot, indexed like `scenario.robots`.
pub fn generate_ground_truth(sc: &Scenario) -> SimResult<Vec<RobotTruth>> {
    sc.validate()?;
    let path = Path::from_spec(&sc.trajectory)?;
    sc.robots.iter().map(|r| robot_truth(sc, &path, r)).collect()
}

fn robot_truth(sc: &Scenario, path: &Path, r: &RobotSpec) -> SimResult<RobotTruth> {
    let speed = sc.trajectory.speed();
    let dt = sc.imu_dt();
    let n = sc.num_ticks();
    let z_wo = r.z_wo.to_element();
    let r_ow = z_wo.rotation().transpose();
    let t_wo = *z_wo.translation(0);

    let start = path.sample(-r.lag_m);
    let r_w = yaw(start.heading);
    let p_w = Vector3::new(start.position.x, start.position.y, 0.0);
    let v_w = r_w * Vector3::new(speed, 0.0, 0.0);
    let mut x = StateElement::new(
        r_ow * r_w,
        r_ow * (p_w - t_wo),
        r_ow * v_w,
        Vector3::from(r.sensors.gyro_bias_radps),
        Vector3::from(r.sensors.accel_bias_mps2),
    );
    let mut states = Vec::with_capacity(n + 1);
    let mut twists = Vec::with_capacity(n);
    for k in 0..n {
        let s = speed * k as f64 * dt - r.lag_m;
        let twist = BodyTwist::from_path(&path.sample(s), speed);
        let next = x.retract(&twist.to_state_tangent(dt));
        states.push(x);
        twists.push(twist);
        x = next;
    }
    states.push(x);
    Ok(RobotTruth { id: r.id, states, twists })
}
