//! Runs the per-robot filter pipelines of a scenario.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use lieloc_core::ekf::{apply_innovation, innovation, predict, update, FilterState, GateDecision, JacobianMode};
use lieloc_core::models::{
    assemble_pose_velocity_measurement, calibrate_imu_bias, follower_pseudo_pose, leader_pseudo_pose, pose_message,
    GravityModel, ImuProcessModel, PoseMessage, PoseVelocityModel, VelocityModel,
};
use lieloc_core::product::state_index as si;
use lieloc_core::{Error, LieGroup, StateElement, StochasticElement, Translation3};
use nalgebra::{DMatrix, DVector, Matrix3};
use serde::{Deserialize, Serialize};

use crate::config::{Role, Scenario};
use crate::error::{SimError, SimResult};
use crate::metrics::nees;
use crate::sensors::{build_extrinsics, gravity_in_odometry, synthesize_sensors, SensorStreams};
use crate::trajectory::{generate_ground_truth, RobotTruth};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum FilterVariant {
    ImuOnly,
    ImuVelocity,
    Full,
    FullNoGate,
}

impl FilterVariant {
    pub const ALL: [FilterVariant; 4] =
        [FilterVariant::ImuOnly, FilterVariant::ImuVelocity, FilterVariant::Full, FilterVariant::FullNoGate];

    pub fn as_str(&self) -> &'static str {
        match self {
            FilterVariant::ImuOnly => "imuOnly",
            FilterVariant::ImuVelocity => "imuVelocity",
            FilterVariant::Full => "full",
            FilterVariant::FullNoGate => "fullNoGate",
        }
    }

    pub fn uses_velocity(&self) -> bool {
        !matches!(self, FilterVariant::ImuOnly)
    }

    pub fn uses_markers(&self) -> bool {
        matches!(self, FilterVariant::Full | FilterVariant::FullNoGate)
    }

    pub fn gated(&self) -> bool {
        matches!(self, FilterVariant::Full)
    }
}

impl fmt::Display for FilterVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FilterVariant {
    type Err = SimError;

    fn from_str(s: &str) -> SimResult<Self> {
        FilterVariant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| SimError::config(format!("unknown filter variant '{s}' (expected imuOnly, imuVelocity, full or fullNoGate)")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GateRecord {
    pub d_squared: f64,
    pub accepted: bool,
    /// The observation was corrupted by an injected fault.
    pub faulted: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub tick: usize,
    pub t: f64,
    pub truth: StateElement,
    pub estimate: StateElement,
    /// Trace of the pose block of the covariance.
    pub cov_trace: f64,
    /// NEES over the 15 live state coordinates.
    pub nees: f64,
    pub gate: Option<GateRecord>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MessageEvent {
    pub sender: u32,
    pub t_sent: f64,
    pub t_available: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RobotLog {
    pub id: u32,
    pub role: Role,
    /// One record per velocity epoch, plus the initial state.
    pub records: Vec<Record>,
    pub messages: Vec<MessageEvent>,
    /// Marker epochs skipped because no fresh neighbour message was available.
    pub missed_pseudo_poses: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimLog {
    pub scenario: String,
    pub variant: FilterVariant,
    pub seed: u64,
    pub dt: f64,
    /// In processing order: leader, follower1, follower2.
    pub robots: Vec<RobotLog>,
}

const LIVE: [usize; 15] = [0, 1, 2, 3, 4, 5, 6, 7, 8, 12, 13, 14, 15, 16, 17];

fn live_block(p: &DMatrix<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(15, 15, |i, j| p[(LIVE[i], LIVE[j])])
}

/// `e^T P^-1 e` with `e = log(X_hat^-1 X)` over the live coordinates.
pub fn state_nees(estimate: &StateElement, cov: &DMatrix<f64>, truth: &StateElement) -> f64 {
    let e = match estimate.local(truth) {
        Ok(e) => e,
        Err(_) => return f64::INFINITY,
    };
    let e = DVector::from_fn(15, |i, _| e[LIVE[i]]);
    nees(&e, &live_block(cov))
}

fn pose_trace(p: &DMatrix<f64>) -> f64 {
    (0..6).map(|i| p[(i, i)]).sum()
}

struct Agent {
    idx: usize,
    id: u32,
    role: Role,
    neighbor: Option<u32>,
    state: FilterState<StateElement>,
    process: ImuProcessModel,
    velocity: VelocityModel,
    log: RobotLog,
}

struct Mailbox {
    queues: BTreeMap<u32, Vec<(f64, PoseMessage)>>,
}

impl Mailbox {
    /// Latest message from `sender` delivered by time `t`.
    fn latest(&self, sender: u32, t: f64) -> Option<&PoseMessage> {
        self.queues.get(&sender)?.iter().rev().find(|(avail, _)| *avail <= t + 1e-9).map(|(_, m)| m)
    }
}

fn numerical(op: &'static str, robot: u32, t: f64) -> impl FnOnce(Error) -> SimError {
    move |source| SimError::Numerical { op, robot, t, source }
}

fn initial_state(sc: &Scenario, agent_idx: usize, truth: &RobotTruth, streams: &SensorStreams, t: f64) -> SimResult<FilterState<StateElement>> {
    let r = &sc.robots[agent_idx];
    let g = GravityModel::new(gravity_in_odometry(sc, r)).map_err(numerical("gravity", r.id, t))?;
    let (bg, ba) = calibrate_imu_bias(&streams.calibration, &g).map_err(numerical("calibrate_imu_bias", r.id, t))?;
    let mut xi = DVector::zeros(si::DIM);
    xi.rows_mut(0, 9).copy_from(&streams.initial_error);
    let mut x = truth.states[0].retract(&xi);
    x.gyro_bias = bg;
    x.accel_bias = ba;
    let p0 = DMatrix::identity(si::DIM, si::DIM) * sc.filter.initial_var;
    let est = StochasticElement::new(x, p0).map_err(numerical("initial covariance", r.id, t))?;
    Ok(FilterState::new(est, t))
}

/// Runs one variant with the scenario's own seed.
pub fn run_scenario(sc: &Scenario, variant: FilterVariant) -> SimResult<SimLog> {
    run_scenario_seeded(sc, variant, sc.seed)
}

pub fn run_scenario_seeded(sc: &Scenario, variant: FilterVariant, seed: u64) -> SimResult<SimLog> {
    let truths = generate_ground_truth(sc)?;
    let streams = synthesize_sensors(sc, &truths, seed)?;
    run_with_streams(sc, variant, seed, &truths, &streams)
}

/// Runs the filters over precomputed truth and sensor streams.
pub fn run_with_streams(
    sc: &Scenario,
    variant: FilterVariant,
    seed: u64,
    truths: &[RobotTruth],
    streams: &[SensorStreams],
) -> SimResult<SimLog> {
    let ext = build_extrinsics(sc);
    let dt = sc.imu_dt();
    let f = &sc.filter;
    let mut agents = Vec::new();
    for spec in sc.robots_in_order() {
        let idx = sc.robots.iter().position(|r| r.id == spec.id).expect("robot present");
        let g = GravityModel::new(gravity_in_odometry(sc, spec)).map_err(numerical("gravity", spec.id, 0.0))?;
        let process = ImuProcessModel::new(f.gyro_noise, f.accel_noise, f.gyro_bias_walk, f.accel_bias_walk, g);
        let state = initial_state(sc, idx, &truths[idx], &streams[idx], 0.0)?;
        let mut log = RobotLog { id: spec.id, role: spec.role, records: Vec::new(), messages: Vec::new(), missed_pseudo_poses: 0 };
        log.records.push(make_record(0, 0.0, &truths[idx].states[0], &state, None));
        agents.push(Agent {
            idx,
            id: spec.id,
            role: spec.role,
            neighbor: spec.neighbor,
            state,
            process,
            velocity: VelocityModel::new(&(Matrix3::identity() * f.velocity_var)),
            log,
        });
    }
    let mut mail = Mailbox { queues: BTreeMap::new() };
    for a in &mut agents {
        publish(a, &mut mail, 0.0, sc.rates.message_latency_s);
    }

    let (vel_every, msg_every) = (sc.velocity_every(), sc.message_every());
    for k in 1..=sc.num_ticks() {
        let t = k as f64 * dt;
        for a in agents.iter_mut() {
            let s = &streams[a.idx];
            a.state = predict(&a.state, &a.process, &s.imu[k - 1], dt).map_err(numerical("predict", a.id, t))?;
            a.state.timestamp = t;

            let vel = if variant.uses_velocity() { s.velocity.get(&k) } else { None };
            let mut gate = None;
            let mut pose_applied = false;
            if let (true, Some(ev), Some(v)) = (variant.uses_markers(), s.markers.get(&k), vel) {
                let pseudo = match a.role {
                    Role::Leader => Some(leader_pseudo_pose(&ev.obs, a.id, &ext).map_err(numerical("leader_pseudo_pose", a.id, t))?),
                    _ => {
                        let nb = a.neighbor.expect("validated follower");
                        match mail.latest(nb, t) {
                            Some(msg) => match follower_pseudo_pose(&ev.obs, msg, a.id, &ext, f.staleness_s) {
                                Ok(p) => Some(p),
                                Err(Error::StaleMessage { .. }) => None,
                                Err(e) => return Err(numerical("follower_pseudo_pose", a.id, t)(e)),
                            },
                            None => None,
                        }
                    }
                };
                match pseudo {
                    Some(p) => {
                        let (z, r) = assemble_pose_velocity_measurement(&p, v, f.epsilon)
                            .map_err(numerical("assemble_pose_velocity_measurement", a.id, t))?;
                        let model = PoseVelocityModel { r };
                        let inn = innovation(&a.state, &model, &z, JacobianMode::Analytic).map_err(numerical("innovation", a.id, t))?;
                        let d2 = inn.mahalanobis_squared().map_err(numerical("mahalanobis_gate", a.id, t))?;
                        let decision = GateDecision::new(d2, f.gate_threshold);
                        let accept = decision.accepted || !variant.gated();
                        if accept {
                            a.state = apply_innovation(&a.state, &inn).map_err(numerical("pose_velocity_update", a.id, t))?.0;
                            pose_applied = true;
                        }
                        gate = Some(GateRecord { d_squared: d2, accepted: accept, faulted: ev.faulted });
                    }
                    None => a.log.missed_pseudo_poses += 1,
                }
            }
            if let (false, Some(v)) = (pose_applied, vel) {
                a.state = update(&a.state, &a.velocity, &Translation3(v.v)).map_err(numerical("velocity_update", a.id, t))?;
            }
            if k % msg_every == 0 {
                publish(a, &mut mail, t, sc.rates.message_latency_s);
            }
            if k % vel_every == 0 {
                a.log.records.push(make_record(k, t, &truths[a.idx].states[k], &a.state, gate));
            }
        }
    }
    Ok(SimLog {
        scenario: sc.name.clone(),
        variant,
        seed,
        dt,
        robots: agents.into_iter().map(|a| a.log).collect(),
    })
}

fn publish(a: &mut Agent, mail: &mut Mailbox, t: f64, latency: f64) {
    let x = a.state.mean();
    let msg = pose_message(a.id, &x.rotation, &x.position, a.state.cov(), t);
    mail.queues.entry(a.id).or_default().push((t + latency, msg));
    a.log.messages.push(MessageEvent { sender: a.id, t_sent: t, t_available: t + latency });
}

fn make_record(tick: usize, t: f64, truth: &StateElement, state: &FilterState<StateElement>, gate: Option<GateRecord>) -> Record {
    Record {
        tick,
        t,
        truth: truth.clone(),
        estimate: state.mean().clone(),
        cov_trace: pose_trace(state.cov()),
        nees: state_nees(state.mean(), state.cov(), truth),
        gate,
    }
}
