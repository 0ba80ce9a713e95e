//! Pseudo-pose construction from fiducial markers.
//!
//! Frame convention: `z_ab` is the pose of frame `b` expressed in frame `a`.
//! `U` is the marker-map frame, `W` the world, `O` a robot's odometry frame,
//! `B` its body, `C` its camera and `M` a marker.

use alloc::collections::BTreeMap;
use alloc::vec;

use nalgebra::{DMatrix, Vector3};

use crate::error::{Error, Result};
use crate::liegroup::GroupElement;
use crate::product::MeasurementElement;
use crate::stochastic::{st_compose, st_inverse, CorrelatedSet, StochasticElement};

use super::VelocitySample;

pub type RobotId = u32;

/// Relative pose `Z^{CM}` of a marker in the observing camera.
#[derive(Clone, Debug, PartialEq)]
pub struct MarkerObservation {
    pub marker_id: u32,
    pub rel_pose: GroupElement,
    pub cov: DMatrix<f64>,
    pub t: f64,
}

/// Communicated `SE(3)` estimate of a robot's `O -> B` pose.
#[derive(Clone, Debug, PartialEq)]
pub struct PoseMessage {
    pub sender: RobotId,
    pub pose: StochasticElement<GroupElement>,
    pub t: f64,
}

/// Known rigid transforms of one robot.
#[derive(Clone, Debug, PartialEq)]
pub struct RobotFrames {
    /// Odometry frame in the world.
    pub z_wo: GroupElement,
    /// Camera in the body.
    pub z_bc: GroupElement,
    /// Body in the frame of the marker this robot carries, if any.
    pub z_mb: Option<GroupElement>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum MarkerAnchor {
    /// Fixed marker with pose `z_um` in the map frame.
    Stationary { z_um: GroupElement },
    /// Marker mounted on a robot.
    Mobile { carrier: RobotId },
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameExtrinsics {
    /// World in the marker-map frame.
    pub z_uw: GroupElement,
    pub robots: BTreeMap<RobotId, RobotFrames>,
    pub markers: BTreeMap<u32, MarkerAnchor>,
}

impl FrameExtrinsics {
    pub fn robot(&self, id: RobotId) -> Result<&RobotFrames> {
        self.robots.get(&id).ok_or(Error::InvalidParameter("robot missing from frame registry"))
    }

    fn stationary(&self, marker: u32) -> Result<&GroupElement> {
        match self.markers.get(&marker) {
            Some(MarkerAnchor::Stationary { z_um }) => Ok(z_um),
            _ => Err(Error::UnknownMarker(marker)),
        }
    }

    /// `(carrier id, carrier frames, z_mb)` of a mobile marker.
    fn mobile(&self, marker: u32) -> Result<(RobotId, &RobotFrames, &GroupElement)> {
        match self.markers.get(&marker) {
            Some(MarkerAnchor::Mobile { carrier }) => {
                let frames = self.robots.get(carrier).ok_or(Error::UnknownMarker(marker))?;
                let z_mb = frames.z_mb.as_ref().ok_or(Error::UnknownMarker(marker))?;
                Ok((*carrier, frames, z_mb))
            }
            _ => Err(Error::UnknownMarker(marker)),
        }
    }
}

fn observation_element(obs: &MarkerObservation) -> Result<StochasticElement<GroupElement>> {
    if obs.rel_pose.kappa() != 1 {
        return Err(Error::DimensionMismatch { expected: 6, actual: obs.rel_pose.dof() });
    }
    StochasticElement::new(obs.rel_pose.clone(), obs.cov.clone())
}

/// `Z^{OB} = (Z^{UW} Z^{WO})^-1 Z^{UM} (Z^{BC} Z^{CM})^-1` for a fixed marker.
///
/// Covariance `Ad_{BC} Ad_{CM} R_m Ad_{CM}^T Ad_{BC}^T`.
pub fn leader_pseudo_pose(
    obs: &MarkerObservation,
    observer: RobotId,
    ext: &FrameExtrinsics,
) -> Result<StochasticElement<GroupElement>> {
    let z_um = ext.stationary(obs.marker_id)?;
    let frames = ext.robot(observer)?;
    let anchor = ext.z_uw.compose(&frames.z_wo).inverse().compose(z_um);
    let set = CorrelatedSet::uncorrelated(vec![
        StochasticElement::exact(anchor),
        st_inverse(&observation_element(obs)?),
        StochasticElement::exact(frames.z_bc.inverse()),
    ]);
    st_compose(&set)
}

/// Pseudo-pose from a marker carried by a neighbour whose estimate arrives
/// in `msg`:
/// `Z^{OB} = (Z^{WO})^-1 Z^{WO_n} X_n (Z^{BC} Z^{CM} Z^{M B_n})^-1`.
///
/// Covariance is the marker term plus the neighbour's covariance moved
/// through `Ad_{BC CM MB_n}`; both noises are independent.
pub fn follower_pseudo_pose(
    obs: &MarkerObservation,
    msg: &PoseMessage,
    observer: RobotId,
    ext: &FrameExtrinsics,
    max_age: f64,
) -> Result<StochasticElement<GroupElement>> {
    let (carrier, carrier_frames, z_mb) = ext.mobile(obs.marker_id)?;
    if carrier != msg.sender {
        return Err(Error::UnknownMarker(obs.marker_id));
    }
    let age = obs.t - msg.t;
    if !(age.abs() <= max_age) {
        return Err(Error::StaleMessage { sender: msg.sender, age, bound: max_age });
    }
    if msg.pose.mean.kappa() != 1 {
        return Err(Error::DimensionMismatch { expected: 6, actual: msg.pose.dof() });
    }
    let frames = ext.robot(observer)?;
    let link = frames.z_wo.inverse().compose(&carrier_frames.z_wo);
    let set = CorrelatedSet::uncorrelated(vec![
        StochasticElement::exact(link),
        msg.pose.clone(),
        StochasticElement::exact(z_mb.inverse()),
        st_inverse(&observation_element(obs)?),
        StochasticElement::exact(frames.z_bc.inverse()),
    ]);
    st_compose(&set)
}

/// Follower observing the leader's marker.
pub fn follower1_pseudo_pose(
    obs: &MarkerObservation,
    leader_msg: &PoseMessage,
    observer: RobotId,
    ext: &FrameExtrinsics,
    max_age: f64,
) -> Result<StochasticElement<GroupElement>> {
    follower_pseudo_pose(obs, leader_msg, observer, ext, max_age)
}

/// Follower observing another follower's marker; same chain with the
/// neighbour in place of the leader.
pub fn follower2_pseudo_pose(
    obs: &MarkerObservation,
    neighbor_msg: &PoseMessage,
    observer: RobotId,
    ext: &FrameExtrinsics,
    max_age: f64,
) -> Result<StochasticElement<GroupElement>> {
    follower_pseudo_pose(obs, neighbor_msg, observer, ext, max_age)
}

/// Noiseless `Z^{CM}` of a fixed marker seen by `observer` at true pose `z_ob`.
pub fn observe_stationary_marker(
    z_ob: &GroupElement,
    marker: u32,
    observer: RobotId,
    ext: &FrameExtrinsics,
) -> Result<GroupElement> {
    let z_um = ext.stationary(marker)?;
    let frames = ext.robot(observer)?;
    let z_uc = ext.z_uw.compose(&frames.z_wo).compose(z_ob).compose(&frames.z_bc);
    Ok(z_uc.inverse().compose(z_um))
}

/// Noiseless `Z^{CM}` of a carried marker, given both robots' true `O -> B` poses.
pub fn observe_mobile_marker(
    z_ob: &GroupElement,
    carrier_z_ob: &GroupElement,
    marker: u32,
    observer: RobotId,
    ext: &FrameExtrinsics,
) -> Result<GroupElement> {
    let (_, carrier_frames, z_mb) = ext.mobile(marker)?;
    let frames = ext.robot(observer)?;
    let z_wc = frames.z_wo.compose(z_ob).compose(&frames.z_bc);
    let z_wm = carrier_frames.z_wo.compose(carrier_z_ob).compose(&z_mb.inverse());
    Ok(z_wc.inverse().compose(&z_wm))
}

/// Packs a pseudo-pose and a velocity reading into the measurement group
/// with covariance `diag(R_p, eps I3, R_v)`.
pub fn assemble_pose_velocity_measurement(
    pseudo: &StochasticElement<GroupElement>,
    vel: &VelocitySample,
    epsilon: f64,
) -> Result<(MeasurementElement, DMatrix<f64>)> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidParameter("epsilon must be positive"));
    }
    if pseudo.mean.kappa() != 1 {
        return Err(Error::DimensionMismatch { expected: 6, actual: pseudo.dof() });
    }
    let z = MeasurementElement::new(*pseudo.mean.rotation(), *pseudo.mean.translation(0), vel.v);
    let mut r = DMatrix::zeros(12, 12);
    r.view_mut((0, 0), (6, 6)).copy_from(&pseudo.cov);
    for i in 6..9 {
        r[(i, i)] = epsilon;
    }
    r.fixed_view_mut::<3, 3>(9, 9).copy_from(&vel.cov);
    Ok((z, r))
}

/// Builds the message a robot broadcasts from its `SE(3)` marginal.
pub fn pose_message(
    sender: RobotId,
    rotation: &nalgebra::Matrix3<f64>,
    position: &Vector3<f64>,
    state_cov: &DMatrix<f64>,
    t: f64,
) -> PoseMessage {
    PoseMessage {
        sender,
        pose: StochasticElement {
            mean: GroupElement::pose(*rotation, *position),
            cov: state_cov.view((0, 0), (6, 6)).into_owned(),
        },
        t,
    }
}
