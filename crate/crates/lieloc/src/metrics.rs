//! Error statistics of a run.

use lieloc_core::liegroup::rotation_angle_between;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::config::Role;
use crate::runner::{FilterVariant, RobotLog, SimLog};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateStats {
    pub accepted: usize,
    pub rejected: usize,
    pub faulted: usize,
    pub faulted_rejected: usize,
    pub nominal: usize,
    pub nominal_accepted: usize,
}

impl GateStats {
    pub fn faulted_rejection_rate(&self) -> Option<f64> {
        (self.faulted > 0).then(|| self.faulted_rejected as f64 / self.faulted as f64)
    }

    pub fn nominal_acceptance_rate(&self) -> Option<f64> {
        (self.nominal > 0).then(|| self.nominal_accepted as f64 / self.nominal as f64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobotMetrics {
    pub id: u32,
    pub role: Role,
    pub position_rmse_m: f64,
    pub rotation_rmse_rad: f64,
    pub velocity_rmse_mps: f64,
    pub max_position_error_m: f64,
    /// First time the position error exceeds 1 m.
    pub first_exceed_1m_s: Option<f64>,
    /// Time average of the pose-block covariance trace.
    pub mean_cov_trace: f64,
    /// Mean NEES over the 15 live coordinates.
    pub mean_nees: f64,
    pub gate: GateStats,
    pub missed_pseudo_poses: usize,
    pub samples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub scenario: String,
    pub variant: FilterVariant,
    pub seed: u64,
    pub robots: Vec<RobotMetrics>,
}

impl RunMetrics {
    pub fn robot(&self, role: Role) -> Option<&RobotMetrics> {
        self.robots.iter().find(|r| r.role == role)
    }
}

/// Root mean square of a sequence of error magnitudes.
pub fn rmse(errors: impl IntoIterator<Item = f64>) -> f64 {
    let (sum, n) = errors.into_iter().fold((0.0, 0usize), |(s, n), e| (s + e * e, n + 1));
    if n == 0 {
        0.0
    } else {
        (sum / n as f64).sqrt()
    }
}

/// Normalized estimation error squared `e^T P^-1 e`; infinite when `P` is
/// not positive definite.
pub fn nees(error: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
    match lieloc_core::math::spd_solve_vec(cov, error) {
        Some(x) => error.dot(&x),
        None => f64::INFINITY,
    }
}

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (sum, n) = xs.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

pub fn robot_metrics(log: &RobotLog) -> RobotMetrics {
    let r = &log.records;
    let pos_err: Vec<f64> = r.iter().map(|x| (x.estimate.position - x.truth.position).norm()).collect();
    let mut gate = GateStats { accepted: 0, rejected: 0, faulted: 0, faulted_rejected: 0, nominal: 0, nominal_accepted: 0 };
    for g in r.iter().filter_map(|x| x.gate) {
        if g.accepted {
            gate.accepted += 1;
        } else {
            gate.rejected += 1;
        }
        if g.faulted {
            gate.faulted += 1;
            gate.faulted_rejected += usize::from(!g.accepted);
        } else {
            gate.nominal += 1;
            gate.nominal_accepted += usize::from(g.accepted);
        }
    }
    RobotMetrics {
        id: log.id,
        role: log.role,
        position_rmse_m: rmse(pos_err.iter().copied()),
        rotation_rmse_rad: rmse(r.iter().map(|x| rotation_angle_between(&x.estimate.rotation, &x.truth.rotation))),
        velocity_rmse_mps: rmse(r.iter().map(|x| (x.estimate.velocity - x.truth.velocity).norm())),
        max_position_error_m: pos_err.iter().copied().fold(0.0, f64::max),
        first_exceed_1m_s: r.iter().zip(&pos_err).find(|(_, e)| **e > 1.0).map(|(x, _)| x.t),
        mean_cov_trace: mean(r.iter().map(|x| x.cov_trace)),
        mean_nees: mean(r.iter().map(|x| x.nees)),
        gate,
        missed_pseudo_poses: log.missed_pseudo_poses,
        samples: r.len(),
    }
}

pub fn compute_metrics(log: &SimLog) -> RunMetrics {
    RunMetrics {
        scenario: log.scenario.clone(),
        variant: log.variant,
        seed: log.seed,
        robots: log.robots.iter().map(robot_metrics).collect(),
    }
}

/// Median of a non-empty slice; `NaN` when empty.
pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::runner::{GateRecord, Record};
    use lieloc_core::{LieGroup, StateElement};
    use nalgebra::Vector3;

    fn log_with(offset: Vector3<f64>) -> RobotLog {
        let records = (0..50)
            .map(|k| {
                let truth = StateElement::identity(());
                let mut estimate = truth.clone();
                estimate.position += offset;
                let gate = (k % 5 == 0).then_some(GateRecord { d_squared: 1.0, accepted: k % 10 == 0, faulted: k % 10 != 0 });
                Record { tick: k, t: k as f64 * 0.05, truth, estimate, cov_trace: 0.1, nees: 15.0, gate }
            })
            .collect();
        RobotLog { id: 0, role: Role::Leader, records, messages: Vec::new(), missed_pseudo_poses: 0 }
    }

    #[test]
    fn rmse_of_exact_estimate_is_zero() {
        let m = robot_metrics(&log_with(Vector3::zeros()));
        assert_eq!(m.position_rmse_m, 0.0);
        assert_eq!(m.rotation_rmse_rad, 0.0);
        assert_eq!(m.first_exceed_1m_s, None);
    }

    #[test]
    fn constant_offset_rmse() {
        let m = robot_metrics(&log_with(Vector3::new(1.0, 0.0, 0.0)));
        assert!((m.position_rmse_m - 1.0).abs() < 1e-15);
        let m = robot_metrics(&log_with(Vector3::new(1.5, 0.0, 0.0)));
        assert_eq!(m.first_exceed_1m_s, Some(0.0));
    }

    #[test]
    fn gate_counts() {
        let g = robot_metrics(&log_with(Vector3::zeros())).gate;
        assert_eq!((g.accepted, g.rejected), (5, 5));
        assert_eq!(g.faulted_rejection_rate(), Some(1.0));
        assert_eq!(g.nominal_acceptance_rate(), Some(1.0));
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&[]).is_nan());
    }
}
