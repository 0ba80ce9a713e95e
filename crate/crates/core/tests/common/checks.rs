//! Measurements shared by the oracle tests and the acceptance suite. Each
//! returns the observed error so callers pin their own tolerances.

use lieloc_core::ekf::{
    apply_innovation, innovation, predict, predict_with, update, FilterState, JacobianMode, MeasurementModel,
    ProcessModel,
};
use lieloc_core::liegroup::{adjoint_rep, bch_first_order, exp_map, hat, log_map};
use lieloc_core::math::block_diag;
use lieloc_core::stochastic::{
    cross_cov_step, default_reference, st_average, st_compose, st_difference, st_fuse, st_fuse_constrained, st_inverse,
};
use lieloc_core::{CorrelatedSet, GroupElement, LieGroup, LinearConstraint, Result, StochasticElement, TangentVector};
use nalgebra::{DMatrix, DVector, Vector3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::*;

pub fn random_tangent(r: &mut ChaCha8Rng, kappa: usize, max_angle: f64, trans: f64) -> TangentVector {
    let mut phi = normal_vec(r, 3);
    phi *= r.random_range(1e-3..max_angle) / phi.norm();
    let mut c = uniform_vec(r, 3 + 3 * kappa, trans);
    c.rows_mut(0, 3).copy_from(&phi);
    TangentVector::new(kappa, c).unwrap()
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0f64, |a, b| a.max(b.abs()))
}

/// Worst `|log(exp z) - z|` over `n` draws with `|phi| < pi - 0.1`.
pub fn round_trip_worst(seed: u64, n: usize) -> f64 {
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    for i in 0..n {
        let z = random_tangent(&mut r, 1 + i % 3, core::f64::consts::PI - 0.1, 5.0);
        let back = log_map(&exp_map(&z)).unwrap();
        worst = worst.max((back.coords() - z.coords()).norm());
    }
    worst
}

/// Worst entry of `hat(Ad_X z) - X hat(z) X^-1` over random draws.
pub fn adjoint_conjugation_worst(seed: u64, per_kappa: usize) -> f64 {
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    for kappa in 1..=3 {
        for _ in 0..per_kappa {
            let x = random_element(&mut r, kappa, 3.0, 3.0);
            let z = random_tangent(&mut r, kappa, 3.0, 2.0);
            let ad_z = TangentVector::new(kappa, adjoint_rep(&x) * z.coords()).unwrap();
            let conj = x.to_matrix() * hat(&z) * x.inverse().to_matrix();
            worst = worst.max(max_abs(&(hat(&ad_z) - conj)));
        }
    }
    worst
}

pub fn bch_error(z: &TangentVector, e: &TangentVector) -> f64 {
    let exact = log_map(&exp_map(z).compose(&exp_map(e))).unwrap();
    (exact.coords() - bch_first_order(z, e).unwrap().coords()).norm()
}

/// Smallest ratio of first-order BCH errors when the perturbation halves.
pub fn bch_min_ratio(seed: u64, n: usize) -> f64 {
    let mut r = rng(seed);
    let mut worst = f64::INFINITY;
    for _ in 0..n {
        let z = random_tangent(&mut r, 1, 2.0, 1.0);
        let dir = random_tangent(&mut r, 1, 1.0, 1.0);
        let e = dir.scale(1e-2 / dir.norm());
        worst = worst.min(bch_error(&z, &e) / bch_error(&z, &e.scale(0.5)));
    }
    worst
}

pub fn set_from_joint(means: &[GroupElement], joint: &DMatrix<f64>) -> CorrelatedSet<GroupElement> {
    let d = means[0].dof();
    let elements = means
        .iter()
        .enumerate()
        .map(|(i, m)| StochasticElement::new(m.clone(), block(joint, i, i, d)).unwrap())
        .collect();
    let mut set = CorrelatedSet::uncorrelated(elements);
    for i in 0..means.len() {
        for j in i + 1..means.len() {
            set = set.with_cross(i, j, block(joint, i, j, d));
        }
    }
    set
}

fn perturbed(means: &[GroupElement], z: &DVector<f64>) -> Vec<GroupElement> {
    let d = means[0].dof();
    means.iter().enumerate().map(|(i, m)| m.retract(&z.rows(i * d, d).into_owned())).collect()
}

pub const MC_SAMPLES: usize = 100_000;

/// Analytic and sampled covariance for one operation at joint scale `s`.
pub struct Case {
    pub analytic: DMatrix<f64>,
    pub sampled: DMatrix<f64>,
}

impl Case {
    pub fn relative(&self) -> f64 {
        frobenius_rel(&self.sampled, &self.analytic)
    }

    pub fn absolute(&self) -> f64 {
        (&self.sampled - &self.analytic).norm()
    }
}

pub fn compose_case(s: f64) -> Case {
    let mut r = rng(11);
    let means: Vec<_> = (0..3).map(|_| random_element(&mut r, 1, 1.5, 1.0)).collect();
    let joint = random_joint(&mut r, 3, 6, s, 0.6);
    let out = st_compose(&set_from_joint(&means, &joint)).unwrap();
    let sampled = mc_cov(100, &joint, MC_SAMPLES, &out.mean, |z| {
        let x = perturbed(&means, z);
        x[0].compose(&x[1]).compose(&x[2])
    });
    Case { analytic: out.cov, sampled }
}

pub fn inverse_case(s: f64) -> Case {
    let mut r = rng(12);
    let mean = random_element(&mut r, 1, 2.0, 1.0);
    let cov = random_spd(&mut r, 6, s);
    let out = st_inverse(&StochasticElement::new(mean.clone(), cov.clone()).unwrap());
    let sampled = mc_cov(101, &cov, MC_SAMPLES, &out.mean, |z| mean.retract(z).inverse());
    Case { analytic: out.cov, sampled }
}

pub fn difference_case(s: f64) -> Case {
    let mut r = rng(13);
    let means: Vec<_> = (0..2).map(|_| random_element(&mut r, 1, 1.5, 1.0)).collect();
    let joint = random_joint(&mut r, 2, 6, s, 0.5);
    let a = StochasticElement::new(means[0].clone(), block(&joint, 0, 0, 6)).unwrap();
    let b = StochasticElement::new(means[1].clone(), block(&joint, 1, 1, 6)).unwrap();
    let out = st_difference(&a, &b, &block(&joint, 0, 1, 6)).unwrap();
    let sampled = mc_cov(102, &joint, MC_SAMPLES, &out.mean, |z| {
        let x = perturbed(&means, z);
        x[0].inverse().compose(&x[1])
    });
    Case { analytic: out.cov, sampled }
}

pub fn average_case(s: f64) -> Case {
    let mut r = rng(14);
    let means: Vec<_> = (0..3).map(|_| random_element(&mut r, 1, 0.03, 0.03)).collect();
    let joint = random_joint(&mut r, 3, 6, s, 0.4);
    let alphas = [0.2, 0.3, 0.5];
    let out = st_average(&set_from_joint(&means, &joint), &alphas).unwrap();
    let sampled = mc_cov(103, &joint, MC_SAMPLES, &out.mean, |z| {
        let x = perturbed(&means, z);
        let p: Vec<_> = x.iter().zip(alphas).map(|(x, a)| x.power(a).unwrap()).collect();
        p[0].compose(&p[1]).compose(&p[2])
    });
    Case { analytic: out.cov, sampled }
}

pub type CaseFn = fn(f64) -> Case;

pub const MC_CASES: [(&str, CaseFn); 4] =
    [("compose", compose_case), ("inverse", inverse_case), ("difference", difference_case), ("average", average_case)];

/// Worst `D(s_small) * (s_big / s_small) / D(s_big)` over consecutive
/// scales; at most 1.05 means the mismatch shrinks at least linearly.
pub fn shrink_ratio(case: CaseFn, scales: &[f64]) -> f64 {
    let d: Vec<f64> = scales.iter().map(|&s| case(s).absolute()).collect();
    d.windows(2)
        .zip(scales.windows(2))
        .map(|(dw, sw)| dw[1] * (sw[0] / sw[1]) / dw[0])
        .fold(0.0, f64::max)
}

pub fn fusion_problem(seed: u64, n: usize, correlated: bool) -> (Vec<GroupElement>, DMatrix<f64>) {
    let mut r = rng(seed);
    let center = random_element(&mut r, 1, 2.0, 1.0);
    // Offsets of norm 0.025 around a common centre keep every pair within 0.05.
    let means: Vec<_> = (0..n)
        .map(|_| {
            let mut off = normal_vec(&mut r, 6);
            off *= 0.025 / off.norm();
            center.retract(&off)
        })
        .collect();
    let rho = if correlated { 0.5 } else { 0.0 };
    let joint = random_joint(&mut r, n, 6, 1e-2, rho);
    (means, joint)
}

/// Worst closed-form vs minimizer gap over 50 problems: 2 and 3 inputs,
/// correlated and uncorrelated.
pub fn fusion_worst_gap() -> f64 {
    let mut worst = 0.0f64;
    for k in 0..50u64 {
        let n = 2 + (k % 2) as usize;
        let (means, joint) = fusion_problem(200 + k, n, k % 4 >= 2);
        let set = set_from_joint(&means, &joint);
        let reference = default_reference(&set).unwrap();
        let fused = st_fuse(&set, &reference).unwrap();
        let info = joint.clone().try_inverse().unwrap();
        let brute = brute_force_fuse(&means, &info, &reference);
        let closed = reference.local(&fused.mean).unwrap();
        worst = worst.max((closed - brute).norm());
    }
    worst
}

pub fn constrained_problem(seed: u64) -> (StochasticElement<GroupElement>, GroupElement, DMatrix<f64>) {
    let mut r = rng(seed);
    let mean = random_element(&mut r, 1, 2.0, 1.0);
    let reference = mean.retract(&uniform_vec(&mut r, 6, 0.05));
    let cov = random_spd(&mut r, 6, 1e-2);
    let w = random_spd(&mut r, 6, 1.0);
    (StochasticElement::new(mean, cov).unwrap(), reference, w)
}

pub fn position_constraint(d: &[f64], w: DMatrix<f64>) -> LinearConstraint {
    let mut gamma = DMatrix::zeros(3, 6);
    for i in 0..3 {
        gamma[(i, 3 + i)] = 1.0;
    }
    LinearConstraint::new(gamma, DVector::from_row_slice(d), w).unwrap()
}

pub struct ConstrainedReport {
    pub feasibility: f64,
    pub stationarity: f64,
    pub penalty_gap: f64,
}

/// Worst feasibility, KKT stationarity and penalty-oracle gap over 20 problems.
pub fn constrained_report() -> ConstrainedReport {
    let mut rep = ConstrainedReport { feasibility: 0.0, stationarity: 0.0, penalty_gap: 0.0 };
    for k in 0..20 {
        let (u, reference, w) = constrained_problem(400 + k);
        let c = position_constraint(&[0.01, -0.02, 0.005], w.clone());
        let out = st_fuse_constrained(&u, &c, &reference).unwrap();
        rep.feasibility = rep.feasibility.max((&c.gamma * &out.zeta - &c.d_tilde).norm());
        let jinv = GroupElement::right_jacobian_inv(1, &out.zeta_u).unwrap();
        let grad = jinv.transpose() * &w * (&out.zeta_u + &jinv * &out.zeta) + c.gamma.transpose() * &out.multiplier;
        rep.stationarity = rep.stationarity.max(grad.norm());
        let penalty = penalty_constrained(&out.zeta_u, &jinv, &w, &c.gamma, &c.d_tilde);
        rep.penalty_gap = rep.penalty_gap.max((penalty - &out.zeta).norm());
    }
    rep
}

/// `|zeta_c - Gamma^-1 d|` for a square invertible constraint.
pub fn full_rank_gap() -> f64 {
    let (u, reference, w) = constrained_problem(420);
    let mut r = rng(421);
    let gamma = random_spd(&mut r, 6, 1.0);
    let d = uniform_vec(&mut r, 6, 0.1);
    let c = LinearConstraint::new(gamma.clone(), d.clone(), w).unwrap();
    let out = st_fuse_constrained(&u, &c, &reference).unwrap();
    let want = gamma.lu().solve(&d).unwrap();
    (out.zeta - want).norm()
}

/// Body twist supplied directly as the input.
pub struct Twist {
    pub q: DMatrix<f64>,
}

impl ProcessModel<GroupElement> for Twist {
    type Input = DVector<f64>;
    fn velocity(&self, _x: &GroupElement, u: &DVector<f64>) -> DVector<f64> {
        u.clone()
    }
    fn noise_density(&self) -> &DMatrix<f64> {
        &self.q
    }
    fn velocity_jacobian(&self, _x: &GroupElement, u: &DVector<f64>) -> Option<DMatrix<f64>> {
        Some(DMatrix::zeros(u.len(), u.len()))
    }
}

/// Direct observation of the whole element.
pub struct Direct {
    pub r: DMatrix<f64>,
}

impl<G: LieGroup> MeasurementModel<G> for Direct {
    type Output = G;
    fn predict(&self, x: &G) -> G {
        x.clone()
    }
    fn noise(&self) -> &DMatrix<f64> {
        &self.r
    }
    fn jacobian(&self, x: &G) -> Option<DMatrix<f64>> {
        Some(DMatrix::identity(x.dof(), x.dof()))
    }
}

fn yaw(r: &nalgebra::Matrix3<f64>) -> f64 {
    r[(1, 0)].atan2(r[(0, 0)])
}

fn wrap(a: f64) -> f64 {
    let t = core::f64::consts::TAU;
    a - t * ((a + 0.5 * t) / t).floor()
}

/// Worst per-step gap, over 1000 steps, between the Lie EKF on SO(3)
/// driven about a fixed axis and a scalar EKF on the angle.
pub fn commutative_ekf_worst() -> f64 {
    let (q, r, dt) = (2e-3, 5e-2, 0.05);
    let process = Twist { q: DMatrix::from_diagonal(&DVector::from_row_slice(&[1e-3, 2e-3, q])) };
    let meas = Direct { r: DMatrix::from_diagonal(&DVector::from_row_slice(&[0.1, 0.2, r])) };
    let p0 = 0.3;
    let mut lie = FilterState::new(
        StochasticElement::new(GroupElement::identity(0), DMatrix::from_diagonal(&DVector::from_row_slice(&[0.1, 0.1, p0]))).unwrap(),
        0.0,
    );
    let mut classic = ScalarEkf { x: 0.0, p: p0 };
    let mut rg = rng(31);
    let mut truth = 0.4;
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let omega = 0.8 + rg.random_range(-0.5..0.5);
        truth += dt * omega + rg.random_range(-0.01..0.01);
        let u = DVector::from_row_slice(&[0.0, 0.0, omega]);
        lie = predict(&lie, &process, &u, dt).unwrap();
        classic.predict(omega, q, dt);
        let z_angle = truth + rg.random_range(-0.2..0.2);
        // The classical filter works on the unwrapped innovation, as the Lie
        // filter's log does.
        let z_near = classic.x + wrap(z_angle - classic.x);
        let z = GroupElement::from_rotation(lieloc_core::liegroup::rotation_about(&Vector3::z(), z_angle), 0);
        lie = update(&lie, &meas, &z).unwrap();
        classic.update(z_near, r);
        worst = worst.max(wrap(yaw(lie.mean().rotation()) - classic.x).abs());
        worst = worst.max((lie.cov()[(2, 2)] - classic.p).abs());
        // the decoupled axes must stay uncorrelated with the driven one
        worst = worst.max(lie.cov()[(0, 2)].abs()).max(lie.cov()[(1, 2)].abs());
    }
    worst
}

/// Two `SE(3)` elements stacked into one 12-dim product, the joint-filter oracle.
#[derive(Clone, Debug)]
pub struct Pair(pub GroupElement, pub GroupElement);

fn halves(xi: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
    (xi.rows(0, 6).into_owned(), xi.rows(6, 6).into_owned())
}

impl LieGroup for Pair {
    type Shape = ();
    fn shape(&self) {}
    fn dof_of(_: ()) -> usize {
        12
    }
    fn identity(_: ()) -> Self {
        Pair(GroupElement::identity(1), GroupElement::identity(1))
    }
    fn compose(&self, rhs: &Self) -> Self {
        Pair(LieGroup::compose(&self.0, &rhs.0), LieGroup::compose(&self.1, &rhs.1))
    }
    fn inverse(&self) -> Self {
        Pair(LieGroup::inverse(&self.0), LieGroup::inverse(&self.1))
    }
    fn exp(_: (), xi: &DVector<f64>) -> Self {
        let (a, b) = halves(xi);
        Pair(GroupElement::exp(1, &a), GroupElement::exp(1, &b))
    }
    fn log(&self) -> Result<DVector<f64>> {
        let mut v = DVector::zeros(12);
        v.rows_mut(0, 6).copy_from(&self.0.log()?);
        v.rows_mut(6, 6).copy_from(&self.1.log()?);
        Ok(v)
    }
    fn adjoint(&self) -> DMatrix<f64> {
        block_diag(&[&self.0.adjoint(), &self.1.adjoint()])
    }
    fn ad(_: (), xi: &DVector<f64>) -> DMatrix<f64> {
        let (a, b) = halves(xi);
        block_diag(&[&GroupElement::ad(1, &a), &GroupElement::ad(1, &b)])
    }
    fn right_jacobian(_: (), xi: &DVector<f64>) -> DMatrix<f64> {
        let (a, b) = halves(xi);
        block_diag(&[&GroupElement::right_jacobian(1, &a), &GroupElement::right_jacobian(1, &b)])
    }
    fn right_jacobian_inv(_: (), xi: &DVector<f64>) -> Result<DMatrix<f64>> {
        let (a, b) = halves(xi);
        Ok(block_diag(&[&GroupElement::right_jacobian_inv(1, &a)?, &GroupElement::right_jacobian_inv(1, &b)?]))
    }
    fn to_matrix(&self) -> DMatrix<f64> {
        block_diag(&[&self.0.to_matrix(), &self.1.to_matrix()])
    }
}

/// Joint model whose two halves share one process-noise realization.
pub struct SharedNoise {
    pub q: DMatrix<f64>,
}

impl ProcessModel<Pair> for SharedNoise {
    type Input = DVector<f64>;
    fn velocity(&self, _x: &Pair, u: &DVector<f64>) -> DVector<f64> {
        u.clone()
    }
    fn noise_density(&self) -> &DMatrix<f64> {
        &self.q
    }
    fn velocity_jacobian(&self, _x: &Pair, _u: &DVector<f64>) -> Option<DMatrix<f64>> {
        Some(DMatrix::zeros(12, 12))
    }
}

/// Worst gap between `cross_cov_step` and the off-diagonal block of a
/// stacked 12-dim filter over 50 steps, and the final cross-covariance norm.
pub fn cross_cov_worst() -> (f64, f64) {
    let mut rg = rng(32);
    let q = random_spd(&mut rg, 6, 1e-3);
    let mut joint_q = DMatrix::zeros(12, 12);
    for (i, j) in [(0, 0), (0, 6), (6, 0), (6, 6)] {
        joint_q.view_mut((i, j), (6, 6)).copy_from(&q);
    }
    let shared = SharedNoise { q: joint_q };
    let local = Twist { q: q.clone() };
    let meas = [Direct { r: random_spd(&mut rg, 6, 1e-2) }, Direct { r: random_spd(&mut rg, 6, 2e-2) }];

    let mut filters = [0, 1].map(|_| {
        FilterState::new(
            StochasticElement::new(random_element(&mut rg, 1, 1.0, 1.0), random_spd(&mut rg, 6, 1e-2)).unwrap(),
            0.0,
        )
    });
    let mut p12 = DMatrix::zeros(6, 6);
    let mut joint_cov = block_diag(&[filters[0].cov(), filters[1].cov()]);
    let dt = 0.1;
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let u = [uniform_vec(&mut rg, 6, 1.0), uniform_vec(&mut rg, 6, 1.0)];
        let mut joint_u = DVector::zeros(12);
        joint_u.rows_mut(0, 6).copy_from(&u[0]);
        joint_u.rows_mut(6, 6).copy_from(&u[1]);
        let pair = FilterState::new(
            StochasticElement { mean: Pair(filters[0].mean().clone(), filters[1].mean().clone()), cov: joint_cov.clone() },
            0.0,
        );
        joint_cov = predict(&pair, &shared, &joint_u, dt).unwrap().estimate.cov;

        let mut terms = Vec::new();
        for k in 0..2 {
            let (next, t) = predict_with(&filters[k], &local, &u[k], dt, JacobianMode::Analytic).unwrap();
            filters[k] = next;
            terms.push(t);
        }
        let mut gains = Vec::new();
        let mut hs = Vec::new();
        for k in 0..2 {
            let truth = filters[k].mean().retract(&uniform_vec(&mut rg, 6, 0.05));
            let inn = innovation(&filters[k], &meas[k], &truth, JacobianMode::Analytic).unwrap();
            let (next, gain) = apply_innovation(&filters[k], &inn).unwrap();
            filters[k] = next;
            hs.push(inn.h.clone());
            gains.push(gain);
        }
        p12 = cross_cov_step(
            &p12,
            &terms[0].transition,
            &terms[1].transition,
            &terms[0].noise_jacobian,
            &terms[1].noise_jacobian,
            &(&q * dt),
            &gains[0],
            &hs[0],
            &gains[1],
            &hs[1],
        )
        .unwrap();

        // Joseph form with the block gain the two local filters applied.
        let k = block_diag(&[&gains[0], &gains[1]]);
        let h = block_diag(&[&hs[0], &hs[1]]);
        let r = block_diag(&[&meas[0].r, &meas[1].r]);
        let l = DMatrix::identity(12, 12) - &k * &h;
        joint_cov = &l * &joint_cov * l.transpose() + &k * r * k.transpose();
        // Keep the oracle's diagonal aligned with the local filters, which
        // also apply J_r(K nu); only the off-diagonal is compared.
        joint_cov.view_mut((0, 0), (6, 6)).copy_from(filters[0].cov());
        joint_cov.view_mut((6, 6), (6, 6)).copy_from(filters[1].cov());
        worst = worst.max((joint_cov.view((0, 6), (6, 6)) - &p12).abs().max());
    }
    (worst, p12.norm())
}
