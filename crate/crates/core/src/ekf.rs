//! Discrete-time EKF on a matrix Lie group with right-perturbation errors.
//!
//! Prediction: `X <- X exp(f_bar)`, `f_bar = dt f(X, u)`,
//! `P <- F P F^T + J_r(f_bar) (dt Q) J_r(f_bar)^T`,
//! `F = Ad_{exp(-f_bar)} + J_r(f_bar) D`, `D = d f_bar(X exp e) / de`.
//!
//! Update: `nu = log(h(X)^-1 z)`, `K = P H^T S^-1`, `X <- X exp(K nu)`,
//! `P <- J_r(K nu) (I - K H) P J_r(K nu)^T`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::group::LieGroup;
use crate::math::{self, symmetrize};
use crate::stochastic::StochasticElement;

/// Central-difference step for numeric `D` and `H`.
pub const FD_STEP: f64 = 1e-6;

/// Default Mahalanobis gate threshold.
pub const DEFAULT_GATE_THRESHOLD: f64 = 40.0;

#[derive(Clone, Debug, PartialEq)]
pub struct FilterState<G: LieGroup> {
    pub estimate: StochasticElement<G>,
    pub timestamp: f64,
}

impl<G: LieGroup> FilterState<G> {
    pub fn new(estimate: StochasticElement<G>, timestamp: f64) -> Self {
        Self { estimate, timestamp }
    }

    pub fn mean(&self) -> &G {
        &self.estimate.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.estimate.cov
    }
}

/// How the Jacobian of a model is obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum JacobianMode {
    /// Use the model's closed-form Jacobian, falling back to numeric when
    /// the model provides none.
    #[default]
    Analytic,
    Numeric,
}

/// Continuous-time process `X' = X hat(f(X, u) + w)`, `w ~ N(0, Q)`.
pub trait ProcessModel<G: LieGroup> {
    type Input;

    /// Body-frame velocity `f(X, u)` in the group's tangent coordinates.
    fn velocity(&self, x: &G, u: &Self::Input) -> DVector<f64>;

    /// Continuous-time noise density `Q`.
    fn noise_density(&self) -> &DMatrix<f64>;

    /// Closed-form `d f(X exp e) / de` at `e = 0`.
    fn velocity_jacobian(&self, _x: &G, _u: &Self::Input) -> Option<DMatrix<f64>> {
        None
    }
}

/// Measurement `z = h(X) exp(m)`, `m ~ N(0, R)`.
pub trait MeasurementModel<G: LieGroup> {
    type Output: LieGroup;

    fn predict(&self, x: &G) -> Self::Output;

    fn noise(&self) -> &DMatrix<f64>;

    /// Closed-form `d log(h(X)^-1 h(X exp e)) / de` at `e = 0`.
    fn jacobian(&self, _x: &G) -> Option<DMatrix<f64>> {
        None
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GateDecision {
    pub d_squared: f64,
    pub threshold: f64,
    pub accepted: bool,
}

impl GateDecision {
    pub fn new(d_squared: f64, threshold: f64) -> Self {
        Self { d_squared, threshold, accepted: d_squared < threshold }
    }
}

/// Numeric `d f(X exp e) / de` by central differences.
pub fn numeric_process_jacobian<G, P>(model: &P, x: &G, u: &P::Input) -> DMatrix<f64>
where
    G: LieGroup,
    P: ProcessModel<G>,
{
    let n = x.dof();
    let mut out = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut e = DVector::zeros(n);
        e[j] = FD_STEP;
        let plus = model.velocity(&x.retract(&e), u);
        e[j] = -FD_STEP;
        let minus = model.velocity(&x.retract(&e), u);
        out.set_column(j, &((plus - minus) / (2.0 * FD_STEP)));
    }
    out
}

/// Numeric `H` by central differences of the measurement residual.
pub fn numeric_measurement_jacobian<G, M>(model: &M, x: &G) -> Result<DMatrix<f64>>
where
    G: LieGroup,
    M: MeasurementModel<G>,
{
    let n = x.dof();
    let hx_inv = model.predict(x).inverse();
    let m = hx_inv.dof();
    let mut out = DMatrix::zeros(m, n);
    for j in 0..n {
        let mut e = DVector::zeros(n);
        e[j] = FD_STEP;
        let plus = hx_inv.compose(&model.predict(&x.retract(&e))).log()?;
        e[j] = -FD_STEP;
        let minus = hx_inv.compose(&model.predict(&x.retract(&e))).log()?;
        out.set_column(j, &((plus - minus) / (2.0 * FD_STEP)));
    }
    Ok(out)
}

fn process_jacobian<G: LieGroup, P: ProcessModel<G>>(
    model: &P,
    x: &G,
    u: &P::Input,
    mode: JacobianMode,
) -> DMatrix<f64> {
    match mode {
        JacobianMode::Analytic => {
            model.velocity_jacobian(x, u).unwrap_or_else(|| numeric_process_jacobian(model, x, u))
        }
        JacobianMode::Numeric => numeric_process_jacobian(model, x, u),
    }
}

/// Linearization of a prediction step, exposed for cross-covariance bookkeeping.
#[derive(Clone, Debug)]
pub struct PredictionTerms {
    pub f_bar: DVector<f64>,
    /// State transition `F`.
    pub transition: DMatrix<f64>,
    /// `J_r(f_bar)`.
    pub noise_jacobian: DMatrix<f64>,
}

pub fn predict<G, P>(state: &FilterState<G>, model: &P, u: &P::Input, dt: f64) -> Result<FilterState<G>>
where
    G: LieGroup,
    P: ProcessModel<G>,
{
    predict_with(state, model, u, dt, JacobianMode::Analytic).map(|(s, _)| s)
}

pub fn predict_with<G, P>(
    state: &FilterState<G>,
    model: &P,
    u: &P::Input,
    dt: f64,
    mode: JacobianMode,
) -> Result<(FilterState<G>, PredictionTerms)>
where
    G: LieGroup,
    P: ProcessModel<G>,
{
    if !(dt > 0.0) {
        return Err(Error::NonPositiveStep);
    }
    let x = state.mean();
    let shape = x.shape();
    let f_bar = model.velocity(x, u) * dt;
    let d = process_jacobian(model, x, u, mode) * dt;
    let jr = G::right_jacobian(shape, &f_bar);
    let step = G::exp(shape, &f_bar);
    let f = step.inverse().adjoint() + &jr * d;
    let q = model.noise_density() * dt;
    let cov = symmetrize(&(&f * state.cov() * f.transpose() + &jr * q * jr.transpose()));
    let next = FilterState::new(StochasticElement { mean: x.compose(&step), cov }, state.timestamp + dt);
    Ok((next, PredictionTerms { f_bar, transition: f, noise_jacobian: jr }))
}

/// Innovation, its Jacobian and covariance at the current estimate.
#[derive(Clone, Debug)]
pub struct Innovation {
    pub nu: DVector<f64>,
    pub h: DMatrix<f64>,
    pub s: DMatrix<f64>,
}

impl Innovation {
    /// `nu^T S^-1 nu`.
    pub fn mahalanobis_squared(&self) -> Result<f64> {
        let sol = math::spd_solve_vec(&self.s, &self.nu).ok_or(Error::SingularInnovationCov)?;
        Ok(self.nu.dot(&sol))
    }
}

pub fn innovation<G, M>(state: &FilterState<G>, model: &M, z: &M::Output, mode: JacobianMode) -> Result<Innovation>
where
    G: LieGroup,
    M: MeasurementModel<G>,
{
    let x = state.mean();
    let nu = model.predict(x).inverse().compose(z).log()?;
    let h = match mode {
        JacobianMode::Analytic => match model.jacobian(x) {
            Some(h) => h,
            None => numeric_measurement_jacobian(model, x)?,
        },
        JacobianMode::Numeric => numeric_measurement_jacobian(model, x)?,
    };
    let r = model.noise();
    if r.nrows() != nu.len() || h.nrows() != nu.len() || h.ncols() != x.dof() {
        return Err(Error::DimensionMismatch { expected: nu.len(), actual: r.nrows() });
    }
    let s = symmetrize(&(&h * state.cov() * h.transpose() + r));
    Ok(Innovation { nu, h, s })
}

/// Gain `K = P H^T S^-1`, solved through a Cholesky factor of `S`.
pub fn gain(p: &DMatrix<f64>, inn: &Innovation) -> Result<DMatrix<f64>> {
    let pht = p * inn.h.transpose();
    let chol = math::cholesky(&inn.s).ok_or(Error::SingularInnovationCov)?;
    // K^T = S^-1 (P H^T)^T
    Ok(chol.solve(&pht.transpose()).transpose())
}

/// Applies a precomputed innovation; returns the new state and the gain.
pub fn apply_innovation<G: LieGroup>(state: &FilterState<G>, inn: &Innovation) -> Result<(FilterState<G>, DMatrix<f64>)> {
    let p = state.cov();
    let n = p.nrows();
    let k = gain(p, inn)?;
    let correction = &k * &inn.nu;
    let x = state.mean();
    let jr = G::right_jacobian(x.shape(), &correction);
    let cov = symmetrize(&(&jr * (DMatrix::identity(n, n) - &k * &inn.h) * p * jr.transpose()));
    let mean = x.retract(&correction);
    Ok((FilterState::new(StochasticElement { mean, cov }, state.timestamp), k))
}

pub fn update<G, M>(state: &FilterState<G>, model: &M, z: &M::Output) -> Result<FilterState<G>>
where
    G: LieGroup,
    M: MeasurementModel<G>,
{
    let inn = innovation(state, model, z, JacobianMode::Analytic)?;
    apply_innovation(state, &inn).map(|(s, _)| s)
}

pub fn update_with<G, M>(
    state: &FilterState<G>,
    model: &M,
    z: &M::Output,
    mode: JacobianMode,
) -> Result<FilterState<G>>
where
    G: LieGroup,
    M: MeasurementModel<G>,
{
    let inn = innovation(state, model, z, mode)?;
    apply_innovation(state, &inn).map(|(s, _)| s)
}

/// Squared Mahalanobis distance of the innovation against `threshold`.
/// Never changes the state.
pub fn mahalanobis_gate<G, M>(state: &FilterState<G>, model: &M, z: &M::Output, threshold: f64) -> Result<GateDecision>
where
    G: LieGroup,
    M: MeasurementModel<G>,
{
    let inn = innovation(state, model, z, JacobianMode::Analytic)?;
    Ok(GateDecision::new(inn.mahalanobis_squared()?, threshold))
}

/// Gate then update when accepted; `None` means the measurement was rejected.
pub fn gated_update<G, M>(
    state: &FilterState<G>,
    model: &M,
    z: &M::Output,
    threshold: f64,
) -> Result<(Option<FilterState<G>>, GateDecision)>
where
    G: LieGroup,
    M: MeasurementModel<G>,
{
    let inn = innovation(state, model, z, JacobianMode::Analytic)?;
    let decision = GateDecision::new(inn.mahalanobis_squared()?, threshold);
    if decision.accepted {
        Ok((Some(apply_innovation(state, &inn)?.0), decision))
    } else {
        Ok((None, decision))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::liegroup::GroupElement;

    struct Still {
        q: DMatrix<f64>,
    }

    impl ProcessModel<GroupElement> for Still {
        type Input = DVector<f64>;
        fn velocity(&self, _x: &GroupElement, u: &DVector<f64>) -> DVector<f64> {
            u.clone()
        }
        fn noise_density(&self) -> &DMatrix<f64> {
            &self.q
        }
        fn velocity_jacobian(&self, _x: &GroupElement, _u: &DVector<f64>) -> Option<DMatrix<f64>> {
            Some(DMatrix::zeros(6, 6))
        }
    }

    struct Direct {
        r: DMatrix<f64>,
    }

    impl MeasurementModel<GroupElement> for Direct {
        type Output = GroupElement;
        fn predict(&self, x: &GroupElement) -> GroupElement {
            x.clone()
        }
        fn noise(&self) -> &DMatrix<f64> {
            &self.r
        }
    }

    fn state() -> FilterState<GroupElement> {
        let mean = GroupElement::exp(1, &DVector::from_row_slice(&[0.1, -0.2, 0.3, 1.0, 0.0, 2.0]));
        let cov = DMatrix::from_fn(6, 6, |i, j| if i == j { 0.02 } else { 0.001 });
        FilterState::new(StochasticElement::new(mean, cov).unwrap(), 0.0)
    }

    #[test]
    fn zero_dynamics_adds_noise() {
        let s = state();
        let m = Still { q: DMatrix::identity(6, 6) * 0.5 };
        let out = predict(&s, &m, &DVector::zeros(6), 0.1).unwrap();
        assert_eq!(out.estimate.mean, s.estimate.mean);
        assert!(math::max_abs(&(out.cov() - (s.cov() + DMatrix::identity(6, 6) * 0.05))) < 1e-15);
        assert!((out.timestamp - 0.1).abs() < 1e-15);
    }

    #[test]
    fn deterministic_flow_transports_covariance() {
        let s = state();
        let m = Still { q: DMatrix::zeros(6, 6) };
        let u = DVector::from_row_slice(&[0.2, 0.1, -0.4, 1.0, -0.5, 0.2]);
        let out = predict(&s, &m, &u, 0.5).unwrap();
        let ad = GroupElement::exp(1, &(-&u * 0.5)).adjoint();
        assert!(math::max_abs(&(out.cov() - &ad * s.cov() * ad.transpose())) < 1e-14);
    }

    #[test]
    fn rejects_non_positive_step() {
        let m = Still { q: DMatrix::zeros(6, 6) };
        assert_eq!(predict(&state(), &m, &DVector::zeros(6), 0.0).unwrap_err(), Error::NonPositiveStep);
    }

    #[test]
    fn zero_innovation_keeps_mean() {
        let s = state();
        let m = Direct { r: DMatrix::identity(6, 6) * 0.01 };
        let z = s.mean().clone();
        let out = update(&s, &m, &z).unwrap();
        assert_eq!(out.estimate.mean, s.estimate.mean);
        let inn = innovation(&s, &m, &z, JacobianMode::Analytic).unwrap();
        let k = gain(s.cov(), &inn).unwrap();
        let want = (DMatrix::identity(6, 6) - &k * &inn.h) * s.cov();
        assert!(math::max_abs(&(out.cov() - symmetrize(&want))) < 1e-12);
        let gate = mahalanobis_gate(&s, &m, &z, 40.0).unwrap();
        assert_eq!(gate.d_squared, 0.0);
        assert!(gate.accepted);
    }

    #[test]
    fn uninformative_measurement_changes_nothing() {
        let s = state();
        let m = Direct { r: DMatrix::identity(6, 6) * 1e12 };
        let z = s.mean().retract(&DVector::from_row_slice(&[0.1, 0.0, 0.0, 0.5, 0.0, 0.0]));
        let out = update(&s, &m, &z).unwrap();
        assert!(out.estimate.mean.distance_to(s.mean()) < 1e-6);
    }

    #[test]
    fn gate_boundary_is_strict() {
        assert!(!GateDecision::new(40.0, 40.0).accepted);
        assert!(GateDecision::new(39.999, 40.0).accepted);
    }
}
