//! Stochastic operations on right-perturbed group elements
//! `X = mean * exp(zeta)`, `zeta ~ N(0, cov)`.
//!
//! All returned covariances are symmetrized.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::group::LieGroup;
use crate::math::{self, abs, symmetrize};

/// Condition-number ceiling for inverting a joint covariance.
pub const MAX_JOINT_CONDITION: f64 = 1e12;

#[derive(Clone, Debug, PartialEq)]
pub struct StochasticElement<G: LieGroup> {
    pub mean: G,
    pub cov: DMatrix<f64>,
}

impl<G: LieGroup> StochasticElement<G> {
    /// Checks that `cov` is symmetric PSD of the group's dimension.
    pub fn new(mean: G, cov: DMatrix<f64>) -> Result<Self> {
        math::validate_covariance(&cov, mean.dof())?;
        Ok(Self { mean, cov })
    }

    /// Deterministic element (zero covariance).
    pub fn exact(mean: G) -> Self {
        let n = mean.dof();
        Self { mean, cov: DMatrix::zeros(n, n) }
    }

    pub fn dof(&self) -> usize {
        self.mean.dof()
    }
}

/// Elements with pairwise cross-covariances `P_ij = E[zeta_i zeta_j^T]`,
/// stored for `i < j`. Missing pairs are uncorrelated.
#[derive(Clone, Debug)]
pub struct CorrelatedSet<G: LieGroup> {
    pub elements: Vec<StochasticElement<G>>,
    pub cross: BTreeMap<(usize, usize), DMatrix<f64>>,
}

impl<G: LieGroup> CorrelatedSet<G> {
    pub fn uncorrelated(elements: Vec<StochasticElement<G>>) -> Self {
        Self { elements, cross: BTreeMap::new() }
    }

    pub fn with_cross(mut self, i: usize, j: usize, p: DMatrix<f64>) -> Self {
        if i < j {
            self.cross.insert((i, j), p);
        } else {
            self.cross.insert((j, i), p.transpose());
        }
        self
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    /// `P_ij` for any ordered pair.
    pub fn block(&self, i: usize, j: usize) -> DMatrix<f64> {
        let d = self.elements[i].dof();
        if i == j {
            self.elements[i].cov.clone()
        } else if i < j {
            self.cross.get(&(i, j)).cloned().unwrap_or_else(|| DMatrix::zeros(d, d))
        } else {
            self.cross.get(&(j, i)).map(|m| m.transpose()).unwrap_or_else(|| DMatrix::zeros(d, d))
        }
    }

    pub fn joint_covariance(&self) -> DMatrix<f64> {
        let n = self.len();
        let d = self.elements.first().map(|e| e.dof()).unwrap_or(0);
        let mut out = DMatrix::zeros(n * d, n * d);
        for i in 0..n {
            for j in 0..n {
                out.view_mut((i * d, j * d), (d, d)).copy_from(&self.block(i, j));
            }
        }
        out
    }

    fn check_shapes(&self, min_len: usize) -> Result<usize> {
        if self.len() < min_len {
            return Err(Error::DimensionMismatch { expected: min_len, actual: self.len() });
        }
        let shape = self.elements[0].mean.shape();
        let d = self.elements[0].dof();
        for e in &self.elements {
            if e.mean.shape() != shape || e.cov.nrows() != d || e.cov.ncols() != d {
                return Err(Error::DimensionMismatch { expected: d, actual: e.cov.nrows() });
            }
        }
        for p in self.cross.values() {
            if p.nrows() != d || p.ncols() != d {
                return Err(Error::DimensionMismatch { expected: d, actual: p.nrows() });
            }
        }
        Ok(d)
    }

    /// `sum_ij A_i P_ij A_j^T`
    fn congruence(&self, a: &[DMatrix<f64>]) -> DMatrix<f64> {
        let d = self.elements[0].dof();
        let mut out = DMatrix::zeros(d, d);
        for i in 0..self.len() {
            for j in 0..self.len() {
                out += &a[i] * self.block(i, j) * a[j].transpose();
            }
        }
        symmetrize(&out)
    }
}

/// Full-rank linear constraint `gamma * zeta_c = d_tilde` with weight `W_c`.
#[derive(Clone, Debug)]
pub struct LinearConstraint {
    pub gamma: DMatrix<f64>,
    pub d_tilde: DVector<f64>,
    pub weight: DMatrix<f64>,
}

impl LinearConstraint {
    pub fn new(gamma: DMatrix<f64>, d_tilde: DVector<f64>, weight: DMatrix<f64>) -> Result<Self> {
        let (r, d) = gamma.shape();
        if d_tilde.len() != r {
            return Err(Error::DimensionMismatch { expected: r, actual: d_tilde.len() });
        }
        if weight.shape() != (d, d) {
            return Err(Error::DimensionMismatch { expected: d, actual: weight.nrows() });
        }
        if r > d || r == 0 {
            return Err(Error::RankDeficient);
        }
        let sv = gamma.clone().svd(false, false).singular_values;
        if sv.min() <= 1e-10 {
            return Err(Error::RankDeficient);
        }
        if math::cholesky(&weight).is_none() {
            return Err(Error::InvalidCovariance("constraint weight must be positive definite"));
        }
        Ok(Self { gamma, d_tilde, weight })
    }
}

pub fn st_inverse<G: LieGroup>(x: &StochasticElement<G>) -> StochasticElement<G> {
    let ad = x.mean.adjoint();
    StochasticElement { mean: x.mean.inverse(), cov: symmetrize(&(&ad * &x.cov * ad.transpose())) }
}

/// Composition `X_1 X_2 ... X_n` including cross terms.
pub fn st_compose<G: LieGroup>(set: &CorrelatedSet<G>) -> Result<StochasticElement<G>> {
    set.check_shapes(2)?;
    let n = set.len();
    let mut mean = set.elements[0].mean.clone();
    for e in &set.elements[1..] {
        mean = mean.compose(&e.mean);
    }
    // A_i = Ad of (X_{i+1} ... X_n)^-1; A_n = I.
    let mut a = alloc::vec![DMatrix::zeros(0, 0); n];
    let mut tail = G::identity(set.elements[0].mean.shape());
    for i in (0..n).rev() {
        a[i] = tail.inverse().adjoint();
        tail = set.elements[i].mean.compose(&tail);
    }
    Ok(StochasticElement { mean, cov: set.congruence(&a) })
}

/// `X_1^-1 X_2` for a correlated pair with `p12 = E[zeta_1 zeta_2^T]`.
pub fn st_difference<G: LieGroup>(
    x1: &StochasticElement<G>,
    x2: &StochasticElement<G>,
    p12: &DMatrix<f64>,
) -> Result<StochasticElement<G>> {
    let d = x1.dof();
    if x2.mean.shape() != x1.mean.shape() || p12.shape() != (d, d) {
        return Err(Error::DimensionMismatch { expected: d, actual: p12.nrows() });
    }
    let ad = x2.mean.inverse().compose(&x1.mean).adjoint();
    let cov = &x2.cov - p12.transpose() * ad.transpose() - &ad * p12 + &ad * &x1.cov * ad.transpose();
    let cov = symmetrize(&cov);
    let min_eig = math::min_eigenvalue(&cov);
    if min_eig < -1e-8 {
        return Err(Error::NonPsdResult { min_eigenvalue: min_eig });
    }
    Ok(StochasticElement { mean: x1.mean.inverse().compose(&x2.mean), cov })
}

/// Weighted average `X_1^a_1 ... X_n^a_n`.
///
/// The covariance uses `X_i^a ~ mean_i^a exp(a zeta_i)`, which is first order
/// in both the noise and the size of each mean.
pub fn st_average<G: LieGroup>(set: &CorrelatedSet<G>, alphas: &[f64]) -> Result<StochasticElement<G>> {
    set.check_shapes(1)?;
    let n = set.len();
    if alphas.len() != n {
        return Err(Error::WeightError("one weight per element required"));
    }
    if alphas.iter().any(|a| !(0.0..=1.0).contains(a)) {
        return Err(Error::WeightError("weights must lie in [0, 1]"));
    }
    if abs(alphas.iter().sum::<f64>() - 1.0) > 1e-12 {
        return Err(Error::WeightError("weights must sum to 1"));
    }
    let powers = set
        .elements
        .iter()
        .zip(alphas)
        .map(|(e, a)| e.mean.power(*a))
        .collect::<Result<Vec<_>>>()?;
    let shape = set.elements[0].mean.shape();
    let mut mean = G::identity(shape);
    for p in &powers {
        mean = mean.compose(p);
    }
    let mut b = alloc::vec![DMatrix::zeros(0, 0); n];
    let mut tail = G::identity(shape);
    for i in (0..n).rev() {
        b[i] = tail.inverse().adjoint() * alphas[i];
        tail = powers[i].compose(&tail);
    }
    Ok(StochasticElement { mean, cov: set.congruence(&b) })
}

/// Equal-weight average, the default fusion reference.
pub fn default_reference<G: LieGroup>(set: &CorrelatedSet<G>) -> Result<G> {
    let w = 1.0 / set.len() as f64;
    let mut alphas = alloc::vec![w; set.len()];
    // Absorb rounding so the weights sum to one exactly enough.
    let last = 1.0 - w * (set.len() - 1) as f64;
    if let Some(a) = alphas.last_mut() {
        *a = last;
    }
    Ok(st_average(set, &alphas)?.mean)
}

fn invert_joint(joint: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if math::condition_number(joint) > MAX_JOINT_CONDITION {
        return Err(Error::SingularJoint);
    }
    let n = joint.nrows();
    math::spd_solve(joint, &DMatrix::identity(n, n)).map(|g| symmetrize(&g)).ok_or(Error::SingularJoint)
}

/// Closed-form fusion of correlated estimates around `reference`.
///
/// Minimizes `eps^T Joint^-1 eps` with `eps_i = log(mean_i^-1 X_fus)`
/// linearized as `zeta_i + J_r^-1(zeta_i) zeta`.
pub fn st_fuse<G: LieGroup>(set: &CorrelatedSet<G>, reference: &G) -> Result<StochasticElement<G>> {
    let d = set.check_shapes(1)?;
    let n = set.len();
    let info = invert_joint(&set.joint_covariance())?;
    let zetas = set
        .elements
        .iter()
        .map(|e| e.mean.local(reference))
        .collect::<Result<Vec<_>>>()?;
    let shape = reference.shape();
    let jinv = zetas.iter().map(|z| G::right_jacobian_inv(shape, z)).collect::<Result<Vec<_>>>()?;

    // Hessian-half H = sum_ij Ji^-T G_ij Jj^-1 and gradient-half g = sum_ij Ji^-T G_ij zeta_j.
    let mut hess = DMatrix::zeros(d, d);
    let mut grad = DVector::zeros(d);
    for i in 0..n {
        for j in 0..n {
            let gij = info.view((i * d, j * d), (d, d));
            let left = jinv[i].transpose() * gij;
            hess += &left * &jinv[j];
            grad += &left * &zetas[j];
        }
    }
    let hess = symmetrize(&hess);
    let chol = math::cholesky(&hess).ok_or(Error::SingularJoint)?;
    let zeta_star = -chol.solve(&grad);
    let p_zeta = symmetrize(&chol.inverse());
    let jr = G::right_jacobian(shape, &zeta_star);
    Ok(StochasticElement {
        mean: reference.retract(&zeta_star),
        cov: symmetrize(&(&jr * p_zeta * jr.transpose())),
    })
}

/// [`st_fuse`] with the equal-weight average as reference.
pub fn st_fuse_default<G: LieGroup>(set: &CorrelatedSet<G>) -> Result<StochasticElement<G>> {
    st_fuse(set, &default_reference(set)?)
}

/// Result of constrained fusion, including the Lagrange multiplier.
#[derive(Clone, Debug)]
pub struct ConstrainedFusion<G: LieGroup> {
    pub estimate: StochasticElement<G>,
    /// Constrained exponential coordinates around the reference.
    pub zeta: DVector<f64>,
    /// Multiplier of `gamma * zeta = d_tilde`.
    pub multiplier: DVector<f64>,
    /// `zeta_u = log(mean_u^-1 reference)`.
    pub zeta_u: DVector<f64>,
}

/// Projects an estimate onto the linear constraint in exponential
/// coordinates around `reference`.
///
/// Minimizes `(zeta_u + J^-1 zeta)^T W_c (zeta_u + J^-1 zeta)` subject to
/// `gamma zeta = d_tilde`, with `J = J_r(zeta_u)`.
pub fn st_fuse_constrained<G: LieGroup>(
    unconstrained: &StochasticElement<G>,
    constraint: &LinearConstraint,
    reference: &G,
) -> Result<ConstrainedFusion<G>> {
    let d = unconstrained.dof();
    let (r, cols) = constraint.gamma.shape();
    if cols != d {
        return Err(Error::DimensionMismatch { expected: d, actual: cols });
    }
    let shape = reference.shape();
    let zeta_u = unconstrained.mean.local(reference)?;
    let jinv = G::right_jacobian_inv(shape, &zeta_u)?;
    let gamma = &constraint.gamma;
    let w = &constraint.weight;

    let a = jinv.transpose() * w; // J^-T W
    let curvature = symmetrize(&(&a * &jinv)); // J^-T W J^-1
    let chol = math::cholesky(&curvature).ok_or(Error::SingularJacobian)?;
    let frak_j = symmetrize(&chol.inverse());
    let s = symmetrize(&(gamma * &frak_j * gamma.transpose()));
    let s_chol = math::cholesky(&s).ok_or(Error::RankDeficient)?;

    let aw = &a * &zeta_u;
    let (zeta, multiplier) = if r == d {
        let zeta = gamma.clone().lu().solve(&constraint.d_tilde).ok_or(Error::RankDeficient)?;
        // Stationarity fixes the multiplier: gamma^T lambda = -(J^-T W zeta_u + curvature zeta).
        let rhs = -(&aw + &curvature * &zeta);
        let lambda = gamma.transpose().lu().solve(&rhs).ok_or(Error::RankDeficient)?;
        (zeta, lambda)
    } else {
        let lambda = -s_chol.solve(&(&constraint.d_tilde + gamma * &frak_j * &aw));
        let zeta = -(&frak_j * (&aw + gamma.transpose() * &lambda));
        (zeta, lambda)
    };

    // First-order propagation: zeta reacts to the input noise through
    // T = -N frak_j J^-T W, with N the oblique projector onto ker(gamma).
    let proj = DMatrix::identity(d, d)
        - &frak_j * gamma.transpose() * s_chol.solve(gamma);
    let t = -(&proj * &frak_j * &a);
    let left_jinv = G::right_jacobian_inv(shape, &(-&zeta_u))?;
    let sens = G::right_jacobian(shape, &zeta) * t * left_jinv;
    let cov = symmetrize(&(&sens * &unconstrained.cov * sens.transpose()));
    Ok(ConstrainedFusion {
        estimate: StochasticElement { mean: reference.retract(&zeta), cov },
        zeta,
        multiplier,
        zeta_u,
    })
}

/// One step of the cross-covariance recursion
/// `P_ij <- (I - K_i H_i)(F_i P_ij F_j^T + J_i Q J_j^T)(I - K_j H_j)^T`.
#[allow(clippy::too_many_arguments)]
pub fn cross_cov_step(
    pij_prev: &DMatrix<f64>,
    fi: &DMatrix<f64>,
    fj: &DMatrix<f64>,
    jri_f: &DMatrix<f64>,
    jrj_f: &DMatrix<f64>,
    q: &DMatrix<f64>,
    ki: &DMatrix<f64>,
    hi: &DMatrix<f64>,
    kj: &DMatrix<f64>,
    hj: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let d = pij_prev.nrows();
    let square = [pij_prev, fi, fj, jri_f, jrj_f, q];
    if square.iter().any(|m| m.shape() != (d, d)) {
        return Err(Error::DimensionMismatch { expected: d, actual: fi.nrows() });
    }
    let ok = |k: &DMatrix<f64>, h: &DMatrix<f64>| k.nrows() == d && h.ncols() == d && k.ncols() == h.nrows();
    if !ok(ki, hi) || !ok(kj, hj) {
        return Err(Error::DimensionMismatch { expected: d, actual: ki.nrows() });
    }
    let eye = DMatrix::<f64>::identity(d, d);
    let li = &eye - ki * hi;
    let lj = &eye - kj * hj;
    let pred = fi * pij_prev * fj.transpose() + jri_f * q * jrj_f.transpose();
    Ok(li * pred * lj.transpose())
}
