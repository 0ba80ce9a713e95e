//! Independent numerical oracles shared by the integration tests and the
//! acceptance suite. Nothing here calls the closed forms under test except
//! group multiplication, `exp` and `log`.
#![allow(dead_code)]

pub mod checks;

use lieloc_core::liegroup::{exp_map, log_map};
use lieloc_core::{GroupElement, LieGroup, TangentVector};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal))
}

pub fn uniform_vec(rng: &mut ChaCha8Rng, n: usize, half_width: f64) -> DVector<f64> {
    if half_width == 0.0 {
        return DVector::zeros(n);
    }
    DVector::from_fn(n, |_, _| rng.random_range(-half_width..half_width))
}

/// Square-root factor `L L^T = cov` that tolerates semidefinite input.
pub fn sqrt_factor(cov: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = cov.clone().symmetric_eigen();
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots)
}

/// Random SPD matrix with eigenvalues in `scale * [0.3, 1.7]`.
pub fn random_spd(rng: &mut ChaCha8Rng, d: usize, scale: f64) -> DMatrix<f64> {
    let a = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let q = a.qr().q();
    let l = DVector::from_fn(d, |_, _| scale * rng.random_range(0.3..1.7));
    let m = &q * DMatrix::from_diagonal(&l) * q.transpose();
    (&m + m.transpose()) * 0.5
}

/// Joint covariance for `n` blocks with cross-correlation `rho` in `[0, 1)`.
pub fn random_joint(rng: &mut ChaCha8Rng, n: usize, d: usize, scale: f64, rho: f64) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(n * d, n * d);
    let blocks: Vec<_> = (0..n).map(|_| sqrt_factor(&random_spd(rng, d, scale))).collect();
    let shared = normal_vec(rng, d * d);
    let mix = DMatrix::from_column_slice(d, d, shared.as_slice()) * (1.0 / (d as f64).sqrt());
    // x_i = L_i (sqrt(1 - rho^2) a_i + rho M c) with a_i, c standard normal.
    let a = (1.0 - rho * rho).sqrt();
    for i in 0..n {
        for j in 0..n {
            let inner = if i == j {
                DMatrix::identity(d, d) * (a * a) + &mix * mix.transpose() * (rho * rho)
            } else {
                &mix * mix.transpose() * (rho * rho)
            };
            let blk = &blocks[i] * inner * blocks[j].transpose();
            out.view_mut((i * d, j * d), (d, d)).copy_from(&blk);
        }
    }
    (&out + out.transpose()) * 0.5
}

pub fn block(m: &DMatrix<f64>, i: usize, j: usize, d: usize) -> DMatrix<f64> {
    m.view((i * d, j * d), (d, d)).into_owned()
}

/// Random SE_k(3) element with rotation angle below `max_angle`.
pub fn random_element(rng: &mut ChaCha8Rng, kappa: usize, max_angle: f64, trans: f64) -> GroupElement {
    let mut phi = normal_vec(rng, 3);
    phi *= rng.random_range(0.0..max_angle) / phi.norm();
    let mut c = uniform_vec(rng, 3 + 3 * kappa, trans);
    c.rows_mut(0, 3).copy_from(&phi);
    GroupElement::exp(kappa, &c)
}

pub fn log_vec(x: &GroupElement) -> DVector<f64> {
    x.log().expect("log defined").clone()
}

/// Sample covariance (mean-subtracted) of column samples.
pub struct Moments {
    sum: DVector<f64>,
    outer: DMatrix<f64>,
    n: usize,
}

impl Moments {
    pub fn new(d: usize) -> Self {
        Self { sum: DVector::zeros(d), outer: DMatrix::zeros(d, d), n: 0 }
    }

    pub fn push(&mut self, x: &DVector<f64>) {
        self.sum += x;
        self.outer.ger(1.0, x, x, 1.0);
        self.n += 1;
    }

    pub fn cov(&self) -> DMatrix<f64> {
        let n = self.n as f64;
        let m = &self.sum / n;
        (&self.outer - &m * m.transpose() * n) / (n - 1.0)
    }
}

pub fn frobenius_rel(est: &DMatrix<f64>, truth: &DMatrix<f64>) -> f64 {
    (est - truth).norm() / truth.norm()
}

/// Matrix exponential by scaling, Taylor series and squaring.
pub fn taylor_expm(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let norm = m.norm();
    let mut squarings = 0;
    let mut scaled = m.clone();
    if norm > 0.5 {
        squarings = (norm / 0.5).log2().ceil() as u32;
        scaled /= 2f64.powi(squarings as i32);
    }
    let mut out = DMatrix::identity(n, n);
    let mut term = DMatrix::identity(n, n);
    for k in 1..30 {
        term = &term * &scaled / k as f64;
        out += &term;
    }
    for _ in 0..squarings {
        out = &out * &out;
    }
    out
}

/// Runs a Monte-Carlo covariance check in tangent coordinates around `mean`.
pub fn mc_cov<F>(seed: u64, joint: &DMatrix<f64>, samples: usize, mean: &GroupElement, f: F) -> DMatrix<f64>
where
    F: Fn(&DVector<f64>) -> GroupElement,
{
    let l = sqrt_factor(joint);
    let mut r = rng(seed);
    let mut m = Moments::new(mean.dof());
    let inv = mean.inverse();
    for _ in 0..samples {
        let z = &l * normal_vec(&mut r, joint.nrows());
        let y = f(&z);
        m.push(&log_vec(&inv.compose(&y)));
    }
    m.cov()
}

/// Exact fusion cost `eps^T G eps` with `eps_i = log(mean_i^-1 X)` and
/// `X = reference exp(zeta)`.
pub fn fusion_residual(means: &[GroupElement], reference: &GroupElement, zeta: &DVector<f64>) -> DVector<f64> {
    let x = reference.retract(zeta);
    let d = zeta.len();
    let mut out = DVector::zeros(d * means.len());
    for (i, m) in means.iter().enumerate() {
        out.rows_mut(i * d, d).copy_from(&log_vec(&m.inverse().compose(&x)));
    }
    out
}

/// Gauss-Newton on the exact fusion cost with a central-difference Jacobian.
/// Converges to the exact stationary point (the cost is a weighted sum of
/// squares, so its stationarity is `J^T G r = 0`).
pub fn brute_force_fuse(means: &[GroupElement], info: &DMatrix<f64>, reference: &GroupElement) -> DVector<f64> {
    let d = reference.dof();
    let mut zeta = DVector::zeros(d);
    let h = 1e-6;
    for _ in 0..100 {
        let r = fusion_residual(means, reference, &zeta);
        let mut jac = DMatrix::zeros(r.len(), d);
        for k in 0..d {
            let mut e = DVector::zeros(d);
            e[k] = h;
            let col = (fusion_residual(means, reference, &(&zeta + &e))
                - fusion_residual(means, reference, &(&zeta - &e)))
                / (2.0 * h);
            jac.set_column(k, &col);
        }
        let a = jac.transpose() * info * &jac;
        let g = jac.transpose() * info * &r;
        let step = a.lu().solve(&(-g)).expect("normal equations solvable");
        zeta += &step;
        if step.norm() < 1e-14 {
            break;
        }
    }
    zeta
}

pub fn fusion_cost(means: &[GroupElement], info: &DMatrix<f64>, reference: &GroupElement, zeta: &DVector<f64>) -> f64 {
    let r = fusion_residual(means, reference, zeta);
    r.dot(&(info * &r))
}

/// Quadratic-penalty solution of `min (zu + A z)^T W (zu + A z)` s.t. `G z = d`
/// by an increasing penalty sequence solved with plain linear algebra.
pub fn penalty_constrained(
    zu: &DVector<f64>,
    a: &DMatrix<f64>,
    w: &DMatrix<f64>,
    gamma: &DMatrix<f64>,
    d_tilde: &DVector<f64>,
) -> DVector<f64> {
    // Augmented Lagrangian: lambda updates make the limit exact at finite mu.
    let mu = 1e6;
    let mut lambda = DVector::zeros(gamma.nrows());
    let mut z = DVector::zeros(zu.len());
    for _ in 0..200 {
        let lhs = a.transpose() * w * a + gamma.transpose() * gamma * mu;
        let rhs = -(a.transpose() * w * zu) + gamma.transpose() * (d_tilde * mu - &lambda);
        z = lhs.lu().solve(&rhs).expect("penalty system solvable");
        let viol = gamma * &z - d_tilde;
        lambda += viol.clone() * mu;
        if viol.norm() < 1e-14 {
            break;
        }
    }
    z
}

/// Classical EKF on the scalar rotation angle about `z`.
#[derive(Clone, Copy, Debug)]
pub struct ScalarEkf {
    pub x: f64,
    pub p: f64,
}

impl ScalarEkf {
    pub fn predict(&mut self, omega: f64, q: f64, dt: f64) {
        self.x += dt * omega;
        self.p += dt * q;
    }

    pub fn update(&mut self, z: f64, r: f64) {
        let k = self.p / (self.p + r);
        self.x += k * (z - self.x);
        self.p *= 1.0 - k;
    }
}

pub fn tangent(kappa: usize, v: &[f64]) -> TangentVector {
    TangentVector::from_slice(kappa, v).expect("valid tangent")
}

/// `exp` by the matrix series, for cross-checking the closed form.
pub fn exp_reference(zeta: &TangentVector) -> GroupElement {
    GroupElement::from_matrix(&taylor_expm(&lieloc_core::liegroup::hat(zeta))).expect("valid element")
}

pub fn closed_exp(zeta: &TangentVector) -> GroupElement {
    exp_map(zeta)
}

pub fn closed_log(x: &GroupElement) -> TangentVector {
    log_map(x).expect("log defined")
}
