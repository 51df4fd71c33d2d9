//! Linear-quadratic policy evaluation: `x' = (L + B K) x + w`,
//! `w ~ N(0, Sigma)`, reward `x^T (Q_s + K^T R_a K) x`.

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::error::{KbbError, Result};
use crate::linalg::{is_symmetric_psd, psd_sqrt, row_major, spectral_radius};
use crate::rng::{rng_from_seed, Rng};
use crate::value::StateValueFn;

const PSD_TOL: f64 = 1e-10;
const FIXED_POINT_TOL: f64 = 1e-12;
const MAX_FIXED_POINT_ITERS: usize = 100_000;

/// Spectral radius that generated closed-loop matrices are rescaled to.
pub const STABLE_RADIUS: f64 = 0.9;
/// Isotropic noise level of generated models: `Sigma = NOISE_SCALE * I`.
pub const NOISE_SCALE: f64 = 0.1;

#[derive(Clone, Debug, PartialEq)]
pub struct LqrModel {
    a_mat: DMatrix<f64>,
    b_mat: DMatrix<f64>,
    k_mat: DMatrix<f64>,
    q_cost: DMatrix<f64>,
    r_cost: DMatrix<f64>,
    noise_cov: DMatrix<f64>,
    gamma: f64,
    closed_loop: DMatrix<f64>,
    state_cost: DMatrix<f64>,
}

impl LqrModel {
    pub fn new(
        a_mat: DMatrix<f64>,
        b_mat: DMatrix<f64>,
        k_mat: DMatrix<f64>,
        q_cost: DMatrix<f64>,
        r_cost: DMatrix<f64>,
        noise_cov: DMatrix<f64>,
        gamma: f64,
    ) -> Result<Self> {
        let d = a_mat.nrows();
        let m = b_mat.ncols();
        let shapes_ok = a_mat.shape() == (d, d)
            && b_mat.nrows() == d
            && k_mat.shape() == (m, d)
            && q_cost.shape() == (d, d)
            && r_cost.shape() == (m, m)
            && noise_cov.shape() == (d, d);
        if d == 0 || m == 0 || !shapes_ok {
            return Err(KbbError::InvalidModel("inconsistent LQR matrix shapes".into()));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(KbbError::InvalidModel(format!(
                "discount must lie in [0, 1), got {gamma}"
            )));
        }
        for (name, mat) in [("Q_s", &q_cost), ("R_a", &r_cost), ("Sigma", &noise_cov)] {
            if !is_symmetric_psd(mat, PSD_TOL) {
                return Err(KbbError::InvalidModel(format!("{name} is not symmetric PSD")));
            }
        }
        let closed_loop = &a_mat + &b_mat * &k_mat;
        let rho = spectral_radius(&closed_loop);
        if rho >= 1.0 {
            return Err(KbbError::InvalidModel(format!(
                "closed loop L + BK has spectral radius {rho} >= 1"
            )));
        }
        let state_cost = &q_cost + k_mat.transpose() * &r_cost * &k_mat;
        let state_cost = (&state_cost + state_cost.transpose()) * 0.5;
        Ok(Self {
            a_mat,
            b_mat,
            k_mat,
            q_cost,
            r_cost,
            noise_cov,
            gamma,
            closed_loop,
            state_cost,
        })
    }

    pub fn dim(&self) -> usize {
        self.a_mat.nrows()
    }

    pub fn action_dim(&self) -> usize {
        self.b_mat.ncols()
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn a_mat(&self) -> &DMatrix<f64> {
        &self.a_mat
    }

    pub fn b_mat(&self) -> &DMatrix<f64> {
        &self.b_mat
    }

    pub fn k_mat(&self) -> &DMatrix<f64> {
        &self.k_mat
    }

    pub fn q_cost(&self) -> &DMatrix<f64> {
        &self.q_cost
    }

    pub fn r_cost(&self) -> &DMatrix<f64> {
        &self.r_cost
    }

    pub fn noise_cov(&self) -> &DMatrix<f64> {
        &self.noise_cov
    }

    /// `M = L + B K`.
    pub fn closed_loop(&self) -> &DMatrix<f64> {
        &self.closed_loop
    }

    /// `C = Q_s + K^T R_a K`, the per-step cost as a quadratic form in `x`.
    pub fn state_cost(&self) -> &DMatrix<f64> {
        &self.state_cost
    }

    pub fn with_noise(&self, noise_cov: DMatrix<f64>) -> Result<Self> {
        Self::new(
            self.a_mat.clone(),
            self.b_mat.clone(),
            self.k_mat.clone(),
            self.q_cost.clone(),
            self.r_cost.clone(),
            noise_cov,
            self.gamma,
        )
    }

    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        Self::new(
            self.a_mat.clone(),
            self.b_mat.clone(),
            self.k_mat.clone(),
            self.q_cost.clone(),
            self.r_cost.clone(),
            self.noise_cov.clone(),
            gamma,
        )
    }

    pub fn reward(&self, x: &[f64]) -> f64 {
        quad_form(&self.state_cost, x)
    }

    /// `M x + w`.
    pub fn step(&self, x: &[f64], w: &[f64]) -> Vec<f64> {
        let d = self.dim();
        (0..d)
            .map(|i| (0..d).map(|j| self.closed_loop[(i, j)] * x[j]).sum::<f64>() + w[i])
            .collect()
    }

    /// `P -> C + gamma M^T P M`.
    pub fn lyapunov_map(&self, p: &DMatrix<f64>) -> DMatrix<f64> {
        let m = &self.closed_loop;
        &self.state_cost + m.transpose() * p * m * self.gamma
    }

    /// Stationary covariance `S = M S M^T + Sigma`, by fixed-point iteration.
    pub fn stationary_cov(&self) -> Result<DMatrix<f64>> {
        let m = &self.closed_loop;
        let mut s = self.noise_cov.clone();
        for _ in 0..MAX_FIXED_POINT_ITERS {
            let next = m * &s * m.transpose() + &self.noise_cov;
            let delta = (&next - &s).amax();
            s = next;
            if delta <= FIXED_POINT_TOL * s.amax().max(1.0) {
                return Ok((&s + s.transpose()) * 0.5);
            }
            if !delta.is_finite() {
                break;
            }
        }
        Err(KbbError::NonConvergence {
            what: "stationary covariance iteration",
            iters: MAX_FIXED_POINT_ITERS,
        })
    }
}

/// `L`, `B`, `K` with `Unif(0, 1)` entries, rescaled so that `L + B K` has
/// spectral radius [`STABLE_RADIUS`]; `Q_s = G^T G`, `R_a = H^T H` from
/// `Unif(0, 1)` matrices; `Sigma = NOISE_SCALE * I`.
pub fn make_lqr(d: usize, m: usize, gamma: f64, seed: u64) -> Result<LqrModel> {
    if d == 0 || m == 0 {
        return Err(KbbError::InvalidArgument("LQR dimensions must be positive".into()));
    }
    let mut rng = rng_from_seed(seed);
    let mut uniform = |r: usize, c: usize| row_major(r, c, (0..r * c).map(|_| rng.random::<f64>()).collect());
    let mut a = uniform(d, d);
    let mut b = uniform(d, m);
    let mut k = uniform(m, d);
    let g = uniform(d, d);
    let h = uniform(m, m);
    let rho = spectral_radius(&(&a + &b * &k));
    if rho > 0.0 {
        let c = STABLE_RADIUS / rho;
        a *= c;
        b *= c.sqrt();
        k *= c.sqrt();
    }
    let q = g.transpose() * &g;
    let r = h.transpose() * &h;
    LqrModel::new(a, b, k, q, r, DMatrix::identity(d, d) * NOISE_SCALE, gamma)
}

/// Solves `P = C + gamma M^T P M` by fixed-point iteration; returns `P` and
/// the offset `gamma / (1 - gamma) * trace(P Sigma)`.
pub fn lqr_fixed_point(model: &LqrModel) -> Result<(DMatrix<f64>, f64)> {
    let d = model.dim();
    let mut p = DMatrix::zeros(d, d);
    for _ in 0..MAX_FIXED_POINT_ITERS {
        let next = model.lyapunov_map(&p);
        let delta = (&next - &p).amax();
        p = next;
        if delta <= FIXED_POINT_TOL * p.amax().max(1.0) {
            let p = (&p + p.transpose()) * 0.5;
            let g = model.gamma;
            let offset = g / (1.0 - g) * (&p * &model.noise_cov).trace();
            return Ok((p, offset));
        }
        if !delta.is_finite() {
            break;
        }
    }
    Err(KbbError::NonConvergence {
        what: "Lyapunov fixed-point iteration",
        iters: MAX_FIXED_POINT_ITERS,
    })
}

/// `V*(x) = x^T P* x + gamma / (1 - gamma) * trace(P* Sigma)`.
pub fn lqr_true_value(model: &LqrModel) -> Result<StateValueFn> {
    let (p, offset) = lqr_fixed_point(model)?;
    StateValueFn::quadratic(p, offset, None)
}

/// Draws `N(0, cov)` vectors through a fixed symmetric square root.
#[derive(Clone, Debug)]
pub(crate) struct GaussianSampler {
    root: DMatrix<f64>,
}

impl GaussianSampler {
    pub(crate) fn new(cov: &DMatrix<f64>) -> Self {
        Self { root: psd_sqrt(cov) }
    }

    pub(crate) fn draw(&self, rng: &mut Rng) -> Vec<f64> {
        let d = self.root.nrows();
        let xi: DVector<f64> = DVector::from_fn(d, |_, _| rng.sample(StandardNormal));
        (&self.root * xi).as_slice().to_vec()
    }
}

pub(crate) fn quad_form(p: &DMatrix<f64>, x: &[f64]) -> f64 {
    let d = p.nrows();
    let mut acc = 0.0;
    for i in 0..d {
        let mut row = 0.0;
        for j in 0..d {
            row += p[(i, j)] * x[j];
        }
        acc += x[i] * row;
    }
    acc
}
