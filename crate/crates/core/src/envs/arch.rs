//! Linear dynamics with state-dependent noise scale:
//! `x' = L x + sqrt(q + x^T Gamma x) w`, `w ~ N(0, Sigma)`, reward `x^T R x`.

use nalgebra::DMatrix;
use rand::Rng as _;

use crate::error::{KbbError, Result};
use crate::linalg::{is_symmetric_psd, row_major, spectral_radius, vec_of};
use crate::rng::rng_from_seed;
use crate::value::StateValueFn;

use super::lqr::{quad_form, NOISE_SCALE, STABLE_RADIUS};

const PSD_TOL: f64 = 1e-10;
const FIXED_POINT_TOL: f64 = 1e-13;
const MAX_FIXED_POINT_ITERS: usize = 100_000;
const BISECTION_STEPS: usize = 60;

/// Bound on the spectral radius of the undiscounted second-moment map
/// `P -> L^T P L + Gamma trace(P Sigma)` for generated models.
pub const MOMENT_RADIUS: f64 = 0.95;

#[derive(Clone, Debug, PartialEq)]
pub struct ArchModel {
    a_mat: DMatrix<f64>,
    scale_mat: DMatrix<f64>,
    cost_mat: DMatrix<f64>,
    q_scalar: f64,
    noise_cov: DMatrix<f64>,
    gamma: f64,
}

impl ArchModel {
    pub fn new(
        a_mat: DMatrix<f64>,
        scale_mat: DMatrix<f64>,
        cost_mat: DMatrix<f64>,
        q_scalar: f64,
        noise_cov: DMatrix<f64>,
        gamma: f64,
    ) -> Result<Self> {
        let d = a_mat.nrows();
        if d == 0
            || a_mat.shape() != (d, d)
            || scale_mat.shape() != (d, d)
            || cost_mat.shape() != (d, d)
            || noise_cov.shape() != (d, d)
        {
            return Err(KbbError::InvalidModel("inconsistent ARCH matrix shapes".into()));
        }
        if !(q_scalar >= 0.0 && q_scalar.is_finite()) {
            return Err(KbbError::InvalidModel(format!(
                "q must be finite and nonnegative, got {q_scalar}"
            )));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(KbbError::InvalidModel(format!(
                "discount must lie in [0, 1), got {gamma}"
            )));
        }
        for (name, mat) in [("Gamma", &scale_mat), ("R", &cost_mat), ("Sigma", &noise_cov)] {
            if !is_symmetric_psd(mat, PSD_TOL) {
                return Err(KbbError::InvalidModel(format!("{name} is not symmetric PSD")));
            }
        }
        let model = Self {
            a_mat,
            scale_mat,
            cost_mat,
            q_scalar,
            noise_cov,
            gamma,
        };
        if gamma * model.moment_radius() >= 1.0 {
            return Err(KbbError::InvalidModel("value recursion is not a contraction".into()));
        }
        Ok(model)
    }

    pub fn dim(&self) -> usize {
        self.a_mat.nrows()
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn a_mat(&self) -> &DMatrix<f64> {
        &self.a_mat
    }

    pub fn scale_mat(&self) -> &DMatrix<f64> {
        &self.scale_mat
    }

    pub fn cost_mat(&self) -> &DMatrix<f64> {
        &self.cost_mat
    }

    pub fn q_scalar(&self) -> f64 {
        self.q_scalar
    }

    pub fn noise_cov(&self) -> &DMatrix<f64> {
        &self.noise_cov
    }

    pub fn with_q(&self, q_scalar: f64) -> Result<Self> {
        Self::new(
            self.a_mat.clone(),
            self.scale_mat.clone(),
            self.cost_mat.clone(),
            q_scalar,
            self.noise_cov.clone(),
            self.gamma,
        )
    }

    pub fn reward(&self, x: &[f64]) -> f64 {
        quad_form(&self.cost_mat, x)
    }

    /// Conditional noise scale `sqrt(q + x^T Gamma x)`.
    pub fn noise_scale(&self, x: &[f64]) -> f64 {
        (self.q_scalar + quad_form(&self.scale_mat, x)).max(0.0).sqrt()
    }

    /// `L x + sqrt(q + x^T Gamma x) w`.
    pub fn step(&self, x: &[f64], w: &[f64]) -> Vec<f64> {
        let d = self.dim();
        let s = self.noise_scale(x);
        (0..d)
            .map(|i| (0..d).map(|j| self.a_mat[(i, j)] * x[j]).sum::<f64>() + s * w[i])
            .collect()
    }

    /// `P -> L^T P L + Gamma trace(P Sigma)`, without discount or cost.
    pub fn moment_map(&self, p: &DMatrix<f64>) -> DMatrix<f64> {
        let l = &self.a_mat;
        l.transpose() * p * l + &self.scale_mat * (p * &self.noise_cov).trace()
    }

    /// `P -> R + gamma (L^T P L + Gamma trace(P Sigma))`.
    pub fn value_map(&self, p: &DMatrix<f64>) -> DMatrix<f64> {
        &self.cost_mat + self.moment_map(p) * self.gamma
    }

    /// Matrix of [`ArchModel::moment_map`] acting on column-major `vec(P)`:
    /// `L^T kron L^T + vec(Gamma) vec(Sigma)^T`.
    pub fn moment_operator(&self) -> DMatrix<f64> {
        moment_operator(&self.a_mat, &self.scale_mat, &self.noise_cov)
    }

    /// Spectral radius of [`ArchModel::moment_operator`].
    pub fn moment_radius(&self) -> f64 {
        spectral_radius(&self.moment_operator())
    }
}

fn moment_operator(l: &DMatrix<f64>, gamma_mat: &DMatrix<f64>, sigma: &DMatrix<f64>) -> DMatrix<f64> {
    let lt = l.transpose();
    lt.kronecker(&lt) + vec_of(gamma_mat) * vec_of(sigma).transpose()
}

/// `L` with `Unif(0, 1)` entries rescaled to spectral radius
/// [`STABLE_RADIUS`]; `Gamma = G1^T G1` shrunk until the moment map has
/// spectral radius at most [`MOMENT_RADIUS`]; cost `R = G2^T G2`;
/// `Sigma = NOISE_SCALE * I`.
pub fn make_arch(d: usize, q: f64, gamma: f64, seed: u64) -> Result<ArchModel> {
    if d == 0 {
        return Err(KbbError::InvalidArgument("ARCH dimension must be positive".into()));
    }
    if !(q >= 0.0) {
        return Err(KbbError::InvalidArgument(format!("q must be nonnegative, got {q}")));
    }
    let mut rng = rng_from_seed(seed);
    let mut uniform = |r: usize, c: usize| row_major(r, c, (0..r * c).map(|_| rng.random::<f64>()).collect());
    let mut l = uniform(d, d);
    let g1 = uniform(d, d);
    let g2 = uniform(d, d);
    let rho = spectral_radius(&l);
    if rho > 0.0 {
        l *= STABLE_RADIUS / rho;
    }
    let sigma = DMatrix::identity(d, d) * NOISE_SCALE;
    let raw_gamma = g1.transpose() * &g1;
    let radius_at = |s: f64| spectral_radius(&moment_operator(&l, &(&raw_gamma * s), &sigma));
    let scale = if radius_at(1.0) <= MOMENT_RADIUS {
        1.0
    } else {
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..BISECTION_STEPS {
            let mid = 0.5 * (lo + hi);
            if radius_at(mid) <= MOMENT_RADIUS {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    };
    ArchModel::new(l, raw_gamma * scale, g2.transpose() * &g2, q, sigma, gamma)
}

/// Solves `P = R + gamma (L^T P L + Gamma trace(P Sigma))` by fixed-point
/// iteration; returns `P` and the offset `gamma q / (1 - gamma) trace(P Sigma)`.
pub fn arch_fixed_point(model: &ArchModel) -> Result<(DMatrix<f64>, f64)> {
    let d = model.dim();
    let mut p = DMatrix::zeros(d, d);
    for _ in 0..MAX_FIXED_POINT_ITERS {
        let next = model.value_map(&p);
        let delta = (&next - &p).amax();
        p = next;
        if delta <= FIXED_POINT_TOL * p.amax().max(1.0) {
            let p = (&p + p.transpose()) * 0.5;
            let g = model.gamma;
            let offset = g * model.q_scalar / (1.0 - g) * (&p * &model.noise_cov).trace();
            return Ok((p, offset));
        }
        if !delta.is_finite() {
            break;
        }
    }
    Err(KbbError::NonConvergence {
        what: "ARCH value fixed-point iteration",
        iters: MAX_FIXED_POINT_ITERS,
    })
}

/// `V*(x) = x^T P* x + gamma q / (1 - gamma) trace(P* Sigma)`.
pub fn arch_true_value(model: &ArchModel) -> Result<StateValueFn> {
    let (p, offset) = arch_fixed_point(model)?;
    StateValueFn::quadratic(p, offset, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::value::StateRef;

    #[test]
    fn generated_model_contracts() {
        let m = make_arch(5, 0.5, 0.9, 21).unwrap();
        assert_eq!(m.dim(), 5);
        assert!(m.moment_radius() <= MOMENT_RADIUS + 1e-9);
        assert!((spectral_radius(m.a_mat()) - STABLE_RADIUS).abs() < 1e-9);
        assert_eq!(m, make_arch(5, 0.5, 0.9, 21).unwrap());
    }

    #[test]
    fn zero_dynamics_gives_cost_matrix() {
        let m = make_arch(3, 0.5, 0.9, 2).unwrap();
        let still = ArchModel::new(
            DMatrix::zeros(3, 3),
            DMatrix::zeros(3, 3),
            m.cost_mat().clone(),
            0.5,
            m.noise_cov().clone(),
            0.9,
        )
        .unwrap();
        let (p, _) = arch_fixed_point(&still).unwrap();
        assert_eq!(p, *m.cost_mat());
    }

    #[test]
    fn zero_q_fixes_origin() {
        let m = make_arch(4, 0.0, 0.9, 5).unwrap();
        let (_, offset) = arch_fixed_point(&m).unwrap();
        assert_eq!(offset, 0.0);
        let v = arch_true_value(&m).unwrap();
        assert_eq!(v.eval(StateRef::Vector(&[0.0; 4])), 0.0);
        let mut x = vec![0.0; 4];
        for _ in 0..10 {
            x = m.step(&x, &[1.0, -2.0, 0.5, 3.0]);
        }
        assert!(x.iter().all(|c| *c == 0.0));
    }

    #[test]
    fn fixed_point_matches_kronecker_solve() {
        let m = make_arch(2, 0.5, 0.9, 13).unwrap();
        let (p, offset) = arch_fixed_point(&m).unwrap();
        let sys = DMatrix::identity(4, 4) - m.moment_operator() * m.gamma();
        let vec_p = sys.lu().solve(&vec_of(m.cost_mat())).unwrap();
        let oracle = DMatrix::from_column_slice(2, 2, vec_p.as_slice());
        assert!((&p - &oracle).amax() < 1e-8);
        assert!((m.value_map(&p) - &p).amax() <= 1e-10);
        let expect = 0.9 * 0.5 / 0.1 * (&oracle * m.noise_cov()).trace();
        assert!((offset - expect).abs() < 1e-8);
    }
}
