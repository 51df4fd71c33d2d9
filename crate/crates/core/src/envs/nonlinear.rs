//! Three-dimensional nonlinear system that is linear after the change of
//! coordinates `z(x) = (x1 - x2^2, x2, x3 - x1^2)`.

use crate::error::Result;
use crate::value::{CoordMap, StateValueFn};

use super::lqr::{lqr_fixed_point, make_lqr, quad_form, LqrModel};

/// Dimension of the nonlinear benchmark state.
pub const NONLINEAR_DIM: usize = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct NonlinearModel {
    inner: LqrModel,
}

impl NonlinearModel {
    /// `inner` must be three-dimensional.
    pub fn new(inner: LqrModel) -> Result<Self> {
        if inner.dim() != NONLINEAR_DIM {
            return Err(crate::KbbError::DimensionMismatch {
                expected: NONLINEAR_DIM,
                found: inner.dim(),
            });
        }
        Ok(Self { inner })
    }

    /// Linear dynamics in `z`-coordinates.
    pub fn inner(&self) -> &LqrModel {
        &self.inner
    }

    pub fn gamma(&self) -> f64 {
        self.inner.gamma()
    }

    pub fn coord_map(&self) -> CoordMap {
        CoordMap::SquareCascade
    }

    pub fn to_z(&self, x: &[f64]) -> [f64; 3] {
        self.coord_map().forward(x)
    }

    pub fn to_x(&self, z: &[f64]) -> [f64; 3] {
        self.coord_map().inverse(z)
    }

    /// `x -> x(M z(x) + w)`.
    pub fn step(&self, x: &[f64], w: &[f64]) -> [f64; 3] {
        let z_next = self.inner.step(&self.to_z(x), w);
        self.to_x(&z_next)
    }

    /// Inner quadratic cost evaluated at `z(x)`.
    pub fn reward(&self, x: &[f64]) -> f64 {
        quad_form(self.inner.state_cost(), &self.to_z(x))
    }
}

pub fn make_nonlinear(gamma: f64, seed: u64) -> Result<NonlinearModel> {
    NonlinearModel::new(make_lqr(NONLINEAR_DIM, NONLINEAR_DIM, gamma, seed)?)
}

/// `V*(x) = z(x)^T P* z(x) + offset`, with `(P*, offset)` from the inner model.
pub fn nonlinear_true_value(model: &NonlinearModel) -> Result<StateValueFn> {
    let (p, offset) = lqr_fixed_point(&model.inner)?;
    StateValueFn::quadratic(p, offset, Some(model.coord_map()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::lqr::lqr_true_value;
    use crate::rng::rng_from_seed;
    use crate::value::StateRef;
    use nalgebra::DMatrix;
    use rand::Rng as _;

    #[test]
    fn map_examples_and_bijection() {
        let m = make_nonlinear(0.9, 3).unwrap();
        assert_eq!(m.to_z(&[0.0, 0.0, 0.0]), [0.0, 0.0, 0.0]);
        assert_eq!(m.to_z(&[1.0, 2.0, 3.0]), [-3.0, 2.0, 2.0]);
        let mut rng = rng_from_seed(5);
        for _ in 0..100 {
            let p: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
            let there = m.to_x(&m.to_z(&p));
            let back = m.to_z(&m.to_x(&p));
            for c in 0..3 {
                assert!((there[c] - p[c]).abs() < 1e-12);
                assert!((back[c] - p[c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn value_composes_with_inner_lqr() {
        let m = make_nonlinear(0.9, 3).unwrap();
        let v = nonlinear_true_value(&m).unwrap();
        let inner = lqr_true_value(m.inner()).unwrap();
        let mut rng = rng_from_seed(6);
        for _ in 0..50 {
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-1.5..1.5)).collect();
            let z = m.to_z(&x);
            let a = v.eval(StateRef::Vector(&x));
            let b = inner.eval(StateRef::Vector(&z));
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
        let origin = m.to_x(&[0.0, 0.0, 0.0]);
        let (_, offset) = lqr_fixed_point(m.inner()).unwrap();
        assert_eq!(v.eval(StateRef::Vector(&origin)), offset);
    }

    #[test]
    fn noiseless_origin_has_zero_value() {
        let m = make_nonlinear(0.9, 3).unwrap();
        let quiet = NonlinearModel::new(m.inner().with_noise(DMatrix::zeros(3, 3)).unwrap()).unwrap();
        let v = nonlinear_true_value(&quiet).unwrap();
        assert_eq!(v.eval(StateRef::Vector(&[0.0, 0.0, 0.0])), 0.0);
    }
}
