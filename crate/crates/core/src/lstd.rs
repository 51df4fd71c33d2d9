//! Least-squares temporal difference solves over a linear span of basis
//! functions.

use nalgebra::{DMatrix, DVector};

use crate::envs::Dataset;
use crate::error::{KbbError, Result};
use crate::mrp::{Distribution, TabularModel};
use crate::value::{BasisSet, StateRef};

/// Condition number above which the system is regularized.
pub const COND_LIMIT: f64 = 1e12;
const RIDGE_START: f64 = 1e-8;
const RIDGE_MAX: f64 = 1e-2;
const RIDGE_GROWTH: f64 = 10.0;

/// Empirical norm below which a new basis function is rejected.
pub const MIN_BASIS_NORM: f64 = 1e-10;
/// Cosine to the existing span above which a new basis function is rejected.
pub const MAX_BASIS_COSINE: f64 = 1.0 - 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct LstdSolution {
    pub coeffs: Vec<f64>,
    /// 1-norm condition number of the (equilibrated) system that was solved.
    pub cond_estimate: f64,
    /// Ridge added to the equilibrated system; 0 when none was needed.
    pub ridge_used: f64,
}

/// Evaluates every basis function at the states and next states of `data`:
/// two `N x k` matrices, one column per basis function.
pub fn basis_features(basis: &BasisSet, data: &Dataset) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = data.len();
    let k = basis.len();
    let mut phi_x = DMatrix::zeros(n, k);
    let mut phi_xp = DMatrix::zeros(n, k);
    for (j, f) in basis.iter().enumerate() {
        for i in 0..n {
            phi_x[(i, j)] = f.eval(data.state(i));
            phi_xp[(i, j)] = f.eval(data.next_state(i));
        }
    }
    (phi_x, phi_xp)
}

/// `A = (1/N) sum_i phi(x_i) (phi(x_i) - gamma phi(x'_i))^T`,
/// `b = (1/N) sum_i r_i phi(x_i)`.
pub fn build_lstd_system(basis: &BasisSet, data: &Dataset, gamma: f64) -> (DMatrix<f64>, DVector<f64>) {
    let (phi_x, phi_xp) = basis_features(basis, data);
    assemble_system(&phi_x, &phi_xp, data.rewards(), gamma)
}

/// [`build_lstd_system`] from precomputed features. Accumulates sample by
/// sample in index order, then divides by `N`.
pub fn assemble_system(
    phi_x: &DMatrix<f64>,
    phi_xp: &DMatrix<f64>,
    rewards: &[f64],
    gamma: f64,
) -> (DMatrix<f64>, DVector<f64>) {
    let (n, k) = phi_x.shape();
    let mut a = DMatrix::zeros(k, k);
    let mut b = DVector::zeros(k);
    let mut diff = vec![0.0; k];
    for i in 0..n {
        for c in 0..k {
            diff[c] = phi_x[(i, c)] - gamma * phi_xp[(i, c)];
        }
        for r in 0..k {
            let p = phi_x[(i, r)];
            for c in 0..k {
                a[(r, c)] += p * diff[c];
            }
            b[r] += rewards[i] * p;
        }
    }
    let scale = 1.0 / n.max(1) as f64;
    (a * scale, b * scale)
}

pub fn lstd_solve(basis: &BasisSet, data: &Dataset, gamma: f64) -> Result<LstdSolution> {
    if basis.is_empty() {
        return Err(KbbError::InvalidArgument("LSTD needs a nonempty basis".into()));
    }
    let (a, b) = build_lstd_system(basis, data, gamma);
    solve_system(&a, &b)
}

/// `A = Phi^T D (Phi - gamma P Phi)`, `b = Phi^T D r` with `D = diag(mu)`
/// and `Phi` the `n x k` table of basis values.
pub fn population_system(
    phi: &DMatrix<f64>,
    model: &TabularModel,
    mu: &Distribution,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let n = model.n_states();
    if phi.nrows() != n || mu.len() != n {
        return Err(KbbError::DimensionMismatch {
            expected: n,
            found: if phi.nrows() != n { phi.nrows() } else { mu.len() },
        });
    }
    let mut weighted = phi.clone();
    for (i, mut row) in weighted.row_iter_mut().enumerate() {
        row *= mu.weights()[i];
    }
    let propagated = phi - model.trans() * phi * model.gamma();
    let a = weighted.transpose() * propagated;
    let b = weighted.transpose() * model.reward();
    Ok((a, b))
}

/// Population LSTD: expectations under `mu` and `P` computed exactly.
pub fn lstd_solve_population(basis: &BasisSet, model: &TabularModel, mu: &Distribution) -> Result<LstdSolution> {
    if basis.is_empty() {
        return Err(KbbError::InvalidArgument("LSTD needs a nonempty basis".into()));
    }
    let phi = basis.table_matrix(model.n_states());
    let (a, b) = population_system(&phi, model, mu)?;
    solve_system(&a, &b)
}

/// Solves `A alpha = b` after symmetric Jacobi scaling `S A S`, with
/// `S = diag(|A_jj|^-1/2)`. If the scaled system has 1-norm condition
/// number above [`COND_LIMIT`], adds `lambda I` to it with
/// `lambda = 1e-8 tr/k`, growing tenfold up to `1e-2 tr/k`.
pub fn solve_system(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<LstdSolution> {
    let k = a.nrows();
    if k == 0 || a.ncols() != k || b.len() != k {
        return Err(KbbError::DimensionMismatch {
            expected: k,
            found: b.len(),
        });
    }
    if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
        return Err(KbbError::LstdFailure("system has non-finite entries".into()));
    }
    let s = DVector::from_fn(k, |j, _| {
        let d = a[(j, j)].abs();
        if d > 0.0 && d.is_finite() {
            1.0 / d.sqrt()
        } else {
            1.0
        }
    });
    let scaled = DMatrix::from_fn(k, k, |r, c| s[r] * a[(r, c)] * s[c]);
    let rhs = b.component_mul(&s);

    let attempt = |m: &DMatrix<f64>| -> Option<(DVector<f64>, f64)> {
        let lu = m.clone().lu();
        let inv = lu.try_inverse()?;
        let cond = one_norm(m) * one_norm(&inv);
        let y = &inv * &rhs;
        let y = refine(m, &rhs, y);
        (cond.is_finite() && y.iter().all(|v| v.is_finite())).then_some((y, cond))
    };
    let finish = |y: DVector<f64>, cond: f64, ridge: f64| LstdSolution {
        coeffs: y.component_mul(&s).iter().copied().collect(),
        cond_estimate: cond,
        ridge_used: ridge,
    };

    let mut last_cond = f64::INFINITY;
    if let Some((y, cond)) = attempt(&scaled) {
        if cond <= COND_LIMIT {
            return Ok(finish(y, cond, 0.0));
        }
        last_cond = cond;
    }
    let trace = scaled.trace().abs();
    let unit = if trace > 0.0 { trace / k as f64 } else { 1.0 };
    let mut factor = RIDGE_START;
    while factor <= RIDGE_MAX * (1.0 + 1e-9) {
        let lambda = factor * unit;
        let ridged = &scaled + DMatrix::identity(k, k) * lambda;
        if let Some((y, cond)) = attempt(&ridged) {
            if cond <= COND_LIMIT {
                return Ok(finish(y, cond, lambda));
            }
            last_cond = cond;
        }
        factor *= RIDGE_GROWTH;
    }
    Err(KbbError::LstdFailure(format!(
        "condition number {last_cond:.3e} exceeds {COND_LIMIT:.0e} even with maximal ridge"
    )))
}

fn one_norm(m: &DMatrix<f64>) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// One step of iterative refinement.
fn refine(m: &DMatrix<f64>, rhs: &DVector<f64>, y: DVector<f64>) -> DVector<f64> {
    let resid = rhs - m * &y;
    match m.clone().lu().solve(&resid) {
        Some(dy) if dy.iter().all(|v| v.is_finite()) => y + dy,
        _ => y,
    }
}

/// Outcome of screening a candidate basis function against the current span.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BasisScreen {
    Accept,
    /// Empirical norm below [`MIN_BASIS_NORM`].
    TooSmall {
        norm: f64,
    },
    /// Cosine to the span above [`MAX_BASIS_COSINE`].
    Collinear {
        cosine: f64,
    },
}

impl BasisScreen {
    pub fn accepted(&self) -> bool {
        matches!(self, BasisScreen::Accept)
    }
}

/// Screens `candidate` (values at `N` states) against the columns of
/// `existing` (`N x k`) in the inner product `sum_i w_i f_i g_i`, where
/// `w_i = weights[i]` or `1 / N` when `weights` is `None`.
pub fn screen_new_basis(existing: &DMatrix<f64>, candidate: &[f64], weights: Option<&[f64]>) -> BasisScreen {
    let n = candidate.len();
    let w = |i: usize| weights.map_or(1.0 / n.max(1) as f64, |w| w[i]).max(0.0).sqrt();
    let c = DVector::from_fn(n, |i, _| w(i) * candidate[i]);
    let norm = c.norm();
    if !(norm >= MIN_BASIS_NORM) {
        return BasisScreen::TooSmall { norm };
    }
    if existing.ncols() == 0 {
        return BasisScreen::Accept;
    }
    let e = DMatrix::from_fn(n, existing.ncols(), |i, j| w(i) * existing[(i, j)]);
    let q = e.qr().q();
    let mut resid = c.clone();
    for _ in 0..2 {
        let coef = q.transpose() * &resid;
        resid -= &q * coef;
    }
    let ratio = (resid.norm() / norm).min(1.0);
    let cosine = (1.0 - ratio * ratio).max(0.0).sqrt();
    if cosine > MAX_BASIS_COSINE {
        BasisScreen::Collinear { cosine }
    } else {
        BasisScreen::Accept
    }
}

/// Values of `sum_j coeffs[j] phi_j` at each state of a feature matrix.
pub fn combine(features: &DMatrix<f64>, coeffs: &[f64]) -> Vec<f64> {
    (0..features.nrows())
        .map(|i| coeffs.iter().enumerate().map(|(j, a)| a * features[(i, j)]).sum())
        .collect()
}

/// Values of a basis at a list of states, `N x k`.
pub fn features_at<'a>(basis: &BasisSet, states: impl ExactSizeIterator<Item = StateRef<'a>>) -> DMatrix<f64> {
    let states: Vec<StateRef<'a>> = states.collect();
    DMatrix::from_fn(states.len(), basis.len(), |i, j| {
        basis.get(j).expect("column in range").eval(states[i])
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{make_circular_walk, make_symmetric_stencil, DrawMode, TransitionSample};
    use crate::mrp::{solve_exact, stationary_distribution};
    use crate::value::{StatePoint, StateValueFn};
    use crate::BasisFn;
    use proptest::prelude::*;

    fn two_state() -> TabularModel {
        TabularModel::new(
            DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.5, 0.5]),
            DVector::from_vec(vec![1.0, 0.0]),
            0.9,
        )
        .unwrap()
    }

    fn handmade() -> Dataset {
        let t = |x, r, xp| TransitionSample {
            state: StatePoint::Index(x),
            reward: r,
            next_state: StatePoint::Index(xp),
        };
        Dataset::from_samples(
            "hand",
            0,
            DrawMode::ExactStationary,
            vec![t(0, 1.0, 1), t(1, 2.0, 2), t(2, 0.5, 0)],
        )
        .unwrap()
    }

    #[test]
    fn constant_basis_system() {
        let basis = BasisSet::from_tables([DVector::from_element(3, 1.0)]);
        let (a, b) = build_lstd_system(&basis, &handmade(), 0.8);
        assert!((a[(0, 0)] - 0.2).abs() < 1e-15);
        assert!((b[0] - 3.5 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn two_function_hand_system() {
        // phi1 = [1, 2, 0], phi2 = [0, 1, 1]; samples (0->1), (1->2), (2->0).
        let basis = BasisSet::from_tables([
            DVector::from_vec(vec![1.0, 2.0, 0.0]),
            DVector::from_vec(vec![0.0, 1.0, 1.0]),
        ]);
        let g = 0.5;
        let (a, b) = build_lstd_system(&basis, &handmade(), g);
        // Row by row: phi(x) (phi(x) - g phi(x'))^T.
        // i=0: phi=(1,0), phi'=(2,1): (1,0)(0,-0.5)
        // i=1: phi=(2,1), phi'=(0,1): (2,1)(2,0.5)
        // i=2: phi=(0,1), phi'=(1,0): (0,1)(-0.5,1)
        let hand = DMatrix::from_row_slice(2, 2, &[4.0, 0.5, 1.5, 1.5]) / 3.0;
        let hand_b = DVector::from_vec(vec![1.0 + 4.0, 2.0 + 0.5]) / 3.0;
        assert!((a - hand).amax() < 1e-15);
        assert!((b - hand_b).amax() < 1e-15);
    }

    #[test]
    fn zero_discount_gives_gram_matrix() {
        let basis = BasisSet::from_tables([
            DVector::from_vec(vec![1.0, 2.0, 0.0]),
            DVector::from_vec(vec![0.0, 1.0, 1.0]),
        ]);
        let (a, _) = build_lstd_system(&basis, &handmade(), 0.0);
        let phi = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 2.0, 1.0, 0.0, 1.0]);
        let gram = phi.transpose() * &phi / 3.0;
        assert!((a - gram).amax() < 1e-15);
    }

    #[test]
    fn full_indicator_basis_recovers_truth() {
        let m = make_circular_walk(12, 0.9, 3).unwrap();
        let mu = stationary_distribution(&m).unwrap();
        let basis = BasisSet::from_tables((0..12).map(|i| {
            let mut e = DVector::zeros(12);
            e[i] = 1.0;
            e
        }));
        let sol = lstd_solve_population(&basis, &m, &mu).unwrap();
        let v = solve_exact(&m).unwrap();
        for i in 0..12 {
            assert!((sol.coeffs[i] - v[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn truth_in_basis_gives_unit_coefficient() {
        let m = make_circular_walk(10, 0.9, 4).unwrap();
        let mu = stationary_distribution(&m).unwrap();
        let basis = BasisSet::from_tables([solve_exact(&m).unwrap()]);
        let sol = lstd_solve_population(&basis, &m, &mu).unwrap();
        assert!((sol.coeffs[0] - 1.0).abs() < 1e-12);
        assert_eq!(sol.ridge_used, 0.0);
    }

    #[test]
    fn reward_basis_scalar_hand_solve() {
        // alpha = <r, r>_mu / <r, r - gamma P r>_mu = 0.5 / 0.275.
        let m = two_state();
        let basis = BasisSet::from_tables([m.reward().clone()]);
        let sol = lstd_solve_population(&basis, &m, &Distribution::uniform(2)).unwrap();
        assert!((sol.coeffs[0] - 0.5 / 0.275).abs() < 1e-12);
    }

    #[test]
    fn q_norm_projection_oracle() {
        // Oracle: least squares in the metric W^2 = sym(D Q), via its square root.
        let m = make_circular_walk(20, 0.9, 5).unwrap();
        let mu = stationary_distribution(&m).unwrap();
        let q = m.discount_matrix();
        let mut krylov = Vec::new();
        let mut v = m.reward().clone();
        for _ in 0..3 {
            krylov.push(v.clone());
            v = &q * v;
        }
        let basis = BasisSet::from_tables(krylov.iter().cloned());
        let sol = lstd_solve_population(&basis, &m, &mu).unwrap();
        let phi = basis.table_matrix(20);
        let v_lstd = &phi * DVector::from_vec(sol.coeffs.clone());

        let d = DMatrix::from_diagonal(mu.weights());
        let dq = &d * &q;
        let metric = (&dq + dq.transpose()) * 0.5;
        let root = crate::linalg::psd_sqrt(&metric);
        let v_star = solve_exact(&m).unwrap();
        let lhs = &root * &phi;
        let rhs = &root * &v_star;
        let alpha = lhs.svd(true, true).solve(&rhs, 1e-14).unwrap();
        let v_oracle = &phi * alpha;
        assert!((v_lstd - v_oracle).amax() < 1e-8);
    }

    #[test]
    fn ridge_rescues_collinear_basis() {
        let m = two_state();
        let r = m.reward().clone();
        let basis = BasisSet::from_tables([r.clone(), &r * (1.0 + 1e-15)]);
        let sol = lstd_solve_population(&basis, &m, &Distribution::uniform(2)).unwrap();
        assert!(sol.ridge_used > 0.0);
        assert!(sol.coeffs.iter().all(|c| c.is_finite()));
    }

    #[test]
    fn singular_system_without_rescue_fails() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1e20, 0.0, 1.0]);
        let err = solve_system(&a, &DVector::from_vec(vec![1.0, 1.0]));
        assert!(matches!(err, Err(KbbError::LstdFailure(_))));
    }

    #[test]
    fn screening() {
        let existing = DMatrix::from_column_slice(4, 1, &[1.0, 2.0, 3.0, 4.0]);
        assert!(matches!(
            screen_new_basis(&existing, &[0.0; 4], None),
            BasisScreen::TooSmall { .. }
        ));
        assert!(matches!(
            screen_new_basis(&existing, &[2.0, 4.0, 6.0, 8.0], None),
            BasisScreen::Collinear { .. }
        ));
        assert!(screen_new_basis(&existing, &[1.0, 0.0, 0.0, 0.0], None).accepted());
        assert!(screen_new_basis(&DMatrix::zeros(4, 0), &[1.0; 4], None).accepted());
    }

    fn random_vectors(n: usize, k: usize, seeds: &[f64]) -> Vec<DVector<f64>> {
        (0..k)
            .map(|j| DVector::from_fn(n, |i, _| (seeds[j] * (i as f64 + 1.0) + j as f64).sin()))
            .collect()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn population_orthogonality_and_projection(
            n in 6usize..20,
            k in 1usize..5,
            seeds in prop::collection::vec(0.1f64..5.0, 5),
            combo in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 5), 20),
            seed in any::<u64>(),
        ) {
            let m = make_symmetric_stencil(n, &[0.4, 0.2, 0.1], 0.9, seed).unwrap();
            let mu = stationary_distribution(&m).unwrap();
            let basis = BasisSet::from_tables(random_vectors(n, k, &seeds));
            let sol = lstd_solve_population(&basis, &m, &mu).unwrap();
            let phi = basis.table_matrix(n);
            let v = &phi * DVector::from_vec(sol.coeffs.clone());
            let resid = &v - crate::mrp::bellman_apply(&m, &v).unwrap();
            for j in 0..k {
                let ip = crate::mrp::mu_inner(phi.column(j).as_slice(), resid.as_slice(), &mu).unwrap();
                prop_assert!(ip.abs() <= 1e-9);
            }
            let v_star = solve_exact(&m).unwrap();
            let q = m.discount_matrix();
            let q_norm = |e: &DVector<f64>| {
                crate::mrp::mu_inner(e.as_slice(), (&q * e).as_slice(), &mu).unwrap().max(0.0).sqrt()
            };
            let best = q_norm(&(&v - &v_star));
            for c in &combo {
                let other = &phi * DVector::from_column_slice(&c[..k]);
                prop_assert!(best <= q_norm(&(&other - &v_star)) + 1e-9);
            }
        }

        #[test]
        fn scale_equivariance(scale in prop_oneof![-50.0f64..-0.02, 0.02f64..50.0], seed in any::<u64>()) {
            let m = make_circular_walk(15, 0.9, seed).unwrap();
            let mu = stationary_distribution(&m).unwrap();
            let vecs = random_vectors(15, 3, &[0.3, 1.1, 2.7]);
            let scaled: Vec<_> = vecs.iter().map(|v| v * scale).collect();
            let a = lstd_solve_population(&BasisSet::from_tables(vecs), &m, &mu).unwrap();
            let b_basis = BasisSet::from_tables(scaled);
            let b = lstd_solve_population(&b_basis, &m, &mu).unwrap();
            prop_assume!(a.ridge_used == 0.0 && b.ridge_used == 0.0);
            for (x, y) in a.coeffs.iter().zip(&b.coeffs) {
                prop_assert!((x - y * scale).abs() <= 1e-9 * x.abs().max(1.0));
            }
            let va = StateValueFn::basis_sum(BasisSet::from_tables(random_vectors(15, 3, &[0.3, 1.1, 2.7])), a.coeffs).unwrap();
            let vb = StateValueFn::basis_sum(b_basis, b.coeffs).unwrap();
            for i in 0..15 {
                let (x, y) = (va.eval(StateRef::Index(i)), vb.eval(StateRef::Index(i)));
                prop_assert!((x - y).abs() <= 1e-9 * x.abs().max(1.0));
            }
        }
    }

    #[test]
    fn features_and_combine() {
        let basis = BasisSet::from_tables([DVector::from_vec(vec![1.0, 2.0])]);
        let mut b2 = basis.clone();
        b2.push(BasisFn::Value(StateValueFn::Table(DVector::from_vec(vec![3.0, 4.0]))));
        let f = features_at(&b2, [StateRef::Index(1), StateRef::Index(0)].into_iter());
        assert_eq!(combine(&f, &[1.0, 1.0]), vec![6.0, 4.0]);
    }
}
