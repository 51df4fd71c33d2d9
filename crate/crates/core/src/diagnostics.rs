//! Exact tabular oracles: the discount operator `Q = I - gamma P`, Krylov
//! subspaces `span{r, Qr, ..., Q^{t-1} r}`, restricted spectral values, and
//! noise-free boosting.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{KbbError, Result};
use crate::kbb::{Algo, RunRecord, RunRow};
use crate::lstd::{lstd_solve_population, screen_new_basis};
use crate::mrp::{
    bellman_apply, is_reversible, mu_inner, mu_norm, solve_exact, stationary_distribution, Distribution, TabularModel,
};
use crate::value::BasisSet;

/// Krylov vectors whose orthogonalized `mu`-norm falls below this stop the
/// recursion.
pub const KRYLOV_SATURATION: f64 = 1e-10;
/// Rate rows stop once `||V_t - V*||_Q^2` falls to this level.
pub const RATE_FLOOR: f64 = 1e-14;
const RANK_TOL: f64 = 1e-10;

/// `Q = I - gamma P` for a tabular model, with its inverse and the model's
/// stationary distribution.
#[derive(Clone, Debug)]
pub struct QOperator {
    model: TabularModel,
    mu: Distribution,
    q_mat: DMatrix<f64>,
    q_inv: DMatrix<f64>,
    reversible: bool,
}

impl QOperator {
    pub fn new(model: &TabularModel) -> Result<Self> {
        let mu = stationary_distribution(model)?;
        Self::with_distribution(model, mu)
    }

    pub fn with_distribution(model: &TabularModel, mu: Distribution) -> Result<Self> {
        let n = model.n_states();
        if mu.len() != n {
            return Err(KbbError::DimensionMismatch {
                expected: n,
                found: mu.len(),
            });
        }
        let q_mat = model.discount_matrix();
        let q_inv = q_mat
            .clone()
            .lu()
            .try_inverse()
            .ok_or_else(|| KbbError::Singular("I - gamma P".into()))?;
        let reversible = is_reversible(model, &mu);
        Ok(Self {
            model: model.clone(),
            mu,
            q_mat,
            q_inv,
            reversible,
        })
    }

    pub fn model(&self) -> &TabularModel {
        &self.model
    }

    pub fn mu(&self) -> &Distribution {
        &self.mu
    }

    pub fn q_mat(&self) -> &DMatrix<f64> {
        &self.q_mat
    }

    pub fn q_inv(&self) -> &DMatrix<f64> {
        &self.q_inv
    }

    pub fn is_reversible(&self) -> bool {
        self.reversible
    }

    pub fn n_states(&self) -> usize {
        self.model.n_states()
    }

    fn require_reversible(&self) -> Result<()> {
        if self.reversible {
            Ok(())
        } else {
            Err(KbbError::NotReversible)
        }
    }

    /// `<f, Q g>_mu`.
    pub fn q_inner(&self, f: &[f64], g: &[f64]) -> Result<f64> {
        self.require_reversible()?;
        self.q_form(f, g)
    }

    /// `||f||_Q^2 = <f, Q f>_mu`.
    pub fn q_norm_sq(&self, f: &[f64]) -> Result<f64> {
        self.q_inner(f, f)
    }

    fn q_form(&self, f: &[f64], g: &[f64]) -> Result<f64> {
        let n = self.n_states();
        if g.len() != n {
            return Err(KbbError::DimensionMismatch {
                expected: n,
                found: g.len(),
            });
        }
        let qg = &self.q_mat * DVector::from_column_slice(g);
        mu_inner(f, qg.as_slice(), &self.mu)
    }
}

/// `mu`-orthonormal vectors spanning `span{r, Qr, ..., Q^{depth-1} r}`,
/// built by modified Gram-Schmidt with one re-orthogonalization pass.
/// Stops early when the subspace saturates.
pub fn krylov_vectors(qop: &QOperator, depth: usize) -> Vec<DVector<f64>> {
    let mu = &qop.mu;
    let norm = |v: &DVector<f64>| mu_norm(v.as_slice(), mu).expect("length matches");
    let inner = |a: &DVector<f64>, b: &DVector<f64>| mu_inner(a.as_slice(), b.as_slice(), mu).expect("length matches");
    let mut out: Vec<DVector<f64>> = Vec::with_capacity(depth);
    if depth == 0 {
        return out;
    }
    let r = qop.model.reward().clone();
    let r_norm = norm(&r);
    if !(r_norm > 0.0) {
        return out;
    }
    out.push(r / r_norm);
    while out.len() < depth {
        let mut w = &qop.q_mat * out.last().expect("nonempty");
        for _ in 0..2 {
            for v in &out {
                let c = inner(v, &w);
                w.axpy(-c, v, 1.0);
            }
        }
        let w_norm = norm(&w);
        if w_norm < KRYLOV_SATURATION {
            break;
        }
        out.push(w / w_norm);
    }
    out
}

pub fn krylov_basis(qop: &QOperator, depth: usize) -> BasisSet {
    BasisSet::from_tables(krylov_vectors(qop, depth))
}

/// `x` in the depth-`depth` Krylov subspace with `r - Q x` `mu`-orthogonal
/// to that subspace.
pub fn krylov_projection_solution(qop: &QOperator, depth: usize) -> Result<DVector<f64>> {
    let n = qop.n_states();
    let vs = krylov_vectors(qop, depth);
    if vs.is_empty() {
        return Ok(DVector::zeros(n));
    }
    let basis = DMatrix::from_columns(&vs);
    let weighted = DMatrix::from_fn(n, vs.len(), |i, j| qop.mu.weights()[i] * basis[(i, j)]);
    let lhs = weighted.transpose() * &qop.q_mat * &basis;
    let rhs = weighted.transpose() * qop.model.reward();
    let y = lhs
        .lu()
        .solve(&rhs)
        .ok_or_else(|| KbbError::Singular("projected Krylov system".into()))?;
    Ok(basis * y)
}

/// Extremes `(lambda_t, Lambda_t)` of `||z||_mu^2 / <z, Q^{-1} z>_mu` over
/// the `mu`-orthogonal complement of a subspace.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpectralPair {
    pub mineig: f64,
    pub maxeig: f64,
}

impl SpectralPair {
    /// `1 - lambda^2 / (8 Lambda)`.
    pub fn theorem1_bound(&self) -> f64 {
        1.0 - self.mineig * self.mineig / (8.0 * self.maxeig)
    }
}

/// Works in `y = D^{1/2} z` coordinates, where the `mu`-inner product is
/// Euclidean. With `U` an orthonormal basis of the complement of
/// `D^{1/2} span(basis)`, the ratio's extremes are reciprocals of the extreme
/// eigenvalues of `U^T D^{1/2} Q^{-1} D^{-1/2} U`.
pub fn restricted_spectral_values(qop: &QOperator, basis: &BasisSet) -> Result<SpectralPair> {
    qop.require_reversible()?;
    let n = qop.n_states();
    let sqrt_mu: Vec<f64> = qop.mu.weights().iter().map(|w| w.sqrt()).collect();
    if sqrt_mu.iter().any(|s| !(*s > 0.0)) {
        return Err(KbbError::InvalidModel(
            "stationary distribution must be positive on every state".into(),
        ));
    }
    let table = basis.table_matrix(n);
    let complement = complement_basis(&DMatrix::from_fn(n, basis.len(), |i, j| sqrt_mu[i] * table[(i, j)]))?;
    let similar = DMatrix::from_fn(n, n, |i, j| sqrt_mu[i] * qop.q_inv[(i, j)] / sqrt_mu[j]);
    let c_q = complement.transpose() * similar * &complement;
    let c_q = (&c_q + c_q.transpose()) * 0.5;
    let eig = SymmetricEigen::new(c_q).eigenvalues;
    let lo = eig.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = eig.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(SpectralPair {
        mineig: 1.0 / hi,
        maxeig: 1.0 / lo,
    })
}

/// Orthonormal basis (Euclidean) of the orthogonal complement of the
/// column span of `b`.
fn complement_basis(b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = b.nrows();
    let mut projector = DMatrix::identity(n, n);
    if b.ncols() > 0 {
        let svd = b.clone().svd(true, false);
        let u = svd.u.expect("left singular vectors requested");
        let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
        for (j, s) in svd.singular_values.iter().enumerate() {
            if *s > RANK_TOL * smax {
                let col = u.column(j);
                projector -= col * col.transpose();
            }
        }
    }
    let eig = SymmetricEigen::new((&projector + projector.transpose()) * 0.5);
    let keep: Vec<usize> = (0..n).filter(|&j| eig.eigenvalues[j] > 0.5).collect();
    if keep.is_empty() {
        return Err(KbbError::DegenerateComplement);
    }
    Ok(DMatrix::from_fn(n, keep.len(), |i, j| eig.eigenvectors[(i, keep[j])]))
}

/// Noise-free boosting trace: basis after each iteration and every iterate
/// `V_0 = 0, V_1, ...`.
#[derive(Clone, Debug)]
pub struct OracleTrace {
    pub iterates: Vec<DVector<f64>>,
    /// `bases[t]` spans the subspace that produced `iterates[t]`.
    pub bases: Vec<BasisSet>,
    pub record: RunRecord,
}

/// Boosting with exact residuals `V_t - T V_t` and population LSTD.
pub fn oracle_kbb(model: &TabularModel, max_iters: usize) -> Result<RunRecord> {
    oracle_kbb_trace(model, max_iters).map(|t| t.record)
}

pub fn oracle_kbb_trace(model: &TabularModel, max_iters: usize) -> Result<OracleTrace> {
    let n = model.n_states();
    let mu = stationary_distribution(model)?;
    let v_star = solve_exact(model)?;
    let error = |v: &DVector<f64>| mu_norm((v - &v_star).as_slice(), &mu);
    let mut v = DVector::zeros(n);
    let mut basis = BasisSet::new();
    let mut tables: Vec<DVector<f64>> = Vec::new();
    let mut record = RunRecord {
        algo: Algo::Kbb,
        rows: Vec::with_capacity(max_iters),
        config_hash: String::new(),
        seeds: Vec::new(),
        initial_error: error(&v)?,
        rejected_iters: Vec::new(),
        final_value: None,
    };
    let mut iterates = vec![v.clone()];
    let mut bases = vec![basis.clone()];
    for t in 1..=max_iters {
        let start = std::time::Instant::now();
        let residual = &v - bellman_apply(model, &v)?;
        let existing = if tables.is_empty() {
            DMatrix::zeros(n, 0)
        } else {
            DMatrix::from_columns(&tables)
        };
        let weights = mu.weights().as_slice();
        let mut ridge = 0.0;
        if screen_new_basis(&existing, residual.as_slice(), Some(weights)).accepted() {
            tables.push(residual);
            basis = BasisSet::from_tables(tables.iter().cloned());
            let sol = lstd_solve_population(&basis, model, &mu)?;
            ridge = sol.ridge_used;
            v = basis.table_matrix(n) * DVector::from_vec(sol.coeffs);
        } else {
            record.rejected_iters.push(t);
        }
        record.rows.push(RunRow {
            iter: t,
            cum_samples: 0,
            mu_error: error(&v)?,
            ridge_used: ridge,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        });
        iterates.push(v.clone());
        bases.push(basis.clone());
    }
    record.final_value = Some(crate::value::StateValueFn::Table(v));
    Ok(OracleTrace {
        iterates,
        bases,
        record,
    })
}

/// One row of [`check_theorem1_rate`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RateRow {
    pub t: usize,
    pub mineig: f64,
    pub maxeig: f64,
    /// `1 - lambda_t^2 / (8 Lambda_t)`.
    pub contraction_bound: f64,
    /// `||V_{t+1} - V*||_Q^2 / ||V_t - V*||_Q^2`.
    pub observed_ratio: f64,
}

impl RateRow {
    pub fn holds(&self) -> bool {
        self.observed_ratio <= self.contraction_bound + 1e-8
    }
}

/// Per-iteration contraction bound from the restricted spectral values of
/// the current subspace, next to the observed `Q`-norm error ratio of
/// noise-free boosting. Rows run from `t = 0` while `||V_t - V*||_Q^2`
/// exceeds [`RATE_FLOOR`] and the complement is nonempty.
pub fn check_theorem1_rate(model: &TabularModel, max_iters: usize) -> Result<Vec<RateRow>> {
    let qop = QOperator::new(model)?;
    qop.require_reversible()?;
    let trace = oracle_kbb_trace(model, max_iters)?;
    let v_star = solve_exact(model)?;
    let err_q = |v: &DVector<f64>| qop.q_norm_sq((v - &v_star).as_slice());
    let mut rows = Vec::new();
    for t in 0..max_iters {
        let before = err_q(&trace.iterates[t])?;
        if before <= RATE_FLOOR {
            break;
        }
        let pair = match restricted_spectral_values(&qop, &trace.bases[t]) {
            Ok(p) => p,
            Err(KbbError::DegenerateComplement) => break,
            Err(e) => return Err(e),
        };
        let after = err_q(&trace.iterates[t + 1])?;
        rows.push(RateRow {
            t,
            mineig: pair.mineig,
            maxeig: pair.maxeig,
            contraction_bound: pair.theorem1_bound(),
            observed_ratio: after / before,
        });
    }
    Ok(rows)
}

/// One row of the `spectra` table.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpectraRow {
    pub t: usize,
    pub mineig: f64,
    pub maxeig: f64,
    pub theorem1_bound: f64,
}

pub const SPECTRA_CSV_HEADER: &str = "t,mineig,maxeig,theorem1_bound";

/// Spectral values along Krylov subspaces: row `t` (1-based) uses the
/// depth-`(t - 1)` subspace. Stops early if the complement becomes empty.
pub fn spectra_table(qop: &QOperator, depth: usize) -> Result<Vec<SpectraRow>> {
    qop.require_reversible()?;
    let vectors = krylov_vectors(qop, depth.saturating_sub(1));
    let mut rows = Vec::with_capacity(depth);
    for t in 1..=depth {
        let k = (t - 1).min(vectors.len());
        let basis = BasisSet::from_tables(vectors[..k].iter().cloned());
        let pair = match restricted_spectral_values(qop, &basis) {
            Ok(p) => p,
            Err(KbbError::DegenerateComplement) => break,
            Err(e) => return Err(e),
        };
        rows.push(SpectraRow {
            t,
            mineig: pair.mineig,
            maxeig: pair.maxeig,
            theorem1_bound: pair.theorem1_bound(),
        });
    }
    Ok(rows)
}

pub fn spectra_csv(rows: &[SpectraRow]) -> String {
    let mut out = format!("{SPECTRA_CSV_HEADER}\n");
    for r in rows {
        out.push_str(&format!(
            "{},{:e},{:e},{:e}\n",
            r.t, r.mineig, r.maxeig, r.theorem1_bound
        ));
    }
    out
}

pub const RATE_CSV_HEADER: &str = "t,mineig,maxeig,contraction_bound,observed_ratio";

pub fn rate_csv(rows: &[RateRow]) -> String {
    let mut out = format!("{RATE_CSV_HEADER}\n");
    for r in rows {
        out.push_str(&format!(
            "{},{:e},{:e},{:e},{:e}\n",
            r.t, r.mineig, r.maxeig, r.contraction_bound, r.observed_ratio
        ));
    }
    out
}
