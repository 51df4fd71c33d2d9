//! Tabular Markov reward processes: exact Bellman updates, exact solves,
//! stationary distributions and the stationary-weighted norm.

use nalgebra::{DMatrix, DVector};

use crate::error::{KbbError, Result};

const ROW_SUM_TOL: f64 = 1e-12;
const REVERSIBLE_TOL: f64 = 1e-10;
const STATIONARY_TOL: f64 = 1e-12;
// P^(2^64) is far past any mixing time that matters.
const MAX_SQUARINGS: usize = 64;

/// A finite Markov reward process: row-stochastic `trans`, per-state
/// `reward` and discount `gamma`.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularModel {
    trans: DMatrix<f64>,
    reward: DVector<f64>,
    gamma: f64,
}

impl TabularModel {
    pub fn new(trans: DMatrix<f64>, reward: DVector<f64>, gamma: f64) -> Result<Self> {
        let n = trans.nrows();
        if n == 0 || trans.ncols() != n {
            return Err(KbbError::InvalidModel(format!(
                "transition matrix must be square and nonempty, got {}x{}",
                trans.nrows(),
                trans.ncols()
            )));
        }
        if reward.len() != n {
            return Err(KbbError::DimensionMismatch {
                expected: n,
                found: reward.len(),
            });
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(KbbError::InvalidModel(format!(
                "discount must lie in [0, 1), got {gamma}"
            )));
        }
        for (i, row) in trans.row_iter().enumerate() {
            if row.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
                return Err(KbbError::InvalidModel(format!(
                    "row {i} has a negative or non-finite entry"
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(KbbError::InvalidModel(format!("row {i} sums to {sum}, not 1")));
            }
        }
        if reward.iter().any(|r| !r.is_finite()) {
            return Err(KbbError::InvalidModel("reward has non-finite entries".into()));
        }
        Ok(Self { trans, reward, gamma })
    }

    pub fn n_states(&self) -> usize {
        self.reward.len()
    }

    pub fn trans(&self) -> &DMatrix<f64> {
        &self.trans
    }

    pub fn reward(&self) -> &DVector<f64> {
        &self.reward
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Same dynamics and reward under a different discount.
    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        Self::new(self.trans.clone(), self.reward.clone(), gamma)
    }

    /// Same dynamics and discount with a different reward vector.
    pub fn with_reward(&self, reward: DVector<f64>) -> Result<Self> {
        Self::new(self.trans.clone(), reward, self.gamma)
    }

    /// The discount operator `I - gamma P` as a dense matrix.
    pub fn discount_matrix(&self) -> DMatrix<f64> {
        let n = self.n_states();
        DMatrix::identity(n, n) - &self.trans * self.gamma
    }
}

/// A probability vector over the states of a tabular model.
#[derive(Clone, Debug, PartialEq)]
pub struct Distribution {
    weights: DVector<f64>,
}

impl Distribution {
    pub fn new(weights: DVector<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(KbbError::InvalidArgument("empty distribution".into()));
        }
        if weights.iter().any(|&w| !(w >= 0.0)) {
            return Err(KbbError::InvalidArgument(
                "distribution has negative or NaN weights".into(),
            ));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > ROW_SUM_TOL {
            return Err(KbbError::InvalidArgument(format!("distribution sums to {sum}, not 1")));
        }
        Ok(Self { weights })
    }

    pub fn uniform(n: usize) -> Self {
        Self {
            weights: DVector::from_element(n, 1.0 / n as f64),
        }
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// `r + gamma P v`.
pub fn bellman_apply(model: &TabularModel, v: &DVector<f64>) -> Result<DVector<f64>> {
    check_len(model.n_states(), v.len())?;
    Ok(&model.reward + (&model.trans * v) * model.gamma)
}

/// Solves `(I - gamma P) V = r` by dense LU.
pub fn solve_exact(model: &TabularModel) -> Result<DVector<f64>> {
    model
        .discount_matrix()
        .lu()
        .solve(&model.reward)
        .ok_or_else(|| KbbError::Singular("I - gamma P is not invertible".into()))
}

/// Stationary distribution by power iteration from a point mass on state 0.
///
/// The iterate after `2^k` steps is read off row 0 of `P^(2^k)`, which is
/// built by repeated squaring. Converged when `|mu P - mu|_1 <= 1e-12`.
/// Periodic and some reducible chains never satisfy that and return
/// [`KbbError::NonConvergence`].
pub fn stationary_distribution(model: &TabularModel) -> Result<Distribution> {
    stationary_distribution_with(model, STATIONARY_TOL, 100 * model.n_states())
}

/// [`stationary_distribution`] with an explicit tolerance and squaring cap.
pub fn stationary_distribution_with(model: &TabularModel, tol: f64, max_squarings: usize) -> Result<Distribution> {
    let cap = max_squarings.min(MAX_SQUARINGS);
    let p = &model.trans;
    let mut power = p.clone();
    let mut stalls = 0;
    for _ in 0..=cap {
        let mut mu: DVector<f64> = power.row(0).transpose().map(|w| w.max(0.0));
        let total: f64 = mu.iter().sum();
        mu /= total;
        let moved = p.tr_mul(&mu);
        let resid: f64 = (&moved - &mu).iter().map(|d| d.abs()).sum();
        if resid <= tol {
            return Ok(Distribution { weights: mu });
        }
        let next = &power * &power;
        stalls = if (&next - &power).amax() <= tol { stalls + 1 } else { 0 };
        power = next;
        if stalls >= 2 {
            break;
        }
    }
    Err(KbbError::NonConvergence {
        what: "stationary distribution power iteration",
        iters: cap,
    })
}

/// `sqrt(sum_i mu_i f_i^2)`.
pub fn mu_norm(f: &[f64], mu: &Distribution) -> Result<f64> {
    check_len(mu.len(), f.len())?;
    Ok(f.iter()
        .zip(mu.weights.iter())
        .map(|(x, w)| w * x * x)
        .sum::<f64>()
        .sqrt())
}

/// `sum_i mu_i f_i g_i`.
pub fn mu_inner(f: &[f64], g: &[f64], mu: &Distribution) -> Result<f64> {
    check_len(mu.len(), f.len())?;
    check_len(mu.len(), g.len())?;
    Ok(f.iter()
        .zip(g)
        .zip(mu.weights.iter())
        .map(|((a, b), w)| w * a * b)
        .sum())
}

/// Detailed balance `mu_i P_ij = mu_j P_ji` within 1e-10.
pub fn is_reversible(model: &TabularModel, mu: &Distribution) -> bool {
    let n = model.n_states();
    if mu.len() != n {
        return false;
    }
    let w = &mu.weights;
    let p = &model.trans;
    (0..n).all(|i| (i + 1..n).all(|j| (w[i] * p[(i, j)] - w[j] * p[(j, i)]).abs() <= REVERSIBLE_TOL))
}

fn check_len(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(KbbError::DimensionMismatch { expected, found })
    }
}
