//! Finite-state benchmark models.

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;

use crate::error::{KbbError, Result};
use crate::mrp::TabularModel;
use crate::rng::rng_from_seed;

/// `n` states with i.i.d. `Unif(0, 1)` transition weights (rows normalized)
/// and i.i.d. `Unif(0, 1)` rewards.
pub fn make_random_tabular(n: usize, gamma: f64, seed: u64) -> Result<TabularModel> {
    if n < 2 {
        return Err(KbbError::InvalidArgument(format!(
            "random tabular model needs at least 2 states, got {n}"
        )));
    }
    let mut rng = rng_from_seed(seed);
    let mut trans = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            trans[(i, j)] = rng.random::<f64>();
        }
    }
    normalize_rows(&mut trans);
    let reward = DVector::from_fn(n, |_, _| rng.random::<f64>());
    TabularModel::new(trans, reward, gamma)
}

/// Random walk on a ring of `n` states: stay with probability 1/3, move to
/// each of the four neighbours at distance 1 or 2 with probability 1/6.
/// Rewards are i.i.d. `Unif(0, 1)`.
pub fn make_circular_walk(n: usize, gamma: f64, seed: u64) -> Result<TabularModel> {
    if n < 5 {
        return Err(KbbError::InvalidArgument(format!(
            "circular walk needs at least 5 states, got {n}"
        )));
    }
    let model = circulant(n, &[1.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0]);
    let mut rng = rng_from_seed(seed);
    let reward = DVector::from_fn(n, |_, _| rng.random::<f64>());
    TabularModel::new(model, reward, gamma)
}

/// Symmetric circulant chain: weight `stencil[k]` on each of the offsets
/// `+k` and `-k` (once for `k = 0`), normalized. Symmetric, hence reversible
/// with a uniform stationary law. Requires `n > 2 * (stencil.len() - 1)`.
pub fn make_symmetric_stencil(n: usize, stencil: &[f64], gamma: f64, seed: u64) -> Result<TabularModel> {
    if stencil.is_empty() || stencil.iter().any(|w| !(*w >= 0.0)) {
        return Err(KbbError::InvalidArgument("stencil weights must be nonnegative".into()));
    }
    if n <= 2 * (stencil.len() - 1) {
        return Err(KbbError::InvalidArgument(format!(
            "stencil of half-width {} overlaps on {n} states",
            stencil.len() - 1
        )));
    }
    let total = stencil[0] + 2.0 * stencil[1..].iter().sum::<f64>();
    if total <= 0.0 {
        return Err(KbbError::InvalidArgument("stencil has zero mass".into()));
    }
    let weights: Vec<f64> = stencil.iter().map(|w| w / total).collect();
    let mut rng = rng_from_seed(seed);
    let reward = DVector::from_fn(n, |_, _| rng.random::<f64>());
    TabularModel::new(circulant(n, &weights), reward, gamma)
}

/// Random walk on a random weighted complete graph: `P = D^{-1} W` with
/// symmetric `W` having `Unif(0, 1)` entries. Reversible with stationary law
/// proportional to the row sums of `W`.
pub fn make_random_reversible(n: usize, gamma: f64, seed: u64) -> Result<TabularModel> {
    if n < 2 {
        return Err(KbbError::InvalidArgument(format!(
            "random reversible model needs at least 2 states, got {n}"
        )));
    }
    let mut rng = rng_from_seed(seed);
    let mut w = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let x = rng.random::<f64>();
            w[(i, j)] = x;
            w[(j, i)] = x;
        }
    }
    normalize_rows(&mut w);
    let reward = DVector::from_fn(n, |_, _| rng.random::<f64>());
    TabularModel::new(w, reward, gamma)
}

fn circulant(n: usize, half_stencil: &[f64]) -> DMatrix<f64> {
    let mut p = DMatrix::zeros(n, n);
    for i in 0..n {
        p[(i, i)] += half_stencil[0];
        for (k, &w) in half_stencil.iter().enumerate().skip(1) {
            p[(i, (i + k) % n)] += w;
            p[(i, (i + n - k) % n)] += w;
        }
    }
    // Fold away the last-bit drift so rows sum to one as exactly as possible.
    normalize_rows(&mut p);
    p
}

fn normalize_rows(m: &mut DMatrix<f64>) {
    for mut row in m.row_iter_mut() {
        let s: f64 = row.iter().sum();
        row /= s;
    }
}
