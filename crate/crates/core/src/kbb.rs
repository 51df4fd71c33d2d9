//! Value iteration, fitted value iteration and Krylov-Bellman boosting,
//! plus the error meter shared by all three.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::envs::{Dataset, Env, EnvModel, StateColumn};
use crate::error::{KbbError, Result};
use crate::lstd::{assemble_system, combine, screen_new_basis, solve_system};
use crate::mrp::bellman_apply;
use crate::regress::{backup_targets, fit_column, residual_targets, FittedFunction, RegressorConfig};
use crate::rng::{derive_seed, Stream};
use crate::value::{BasisFn, BasisSet, CoordMap, StateRef, StateValueFn};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Algo {
    Vi,
    Fvi,
    Kbb,
}

impl Algo {
    pub const ALL: [Algo; 3] = [Algo::Vi, Algo::Fvi, Algo::Kbb];

    pub fn as_str(&self) -> &'static str {
        match self {
            Algo::Vi => "VI",
            Algo::Fvi => "FVI",
            Algo::Kbb => "KBB",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_uppercase().as_str() {
            "VI" => Some(Algo::Vi),
            "FVI" => Some(Algo::Fvi),
            "KBB" => Some(Algo::Kbb),
            _ => None,
        }
    }
}

impl std::fmt::Display for Algo {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Per-iteration sample sizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct IterationBudget {
    pub n_per_iter: usize,
    /// Multiplies the sample size of iteration 1.
    pub first_iter_multiplier: usize,
    pub max_iters: usize,
    /// Reuse the regression dataset for LSTD instead of drawing a second one.
    pub shared_data: bool,
}

impl Default for IterationBudget {
    fn default() -> Self {
        Self {
            n_per_iter: 10_000,
            first_iter_multiplier: 4,
            max_iters: 10,
            shared_data: true,
        }
    }
}

impl IterationBudget {
    pub fn validate(&self) -> Result<()> {
        if self.n_per_iter == 0 || self.first_iter_multiplier == 0 || self.max_iters == 0 {
            return Err(KbbError::InvalidArgument(
                "iteration budget counts must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Sample size of iteration `t` (1-based).
    pub fn samples_at(&self, t: usize) -> usize {
        if t == 1 {
            self.n_per_iter * self.first_iter_multiplier
        } else {
            self.n_per_iter
        }
    }
}

/// Everything a sampled run needs besides the environment and error meter.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampledRunSpec {
    pub regressor: RegressorConfig,
    /// Replaces `regressor` at iteration 1 when set.
    pub first_regressor: Option<RegressorConfig>,
    pub budget: IterationBudget,
    pub seed: u64,
}

impl SampledRunSpec {
    pub fn new(regressor: RegressorConfig, budget: IterationBudget, seed: u64) -> Self {
        Self {
            regressor,
            first_regressor: None,
            budget,
            seed,
        }
    }

    fn regressor_at(&self, t: usize) -> &RegressorConfig {
        match (&self.first_regressor, t) {
            (Some(first), 1) => first,
            _ => &self.regressor,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RunRow {
    pub iter: usize,
    pub cum_samples: u64,
    pub mu_error: f64,
    pub ridge_used: f64,
    pub wall_ms: f64,
}

/// Trace of one run. `rows[t - 1]` describes the iterate after `t` updates.
#[derive(Clone, Debug)]
pub struct RunRecord {
    pub algo: Algo,
    pub rows: Vec<RunRow>,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    /// Error of the zero function the runs start from.
    pub initial_error: f64,
    /// Iterations whose new basis function was rejected (KBB only).
    pub rejected_iters: Vec<usize>,
    pub final_value: Option<StateValueFn>,
}

pub const CSV_HEADER: &str = "iter,cum_samples,mu_error,ridge_used,wall_ms";

impl RunRecord {
    fn new(algo: Algo, seed: u64, initial_error: f64) -> Self {
        Self {
            algo,
            rows: Vec::new(),
            config_hash: String::new(),
            seeds: vec![seed],
            initial_error,
            rejected_iters: Vec::new(),
            final_value: None,
        }
    }

    pub fn with_config_hash(mut self, hash: impl Into<String>) -> Self {
        self.config_hash = hash.into();
        self
    }

    pub fn final_error(&self) -> Option<f64> {
        self.rows.last().map(|r| r.mu_error)
    }

    pub fn errors(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.mu_error).collect()
    }

    /// Cumulative samples at the first iteration whose error is at most
    /// `target`; `None` if never reached.
    pub fn samples_to_reach(&self, target: f64) -> Option<u64> {
        self.rows.iter().find(|r| r.mu_error <= target).map(|r| r.cum_samples)
    }

    /// CSV with [`CSV_HEADER`]; floats use the shortest round-trip form,
    /// except `wall_ms` (3 decimals).
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{:e},{:e},{:.3}\n",
                r.iter, r.cum_samples, r.mu_error, r.ridge_used, r.wall_ms
            ));
        }
        out
    }

    /// Parses [`RunRecord::to_csv`] output back into rows.
    pub fn rows_from_csv(text: &str) -> Result<Vec<RunRow>> {
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h.trim() == CSV_HEADER => {}
            _ => return Err(KbbError::Format(format!("expected CSV header `{CSV_HEADER}`"))),
        }
        lines
            .filter(|l| !l.trim().is_empty())
            .enumerate()
            .map(|(n, line)| {
                let bad = || KbbError::Format(format!("bad CSV row {}: `{line}`", n + 2));
                let f: Vec<&str> = line.split(',').collect();
                if f.len() != 5 {
                    return Err(bad());
                }
                Ok(RunRow {
                    iter: f[0].parse().map_err(|_| bad())?,
                    cum_samples: f[1].parse().map_err(|_| bad())?,
                    mu_error: f[2].parse().map_err(|_| bad())?,
                    ridge_used: f[3].parse().map_err(|_| bad())?,
                    wall_ms: f[4].parse().map_err(|_| bad())?,
                })
            })
            .collect()
    }
}

/// Weighted squared-error meter: `sqrt(sum_i w_i (v(s_i) - V*(s_i))^2)`.
///
/// Tabular environments use every state with stationary weights, which is
/// the exact `mu`-norm. Other environments use `n_eval` stationary draws
/// with equal weights.
#[derive(Clone, Debug)]
pub struct ErrorMeter {
    points: StateColumn,
    weights: Vec<f64>,
    truth: Vec<f64>,
}

impl ErrorMeter {
    pub fn new(env: &Env, truth: &StateValueFn, n_eval: usize, eval_seed: u64) -> Result<Self> {
        let (points, weights) = match env.model() {
            EnvModel::Tabular(t) => {
                let n = t.model().n_states();
                (
                    StateColumn::Indices((0..n).collect()),
                    t.mu().weights().iter().copied().collect(),
                )
            }
            _ => {
                if n_eval == 0 {
                    return Err(KbbError::InvalidArgument("n_eval must be positive".into()));
                }
                let dim = env.state_kind().width();
                let data = env.draw_states(n_eval, eval_seed);
                (StateColumn::Points { dim, data }, vec![1.0 / n_eval as f64; n_eval])
            }
        };
        let truth = eval_column(&|s| truth.eval(s), &points);
        Ok(Self { points, weights, truth })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn state(&self, i: usize) -> StateRef<'_> {
        self.points.get(i)
    }

    /// Error of the zero function.
    pub fn zero_error(&self) -> f64 {
        self.error_of_values(&vec![0.0; self.len()])
    }

    pub fn error_of(&self, v: &StateValueFn) -> f64 {
        self.error_of_values(&self.values_of(&|s| v.eval(s)))
    }

    /// Error of a function given by its values at the meter's points.
    pub fn error_of_values(&self, values: &[f64]) -> f64 {
        assert_eq!(values.len(), self.len(), "one value per evaluation point");
        self.weights
            .iter()
            .zip(values)
            .zip(&self.truth)
            .map(|((w, v), t)| w * (v - t) * (v - t))
            .sum::<f64>()
            .sqrt()
    }

    pub fn values_of(&self, f: &(dyn Fn(StateRef<'_>) -> f64 + Sync)) -> Vec<f64> {
        eval_column(f, &self.points)
    }
}

/// `mu`-norm error (exact for tabular environments, Monte Carlo otherwise).
pub fn evaluate_error(v: &StateValueFn, truth: &StateValueFn, env: &Env, n_eval: usize, seed: u64) -> Result<f64> {
    Ok(ErrorMeter::new(env, truth, n_eval, seed)?.error_of(v))
}

/// Evaluates `f` at every point in parallel; output order follows the points.
fn eval_column(f: &(dyn Fn(StateRef<'_>) -> f64 + Sync), points: &StateColumn) -> Vec<f64> {
    (0..points.len())
        .into_par_iter()
        .with_min_len(256)
        .map(|i| f(points.get(i)))
        .collect()
}

/// Exact value iteration from `V_0 = 0`. Quadratic models iterate the
/// closed-form `(P_t, c_t)` recursion.
pub fn run_vi(env: &Env, max_iters: usize, meter: &ErrorMeter) -> Result<RunRecord> {
    let mut record = RunRecord::new(Algo::Vi, 0, meter.zero_error());
    let push = |record: &mut RunRecord, t: usize, err: f64, start: Instant| {
        record.rows.push(RunRow {
            iter: t,
            cum_samples: 0,
            mu_error: err,
            ridge_used: 0.0,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        });
    };
    match env.model() {
        EnvModel::Tabular(tab) => {
            let n = tab.model().n_states();
            let mut v = DVector::zeros(n);
            for t in 1..=max_iters {
                let start = Instant::now();
                v = bellman_apply(tab.model(), &v)?;
                let err = meter.error_of_values(v.as_slice());
                push(&mut record, t, err, start);
            }
            record.final_value = Some(StateValueFn::Table(v));
        }
        model => {
            let (mut p, mut c, map) = quadratic_start(model);
            let mut value = None;
            for t in 1..=max_iters {
                let start = Instant::now();
                (p, c) = quadratic_step(model, &p, c);
                let v = StateValueFn::quadratic(p.clone(), c, map)?;
                let err = meter.error_of(&v);
                push(&mut record, t, err, start);
                value = Some(v);
            }
            record.final_value = value;
        }
    }
    Ok(record)
}

fn quadratic_start(model: &EnvModel) -> (DMatrix<f64>, f64, Option<CoordMap>) {
    let (d, map) = match model {
        EnvModel::Lqr(m) => (m.dim(), None),
        EnvModel::Nonlinear(m) => (m.inner().dim(), Some(m.coord_map())),
        EnvModel::Arch(m) => (m.dim(), None),
        EnvModel::Tabular(_) => unreachable!("tabular models iterate tables"),
    };
    (DMatrix::zeros(d, d), 0.0, map)
}

/// One exact Bellman update of `x^T P x + c`.
fn quadratic_step(model: &EnvModel, p: &DMatrix<f64>, c: f64) -> (DMatrix<f64>, f64) {
    let (next, offset) = match model {
        EnvModel::Lqr(m) => (m.lyapunov_map(p), m.gamma() * (c + (p * m.noise_cov()).trace())),
        EnvModel::Nonlinear(m) => {
            let m = m.inner();
            (m.lyapunov_map(p), m.gamma() * (c + (p * m.noise_cov()).trace()))
        }
        EnvModel::Arch(m) => (
            m.value_map(p),
            m.gamma() * (c + m.q_scalar() * (p * m.noise_cov()).trace()),
        ),
        EnvModel::Tabular(_) => unreachable!("tabular models iterate tables"),
    };
    ((&next + next.transpose()) * 0.5, offset)
}

fn draw(env: &Env, n: usize, seed: u64, stream: Stream, t: usize) -> Result<Dataset> {
    env.sample_transitions(n, derive_seed(seed, stream, t as u64))
}

fn fitted_values(f: &FittedFunction, column: &StateColumn) -> Vec<f64> {
    eval_column(&|s| f.eval(s), column)
}

/// Fitted value iteration: `V_{t+1}` regresses `r + gamma V_t(x')` on fresh
/// data each iteration.
pub fn run_fvi(env: &Env, spec: &SampledRunSpec, meter: &ErrorMeter) -> Result<RunRecord> {
    spec.budget.validate()?;
    let gamma = env.gamma();
    let mut record = RunRecord::new(Algo::Fvi, spec.seed, meter.zero_error());
    let mut current: Option<FittedFunction> = None;
    let mut cum = 0u64;
    for t in 1..=spec.budget.max_iters {
        let start = Instant::now();
        let n = spec.budget.samples_at(t);
        let data = draw(env, n, spec.seed, Stream::Regression, t)?;
        cum += n as u64;
        let v_xp = match &current {
            Some(f) => fitted_values(f, data.next_states_column()),
            None => vec![0.0; n],
        };
        let targets = backup_targets(&v_xp, data.rewards(), gamma);
        let fit_seed = derive_seed(spec.seed, Stream::Fit, t as u64);
        let (f, _) = fit_column(data.states_column(), &targets, spec.regressor_at(t), fit_seed)?;
        let err = meter.error_of_values(&meter.values_of(&|s| f.eval(s)));
        current = Some(f);
        record.rows.push(RunRow {
            iter: t,
            cum_samples: cum,
            mu_error: err,
            ridge_used: 0.0,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        });
    }
    record.final_value = current.map(|f| {
        let mut basis = BasisSet::new();
        basis.push(BasisFn::Fitted(f));
        StateValueFn::BasisSum {
            basis,
            coeffs: vec![1.0],
        }
    });
    Ok(record)
}

/// Basis values at the states and next states of one dataset.
struct DataFeatures {
    x: DMatrix<f64>,
    xp: DMatrix<f64>,
}

impl DataFeatures {
    fn new(basis: &BasisSet, data: &Dataset) -> Self {
        let n = data.len();
        let mut out = Self {
            x: DMatrix::zeros(n, 0),
            xp: DMatrix::zeros(n, 0),
        };
        for f in basis.iter() {
            out.push(f, data);
        }
        out
    }

    fn push(&mut self, f: &BasisFn, data: &Dataset) {
        let k = self.x.ncols();
        let col_x = eval_column(&|s| f.eval(s), data.states_column());
        let col_xp = eval_column(&|s| f.eval(s), data.next_states_column());
        let x = std::mem::replace(&mut self.x, DMatrix::zeros(0, 0));
        let xp = std::mem::replace(&mut self.xp, DMatrix::zeros(0, 0));
        self.x = x.insert_column(k, 0.0);
        self.xp = xp.insert_column(k, 0.0);
        self.x.set_column(k, &DVector::from_vec(col_x));
        self.xp.set_column(k, &DVector::from_vec(col_xp));
    }
}

/// Krylov-Bellman boosting from `V_0 = 0` and an empty basis. Iteration `t`
/// fits `V_t(x) - (r + gamma V_t(x'))` on fresh data, appends the fit to the
/// basis unless [`screen_new_basis`] rejects it, re-solves LSTD over the
/// whole basis and sets `V_{t+1} = sum_j alpha_j phi_j`.
///
/// An unsolvable LSTD system aborts with [`KbbError::Aborted`] carrying the
/// rows completed so far.
pub fn run_kbb(env: &Env, spec: &SampledRunSpec, meter: &ErrorMeter) -> Result<RunRecord> {
    spec.budget.validate()?;
    let gamma = env.gamma();
    let mut record = RunRecord::new(Algo::Kbb, spec.seed, meter.zero_error());
    let mut basis = BasisSet::new();
    let mut coeffs: Vec<f64> = Vec::new();
    let mut eval_features = DMatrix::<f64>::zeros(meter.len(), 0);
    let mut cum = 0u64;
    for t in 1..=spec.budget.max_iters {
        let start = Instant::now();
        let n = spec.budget.samples_at(t);
        let reg = draw(env, n, spec.seed, Stream::Regression, t)?;
        cum += n as u64;
        let lstd_data = if spec.budget.shared_data {
            None
        } else {
            cum += n as u64;
            Some(draw(env, n, spec.seed, Stream::Lstd, t)?)
        };

        let mut reg_features = DataFeatures::new(&basis, &reg);
        let v_x = combine(&reg_features.x, &coeffs);
        let v_xp = combine(&reg_features.xp, &coeffs);
        let targets = residual_targets(&v_x, &v_xp, reg.rewards(), gamma);
        let fit_seed = derive_seed(spec.seed, Stream::Fit, t as u64);
        let (phi, _) = fit_column(reg.states_column(), &targets, spec.regressor_at(t), fit_seed)?;
        let candidate = BasisFn::Fitted(phi);
        let cand_x = eval_column(&|s| candidate.eval(s), reg.states_column());
        let screen = screen_new_basis(&reg_features.x, &cand_x, None);

        if screen.accepted() {
            basis.push(candidate);
            let f = basis.get(basis.len() - 1).expect("just pushed");
            reg_features.push(f, &reg);
            let col = meter.values_of(&|s| f.eval(s));
            let k = eval_features.ncols();
            eval_features = eval_features.insert_column(k, 0.0);
            eval_features.set_column(k, &DVector::from_vec(col));
        } else {
            record.rejected_iters.push(t);
        }

        let mut ridge = 0.0;
        if !basis.is_empty() {
            let (features, rewards) = match &lstd_data {
                None => (reg_features, reg.rewards()),
                Some(d) => (DataFeatures::new(&basis, d), d.rewards()),
            };
            let (a, b) = assemble_system(&features.x, &features.xp, rewards, gamma);
            match solve_system(&a, &b) {
                Ok(sol) => {
                    coeffs = sol.coeffs;
                    ridge = sol.ridge_used;
                }
                Err(e) => {
                    return Err(KbbError::Aborted {
                        record: Box::new(record),
                        reason: e.to_string(),
                    })
                }
            }
        }

        let err = meter.error_of_values(&combine(&eval_features, &coeffs));
        record.rows.push(RunRow {
            iter: t,
            cum_samples: cum,
            mu_error: err,
            ridge_used: ridge,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        });
    }
    record.final_value = Some(StateValueFn::basis_sum(basis, coeffs)?);
    Ok(record)
}

/// Runs `algo` with the settings of `spec` (VI ignores everything but
/// `budget.max_iters`).
pub fn run_algo(algo: Algo, env: &Env, spec: &SampledRunSpec, meter: &ErrorMeter) -> Result<RunRecord> {
    match algo {
        Algo::Vi => run_vi(env, spec.budget.max_iters, meter),
        Algo::Fvi => run_fvi(env, spec, meter),
        Algo::Kbb => run_kbb(env, spec, meter),
    }
}
