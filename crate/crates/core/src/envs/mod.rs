//! Benchmark Markov reward processes with samplers and ground-truth values.

mod arch;
mod dataset;
mod lqr;
mod nonlinear;
mod tabular;

use nalgebra::DMatrix;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution as _;

pub use arch::{arch_fixed_point, arch_true_value, make_arch, ArchModel, MOMENT_RADIUS};
pub use dataset::{Dataset, DrawMode, TransitionSample};
pub use lqr::{lqr_fixed_point, lqr_true_value, make_lqr, LqrModel, NOISE_SCALE, STABLE_RADIUS};
pub use nonlinear::{make_nonlinear, nonlinear_true_value, NonlinearModel, NONLINEAR_DIM};
pub use tabular::{make_circular_walk, make_random_reversible, make_random_tabular, make_symmetric_stencil};

pub(crate) use dataset::StateColumn;

use crate::error::{KbbError, Result};
use crate::mrp::{solve_exact, stationary_distribution, Distribution, TabularModel};
use crate::rng::{rng_from_seed, Rng};
use crate::value::{StateKind, StateValueFn};
use lqr::GaussianSampler;

/// Steps discarded before the first retained ARCH sample.
pub const ARCH_BURN_IN: usize = 1000;
/// Steps between consecutive retained ARCH samples.
pub const ARCH_STRIDE: usize = 10;

/// A finite model together with its stationary law and sampling tables.
#[derive(Clone, Debug)]
pub struct TabularEnv {
    model: TabularModel,
    mu: Distribution,
    mu_index: WeightedIndex<f64>,
    row_index: Vec<WeightedIndex<f64>>,
}

impl TabularEnv {
    pub fn new(model: TabularModel) -> Result<Self> {
        let mu = stationary_distribution(&model)?;
        Self::with_distribution(model, mu)
    }

    /// Uses `mu` as the sampling law for states instead of computing it.
    pub fn with_distribution(model: TabularModel, mu: Distribution) -> Result<Self> {
        if mu.len() != model.n_states() {
            return Err(KbbError::DimensionMismatch {
                expected: model.n_states(),
                found: mu.len(),
            });
        }
        let weights = |it: &mut dyn Iterator<Item = f64>| {
            WeightedIndex::new(it.map(|w| w.max(0.0)).collect::<Vec<_>>())
                .map_err(|e| KbbError::InvalidModel(format!("cannot sample from weights: {e}")))
        };
        let mu_index = weights(&mut mu.weights().iter().copied())?;
        let trans = model.trans();
        let row_index = (0..model.n_states())
            .map(|i| weights(&mut trans.row(i).iter().copied()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            model,
            mu,
            mu_index,
            row_index,
        })
    }

    pub fn model(&self) -> &TabularModel {
        &self.model
    }

    pub fn mu(&self) -> &Distribution {
        &self.mu
    }

    fn draw_state(&self, rng: &mut Rng) -> usize {
        self.mu_index.sample(rng)
    }

    fn draw_next(&self, x: usize, rng: &mut Rng) -> usize {
        self.row_index[x].sample(rng)
    }
}

/// The four model families.
#[derive(Clone, Debug)]
pub enum EnvModel {
    Tabular(TabularEnv),
    Lqr(LqrModel),
    Nonlinear(NonlinearModel),
    Arch(ArchModel),
}

/// An environment: a model, an identifier recorded in datasets, and the
/// cached factors its samplers need.
#[derive(Clone, Debug)]
pub struct Env {
    id: String,
    model: EnvModel,
    state_sampler: Option<GaussianSampler>,
    noise_sampler: Option<GaussianSampler>,
}

impl Env {
    pub fn new(id: impl Into<String>, model: EnvModel) -> Result<Self> {
        let (state_sampler, noise_sampler) = match &model {
            EnvModel::Tabular(_) => (None, None),
            EnvModel::Lqr(m) => (
                Some(GaussianSampler::new(&m.stationary_cov()?)),
                Some(GaussianSampler::new(m.noise_cov())),
            ),
            EnvModel::Nonlinear(m) => (
                Some(GaussianSampler::new(&m.inner().stationary_cov()?)),
                Some(GaussianSampler::new(m.inner().noise_cov())),
            ),
            EnvModel::Arch(m) => (None, Some(GaussianSampler::new(m.noise_cov()))),
        };
        Ok(Self {
            id: id.into(),
            model,
            state_sampler,
            noise_sampler,
        })
    }

    pub fn tabular(id: impl Into<String>, model: TabularModel) -> Result<Self> {
        Self::new(id, EnvModel::Tabular(TabularEnv::new(model)?))
    }

    pub fn lqr(id: impl Into<String>, model: LqrModel) -> Result<Self> {
        Self::new(id, EnvModel::Lqr(model))
    }

    pub fn nonlinear(id: impl Into<String>, model: NonlinearModel) -> Result<Self> {
        Self::new(id, EnvModel::Nonlinear(model))
    }

    pub fn arch(id: impl Into<String>, model: ArchModel) -> Result<Self> {
        Self::new(id, EnvModel::Arch(model))
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn model(&self) -> &EnvModel {
        &self.model
    }

    pub fn as_tabular(&self) -> Option<&TabularEnv> {
        match &self.model {
            EnvModel::Tabular(t) => Some(t),
            _ => None,
        }
    }

    pub fn gamma(&self) -> f64 {
        match &self.model {
            EnvModel::Tabular(t) => t.model.gamma(),
            EnvModel::Lqr(m) => m.gamma(),
            EnvModel::Nonlinear(m) => m.gamma(),
            EnvModel::Arch(m) => m.gamma(),
        }
    }

    pub fn state_kind(&self) -> StateKind {
        match &self.model {
            EnvModel::Tabular(_) => StateKind::Index,
            EnvModel::Lqr(m) => StateKind::Vector(m.dim()),
            EnvModel::Nonlinear(_) => StateKind::Vector(NONLINEAR_DIM),
            EnvModel::Arch(m) => StateKind::Vector(m.dim()),
        }
    }

    pub fn draw_mode(&self) -> DrawMode {
        match &self.model {
            EnvModel::Arch(_) => DrawMode::BurnInTrajectory,
            _ => DrawMode::ExactStationary,
        }
    }

    /// Closed-form (or exactly solved) value function.
    pub fn true_value(&self) -> Result<StateValueFn> {
        match &self.model {
            EnvModel::Tabular(t) => Ok(StateValueFn::Table(solve_exact(&t.model)?)),
            EnvModel::Lqr(m) => lqr_true_value(m),
            EnvModel::Nonlinear(m) => nonlinear_true_value(m),
            EnvModel::Arch(m) => arch_true_value(m),
        }
    }

    /// Deterministic reward `r(x)` at a vector state.
    pub fn reward_at(&self, x: &[f64]) -> f64 {
        match &self.model {
            EnvModel::Tabular(t) => t.model.reward()[x[0] as usize],
            EnvModel::Lqr(m) => m.reward(x),
            EnvModel::Nonlinear(m) => m.reward(x),
            EnvModel::Arch(m) => m.reward(x),
        }
    }

    /// One transition from vector state `x` using fresh noise from `rng`.
    pub fn step_from(&self, x: &[f64], rng: &mut Rng) -> Vec<f64> {
        let noise = self.noise_sampler.as_ref();
        match &self.model {
            EnvModel::Tabular(t) => vec![t.draw_next(x[0] as usize, rng) as f64],
            EnvModel::Lqr(m) => m.step(x, &noise.expect("noise sampler").draw(rng)),
            EnvModel::Nonlinear(m) => m.step(x, &noise.expect("noise sampler").draw(rng)).to_vec(),
            EnvModel::Arch(m) => m.step(x, &noise.expect("noise sampler").draw(rng)),
        }
    }

    /// `n` transitions `(x, r(x), x')` with `x` drawn from the stationary law
    /// (exactly, or along a burn-in trajectory for ARCH). Same seed, same data.
    pub fn sample_transitions(&self, n: usize, seed: u64) -> Result<Dataset> {
        if n == 0 {
            return Err(KbbError::EmptyInput);
        }
        let mut rng = rng_from_seed(seed);
        let (states, rewards, next_states) = match &self.model {
            EnvModel::Tabular(t) => {
                let mut xs = Vec::with_capacity(n);
                let mut xps = Vec::with_capacity(n);
                let mut rs = Vec::with_capacity(n);
                for _ in 0..n {
                    let x = t.draw_state(&mut rng);
                    let xp = t.draw_next(x, &mut rng);
                    xs.push(x);
                    xps.push(xp);
                    rs.push(t.model.reward()[x]);
                }
                (StateColumn::Indices(xs), rs, StateColumn::Indices(xps))
            }
            _ => {
                let dim = self.state_kind().width();
                let mut xs = Vec::with_capacity(n * dim);
                let mut xps = Vec::with_capacity(n * dim);
                let mut rs = Vec::with_capacity(n);
                let mut walker = self.stationary_walker(&mut rng);
                for _ in 0..n {
                    let x = walker.next_state(self, &mut rng);
                    let xp = self.step_from(&x, &mut rng);
                    rs.push(self.reward_at(&x));
                    xs.extend_from_slice(&x);
                    xps.extend_from_slice(&xp);
                    walker.observe(xp);
                }
                (
                    StateColumn::Points { dim, data: xs },
                    rs,
                    StateColumn::Points { dim, data: xps },
                )
            }
        };
        Ok(Dataset::from_columns(
            self.id.clone(),
            seed,
            self.draw_mode(),
            states,
            rewards,
            next_states,
        ))
    }

    /// `n` states from the stationary law, stored row-major with
    /// `state_kind().width()` coordinates each (an index is stored as `f64`).
    pub fn draw_states(&self, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = rng_from_seed(seed);
        match &self.model {
            EnvModel::Tabular(t) => (0..n).map(|_| t.draw_state(&mut rng) as f64).collect(),
            _ => {
                let mut out = Vec::with_capacity(n * self.state_kind().width());
                let mut walker = self.stationary_walker(&mut rng);
                for _ in 0..n {
                    let x = walker.next_state(self, &mut rng);
                    let xp = self.step_from(&x, &mut rng);
                    out.extend_from_slice(&x);
                    walker.observe(xp);
                }
                out
            }
        }
    }

    fn stationary_walker(&self, rng: &mut Rng) -> Walker {
        match &self.model {
            EnvModel::Arch(m) => {
                let mut x = vec![0.0; m.dim()];
                for _ in 0..ARCH_BURN_IN {
                    x = self.step_from(&x, rng);
                }
                Walker::Trajectory { current: x }
            }
            _ => Walker::Exact,
        }
    }

    /// Stationary covariance of the linear state (of `z` for the nonlinear
    /// model); `None` for tabular and ARCH models.
    pub fn stationary_cov(&self) -> Option<Result<DMatrix<f64>>> {
        match &self.model {
            EnvModel::Lqr(m) => Some(m.stationary_cov()),
            EnvModel::Nonlinear(m) => Some(m.inner().stationary_cov()),
            _ => None,
        }
    }
}

/// Source of successive stationary vector states.
enum Walker {
    Exact,
    /// Holds the state following the last retained sample.
    Trajectory {
        current: Vec<f64>,
    },
}

impl Walker {
    fn next_state(&mut self, env: &Env, rng: &mut Rng) -> Vec<f64> {
        match self {
            Walker::Exact => {
                let sampler = env.state_sampler.as_ref().expect("state sampler");
                let x = sampler.draw(rng);
                match &env.model {
                    EnvModel::Nonlinear(m) => m.to_x(&x).to_vec(),
                    _ => x,
                }
            }
            Walker::Trajectory { current } => {
                let mut x = std::mem::take(current);
                for _ in 1..ARCH_STRIDE {
                    x = env.step_from(&x, rng);
                }
                x
            }
        }
    }

    /// Records the successor of the last returned state.
    fn observe(&mut self, next: Vec<f64>) {
        if let Walker::Trajectory { current } = self {
            *current = next;
        }
    }
}
