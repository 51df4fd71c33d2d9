//! Policy evaluation for Markov reward processes in general state spaces.
//!
//! The crate provides three evaluation algorithms that share one set of
//! benchmark environments and one error metric:
//!
//! - exact value iteration ([`kbb::run_vi`]), which needs the model,
//! - fitted value iteration ([`kbb::run_fvi`]), which regresses sampled
//!   Bellman backups,
//! - Krylov-Bellman boosting ([`kbb::run_kbb`]), which regresses sampled
//!   Bellman residuals, appends each fit to a growing basis and re-solves an
//!   LSTD system over that basis every iteration.
//!
//! [`diagnostics`] holds the exact tabular oracles (Krylov subspaces, the
//! discount operator `Q = I - gamma P`, restricted spectral values) used to
//! check the structural properties of the boosting iteration.

// `!(x >= 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod blob;
pub mod diagnostics;
pub mod envs;
pub mod error;
pub mod kbb;
mod linalg;
pub mod lstd;
pub mod mrp;
pub mod regress;
pub mod rng;
pub mod value;

pub use envs::{ArchModel, Dataset, DrawMode, Env, EnvModel, LqrModel, NonlinearModel, TabularEnv, TransitionSample};
pub use error::{KbbError, Result};
pub use kbb::{Algo, ErrorMeter, IterationBudget, RunRecord, RunRow, SampledRunSpec};
pub use lstd::LstdSolution;
pub use mrp::{Distribution, TabularModel};
pub use regress::{FittedFunction, RegressionPair, RegressorConfig, RegressorKind};
pub use value::{BasisFn, BasisSet, CoordMap, StateKind, StatePoint, StateRef, StateValueFn};

/// Version string written into run metadata.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
