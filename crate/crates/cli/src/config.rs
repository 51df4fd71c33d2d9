//! Experiment configuration files.
//!
//! Grammar, one entry per line:
//!
//! ```text
//! # comment                 (also allowed after a value)
//! key = value               top-level key
//! section.key = value       dotted key
//! [section]                 prefixes every following key with `section.`
//! ```
//!
//! Keys may appear at most once. Unknown keys are errors.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use kbb_core::envs::{
    make_arch, make_circular_walk, make_lqr, make_nonlinear, make_random_reversible, make_random_tabular,
};
use kbb_core::{Algo, Env, IterationBudget, RegressorConfig, RegressorKind};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const DEFAULT_OUT_DIR: &str = "runs";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfigError {
    pub key: String,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config key `{}`: {}", self.key, self.message)
    }
}

impl std::error::Error for ConfigError {}

fn bad(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError {
        key: key.to_string(),
        message: message.into(),
    }
}

/// Benchmark environment and its constructor arguments.
#[derive(Clone, Debug, PartialEq)]
pub enum EnvSpec {
    RandomTabular { n: usize, gamma: f64, seed: u64 },
    CircularWalk { n: usize, gamma: f64, seed: u64 },
    RandomReversible { n: usize, gamma: f64, seed: u64 },
    Lqr { d: usize, m: usize, gamma: f64, seed: u64 },
    Nonlinear { gamma: f64, seed: u64 },
    Arch { d: usize, q: f64, gamma: f64, seed: u64 },
}

pub const ENV_KINDS: [&str; 6] = [
    "random_tabular",
    "circular_walk",
    "random_reversible",
    "lqr",
    "nonlinear",
    "arch",
];

impl EnvSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            EnvSpec::RandomTabular { .. } => "random_tabular",
            EnvSpec::CircularWalk { .. } => "circular_walk",
            EnvSpec::RandomReversible { .. } => "random_reversible",
            EnvSpec::Lqr { .. } => "lqr",
            EnvSpec::Nonlinear { .. } => "nonlinear",
            EnvSpec::Arch { .. } => "arch",
        }
    }

    pub fn is_tabular(&self) -> bool {
        matches!(
            self,
            EnvSpec::RandomTabular { .. } | EnvSpec::CircularWalk { .. } | EnvSpec::RandomReversible { .. }
        )
    }

    /// Constructor arguments in a fixed order, formatted so they parse back.
    pub fn params(&self) -> Vec<(&'static str, String)> {
        match *self {
            EnvSpec::RandomTabular { n, gamma, seed }
            | EnvSpec::CircularWalk { n, gamma, seed }
            | EnvSpec::RandomReversible { n, gamma, seed } => {
                vec![
                    ("n", n.to_string()),
                    ("gamma", gamma.to_string()),
                    ("seed", seed.to_string()),
                ]
            }
            EnvSpec::Lqr { d, m, gamma, seed } => vec![
                ("d", d.to_string()),
                ("m", m.to_string()),
                ("gamma", gamma.to_string()),
                ("seed", seed.to_string()),
            ],
            EnvSpec::Nonlinear { gamma, seed } => vec![("gamma", gamma.to_string()), ("seed", seed.to_string())],
            EnvSpec::Arch { d, q, gamma, seed } => vec![
                ("d", d.to_string()),
                ("q", q.to_string()),
                ("gamma", gamma.to_string()),
                ("seed", seed.to_string()),
            ],
        }
    }

    /// Stable identifier such as `circular_walk(n=200,gamma=0.9,seed=1)`.
    pub fn id(&self) -> String {
        let args: Vec<String> = self.params().iter().map(|(k, v)| format!("{k}={v}")).collect();
        format!("{}({})", self.kind(), args.join(","))
    }

    pub fn build(&self) -> kbb_core::Result<Env> {
        let id = self.id();
        match *self {
            EnvSpec::RandomTabular { n, gamma, seed } => Env::tabular(id, make_random_tabular(n, gamma, seed)?),
            EnvSpec::CircularWalk { n, gamma, seed } => Env::tabular(id, make_circular_walk(n, gamma, seed)?),
            EnvSpec::RandomReversible { n, gamma, seed } => Env::tabular(id, make_random_reversible(n, gamma, seed)?),
            EnvSpec::Lqr { d, m, gamma, seed } => Env::lqr(id, make_lqr(d, m, gamma, seed)?),
            EnvSpec::Nonlinear { gamma, seed } => Env::nonlinear(id, make_nonlinear(gamma, seed)?),
            EnvSpec::Arch { d, q, gamma, seed } => Env::arch(id, make_arch(d, q, gamma, seed)?),
        }
    }
}

/// Error-measurement settings shared by every run of an experiment.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EvalSpec {
    /// Monte Carlo states for continuous environments; ignored for tabular ones.
    pub n_eval: usize,
    pub seed: u64,
}

impl Default for EvalSpec {
    fn default() -> Self {
        Self {
            n_eval: 100_000,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub env: EnvSpec,
    pub algos: Vec<Algo>,
    pub budget: IterationBudget,
    pub regressor: RegressorConfig,
    pub first_regressor: Option<RegressorConfig>,
    pub seeds: Vec<u64>,
    pub eval: EvalSpec,
    pub out_dir: PathBuf,
}

struct Entries {
    map: BTreeMap<String, String>,
}

impl Entries {
    fn take(&mut self, key: &str) -> Option<String> {
        self.map.remove(key)
    }

    fn take_parsed<T: FromStr>(&mut self, key: &str, what: &str) -> Result<Option<T>, ConfigError> {
        match self.take(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse()
                .map(Some)
                .map_err(|_| bad(key, format!("expected {what}, found `{raw}`"))),
        }
    }

    fn parsed_or<T: FromStr>(&mut self, key: &str, what: &str, default: T) -> Result<T, ConfigError> {
        Ok(self.take_parsed(key, what)?.unwrap_or(default))
    }

    fn has_prefix(&self, prefix: &str) -> bool {
        self.map.keys().any(|k| k.starts_with(prefix))
    }
}

fn parse_bool(key: &str, raw: &str) -> Result<bool, ConfigError> {
    match raw {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(bad(key, format!("expected true or false, found `{raw}`"))),
    }
}

fn split_list(raw: &str) -> impl Iterator<Item = &str> {
    raw.split(',').map(str::trim).filter(|s| !s.is_empty())
}

fn read_entries(text: &str) -> Result<Entries, ConfigError> {
    let mut map = BTreeMap::new();
    let mut section = String::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let lineno = idx + 1;
        if let Some(rest) = line.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .map(str::trim)
                .filter(|n| !n.is_empty() && !n.contains(char::is_whitespace))
                .ok_or_else(|| bad(line, format!("malformed section header on line {lineno}")))?;
            section = name.to_string();
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| bad(line, format!("line {lineno} is not `key = value`")))?;
        let key = key.trim();
        if key.is_empty() || key.contains(char::is_whitespace) {
            return Err(bad(key, format!("malformed key on line {lineno}")));
        }
        let full = if section.is_empty() {
            key.to_string()
        } else {
            format!("{section}.{key}")
        };
        if map.insert(full.clone(), value.trim().to_string()).is_some() {
            return Err(bad(&full, format!("duplicate key on line {lineno}")));
        }
    }
    Ok(Entries { map })
}

fn parse_env(e: &mut Entries) -> Result<EnvSpec, ConfigError> {
    let kind = e.take("env.kind").ok_or_else(|| bad("env.kind", "missing"))?;
    let gamma = e.parsed_or("env.gamma", "a real number", 0.9)?;
    let seed = e.parsed_or("env.seed", "an unsigned integer", 0u64)?;
    let size = |e: &mut Entries, key: &str, default: usize| e.parsed_or(key, "a positive integer", default);
    Ok(match kind.as_str() {
        "random_tabular" => EnvSpec::RandomTabular {
            n: size(e, "env.n", 300)?,
            gamma,
            seed,
        },
        "circular_walk" => EnvSpec::CircularWalk {
            n: size(e, "env.n", 200)?,
            gamma,
            seed,
        },
        "random_reversible" => EnvSpec::RandomReversible {
            n: size(e, "env.n", 50)?,
            gamma,
            seed,
        },
        "lqr" => EnvSpec::Lqr {
            d: size(e, "env.d", 5)?,
            m: size(e, "env.m", 3)?,
            gamma,
            seed,
        },
        "nonlinear" => EnvSpec::Nonlinear { gamma, seed },
        "arch" => EnvSpec::Arch {
            d: size(e, "env.d", 5)?,
            q: e.parsed_or("env.q", "a real number", 0.5)?,
            gamma,
            seed,
        },
        other => {
            return Err(bad(
                "env.kind",
                format!("unknown env kind `{other}` (expected one of {})", ENV_KINDS.join(", ")),
            ))
        }
    })
}

fn parse_regressor(e: &mut Entries, prefix: &str, base: RegressorConfig) -> Result<RegressorConfig, ConfigError> {
    let key = |name: &str| format!("{prefix}.{name}");
    let mut config = base;
    if let Some(raw) = e.take(&key("kind")) {
        config.kind =
            RegressorKind::parse(&raw).ok_or_else(|| bad(&key("kind"), format!("unknown regressor kind `{raw}`")))?;
    }
    config.n_trees = e.parsed_or(&key("n_trees"), "a positive integer", config.n_trees)?;
    config.max_depth = e.parsed_or(&key("max_depth"), "a positive integer", config.max_depth)?;
    config.learning_rate = e.parsed_or(&key("learning_rate"), "a real number", config.learning_rate)?;
    config.min_leaf = e.parsed_or(&key("min_leaf"), "a positive integer", config.min_leaf)?;
    config.subsample = e.parsed_or(&key("subsample"), "a real number", config.subsample)?;
    config.validate().map_err(|err| bad(prefix, err.to_string()))?;
    Ok(config)
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut e = read_entries(text)?;
        let env = parse_env(&mut e)?;

        let algos_raw = e.take("algos").ok_or_else(|| bad("algos", "missing"))?;
        let mut algos = Vec::new();
        for name in split_list(&algos_raw) {
            let algo = Algo::parse(name).ok_or_else(|| bad("algos", format!("unknown algorithm `{name}`")))?;
            if !algos.contains(&algo) {
                algos.push(algo);
            }
        }
        if algos.is_empty() {
            return Err(bad("algos", "at least one algorithm is required"));
        }

        let seeds_raw = e.take("seeds").ok_or_else(|| bad("seeds", "missing"))?;
        let seeds = split_list(&seeds_raw)
            .map(|s| s.parse::<u64>().map_err(|_| bad("seeds", format!("bad seed `{s}`"))))
            .collect::<Result<Vec<_>, _>>()?;
        if seeds.is_empty() {
            return Err(bad("seeds", "at least one seed is required"));
        }

        let default = IterationBudget::default();
        let shared_data = match e.take("budget.shared_data") {
            Some(raw) => parse_bool("budget.shared_data", &raw)?,
            None => default.shared_data,
        };
        let budget = IterationBudget {
            n_per_iter: e.parsed_or("budget.n_per_iter", "a positive integer", default.n_per_iter)?,
            first_iter_multiplier: e.parsed_or(
                "budget.first_iter_multiplier",
                "a positive integer",
                default.first_iter_multiplier,
            )?,
            max_iters: e.parsed_or("budget.max_iters", "a positive integer", default.max_iters)?,
            shared_data,
        };
        budget.validate().map_err(|err| bad("budget", err.to_string()))?;

        let regressor = parse_regressor(&mut e, "regressor", RegressorConfig::default())?;
        let first_regressor = if e.has_prefix("first_regressor.") {
            Some(parse_regressor(&mut e, "first_regressor", regressor)?)
        } else {
            None
        };

        let eval_default = EvalSpec::default();
        let eval = EvalSpec {
            n_eval: e.parsed_or("eval.n_eval", "a positive integer", eval_default.n_eval)?,
            seed: e.parsed_or("eval.seed", "an unsigned integer", eval_default.seed)?,
        };
        if eval.n_eval == 0 && !env.is_tabular() {
            return Err(bad("eval.n_eval", "must be positive for continuous environments"));
        }

        let out_dir = PathBuf::from(e.take("out_dir").unwrap_or_else(|| DEFAULT_OUT_DIR.to_string()));

        if let Some(key) = e.map.keys().next() {
            let hint = if key.starts_with("env.") {
                format!(" for env kind {}", env.kind())
            } else {
                String::new()
            };
            return Err(bad(key, format!("unknown key{hint}")));
        }

        Ok(Self {
            env,
            algos,
            budget,
            regressor,
            first_regressor,
            seeds,
            eval,
            out_dir,
        })
    }

    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|err| CliError::Input(format!("cannot read {}: {err}", path.display())))?;
        Ok(Self::parse(&text)?)
    }

    /// Every resolved setting except `out_dir`, in the config grammar.
    /// Parsing this text yields the same experiment.
    pub fn canonical_text(&self) -> String {
        let mut out = String::new();
        let algos: Vec<&str> = self.algos.iter().map(|a| a.as_str()).collect();
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        let _ = writeln!(out, "algos = {}", algos.join(","));
        let _ = writeln!(out, "seeds = {}", seeds.join(","));
        let _ = writeln!(out, "\n[env]\nkind = {}", self.env.kind());
        for (k, v) in self.env.params() {
            let _ = writeln!(out, "{k} = {v}");
        }
        let b = &self.budget;
        let _ = writeln!(
            out,
            "\n[budget]\nn_per_iter = {}\nfirst_iter_multiplier = {}\nmax_iters = {}\nshared_data = {}",
            b.n_per_iter, b.first_iter_multiplier, b.max_iters, b.shared_data
        );
        write_regressor(&mut out, "regressor", &self.regressor);
        if let Some(first) = &self.first_regressor {
            write_regressor(&mut out, "first_regressor", first);
        }
        let _ = writeln!(
            out,
            "\n[eval]\nn_eval = {}\nseed = {}",
            self.eval.n_eval, self.eval.seed
        );
        out
    }

    /// Hex SHA-256 of [`ExperimentConfig::canonical_text`].
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_text().as_bytes()))
    }
}

fn write_regressor(out: &mut String, section: &str, r: &RegressorConfig) {
    let _ = writeln!(
        out,
        "\n[{section}]\nkind = {}\nn_trees = {}\nmax_depth = {}\nlearning_rate = {}\nmin_leaf = {}\nsubsample = {}",
        r.kind.as_str(),
        r.n_trees,
        r.max_depth,
        r.learning_rate,
        r.min_leaf,
        r.subsample
    );
}
