//! `kbb run`: executes every (algorithm, seed) pair of a config and persists
//! one CSV and one metadata sidecar per run. `manifest.json` is written last;
//! a directory without it is incomplete.

use std::fs;
use std::path::{Path, PathBuf};

use kbb_core::envs::{ARCH_BURN_IN, ARCH_STRIDE};
use kbb_core::{Algo, Env, ErrorMeter, KbbError, RegressorConfig, RunRecord, SampledRunSpec, StateKind};
use rayon::prelude::*;
use serde_json::{json, Map, Value};

use crate::config::{EnvSpec, ExperimentConfig};
use crate::error::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const FAILURE_MARKER: &str = "FAILED";
pub const MANIFEST_SCHEMA: &str = "kbb-run-manifest/1";

pub fn csv_name(algo: Algo, seed: u64) -> String {
    format!("{}_seed{seed}.csv", algo.as_str())
}

pub fn meta_name(algo: Algo, seed: u64) -> String {
    format!("{}_seed{seed}.meta.json", algo.as_str())
}

#[derive(Debug)]
pub struct RunSummary {
    pub dir: PathBuf,
    /// In config order: algorithms outer, seeds inner.
    pub records: Vec<(Algo, u64, RunRecord)>,
}

/// Runs the experiment into `dir`. `threads = None` uses every core.
pub fn run_experiment(config: &ExperimentConfig, dir: &Path, threads: Option<usize>) -> Result<RunSummary, CliError> {
    fs::create_dir_all(dir)?;
    for stale in [MANIFEST_FILE, FAILURE_MARKER] {
        let path = dir.join(stale);
        if path.exists() {
            fs::remove_file(path)?;
        }
    }

    let env = config
        .env
        .build()
        .map_err(|e| CliError::Runtime(format!("building environment: {e}")))?;
    let truth = env
        .true_value()
        .map_err(|e| CliError::Runtime(format!("computing the true value function: {e}")))?;
    let meter = ErrorMeter::new(&env, &truth, config.eval.n_eval, config.eval.seed)
        .map_err(|e| CliError::Runtime(format!("building the error meter: {e}")))?;
    let hash = config.hash();

    let jobs: Vec<(Algo, u64)> = config
        .algos
        .iter()
        .flat_map(|&a| config.seeds.iter().map(move |&s| (a, s)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let outcomes: Vec<Result<RunRecord, String>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(algo, seed)| execute(config, &env, &meter, &hash, dir, algo, seed))
            .collect()
    });

    let mut records = Vec::with_capacity(jobs.len());
    let mut failures = Vec::new();
    for (&(algo, seed), outcome) in jobs.iter().zip(outcomes) {
        match outcome {
            Ok(rec) => records.push((algo, seed, rec)),
            Err(msg) => failures.push(format!("{} seed {seed}: {msg}", algo.as_str())),
        }
    }
    if !failures.is_empty() {
        fs::write(dir.join(FAILURE_MARKER), failures.join("\n") + "\n")?;
        return Err(CliError::Runtime(failures.join("; ")));
    }

    let manifest = manifest_json(config, &env, &hash, &records);
    write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    Ok(RunSummary {
        dir: dir.to_path_buf(),
        records,
    })
}

/// One run; writes its CSV and sidecar, including for aborted runs.
fn execute(
    config: &ExperimentConfig,
    env: &Env,
    meter: &ErrorMeter,
    hash: &str,
    dir: &Path,
    algo: Algo,
    seed: u64,
) -> Result<RunRecord, String> {
    let spec = SampledRunSpec {
        regressor: config.regressor,
        first_regressor: config.first_regressor,
        budget: config.budget,
        seed,
    };
    let (record, failure) = match kbb_core::kbb::run_algo(algo, env, &spec, meter) {
        Ok(rec) => (Some(rec), None),
        Err(KbbError::Aborted { record, reason }) => (Some(*record), Some(reason)),
        Err(e) => (None, Some(e.to_string())),
    };
    if let Some(rec) = &record {
        let rec = rec.clone().with_config_hash(hash);
        fs::write(dir.join(csv_name(algo, seed)), rec.to_csv()).map_err(|e| e.to_string())?;
        let meta = meta_json(config, env, &rec, seed, failure.as_deref());
        write_json(&dir.join(meta_name(algo, seed)), &meta).map_err(|e| e.to_string())?;
    }
    match (record, failure) {
        (Some(rec), None) => Ok(rec.with_config_hash(hash)),
        (_, Some(msg)) => Err(msg),
        (None, None) => unreachable!("a run yields a record or a failure"),
    }
}

fn write_json(path: &Path, value: &Value) -> std::io::Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("JSON values always serialize");
    text.push('\n');
    fs::write(path, text)
}

/// Environment description shared by the manifest and every sidecar;
/// `compare` and `plot` require it to match across run directories.
pub fn env_json(spec: &EnvSpec, env: &Env) -> Value {
    let mut params = Map::new();
    for (k, v) in spec.params() {
        params.insert(k.to_string(), serde_json::from_str(&v).unwrap_or(Value::String(v)));
    }
    let state_dim = match env.state_kind() {
        StateKind::Index => Value::Null,
        StateKind::Vector(d) => json!(d),
    };
    let mut out = json!({
        "id": spec.id(),
        "kind": spec.kind(),
        "params": params,
        "state_dim": state_dim,
        "draw_mode": env.draw_mode().as_str(),
    });
    let constants = match spec {
        EnvSpec::Lqr { .. } | EnvSpec::Nonlinear { .. } => Some(json!({
            "closed_loop_radius": kbb_core::envs::STABLE_RADIUS,
            "noise_scale": kbb_core::envs::NOISE_SCALE,
        })),
        EnvSpec::Arch { .. } => Some(json!({
            "closed_loop_radius": kbb_core::envs::STABLE_RADIUS,
            "moment_radius": kbb_core::envs::MOMENT_RADIUS,
            "noise_scale": kbb_core::envs::NOISE_SCALE,
            "burn_in": ARCH_BURN_IN,
            "stride": ARCH_STRIDE,
        })),
        _ => None,
    };
    if let Some(c) = constants {
        out["constants"] = c;
    }
    out
}

pub fn eval_json(config: &ExperimentConfig) -> Value {
    json!({ "n_eval": config.eval.n_eval, "seed": config.eval.seed })
}

fn regressor_json(r: &RegressorConfig) -> Value {
    json!({
        "kind": r.kind.as_str(),
        "n_trees": r.n_trees,
        "max_depth": r.max_depth,
        "learning_rate": r.learning_rate,
        "min_leaf": r.min_leaf,
        "subsample": r.subsample,
    })
}

fn meta_json(config: &ExperimentConfig, env: &Env, rec: &RunRecord, seed: u64, failure: Option<&str>) -> Value {
    let b = &config.budget;
    json!({
        "algo": rec.algo.as_str(),
        "seed": seed,
        "seeds": rec.seeds,
        "status": if failure.is_some() { "aborted" } else { "ok" },
        "failure": failure,
        "config_hash": rec.config_hash,
        "version": kbb_core::VERSION,
        "csv": csv_name(rec.algo, seed),
        "rows": rec.rows.len(),
        "initial_error": rec.initial_error,
        "final_error": rec.final_error(),
        "rejected_iters": rec.rejected_iters,
        "env": env_json(&config.env, env),
        "eval": eval_json(config),
        "budget": {
            "n_per_iter": b.n_per_iter,
            "first_iter_multiplier": b.first_iter_multiplier,
            "max_iters": b.max_iters,
            "shared_data": b.shared_data,
        },
        "regressor": regressor_json(&config.regressor),
        "first_regressor": config.first_regressor.as_ref().map(regressor_json),
    })
}

fn manifest_json(config: &ExperimentConfig, env: &Env, hash: &str, records: &[(Algo, u64, RunRecord)]) -> Value {
    let runs: Vec<Value> = records
        .iter()
        .map(|(algo, seed, rec)| {
            json!({
                "algo": algo.as_str(),
                "seed": seed,
                "csv": csv_name(*algo, *seed),
                "meta": meta_name(*algo, *seed),
                "initial_error": rec.initial_error,
                "final_error": rec.final_error(),
            })
        })
        .collect();
    json!({
        "schema": MANIFEST_SCHEMA,
        "version": kbb_core::VERSION,
        "config_hash": hash,
        "config_text": config.canonical_text(),
        "env": env_json(&config.env, env),
        "eval": eval_json(config),
        "algos": config.algos.iter().map(|a| a.as_str()).collect::<Vec<_>>(),
        "seeds": config.seeds,
        "runs": runs,
    })
}

/// Reads the canonical config text back out of a manifest.
pub fn config_from_manifest(path: &Path) -> Result<ExperimentConfig, CliError> {
    let manifest = read_manifest(path)?;
    let text = manifest["config_text"]
        .as_str()
        .ok_or_else(|| CliError::Input(format!("{} has no config_text", path.display())))?;
    Ok(ExperimentConfig::parse(text)?)
}

pub fn read_manifest(path: &Path) -> Result<Value, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
    let value: Value =
        serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{} is not JSON: {e}", path.display())))?;
    if value["schema"] != MANIFEST_SCHEMA {
        return Err(CliError::Input(format!(
            "{} is not a run manifest (expected schema {MANIFEST_SCHEMA})",
            path.display()
        )));
    }
    Ok(value)
}
