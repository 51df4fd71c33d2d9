//! `kbb compare`: sample complexity of each algorithm, measured as the median
//! over seeds of the cumulative samples needed to bring the error down to a
//! fixed fraction of the initial error.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use kbb_core::{Algo, RunRecord, RunRow};
use serde_json::Value;

use crate::error::CliError;
use crate::run::{read_manifest, MANIFEST_FILE};

/// Target error fractions of the initial error, with display labels.
pub const FRACTIONS: [(f64, &str); 2] = [(0.5, "1/2"), (0.1, "1/10")];

pub const EXACT_DYNAMICS_NOTE: &str = "exact dynamics";

#[derive(Clone, Debug)]
pub struct LoadedRun {
    pub algo: Algo,
    pub seed: u64,
    pub initial_error: f64,
    pub rows: Vec<RunRow>,
}

impl LoadedRun {
    pub fn samples_to_reach(&self, fraction: f64) -> Option<u64> {
        let target = fraction * self.initial_error;
        self.rows.iter().find(|r| r.mu_error <= target).map(|r| r.cum_samples)
    }
}

#[derive(Clone, Debug)]
pub struct RunDir {
    pub path: PathBuf,
    pub label: String,
    pub manifest: Value,
    pub runs: Vec<LoadedRun>,
}

pub fn load_run_dir(path: &Path) -> Result<RunDir, CliError> {
    let manifest_path = path.join(MANIFEST_FILE);
    if !manifest_path.exists() {
        return Err(CliError::Input(format!(
            "{} has no {MANIFEST_FILE}; the run is incomplete or failed",
            path.display()
        )));
    }
    let manifest = read_manifest(&manifest_path)?;
    let entries = manifest["runs"]
        .as_array()
        .ok_or_else(|| CliError::Input(format!("{}: manifest lists no runs", path.display())))?;
    let mut runs = Vec::with_capacity(entries.len());
    for entry in entries {
        let malformed = || CliError::Input(format!("{}: malformed run entry {entry}", path.display()));
        let algo = entry["algo"].as_str().and_then(Algo::parse).ok_or_else(malformed)?;
        let seed = entry["seed"].as_u64().ok_or_else(malformed)?;
        let initial_error = entry["initial_error"].as_f64().ok_or_else(malformed)?;
        let csv = entry["csv"].as_str().ok_or_else(malformed)?;
        let text = fs::read_to_string(path.join(csv))
            .map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.join(csv).display())))?;
        let rows = RunRecord::rows_from_csv(&text).map_err(|e| CliError::Input(format!("{csv}: {e}")))?;
        runs.push(LoadedRun {
            algo,
            seed,
            initial_error,
            rows,
        });
    }
    let label = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string());
    Ok(RunDir {
        path: path.to_path_buf(),
        label,
        manifest,
        runs,
    })
}

/// Loads every directory and checks they describe the same environment and
/// evaluation settings. Repeated labels get a `#k` suffix.
pub fn load_compatible(paths: &[PathBuf]) -> Result<Vec<RunDir>, CliError> {
    if paths.is_empty() {
        return Err(CliError::Input("no run directories given".into()));
    }
    let mut dirs = paths.iter().map(|p| load_run_dir(p)).collect::<Result<Vec<_>, _>>()?;
    for k in 1..dirs.len() {
        for field in ["env", "eval"] {
            if dirs[k].manifest[field] != dirs[0].manifest[field] {
                return Err(CliError::Input(format!(
                    "mismatched manifests: `{field}` differs between {} and {}",
                    dirs[0].path.display(),
                    dirs[k].path.display()
                )));
            }
        }
        let taken = dirs[..k].iter().filter(|d| d.label == dirs[k].label).count();
        if taken > 0 {
            dirs[k].label = format!("{}#{}", dirs[k].label, taken + 1);
        }
    }
    check_initial_errors(&dirs)?;
    Ok(dirs)
}

/// Every run starts from the zero function, so runs sharing a seed must
/// report the same initial error.
fn check_initial_errors(dirs: &[RunDir]) -> Result<(), CliError> {
    let all: Vec<&LoadedRun> = dirs.iter().flat_map(|d| &d.runs).collect();
    for a in &all {
        for b in all.iter().filter(|b| b.seed == a.seed) {
            let scale = a.initial_error.abs().max(b.initial_error.abs()).max(f64::MIN_POSITIVE);
            if (a.initial_error - b.initial_error).abs() > 1e-12 * scale {
                return Err(CliError::Input(format!(
                    "initial errors disagree for seed {}: {} ({}) vs {} ({})",
                    a.seed, a.initial_error, a.algo, b.initial_error, b.algo
                )));
            }
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Cell {
    Samples(f64),
    NotReached,
}

impl Cell {
    pub fn samples(&self) -> Option<f64> {
        match self {
            Cell::Samples(s) => Some(*s),
            Cell::NotReached => None,
        }
    }

    fn render(&self) -> String {
        match self {
            Cell::Samples(s) if s.fract() == 0.0 => format!("{s:.0}"),
            Cell::Samples(s) => format!("{s:.1}"),
            Cell::NotReached => "not reached".into(),
        }
    }
}

/// Median with unreached seeds sorted last; unreached if the median lands
/// on one.
pub fn median_samples(values: &[Option<u64>]) -> Cell {
    let mut reached: Vec<u64> = values.iter().flatten().copied().collect();
    reached.sort_unstable();
    let n = values.len();
    if n == 0 {
        return Cell::NotReached;
    }
    let hi = n / 2;
    let lo = if n.is_multiple_of(2) { hi - 1 } else { hi };
    if hi >= reached.len() {
        return Cell::NotReached;
    }
    Cell::Samples((reached[lo] as f64 + reached[hi] as f64) / 2.0)
}

#[derive(Clone, Debug)]
pub struct ReportRow {
    pub run: String,
    pub algo: Algo,
    pub n_seeds: usize,
    pub cells: [Cell; 2],
    /// This row over the same algorithm in the first run directory.
    pub ratios: [Option<f64>; 2],
}

#[derive(Clone, Debug)]
pub struct ComparisonReport {
    pub rows: Vec<ReportRow>,
}

/// Identical cells, unreached ones included, compare as 1.
fn ratio(value: Cell, baseline: Cell) -> Option<f64> {
    if value == baseline {
        return Some(1.0);
    }
    match (value.samples()?, baseline.samples()?) {
        (_, 0.0) => None,
        (v, b) => Some(v / b),
    }
}

pub fn compare(dirs: &[RunDir]) -> ComparisonReport {
    let mut rows: Vec<ReportRow> = Vec::new();
    for dir in dirs {
        let mut algos: Vec<Algo> = Vec::new();
        for run in &dir.runs {
            if !algos.contains(&run.algo) {
                algos.push(run.algo);
            }
        }
        for algo in algos {
            let runs: Vec<&LoadedRun> = dir.runs.iter().filter(|r| r.algo == algo).collect();
            let cells = FRACTIONS.map(|(f, _)| {
                let per_seed: Vec<Option<u64>> = runs.iter().map(|r| r.samples_to_reach(f)).collect();
                median_samples(&per_seed)
            });
            rows.push(ReportRow {
                run: dir.label.clone(),
                algo,
                n_seeds: runs.len(),
                cells,
                ratios: [None, None],
            });
        }
    }
    let first = dirs.first().map(|d| d.label.clone()).unwrap_or_default();
    let baselines: Vec<(Algo, [Cell; 2])> = rows
        .iter()
        .filter(|r| r.run == first)
        .map(|r| (r.algo, r.cells))
        .collect();
    for row in &mut rows {
        if let Some((_, base)) = baselines.iter().find(|(a, _)| *a == row.algo) {
            row.ratios = [ratio(row.cells[0], base[0]), ratio(row.cells[1], base[1])];
        }
    }
    ComparisonReport { rows }
}

fn fmt_ratio(r: Option<f64>) -> String {
    r.map(|v| format!("{v:.3}")).unwrap_or_else(|| "n/a".into())
}

impl ComparisonReport {
    /// FVI samples over KBB samples for each run holding both algorithms.
    pub fn kbb_advantage(&self) -> Vec<(String, [Option<f64>; 2])> {
        let mut out = Vec::new();
        for row in self.rows.iter().filter(|r| r.algo == Algo::Kbb) {
            if let Some(fvi) = self.rows.iter().find(|r| r.run == row.run && r.algo == Algo::Fvi) {
                let ratios = [0, 1].map(|k| match (fvi.cells[k].samples(), row.cells[k].samples()) {
                    (Some(f), Some(k)) if k > 0.0 => Some(f / k),
                    _ => None,
                });
                out.push((row.run.clone(), ratios));
            }
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("run,algo,n_seeds,samples_half,samples_tenth,ratio_half,ratio_tenth,note\n");
        for r in &self.rows {
            let cell = |c: &Cell| match c {
                Cell::Samples(s) => format!("{s}"),
                Cell::NotReached => "not_reached".into(),
            };
            let ratio = |x: Option<f64>| x.map(|v| format!("{v}")).unwrap_or_default();
            let note = if r.algo == Algo::Vi { EXACT_DYNAMICS_NOTE } else { "" };
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.run,
                r.algo,
                r.n_seeds,
                cell(&r.cells[0]),
                cell(&r.cells[1]),
                ratio(r.ratios[0]),
                ratio(r.ratios[1]),
                note
            );
        }
        out
    }

    pub fn to_markdown(&self) -> String {
        let (h0, h1) = (FRACTIONS[0].1, FRACTIONS[1].1);
        let mut out = format!(
            "| run | algo | seeds | samples to {h0} | samples to {h1} | ratio {h0} | ratio {h1} |\n\
             |---|---|---|---|---|---|---|\n"
        );
        let mut any_vi = false;
        for r in &self.rows {
            let mark = if r.algo == Algo::Vi {
                any_vi = true;
                " [1]"
            } else {
                ""
            };
            let _ = writeln!(
                out,
                "| {} | {} | {} | {}{mark} | {}{mark} | {} | {} |",
                r.run,
                r.algo,
                r.n_seeds,
                r.cells[0].render(),
                r.cells[1].render(),
                fmt_ratio(r.ratios[0]),
                fmt_ratio(r.ratios[1])
            );
        }
        out.push_str("\nRatios are relative to the same algorithm in the first run directory.\n");
        if any_vi {
            let _ = writeln!(out, "[1] {EXACT_DYNAMICS_NOTE}: value iteration draws no samples.");
        }
        for (run, r) in self.kbb_advantage() {
            let _ = writeln!(
                out,
                "{run}: FVI/KBB sample ratio {} at {h0}, {} at {h1}",
                fmt_ratio(r[0]),
                fmt_ratio(r[1])
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(algo: Algo, seed: u64, errs: &[f64], step: u64) -> LoadedRun {
        LoadedRun {
            algo,
            seed,
            initial_error: 1.0,
            rows: errs
                .iter()
                .enumerate()
                .map(|(i, &e)| RunRow {
                    iter: i + 1,
                    cum_samples: step * (i as u64 + 1),
                    mu_error: e,
                    ridge_used: 0.0,
                    wall_ms: 0.0,
                })
                .collect(),
        }
    }

    fn dir(label: &str, runs: Vec<LoadedRun>) -> RunDir {
        RunDir {
            path: PathBuf::from(label),
            label: label.into(),
            manifest: Value::Null,
            runs,
        }
    }

    #[test]
    fn median_handles_unreached_and_even_counts() {
        assert_eq!(median_samples(&[Some(3), Some(1), Some(2)]), Cell::Samples(2.0));
        assert_eq!(median_samples(&[Some(4), Some(2)]), Cell::Samples(3.0));
        assert_eq!(median_samples(&[Some(4), None, Some(2)]), Cell::Samples(4.0));
        assert_eq!(median_samples(&[Some(4), None]), Cell::NotReached);
        assert_eq!(median_samples(&[]), Cell::NotReached);
    }

    #[test]
    fn self_comparison_has_unit_ratios() {
        let runs = vec![
            run(Algo::Vi, 0, &[0.9, 0.4, 0.05], 0),
            run(Algo::Kbb, 0, &[0.6, 0.3, 0.08], 100),
            run(Algo::Fvi, 0, &[0.8, 0.45, 0.2], 100),
        ];
        let report = compare(&[dir("a", runs.clone()), dir("a#2", runs)]);
        for r in &report.rows {
            assert_eq!(r.ratios, [Some(1.0), Some(1.0)], "{r:?}");
        }
        let vi = &report.rows[0];
        assert_eq!(vi.cells, [Cell::Samples(0.0), Cell::Samples(0.0)]);
        assert!(report.to_markdown().contains(EXACT_DYNAMICS_NOTE));
        assert!(report.to_csv().contains("VI,1,0,0,1,1,exact dynamics"));
        let kbb = &report.rows[1];
        assert_eq!(kbb.cells, [Cell::Samples(200.0), Cell::Samples(300.0)]);
        assert_eq!(report.rows[2].cells[1], Cell::NotReached);
        assert_eq!(report.kbb_advantage()[0].1, [Some(1.0), None]);
    }
}
