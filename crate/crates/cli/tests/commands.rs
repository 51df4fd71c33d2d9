use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use kbb_cli::plot::log_error;
use kbb_core::diagnostics::{restricted_spectral_values, QOperator};
use kbb_core::envs::make_circular_walk;
use kbb_core::{BasisSet, RunRecord};

fn kbb(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_kbb"));
    cmd.args(args).env_remove("KBB_OUT_DIR").env_remove("KBB_THREADS");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("kbb binary runs")
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path.to_string_lossy().into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn minimal(out: &Path) -> String {
    format!(
        "algos = VI\nseeds = 0\nout_dir = {}\n[env]\nkind = circular_walk\nn = 50\n[budget]\nmax_iters = 5\n",
        out.display()
    )
}

/// CSV text with the `wall_ms` column removed.
fn without_timing(csv: &str) -> String {
    csv.lines()
        .map(|l| l.rsplit_once(',').map_or(l, |(head, _)| head))
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn unknown_env_kind_exits_with_code_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "bad.cfg",
        "algos = VI\nseeds = 0\nenv.kind = moebius_strip\n",
    );
    let out = kbb(&["run", &cfg], &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("moebius_strip"), "{}", stderr(&out));

    let cfg = write_config(
        tmp.path(),
        "bad2.cfg",
        &format!("colour = red\n{}", minimal(tmp.path())),
    );
    let out = kbb(&["run", &cfg], &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("colour"));
}

#[test]
fn minimal_config_writes_one_csv_and_a_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let run_dir = tmp.path().join("run");
    let cfg = write_config(tmp.path(), "min.cfg", &minimal(&run_dir));
    let out = kbb(&["run", &cfg], &[("KBB_THREADS", "2")]);
    assert!(out.status.success(), "{}", stderr(&out));

    let mut files: Vec<String> = fs::read_dir(&run_dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    files.sort();
    assert_eq!(files, ["VI_seed0.csv", "VI_seed0.meta.json", "manifest.json"]);
    let rows = RunRecord::rows_from_csv(&fs::read_to_string(run_dir.join("VI_seed0.csv")).unwrap()).unwrap();
    assert_eq!(rows.len(), 5);
    assert!(rows.iter().all(|r| r.cum_samples == 0));

    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(run_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["env"]["kind"], "circular_walk");
    assert_eq!(manifest["runs"].as_array().unwrap().len(), 1);
}

#[test]
fn out_dir_override_rerun_and_manifest_replay_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let body = "algos = VI, FVI, KBB\nseeds = 1, 2\n[env]\nkind = circular_walk\nn = 40\n\
                [budget]\nn_per_iter = 800\nmax_iters = 4\n[regressor]\nkind = tabular_mean\n";
    let cfg = write_config(tmp.path(), "det.cfg", body);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let c = tmp.path().join("c");
    assert!(kbb(&["run", &cfg], &[("KBB_OUT_DIR", a.to_str().unwrap())])
        .status
        .success());
    assert!(kbb(
        &["run", &cfg],
        &[("KBB_OUT_DIR", b.to_str().unwrap()), ("KBB_THREADS", "1")]
    )
    .status
    .success());
    let manifest = a.join("manifest.json");
    assert!(kbb(
        &["run", manifest.to_str().unwrap(), "--out-dir", c.to_str().unwrap()],
        &[]
    )
    .status
    .success());
    for algo in ["VI", "FVI", "KBB"] {
        for seed in [1, 2] {
            let name = format!("{algo}_seed{seed}.csv");
            let reference = without_timing(&fs::read_to_string(a.join(&name)).unwrap());
            for other in [&b, &c] {
                assert_eq!(
                    reference,
                    without_timing(&fs::read_to_string(other.join(&name)).unwrap()),
                    "{name}"
                );
            }
            let meta = format!("{algo}_seed{seed}.meta.json");
            assert_eq!(fs::read(a.join(&meta)).unwrap(), fs::read(b.join(&meta)).unwrap());
        }
    }
    assert_eq!(fs::read(&manifest).unwrap(), fs::read(b.join("manifest.json")).unwrap());
}

#[test]
fn bad_thread_count_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "min.cfg", &minimal(&tmp.path().join("r")));
    let out = kbb(&["run", &cfg], &[("KBB_THREADS", "many")]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("KBB_THREADS"));
}

#[test]
fn compare_and_plot_over_run_directories() {
    let tmp = tempfile::tempdir().unwrap();
    let run_dir = tmp.path().join("circ");
    let body = format!(
        "algos = VI, KBB\nseeds = 0\nout_dir = {}\n[env]\nkind = circular_walk\nn = 60\n\
         [budget]\nn_per_iter = 2000\nmax_iters = 40\n[regressor]\nkind = tabular_mean\n",
        run_dir.display()
    );
    let cfg = write_config(tmp.path(), "cmp.cfg", &body);
    assert!(kbb(&["run", &cfg], &[]).status.success());
    let d = run_dir.to_str().unwrap();

    let table = tmp.path().join("table.csv");
    let out = kbb(&["compare", d, d, "--out", table.to_str().unwrap()], &[]);
    assert!(out.status.success(), "{}", stderr(&out));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("exact dynamics"));
    let csv = fs::read_to_string(&table).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "run,algo,n_seeds,samples_half,samples_tenth,ratio_half,ratio_tenth,note"
    );
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        assert_eq!((f[5], f[6]), ("1", "1"), "{line}");
        if f[1] == "VI" {
            assert_eq!((f[3], f[4], f[7]), ("0", "0", "exact dynamics"));
        }
    }

    let svg_path = tmp.path().join("plot.svg");
    let out = kbb(&["plot", d, "--out", svg_path.to_str().unwrap()], &[]);
    assert!(out.status.success(), "{}", stderr(&out));
    let svg = fs::read_to_string(&svg_path).unwrap();
    assert!(svg.starts_with("<svg"));
    assert_eq!(svg.matches("<polyline").count(), 2);
    assert_eq!(svg.matches("<line ").count(), 2);

    // Value iteration plots as a straight line of slope log10(gamma).
    let rows = RunRecord::rows_from_csv(&fs::read_to_string(run_dir.join("VI_seed0.csv")).unwrap()).unwrap();
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.mu_error > 1e-10)
        .map(|r| (r.iter as f64, log_error(r.mu_error)))
        .collect();
    let n = pts.len() as f64;
    let (mx, my) = (
        pts.iter().map(|p| p.0).sum::<f64>() / n,
        pts.iter().map(|p| p.1).sum::<f64>() / n,
    );
    let slope =
        pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
    let expected = 0.9f64.log10();
    assert!(
        ((slope - expected) / expected).abs() <= 0.02,
        "slope {slope} vs {expected}"
    );
}

#[test]
fn compare_rejects_mismatched_or_incomplete_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let mk = |name: &str, n: usize| {
        let dir = tmp.path().join(name);
        let body = format!(
            "algos = VI\nseeds = 0\nout_dir = {}\n[env]\nkind = circular_walk\nn = {n}\n[budget]\nmax_iters = 3\n",
            dir.display()
        );
        let cfg = write_config(tmp.path(), &format!("{name}.cfg"), &body);
        assert!(kbb(&["run", &cfg], &[]).status.success());
        dir.to_string_lossy().into_owned()
    };
    let a = mk("a", 20);
    let b = mk("b", 21);
    let out = kbb(&["compare", &a, &b], &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("mismatched manifests"));

    fs::remove_file(Path::new(&a).join("manifest.json")).unwrap();
    assert_eq!(kbb(&["compare", &a], &[]).status.code(), Some(2));
    let svg = tmp.path().join("x.svg");
    assert_eq!(
        kbb(&["plot", &a, "--out", svg.to_str().unwrap()], &[]).status.code(),
        Some(2)
    );
}

#[test]
fn spectra_on_reversible_and_non_reversible_envs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "circular.cfg",
        "algos = KBB\nseeds = 0\n[env]\nkind = circular_walk\nn = 50\ngamma = 0.9\nseed = 3\n",
    );
    let out = kbb(&["spectra", &cfg, "--depth", "12"], &[]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = String::from_utf8_lossy(&out.stdout).into_owned();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "t,mineig,maxeig,theorem1_bound");
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|f| f.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 12);
    for r in &rows {
        assert!(0.1 - 1e-9 <= r[1] && r[1] <= r[2] && r[2] <= 1.9 + 1e-9, "{r:?}");
    }

    // Row 1 is the empty-basis pair.
    let model = make_circular_walk(50, 0.9, 3).unwrap();
    let direct = restricted_spectral_values(&QOperator::new(&model).unwrap(), &BasisSet::new()).unwrap();
    assert!((rows[0][1] - direct.mineig).abs() <= 1e-12 * direct.mineig.abs().max(1.0));
    assert!((rows[0][2] - direct.maxeig).abs() <= 1e-12 * direct.maxeig.abs().max(1.0));

    let out_file = tmp.path().join("rate.csv");
    let out = kbb(
        &[
            "spectra",
            &cfg,
            "--depth",
            "8",
            "--rate",
            "--out",
            out_file.to_str().unwrap(),
        ],
        &[],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(fs::read_to_string(out_file)
        .unwrap()
        .starts_with("t,mineig,maxeig,contraction_bound,observed_ratio"));

    let cfg = write_config(
        tmp.path(),
        "rand.cfg",
        "algos = VI\nseeds = 0\n[env]\nkind = random_tabular\nn = 12\n",
    );
    let out = kbb(&["spectra", &cfg, "--depth", "3"], &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("not reversible"), "{}", stderr(&out));
}
