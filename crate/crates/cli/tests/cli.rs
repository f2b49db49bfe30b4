//! End-to-end command tests run against the compiled binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_noisygp"))
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("binary runs");
    assert!(
        out.status.success(),
        "command failed:\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn read(path: &Path) -> String {
    fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

/// Simulates a small dataset into `dir/data` and returns the csv path.
fn simulate_small(dir: &Path, seed: u64) -> PathBuf {
    let config = dir.join("sim.toml");
    fs::write(
        &config,
        r#"
n_units = 2
sigma = 0.025
threshold = 0.4

[grid]
kind = "times"
times = [0.2, 0.4, 0.6, 0.8, 1.0]

[mu]
kind = "fixed"
value = 0.4

[nu]
kind = "fixed"
value = 0.21
"#,
    )
    .unwrap();
    let out = dir.join("data");
    run_ok(bin()
        .arg("simulate")
        .arg("--config")
        .arg(&config)
        .arg("--out")
        .arg(&out)
        .arg("--seed")
        .arg(seed.to_string()));
    out.join("dataset.csv")
}

#[test]
fn simulate_bundled_configs_and_seed_determinism() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["sim_single_large.toml", "sim_crack_like.toml"] {
        let out_a = dir.path().join(format!("{name}.a"));
        let out_b = dir.path().join(format!("{name}.b"));
        for out in [&out_a, &out_b] {
            run_ok(bin()
                .arg("simulate")
                .arg("--config")
                .arg(configs().join(name))
                .arg("--out")
                .arg(out)
                .arg("--seed")
                .arg("11"));
        }
        assert_eq!(
            read(&out_a.join("dataset.csv")),
            read(&out_b.join("dataset.csv")),
            "{name}: same seed must give identical files"
        );
        assert!(out_a.join("manifest.json").exists());
        assert!(out_a.join("dataset.json").exists());
    }

    // The crack-like study has 10 units approaching the 0.4 threshold.
    let out = dir.path().join("crack");
    run_ok(bin()
        .arg("simulate")
        .arg("--config")
        .arg(configs().join("sim_crack_like.toml"))
        .arg("--out")
        .arg(&out)
        .arg("--seed")
        .arg("3"));
    let csv = read(&out.join("dataset.csv"));
    let units: std::collections::HashSet<&str> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap())
        .collect();
    assert_eq!(units.len(), 10);
}

#[test]
fn simulate_rejects_bad_config_with_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.toml");
    fs::write(
        &config,
        "n_units = 0\nsigma = -1.0\n[grid]\nkind = \"times\"\ntimes = [1.0]\n\
         [mu]\nkind = \"fixed\"\nvalue = 1.0\n[nu]\nkind = \"fixed\"\nvalue = 0.2\n",
    )
    .unwrap();
    let out = bin()
        .arg("simulate")
        .arg("--config")
        .arg(&config)
        .arg("--out")
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("n_units"), "stderr: {stderr}");
    assert!(stderr.contains("sigma"), "stderr: {stderr}");
}

#[test]
fn fit_writes_outputs_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate_small(dir.path(), 5);
    let fit_a = dir.path().join("fit_a");
    let fit_b = dir.path().join("fit_b");
    for out in [&fit_a, &fit_b] {
        run_ok(bin()
            .arg("fit")
            .arg("--config")
            .arg(configs().join("model_complete_pooling.toml"))
            .arg("--data")
            .arg(&data)
            .arg("--out")
            .arg(out)
            .arg("--chains")
            .arg("2")
            .arg("--warmup")
            .arg("150")
            .arg("--samples")
            .arg("100")
            .arg("--seed")
            .arg("9"));
    }
    for file in [
        "draws.csv",
        "diagnostics.json",
        "summary.txt",
        "model.json",
        "dataset.csv",
        "filtered_paths.csv",
        "manifest.json",
    ] {
        assert!(fit_a.join(file).exists(), "missing {file}");
    }
    for file in ["draws.csv", "summary.txt", "diagnostics.json", "filtered_paths.csv"] {
        assert_eq!(
            read(&fit_a.join(file)),
            read(&fit_b.join(file)),
            "{file} must be byte-identical across reruns"
        );
    }
    // Manifests agree on everything except the timestamp.
    let strip = |s: String| -> String {
        s.lines()
            .filter(|l| !l.contains("created_unix"))
            .collect::<Vec<_>>()
            .join("\n")
    };
    assert_eq!(
        strip(read(&fit_a.join("manifest.json"))),
        strip(read(&fit_b.join("manifest.json")))
    );
    // The summary carries the reporting columns.
    let summary = read(&fit_a.join("summary.txt"));
    for needle in ["Parameter", "Mean", "2.5%", "50%", "97.5%", "n_eff", "Rhat"] {
        assert!(summary.contains(needle), "summary lacks {needle}");
    }
}

#[test]
fn fit_missing_data_is_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .arg("fit")
        .arg("--config")
        .arg(configs().join("model_complete_pooling.toml"))
        .arg("--data")
        .arg(dir.path().join("nope.csv"))
        .arg("--out")
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn prior_check_writes_requested_draw_count() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("pc");
    run_ok(bin()
        .arg("prior-check")
        .arg("--config")
        .arg(configs().join("model_prior_check.toml"))
        .arg("--grid-config")
        .arg(configs().join("grid_unit11.toml"))
        .arg("--out")
        .arg(&out)
        .arg("--seed")
        .arg("2"));
    let csv = read(&out.join("prior_paths.csv"));
    let draws: std::collections::HashSet<&str> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap())
        .collect();
    assert_eq!(draws.len(), 100, "default is 100 paths");
    // 11 grid points per draw (t0 plus ten observations).
    assert_eq!(csv.lines().count() - 1, 100 * 11);
}

#[test]
fn prior_check_legacy_mode_and_degenerate_priors() {
    let dir = tempfile::tempdir().unwrap();
    let legacy = dir.path().join("legacy");
    run_ok(bin()
        .arg("prior-check")
        .arg("--config")
        .arg(configs().join("model_prior_check.toml"))
        .arg("--grid-config")
        .arg(configs().join("grid_unit11.toml"))
        .arg("--out")
        .arg(&legacy)
        .arg("--draws")
        .arg("50")
        .arg("--legacy-shape-rate")
        .arg("1,0.001")
        .arg("--seed")
        .arg("4"));
    let csv = read(&legacy.join("prior_paths.csv"));
    // Near-linear paths: per-draw jump CV below 0.12 for most draws.
    let mut jumps: std::collections::HashMap<String, Vec<f64>> = Default::default();
    let mut last: std::collections::HashMap<String, f64> = Default::default();
    for line in csv.lines().skip(1) {
        let mut it = line.split(',');
        let d = it.next().unwrap().to_string();
        let _t: f64 = it.next().unwrap().parse().unwrap();
        let z: f64 = it.next().unwrap().parse().unwrap();
        if let Some(prev) = last.get(&d) {
            jumps.entry(d.clone()).or_default().push(z - prev);
        }
        last.insert(d, z);
    }
    let mut near_linear = 0;
    for (_, js) in &jumps {
        let mean = js.iter().sum::<f64>() / js.len() as f64;
        let var = js.iter().map(|j| (j - mean) * (j - mean)).sum::<f64>() / js.len() as f64;
        if mean > 0.0 && var.sqrt() / mean < 0.12 {
            near_linear += 1;
        }
    }
    assert!(near_linear >= 40, "only {near_linear}/50 near-linear");

    // Point-mass-like priors give identical paths.
    let model = dir.path().join("point.toml");
    fs::write(
        &model,
        r#"
pooling = "complete_pooling"

[priors.mu]
kind = "trunc_normal_lb0"
location = 1.0
scale = 1e-12

[priors.nu]
kind = "trunc_normal_lb0"
location = 1e-9
scale = 1e-15

[priors.sigma]
kind = "uniform"
lower = 0.0
upper = 1.0
"#,
    )
    .unwrap();
    let fixed = dir.path().join("fixed");
    run_ok(bin()
        .arg("prior-check")
        .arg("--config")
        .arg(&model)
        .arg("--grid-config")
        .arg(configs().join("grid_unit11.toml"))
        .arg("--out")
        .arg(&fixed)
        .arg("--draws")
        .arg("10")
        .arg("--seed")
        .arg("6"));
    let csv = read(&fixed.join("prior_paths.csv"));
    let mut by_time: std::collections::HashMap<String, Vec<f64>> = Default::default();
    for line in csv.lines().skip(1) {
        let mut it = line.split(',');
        let _d = it.next().unwrap();
        let t = it.next().unwrap().to_string();
        let z: f64 = it.next().unwrap().parse().unwrap();
        by_time.entry(t).or_default().push(z);
    }
    for (t, zs) in by_time {
        let spread = zs.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            - zs.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(spread < 1e-3, "paths differ at t={t} by {spread}");
    }
}

#[test]
fn cv_produces_ranked_table() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate_small(dir.path(), 8);
    let out = dir.path().join("cv");
    run_ok(bin()
        .arg("cv")
        .arg("--config")
        .arg(configs().join("model_complete_pooling.toml"))
        .arg("--data")
        .arg(&data)
        .arg("--method")
        .arg("sa")
        .arg("--out")
        .arg(&out)
        .arg("--chains")
        .arg("2")
        .arg("--warmup")
        .arg("120")
        .arg("--samples")
        .arg("100")
        .arg("--seed")
        .arg("1"));
    let table = read(&out.join("cv_table.csv"));
    let mut lines = table.lines();
    assert_eq!(lines.next().unwrap(), "model,method,elppd,rank");
    let row = lines.next().unwrap();
    assert!(row.starts_with("model_complete_pooling,sa,"));
    assert!(row.ends_with(",1"));
    assert_eq!(lines.next(), None, "single model, single row");
    assert!(out.join("cv_model_complete_pooling.json").exists());
}

#[test]
fn failure_time_modes_and_mismatch_errors() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate_small(dir.path(), 13);
    let fit = dir.path().join("fit");
    run_ok(bin()
        .arg("fit")
        .arg("--config")
        .arg(configs().join("model_complete_pooling.toml"))
        .arg("--data")
        .arg(&data)
        .arg("--out")
        .arg(&fit)
        .arg("--chains")
        .arg("2")
        .arg("--warmup")
        .arg("150")
        .arg("--samples")
        .arg("100")
        .arg("--seed")
        .arg("2"));

    // New-unit curve on a complete-pooling fit.
    let ft = dir.path().join("ft");
    run_ok(bin()
        .arg("failure-time")
        .arg("--fit-dir")
        .arg(&fit)
        .arg("--zf")
        .arg("0.4")
        .arg("--mode")
        .arg("new-unit")
        .arg("--out")
        .arg(&ft));
    let csv = read(&ft.join("failure_curve.csv"));
    assert!(csv.starts_with("time,q2.5,q10,q25,q50,q75,q90,q97.5"));
    assert_eq!(csv.lines().count() - 1, 200);

    // In-test curve for unit 2.
    let ft2 = dir.path().join("ft2");
    run_ok(bin()
        .arg("failure-time")
        .arg("--fit-dir")
        .arg(&fit)
        .arg("--zf")
        .arg("0.4")
        .arg("--mode")
        .arg("in-test")
        .arg("--unit")
        .arg("2")
        .arg("--out")
        .arg(&ft2));
    assert!(ft2.join("failure_curve.json").exists());

    // A threshold below every filtered level: the curve is 1 past t_I.
    let ft3 = dir.path().join("ft3");
    run_ok(bin()
        .arg("failure-time")
        .arg("--fit-dir")
        .arg(&fit)
        .arg("--zf")
        .arg("1e-6")
        .arg("--mode")
        .arg("in-test")
        .arg("--unit")
        .arg("1")
        .arg("--out")
        .arg(&ft3));
    let csv = read(&ft3.join("failure_curve.csv"));
    let last = csv.lines().last().unwrap();
    for q in last.split(',').skip(1) {
        let v: f64 = q.parse().unwrap();
        assert!((v - 1.0).abs() < 1e-12, "expected saturated curve, got {v}");
    }

    // Unit out of range is a config error.
    let out = bin()
        .arg("failure-time")
        .arg("--fit-dir")
        .arg(&fit)
        .arg("--zf")
        .arg("0.4")
        .arg("--mode")
        .arg("in-test")
        .arg("--unit")
        .arg("7")
        .arg("--out")
        .arg(dir.path().join("ft_bad"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    // Missing --unit likewise.
    let out = bin()
        .arg("failure-time")
        .arg("--fit-dir")
        .arg(&fit)
        .arg("--zf")
        .arg("0.4")
        .arg("--mode")
        .arg("in-test")
        .arg("--out")
        .arg(dir.path().join("ft_bad2"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn outputs_do_not_depend_on_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate_small(dir.path(), 21);
    let one = dir.path().join("one");
    let many = dir.path().join("many");
    for (out, threads) in [(&one, "1"), (&many, "4")] {
        run_ok(bin()
            .arg("fit")
            .arg("--threads")
            .arg(threads)
            .arg("--config")
            .arg(configs().join("model_varying_mu.toml"))
            .arg("--data")
            .arg(&data)
            .arg("--out")
            .arg(out)
            .arg("--chains")
            .arg("4")
            .arg("--warmup")
            .arg("120")
            .arg("--samples")
            .arg("80")
            .arg("--seed")
            .arg("3"));
    }
    assert_eq!(read(&one.join("draws.csv")), read(&many.join("draws.csv")));
}
