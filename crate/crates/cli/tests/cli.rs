use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_coupled-mcmc"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    let mut full = args.to_vec();
    full.extend(["--out-dir", dir.to_str().unwrap()]);
    let out = run(&full);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// Header lines and data rows of a CSV file.
fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let text = fs::read_to_string(path).unwrap();
    let (meta, data): (Vec<&str>, Vec<&str>) = text.lines().partition(|l| l.starts_with('#'));
    let rows = data
        .iter()
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect();
    (meta.into_iter().map(str::to_string).collect(), rows)
}

fn body(path: &Path) -> String {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .collect::<Vec<_>>()
        .join("\n")
}

fn meta_value(meta: &[String], key: &str) -> Option<String> {
    let prefix = format!("# {key} = ");
    meta.iter().find_map(|l| l.strip_prefix(&prefix).map(str::to_string))
}

#[test]
fn missing_config_exits_2_with_path() {
    let out = run(&["poisson", "--config", "/nonexistent/dir/exp.conf"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent/dir/exp.conf"));
}

#[test]
fn bad_configuration_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    for args in [
        vec!["langevin", "--kind", "sideways", "--out-dir", d],
        vec!["poisson", "--set", "model.grid=abc", "--out-dir", d],
        vec!["poisson", "--set", "novalue", "--out-dir", d],
        vec![
            "langevin",
            "--set",
            "numerics.burn_in=5",
            "--t-total",
            "1",
            "--out-dir",
            d,
        ],
    ] {
        let out = run(&args);
        assert_eq!(
            out.status.code(),
            Some(2),
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    let conf = dir.path().join("wrong.conf");
    fs::write(&conf, "experiment = spectral\n").unwrap();
    let out = run(&["poisson", "--config", conf.to_str().unwrap(), "--out-dir", d]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn divergence_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "langevin",
        "--dt",
        "3",
        "--t-total",
        "3000",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("divergence"));
}

#[test]
fn poisson_csv_columns_and_header() {
    let dir = tempfile::tempdir().unwrap();
    run_in(dir.path(), &["poisson", "--seed", "4"]);
    let (meta, rows) = read_csv(&dir.path().join("poisson.csv"));
    assert!(meta[0].starts_with("# coupled-mcmc "));
    assert_eq!(meta_value(&meta, "seed").as_deref(), Some("4"));
    assert_eq!(meta_value(&meta, "config_sha256").unwrap().len(), 64);
    assert_eq!(rows[0], ["x", "phi", "dphi", "residual"]);
    assert_eq!(rows.len(), 2002);
    for r in &rows[1..] {
        let x: f64 = r[0].parse().unwrap();
        let phi: f64 = r[1].parse().unwrap();
        assert!((phi - x).abs() < 1e-6);
    }
}

#[test]
fn config_file_and_flag_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("p.conf");
    fs::write(
        &conf,
        "experiment = poisson\n[model]\ngrid = 101\n[numerics]\nseed = 3\n",
    )
    .unwrap();
    let c = conf.to_str().unwrap();
    run_in(dir.path(), &["poisson", "--config", c]);
    let (meta_a, rows) = read_csv(&dir.path().join("poisson.csv"));
    assert_eq!(rows.len(), 102);
    assert_eq!(meta_value(&meta_a, "seed").as_deref(), Some("3"));
    run_in(
        dir.path(),
        &["poisson", "--config", c, "--seed", "11", "--set", "model.grid=51"],
    );
    let (meta_b, rows) = read_csv(&dir.path().join("poisson.csv"));
    assert_eq!(rows.len(), 52);
    assert_eq!(meta_value(&meta_b, "seed").as_deref(), Some("11"));
    assert_ne!(
        meta_value(&meta_a, "config_sha256"),
        meta_value(&meta_b, "config_sha256")
    );
}

#[test]
fn langevin_is_reproducible_and_independent_of_workers() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = [
        "langevin",
        "--kind",
        "poisson",
        "--beta",
        "pi/8",
        "--t-total",
        "500",
        "--set",
        "langevin.trajectory=true",
        "--set",
        "langevin.stride=50",
        "--seed",
        "7",
    ];
    run_in(a.path(), &[&args[..], &["--workers", "1"]].concat());
    run_in(b.path(), &[&args[..], &["--workers", "3"]].concat());
    for f in ["langevin_summary.csv", "trajectory.csv"] {
        assert_eq!(
            fs::read_to_string(a.path().join(f)).unwrap(),
            fs::read_to_string(b.path().join(f)).unwrap(),
            "{f}"
        );
    }
    let (_, rows) = read_csv(&a.path().join("trajectory.csv"));
    assert_eq!(rows[0], ["t", "particle", "x0"]);
    // 45 000 post-burn-in steps at stride 50, two particles each.
    assert_eq!(rows.len() - 1, 2 * 900);
}

#[test]
fn mirror_pair_from_antithetic_start_has_zero_average() {
    let dir = tempfile::tempdir().unwrap();
    run_in(
        dir.path(),
        &[
            "langevin",
            "--kind",
            "mirror",
            "--beta",
            "pi/4",
            "--t-total",
            "200",
            "--set",
            "langevin.initial=0.5,-0.5",
        ],
    );
    let (_, rows) = read_csv(&dir.path().join("langevin_summary.csv"));
    let col = |name: &str| rows[0].iter().position(|c| c == name).unwrap();
    assert_eq!(rows[1][col("coupling")], "mirror");
    assert_eq!(rows[1][col("mean")].parse::<f64>().unwrap(), 0.0);
    assert_eq!(rows[1][col("asym_var")].parse::<f64>().unwrap(), 0.0);
}

#[test]
fn variance_sweep_has_one_row_per_kind_and_beta() {
    let dir = tempfile::tempdir().unwrap();
    run_in(
        dir.path(),
        &[
            "variance-sweep",
            "--t-total",
            "200",
            "--replicates",
            "3",
            "--set",
            "coupling.kinds=mirror,symmetric",
            "--set",
            "coupling.betas=0,pi/8,pi/4",
        ],
    );
    let (_, rows) = read_csv(&dir.path().join("variance_sweep.csv"));
    assert_eq!(rows[0][..2], ["kind", "beta"]);
    assert_eq!(rows.len() - 1, 6);
    // Common random numbers: at beta = 0 every kind is the independent run.
    let at_zero: Vec<&Vec<String>> = rows[1..].iter().filter(|r| r[1] == "0.0").collect();
    assert_eq!(at_zero.len(), 2);
    assert_eq!(at_zero[0][2..], at_zero[1][2..]);
}

#[test]
fn zigzag_writes_stats_and_event_log() {
    let dir = tempfile::tempdir().unwrap();
    run_in(
        dir.path(),
        &[
            "zigzag",
            "--kind",
            "mirror_flip",
            "--beta",
            "1",
            "--t-total",
            "600",
            "--replicates",
            "2",
            "--batches",
            "10",
            "--set",
            "zigzag.events=true",
        ],
    );
    let (_, stats) = read_csv(&dir.path().join("zigzag_stats.csv"));
    let names: Vec<&str> = stats[1..].iter().map(|r| r[0].as_str()).collect();
    assert_eq!(names, ["F", "x", "x2", "opposite_fraction", "abs_diff"]);
    let (_, events) = read_csv(&dir.path().join("events.csv"));
    assert_eq!(events[0], ["t", "x", "y", "theta_x", "theta_y", "event_type"]);
    assert!(events.len() > 10);
    assert!(events[1..].iter().all(|r| ["x", "y", "xy"].contains(&r[5].as_str())));
    assert!(events[1..].iter().any(|r| r[5] == "xy"));
}

#[test]
fn delta_sigma_reports_closed_forms() {
    let dir = tempfile::tempdir().unwrap();
    run_in(dir.path(), &["delta-sigma"]);
    let (_, rows) = read_csv(&dir.path().join("delta_sigma.csv"));
    let value = |kind: &str| -> f64 { rows.iter().find(|r| r[0] == kind).unwrap()[2].parse().unwrap() };
    assert_eq!(value("independent"), 0.0);
    assert!((value("mirror") + 1.0).abs() < 1e-3);
    assert_eq!(rows.len() - 1, 6);
}

#[test]
fn spectral_reports_mirror_rate() {
    let dir = tempfile::tempdir().unwrap();
    run_in(dir.path(), &["spectral", "--set", "spectral.modes=3"]);
    let (meta, rows) = read_csv(&dir.path().join("spectral.csv"));
    let rate: f64 = meta_value(&meta, "mirror_coupled_rate").unwrap().parse().unwrap();
    assert!((rate - 2.0).abs() < 1e-2);
    assert_eq!(rows[1][2], "odd");
    assert_eq!(rows[2][2], "even");
}

#[test]
fn ot_compare_writes_plan_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    run_in(
        dir.path(),
        &[
            "ot-compare",
            "--t-total",
            "300",
            "--batches",
            "10",
            "--set",
            "ot.size=41",
            "--set",
            "coupling.kinds=mirror,independent",
        ],
    );
    let (_, plan) = read_csv(&dir.path().join("plan.csv"));
    assert_eq!(plan.len(), 42);
    assert!(plan[1..].iter().all(|r| r.len() == 42));
    let total: f64 = plan[1..]
        .iter()
        .flat_map(|r| r[1..].iter())
        .map(|v| v.parse::<f64>().unwrap())
        .sum();
    assert!((total - 1.0).abs() < 1e-6);
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("ot_summary.json")).unwrap()).unwrap();
    for key in [
        "cost_value",
        "marginal_error",
        "epsilon",
        "config_sha256",
        "seed",
        "version",
    ] {
        assert!(summary.get(key).is_some(), "{key}");
    }
    let mirror = summary["empirical_values"]["mirror"]["mean"].as_f64().unwrap();
    assert!((mirror + 0.5).abs() < 0.1);
}

#[test]
fn sort_compare_is_a_two_column_comparison() {
    let dir = tempfile::tempdir().unwrap();
    run_in(
        dir.path(),
        &[
            "sort-compare",
            "--set",
            "model.dim=3",
            "--particles",
            "4",
            "--t-total",
            "100",
            "--replicates",
            "2",
            "--batches",
            "10",
            "--set",
            "coupling.betas=0,pi/4",
        ],
    );
    let (_, rows) = read_csv(&dir.path().join("sort_compare.csv"));
    assert_eq!(rows[0], ["beta", "sorted", "sorted_ci", "unsorted", "unsorted_ci"]);
    assert_eq!(rows.len(), 3);
    // At beta = 0 the pairing is irrelevant.
    assert_eq!(rows[1][1], rows[1][3]);
}

#[test]
fn identical_runs_have_identical_bodies() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = [
        "zigzag",
        "--t-total",
        "300",
        "--replicates",
        "3",
        "--batches",
        "10",
        "--seed",
        "2",
    ];
    run_in(a.path(), &args);
    run_in(b.path(), &args);
    let f = "zigzag_stats.csv";
    assert_eq!(body(&a.path().join(f)), body(&b.path().join(f)));
}

#[test]
fn bundled_configs_run_at_reduced_scale() {
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in fs::read_dir(&configs).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().and_then(|e| e.to_str()) != Some("conf") {
            continue;
        }
        let text = fs::read_to_string(&path).unwrap();
        let experiment = text
            .lines()
            .find_map(|l| l.strip_prefix("experiment ="))
            .unwrap_or_else(|| panic!("{} names no experiment", path.display()))
            .trim()
            .to_string();
        let dir = tempfile::tempdir().unwrap();
        run_in(
            dir.path(),
            &[
                &experiment,
                "--config",
                path.to_str().unwrap(),
                "--t-total",
                "400",
                "--burn-in",
                "40",
                "--replicates",
                "2",
                "--batches",
                "10",
            ],
        );
        assert!(fs::read_dir(dir.path()).unwrap().count() >= 1);
        seen += 1;
    }
    assert!(seen >= 8);
}
