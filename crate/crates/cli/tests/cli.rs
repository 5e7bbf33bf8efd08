use std::fs;
use std::path::Path;

use hjh_cli::main_with_args;

fn run_in(dir: &Path, sub: &str, config: &str) -> i32 {
    let cfg = dir.join(format!("{sub}.toml"));
    fs::write(&cfg, config).unwrap();
    let out = dir.join(sub);
    main_with_args(["hjh", sub, "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--threads", "1"])
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn metric_without_potential_is_the_euclidean_cone() {
    let dir = tempfile::tempdir().unwrap();
    let code = run_in(
        dir.path(),
        "metric",
        "[model]\nkind = \"deterministic\"\n[solver]\nh = 0.0625\n[experiment]\nt = 2.0\nmu = 0.5\n",
    );
    assert_eq!(code, 0);
    // H = |p|^2 / 2 at level 1/2 gives |Dm| = 1, so m(x) = |x|.
    let rows = csv_rows(&dir.path().join("metric/metric.csv"));
    assert_eq!(rows.len(), 65 * 65);
    let mut worst: f64 = 0.0;
    for r in &rows {
        let x: f64 = r[2].parse().unwrap();
        let y: f64 = r[3].parse().unwrap();
        let m: f64 = r[4].parse().unwrap();
        let d = x.hypot(y);
        if d >= 0.25 {
            worst = worst.max((m - d).abs() / d);
        }
    }
    assert!(worst < 0.03, "relative cone error {worst}");
}

#[test]
fn identical_configs_give_identical_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "[model]\nkind = \"h1\"\ndimension = 2\n[experiment]\nt = 3.0\nn = 3\n";
    assert_eq!(run_in(dir.path(), "metric", cfg), 0);
    let first = fs::read(dir.path().join("metric/metric.csv")).unwrap();
    let plot = fs::read(dir.path().join("metric/metric_plot.csv")).unwrap();
    let out2 = dir.path().join("again");
    let manifest = dir.path().join("metric/manifest.toml");
    let code = main_with_args(["hjh", "--manifest", manifest.to_str().unwrap(), "--out", out2.to_str().unwrap(), "--threads", "2"]);
    assert_eq!(code, 0);
    assert_eq!(first, fs::read(out2.join("metric.csv")).unwrap());
    assert_eq!(plot, fs::read(out2.join("metric_plot.csv")).unwrap());
    let m1 = fs::read_to_string(&manifest).unwrap();
    let m2 = fs::read_to_string(out2.join("manifest.toml")).unwrap();
    let strip = |s: &str| s.split("[meta]").next().unwrap().replace(out2.to_str().unwrap(), "").replace(dir.path().join("metric").to_str().unwrap(), "");
    assert_eq!(strip(&m1), strip(&m2));
}

#[test]
fn homog_writes_one_row_per_scale_and_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "[model]\nkind = \"h1\"\ndimension = 1\n[experiment]\nn = 3\neps_ladder = [0.4, 0.2]\ntime = 0.5\nregion_radius = 0.5\nhbar_length = 200.0\n";
    assert_eq!(run_in(dir.path(), "homog", cfg), 0);
    let rows = csv_rows(&dir.path().join("homog/homog.csv"));
    assert_eq!(rows.len(), 2 * 3);
    for r in &rows {
        let e: f64 = r[3].parse().unwrap();
        assert!(e.is_finite() && e >= 0.0);
    }
    let timing = fs::read_to_string(dir.path().join("homog/timing.csv")).unwrap();
    assert!(timing.lines().any(|l| l.starts_with("total,")));
}

#[test]
fn invalid_config_lists_fields_and_leaves_no_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let code = run_in(dir.path(), "cell", "[model]\ndimension = 5\n[experiment]\nn = 0\ntypo = 1\n");
    assert_eq!(code, 2);
    let out = dir.path().join("cell");
    let err = fs::read_to_string(out.join("error.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&err).unwrap();
    assert_eq!(v["kind"], "config");
    let fields: Vec<&str> = v["fields"].as_array().unwrap().iter().map(|f| f["field"].as_str().unwrap()).collect();
    for f in ["model.dimension", "experiment.n", "experiment.typo"] {
        assert!(fields.contains(&f), "{f} not in {fields:?}");
    }
    assert!(!out.join("cell.csv").exists());
}

#[test]
fn runtime_failure_removes_previous_outputs() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run_in(dir.path(), "metric", "[model]\nkind = \"deterministic\"\n[experiment]\nt = 1.0\n"), 0);
    let out = dir.path().join("metric");
    assert!(out.join("metric.csv").exists());
    // The grid no longer fits the node budget.
    let code = run_in(dir.path(), "metric", "[model]\nkind = \"deterministic\"\n[solver]\nmax_nodes = 100\n[experiment]\nt = 1.0\n");
    assert_eq!(code, 1);
    assert!(!out.join("metric.csv").exists());
    assert!(!out.join("manifest.toml").exists());
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("error.json")).unwrap()).unwrap();
    assert_eq!(v["kind"], "runtime");
}

#[test]
fn help_documents_column_schemas() {
    use clap::CommandFactory;
    let help = hjh_cli::Args::command().render_long_help().to_string();
    assert!(help.contains("eps,seed_index,seed,sup_error"));
}
